#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "taigan/metrics.hpp"
#include "taigan/stats.hpp"
#include "test_util.hpp"

using namespace taigan;

namespace {

std::vector<double> draw(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

double ssim_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  const double mx = mean_of(x), my = mean_of(y);
  double vx = 0, vy = 0, cxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    vx += (x[i] - mx) * (x[i] - mx);
    vy += (y[i] - my) * (y[i] - my);
    cxy += (x[i] - mx) * (y[i] - my);
  }
  const double n = static_cast<double>(x.size());
  vx /= n, vy /= n, cxy /= n;
  double dr = *std::max_element(y.begin(), y.end()) - *std::min_element(y.begin(), y.end());
  if (dr == 0) dr = 1;
  const double c1 = std::pow(0.01 * dr, 2), c2 = std::pow(0.03 * dr, 2);
  return (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
}

double nmi_oracle(const std::vector<double>& a, const std::vector<double>& b, int bins) {
  double lo = std::numeric_limits<double>::max(), hi = -lo;
  for (double v : a) lo = std::min(lo, v), hi = std::max(hi, v);
  for (double v : b) lo = std::min(lo, v), hi = std::max(hi, v);
  auto bin = [&](double v) { return std::min(bins - 1, static_cast<int>((v - lo) / (hi - lo) * bins)); };
  std::map<int, double> pa, pb;
  std::map<std::pair<int, int>, double> pab;
  const double n = static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    pa[bin(a[i])] += 1 / n;
    pb[bin(b[i])] += 1 / n;
    pab[{bin(a[i]), bin(b[i])}] += 1 / n;
  }
  auto h = [](const auto& m) {
    double s = 0;
    for (const auto& [k, p] : m) s -= p * std::log(p);
    return s;
  };
  return (h(pa) + h(pb)) / h(pab);
}

// Two-tailed p from the Student t density by Simpson quadrature.
double t_p_oracle(double t, double dof) {
  const double c = std::exp(std::lgamma((dof + 1) / 2) - std::lgamma(dof / 2)) / std::sqrt(dof * M_PI);
  auto f = [&](double x) { return c * std::pow(1 + x * x / dof, -(dof + 1) / 2); };
  const int n = 20000;
  const double b = std::fabs(t), h = b / n;
  double acc = f(0) + f(b);
  for (int i = 1; i < n; ++i) acc += (i % 2 ? 4 : 2) * f(i * h);
  return 1.0 - 2.0 * acc * h / 3.0;
}

}  // namespace

TEST_CASE("similarity metrics agree with brute-force oracles on random inputs") {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 50 + rng.uniform_int(0, 200);
    const auto ref = draw(rng, n, -1, 1);
    auto pred = ref;
    for (auto& v : pred) v += rng.normal(0, 0.2);
    const double dr = *std::max_element(ref.begin(), ref.end()) - *std::min_element(ref.begin(), ref.end());
    double abs_err = 0, sq = 0;
    for (std::size_t i = 0; i < n; ++i) {
      abs_err += std::fabs(pred[i] - ref[i]);
      sq += (pred[i] - ref[i]) * (pred[i] - ref[i]);
    }
    const double mse = sq / n;
    const double peak = *std::max_element(ref.begin(), ref.end());
    CHECK(std::fabs(nmae(pred, ref) - abs_err / n / dr) < 1e-6);
    CHECK(std::fabs(mse_metric(pred, ref) - mse) < 1e-6);
    CHECK(std::fabs(psnr(pred, ref) - 10 * std::log10(peak * peak / mse)) < 1e-6);
    CHECK(std::fabs(ssim(pred, ref) - ssim_oracle(pred, ref)) < 1e-6);
    CHECK(std::fabs(nmi(pred, ref, 16) - nmi_oracle(pred, ref, 16)) < 1e-6);
  }
}

TEST_CASE("metric edge cases") {
  const std::vector<double> a{1, 2, 3, 4};
  CHECK(ssim(a, a) == doctest::Approx(1.0));
  CHECK(std::isinf(psnr(a, a)));
  CHECK(mse_metric(a, a) == 0.0);
  CHECK(nmi(a, a, 4) == doctest::Approx(2.0));
  const std::vector<double> flat{2, 2, 2, 2};
  CHECK_THROWS_AS(nmae(a, flat), ValidationError);
  CHECK(ssim(flat, flat) == doctest::Approx(1.0));
  const std::vector<double> shorter{1, 2};
  CHECK_THROWS(mse_metric(a, shorter));
}

TEST_CASE("NMAE and PSNR are asymmetric, MSE is symmetric") {
  const std::vector<double> a{0, 1, 2, 10}, b{0, 2, 2, 3};
  CHECK(mse_metric(a, b) == mse_metric(b, a));
  CHECK(nmae(a, b) != doctest::Approx(nmae(b, a)));
  CHECK(psnr(a, b) != doctest::Approx(psnr(b, a)));
}

TEST_CASE("volume overloads equal the span versions") {
  Rng rng(32);
  const Volume r = testing::random_volume(rng, {8, 8, 8});
  const Volume p = testing::random_volume(rng, {8, 8, 8});
  const auto rd = to_doubles(r), pd = to_doubles(p);
  CHECK(ssim(p, r) == ssim(pd, rd));
  CHECK(nmi(p, r) == nmi(pd, rd));
  const auto s = similarity(p, r);
  CHECK(s.mse == mse_metric(pd, rd));
  CHECK(ssim_windowed(r, r) == doctest::Approx(1.0));
}

TEST_CASE("mean, sd and median") {
  const std::vector<double> v{4, 1, 3, 2};
  const auto m = mean_sd(v);
  CHECK(m.mean == doctest::Approx(2.5));
  CHECK(m.sd == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(median(v) == doctest::Approx(2.5));
  const std::vector<double> odd{5, 1, 9};
  CHECK(median(odd) == 5.0);
}

TEST_CASE("paired t-test matches direct computation and numerical integration") {
  Rng rng(33);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 3 + rng.uniform_int(0, 37);
    const auto a = draw(rng, n, 0, 1);
    auto b = a;
    for (auto& x : b) x += rng.normal(0.05, 0.2);
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
    const double md = mean_of(d);
    double ss = 0;
    for (double x : d) ss += (x - md) * (x - md);
    const double t = md / std::sqrt(ss / (n - 1) / n);
    const auto r = paired_t_test(a, b);
    CHECK(r.dof == n - 1);
    CHECK(r.t == doctest::Approx(t).epsilon(1e-10));
    CHECK(std::fabs(r.p_value - t_p_oracle(t, n - 1.0)) < 1e-6);
  }
  const std::vector<double> same{1, 2, 3};
  CHECK(paired_t_test(same, same).p_value == 1.0);
  const std::vector<double> one{1};
  CHECK_THROWS(paired_t_test(one, one));
}
