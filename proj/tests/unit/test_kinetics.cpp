#include <doctest.h>

#include <cmath>

#include "taigan/kinetics.hpp"
#include "test_util.hpp"

using namespace taigan;

namespace {

// K1 * int_0^t Cp(s) exp(-k2 (t - s)) ds, integrated segment by segment in closed form.
double conv_oracle(const std::vector<double>& cp, double dt, double K1, double k2, double t) {
  double acc = 0;
  for (std::size_t i = 0; (i + 1) * dt <= t + 1e-12; ++i) {
    const double a = i * dt, b = a + dt;
    const double p = cp[i], q = (cp[i + 1] - cp[i]) / dt;
    const double ea = std::exp(-k2 * (t - a)), eb = std::exp(-k2 * (t - b));
    acc += p / k2 * (eb - ea) + q * ((b - a) * eb / k2 - (eb - ea) / (k2 * k2));
  }
  return K1 * acc;
}

// Gamma-variate style input sampled per frame.
std::vector<double> lv_tac(const FrameSchedule& s) {
  std::vector<double> out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double t = s.mid_time(i);
    out.push_back(1e5 * std::pow(t / 30.0, 3) * std::exp(3.0 * (1 - t / 30.0)) + 6e3);
  }
  return out;
}

}  // namespace

TEST_CASE("exponential convolution matches quadrature") {
  Rng rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> cp(40);
    for (auto& v : cp) v = rng.uniform(0, 100);
    const double dt = 0.5, K1 = rng.uniform(0.1, 2), k2 = rng.uniform(0.05, 1.5);
    const auto c = convolve_exponential(cp, dt, K1, k2);
    for (std::size_t i : {5u, 17u, 39u}) {
      CHECK(c[i] == doctest::Approx(conv_oracle(cp, dt, K1, k2, i * dt)).epsilon(1e-6));
    }
  }
}

TEST_CASE("sampled-curve averaging matches fine quadrature") {
  const std::vector<double> v{0, 2, 8, 3, 3, 1};
  const double dt = 1.0;
  CHECK(average_sampled(v, dt, 0.0, 1.0) == doctest::Approx(1.0));
  CHECK(average_sampled(v, dt, 1.5, 2.5) == doctest::Approx((0.5 * (5 + 8) * 0.5 + 0.5 * (8 + 5.5) * 0.5)));
  CHECK(average_sampled(v, dt, 6.0, 10.0) == doctest::Approx(1.0));  // held past the end
}

TEST_CASE("forward model: zero input, v = 1 and the constant-input closed form") {
  const auto sched = FrameSchedule::rb82_27_frames();
  const std::vector<double> zero(sched.size(), 0.0);
  for (double y : forward_model(0.8, 0.3, 0.1, zero, sched)) CHECK(y == 0.0);

  const auto lv = lv_tac(sched);
  const auto blood = forward_model(0.8, 0.3, 1.0, lv, sched);
  for (std::size_t i = 0; i < sched.size(); ++i) CHECK(blood[i] == doctest::Approx(lv[i]).epsilon(1e-9));

  const double A = 500.0, K1 = 0.7, k2 = 0.4, v = 0.15;
  const std::vector<double> flat(sched.size(), A);
  const auto y = forward_model(K1, k2, v, flat, sched, 0.05);
  for (std::size_t i = 0; i < sched.size(); ++i) {
    const double a = sched.start_times[i] / 60.0, b = sched.end_time(i) / 60.0;
    const double ct = A * K1 / k2 * (1.0 - (std::exp(-k2 * a) - std::exp(-k2 * b)) / (k2 * (b - a)));
    CHECK(y[i] == doctest::Approx((1 - v) * ct + v * A).epsilon(1e-6));
  }
}

TEST_CASE("model is linear in K1 without blood fraction") {
  const auto sched = FrameSchedule::rb82_27_frames();
  const auto lv = lv_tac(sched);
  const auto a = forward_model(0.5, 0.2, 0.0, lv, sched);
  const auto b = forward_model(1.0, 0.2, 0.0, lv, sched);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == doctest::Approx(2.0 * a[i]).epsilon(1e-12));
}

TEST_CASE("weights follow duration squared over total times DCF squared") {
  const std::vector<double> d{5, 10, 30}, tot{100, 0, 400}, dcf{1.0, 1.5, 2.0};
  const auto w = fit_weights(d, tot, dcf);
  CHECK(w.w[0] == doctest::Approx(25.0 / 100.0));
  CHECK(w.w[1] == 0.0);
  CHECK(w.w[2] == doctest::Approx(900.0 / (400.0 * 4.0)));
}

TEST_CASE("Renkin-Crone model") {
  CHECK(renkin_crone_k1(1.0) == doctest::Approx(0.5556).epsilon(1e-4));
  CHECK(std::abs(renkin_crone_k1(1.0) - (1.0 - 0.74 * std::exp(-0.51))) < 1e-15);
  CHECK(renkin_crone_k1(1.7, 0.0, 0.51) == doctest::Approx(1.7));
  Rng rng(22);
  for (int i = 0; i < 100; ++i) {
    const double mbf = rng.uniform(0.05, 6.0);
    CHECK(std::abs(k1_to_mbf(renkin_crone_k1(mbf)) - mbf) < 1e-6);
  }
  double prev = 0;
  for (double m = 0.05; m < 8; m += 0.05) {
    const double k = renkin_crone_k1(m);
    CHECK(k > prev);
    prev = k;
  }
  CHECK_THROWS_AS(k1_to_mbf(0.0), ValidationError);
}

TEST_CASE("weighted fit recovers noise-free parameters and ignores weight scale") {
  const auto sched = FrameSchedule::rb82_27_frames();
  const auto lv = lv_tac(sched);
  FitWeights w;
  for (std::size_t i = 0; i < sched.size(); ++i) w.w.push_back(sched.durations[i] / 100.0);
  Rng rng(23);
  for (int trial = 0; trial < 4; ++trial) {
    const double K1 = rng.uniform(0.4, 1.5), k2 = rng.uniform(0.1, 0.6), v = rng.uniform(0.05, 0.3);
    const auto myo = forward_model(K1, k2, v, lv, sched);
    const auto fit = fit_compartment(myo, lv, w, sched);
    CHECK(fit.K1 == doctest::Approx(K1).epsilon(1e-3));
    CHECK(fit.k2 == doctest::Approx(k2).epsilon(1e-3));
    CHECK(fit.v == doctest::Approx(v).epsilon(1e-3));
    CHECK(fit.mbf == doctest::Approx(k1_to_mbf(K1)).epsilon(1e-3));

    FitWeights w10 = w;
    for (auto& x : w10.w) x *= 10.0;
    const auto fit10 = fit_compartment(myo, lv, w10, sched);
    CHECK(fit10.K1 == doctest::Approx(fit.K1).epsilon(1e-6));
    CHECK(fit10.k2 == doctest::Approx(fit.k2).epsilon(1e-6));
  }
}

TEST_CASE("fit rejects too few weighted frames") {
  const auto sched = FrameSchedule::from_durations({10, 10, 10, 10, 10});
  const std::vector<double> tac(5, 1.0);
  FitWeights w{{1, 1, 1, 0, 0}};
  CHECK_THROWS_AS(fit_compartment(tac, tac, w, sched), ValidationError);
  FitWeights bad{{1, 1}};
  CHECK_THROWS_AS(fit_compartment(tac, tac, bad, sched), ValidationError);
}

TEST_CASE("percent differences") {
  KineticFit base, est;
  base.K1 = 0.8;
  base.mbf = 2.0;
  est.K1 = 0.88;
  est.mbf = 1.5;
  const auto d = percent_diff(est, base);
  CHECK(d.k1 == doctest::Approx(10.0));
  CHECK(d.mbf == doctest::Approx(-25.0));
}
