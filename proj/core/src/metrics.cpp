#include "taigan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace taigan {

namespace {

void check_pair(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("metric inputs differ in size");
  if (a.empty()) throw ValidationError("metric inputs are empty");
}

}  // namespace

std::vector<double> to_doubles(const Volume& v) { return {v.storage().begin(), v.storage().end()}; }

double nmae(std::span<const double> pred, std::span<const double> ref) {
  check_pair(pred, ref);
  const auto [lo, hi] = std::minmax_element(ref.begin(), ref.end());
  const double range = *hi - *lo;
  if (!(range > 0)) throw ValidationError("NMAE undefined for a constant reference");
  double acc = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) acc += std::abs(pred[i] - ref[i]);
  return acc / static_cast<double>(ref.size()) / range;
}

double mse_metric(std::span<const double> pred, std::span<const double> ref) {
  check_pair(pred, ref);
  double acc = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) acc += (pred[i] - ref[i]) * (pred[i] - ref[i]);
  return acc / static_cast<double>(ref.size());
}

double ssim(std::span<const double> pred, std::span<const double> ref) {
  check_pair(pred, ref);
  const double n = static_cast<double>(ref.size());
  double mp = 0, mr = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    mp += pred[i];
    mr += ref[i];
  }
  mp /= n;
  mr /= n;
  double vp = 0, vr = 0, cov = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    vp += (pred[i] - mp) * (pred[i] - mp);
    vr += (ref[i] - mr) * (ref[i] - mr);
    cov += (pred[i] - mp) * (ref[i] - mr);
  }
  vp /= n;
  vr /= n;
  cov /= n;
  const auto [lo, hi] = std::minmax_element(ref.begin(), ref.end());
  double dr = *hi - *lo;
  if (!(dr > 0)) dr = 1.0;
  const double c1 = (0.01 * dr) * (0.01 * dr);
  const double c2 = (0.03 * dr) * (0.03 * dr);
  return ((2 * mp * mr + c1) * (2 * cov + c2)) / ((mp * mp + mr * mr + c1) * (vp + vr + c2));
}

double ssim_windowed(const Volume& pred, const Volume& ref, int window) {
  if (pred.dims() != ref.dims()) throw ValidationError("metric inputs differ in size");
  if (window < 1) throw ValidationError("window must be positive");
  const Index3 d = ref.dims();
  const int w = std::min({window, d.x, d.y, d.z});
  const auto [lo, hi] = std::minmax_element(ref.storage().begin(), ref.storage().end());
  double dr = *hi - *lo;
  if (!(dr > 0)) dr = 1.0;
  const double c1 = (0.01 * dr) * (0.01 * dr);
  const double c2 = (0.03 * dr) * (0.03 * dr);
  double total = 0;
  std::size_t count = 0;
  const double n = static_cast<double>(w) * w * w;
  for (int z = 0; z + w <= d.z; ++z) {
    for (int y = 0; y + w <= d.y; ++y) {
      for (int x = 0; x + w <= d.x; ++x) {
        double sp = 0, sr = 0, spp = 0, srr = 0, spr = 0;
        for (int k = 0; k < w; ++k)
          for (int j = 0; j < w; ++j)
            for (int i = 0; i < w; ++i) {
              const double a = pred.at(x + i, y + j, z + k);
              const double b = ref.at(x + i, y + j, z + k);
              sp += a;
              sr += b;
              spp += a * a;
              srr += b * b;
              spr += a * b;
            }
        const double mp = sp / n, mr = sr / n;
        const double vp = spp / n - mp * mp, vr = srr / n - mr * mr, cov = spr / n - mp * mr;
        total += ((2 * mp * mr + c1) * (2 * cov + c2)) / ((mp * mp + mr * mr + c1) * (vp + vr + c2));
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

double psnr(std::span<const double> pred, std::span<const double> ref) {
  const double m = mse_metric(pred, ref);
  if (m == 0) return std::numeric_limits<double>::infinity();
  const double peak = *std::max_element(ref.begin(), ref.end());
  return 10.0 * std::log10(peak * peak / m);
}

double nmi(std::span<const double> moving, std::span<const double> reference, int bins) {
  check_pair(moving, reference);
  if (bins < 2) throw ValidationError("NMI needs at least two bins");
  const auto [ma, mb] = std::minmax_element(moving.begin(), moving.end());
  const auto [ra, rb] = std::minmax_element(reference.begin(), reference.end());
  const double lo = std::min(*ma, *ra);
  const double hi = std::max(*mb, *rb);
  if (!(hi > lo)) throw ValidationError("NMI undefined: both images occupy a single bin");
  const double scale = bins / (hi - lo);
  auto bin = [&](double v) { return std::min(bins - 1, static_cast<int>((v - lo) * scale)); };
  std::vector<double> joint(static_cast<std::size_t>(bins) * bins, 0.0);
  std::vector<double> pa(bins, 0.0), pb(bins, 0.0);
  const double inv_n = 1.0 / static_cast<double>(moving.size());
  for (std::size_t i = 0; i < moving.size(); ++i) {
    const int a = bin(moving[i]);
    const int b = bin(reference[i]);
    joint[static_cast<std::size_t>(a) * bins + b] += inv_n;
    pa[a] += inv_n;
    pb[b] += inv_n;
  }
  auto entropy = [](const std::vector<double>& p) {
    double h = 0;
    for (double v : p) {
      if (v > 0) h -= v * std::log(v);
    }
    return h;
  };
  const double hab = entropy(joint);
  if (!(hab > 0)) throw ValidationError("NMI undefined: joint histogram occupies a single bin");
  return (entropy(pa) + entropy(pb)) / hab;
}

double nmae(const Volume& pred, const Volume& ref) { return nmae(to_doubles(pred), to_doubles(ref)); }
double mse_metric(const Volume& pred, const Volume& ref) { return mse_metric(to_doubles(pred), to_doubles(ref)); }
double ssim(const Volume& pred, const Volume& ref) { return ssim(to_doubles(pred), to_doubles(ref)); }
double psnr(const Volume& pred, const Volume& ref) { return psnr(to_doubles(pred), to_doubles(ref)); }
double nmi(const Volume& moving, const Volume& reference, int bins) {
  return nmi(to_doubles(moving), to_doubles(reference), bins);
}

SimilarityScores similarity(const Volume& pred, const Volume& ref) {
  const auto p = to_doubles(pred);
  const auto r = to_doubles(ref);
  return {nmae(p, r), mse_metric(p, r), ssim(p, r), psnr(p, r)};
}

}  // namespace taigan
