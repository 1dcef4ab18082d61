#include "taigan/stats.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <vector>

#include "taigan/errors.hpp"

namespace taigan {

MeanSd mean_sd(std::span<const double> values) {
  MeanSd r;
  r.n = values.size();
  if (r.n == 0) return r;
  double s = 0;
  for (double v : values) s += v;
  r.mean = s / static_cast<double>(r.n);
  if (r.n > 1) {
    double ss = 0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    r.sd = std::sqrt(ss / static_cast<double>(r.n - 1));
  }
  return r;
}

double median(std::span<const double> values) {
  if (values.empty()) throw ValidationError("median of an empty sample");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

PairedTTest paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("paired samples differ in length");
  if (a.size() < 2) throw ValidationError("paired t-test needs at least two pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const auto ms = mean_sd(d);
  PairedTTest r;
  r.dof = static_cast<double>(d.size() - 1);
  r.mean_difference = ms.mean;
  if (ms.sd == 0) {
    r.t = ms.mean == 0 ? 0 : std::copysign(INFINITY, ms.mean);
    r.p_value = ms.mean == 0 ? 1.0 : 0.0;
    return r;
  }
  r.t = ms.mean / (ms.sd / std::sqrt(static_cast<double>(d.size())));
  const boost::math::students_t dist(r.dof);
  r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

}  // namespace taigan
