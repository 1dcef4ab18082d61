#pragma once

#include <span>

namespace taigan {

struct MeanSd {
  double mean = 0;
  double sd = 0;  // sample standard deviation (n - 1)
  std::size_t n = 0;
};

MeanSd mean_sd(std::span<const double> values);
double median(std::span<const double> values);

struct PairedTTest {
  double t = 0;
  double dof = 0;
  double p_value = 1;  // two-tailed
  double mean_difference = 0;
};

/// Paired two-tailed Student t-test on a - b. Requires n >= 2; identical samples give p = 1.
PairedTTest paired_t_test(std::span<const double> a, std::span<const double> b);

}  // namespace taigan
