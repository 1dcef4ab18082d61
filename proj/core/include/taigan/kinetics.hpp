#pragma once

// One-tissue compartment modelling for Rb-82 myocardial perfusion:
//
//   dCt/dt = K1 Cp(t) - k2 Ct(t)
//   Cmodel = (1 - v) Ct + v Cp
//
// fitted by weighted least squares with w_i = dur_i^2 / (T_i DCF_i^2), and the
// Renkin-Crone extraction model K1 = MBF (1 - alpha exp(-beta / MBF)).
//
// Rate constants are per minute (K1 in mL/min/g, k2 in 1/min); all times at the
// interface are seconds.

#include <span>
#include <vector>

#include "taigan/volume.hpp"

namespace taigan {

inline constexpr double kRenkinCroneAlpha = 0.74;
inline constexpr double kRenkinCroneBeta = 0.51;

/// Exact convolution K1 * (Cp (x) exp(-k2 t)) for an input that is linear between
/// samples spaced `dt`. Rates are in the reciprocal time unit of `dt`.
std::vector<double> convolve_exponential(std::span<const double> input, double dt, double K1, double k2);

/// Mean over [t0, t1] of the piecewise-linear curve through (i*dt, values[i]).
/// Held constant past the last sample.
double average_sampled(std::span<const double> values, double dt, double t0, double t1);

/// Continuous input curve reconstructed from a frame TAC: the first frame value
/// is held from the first frame start, then linear between frame mid-times,
/// then held after the last mid-time. Zero before the first frame.
double interpolate_tac(std::span<const double> tac, const FrameSchedule& schedule, double t);

/// Model TAC: frame average of (1 - v) Ct plus v times the measured input frame value.
std::vector<double> forward_model(double K1, double k2, double v, std::span<const double> input_tac,
                                  const FrameSchedule& schedule, double fine_dt_s = 0.1);

struct FitWeights {
  std::vector<double> w;
};

/// Weights from explicit per-frame quantities; frames with total <= 0 get weight 0.
FitWeights fit_weights(std::span<const double> durations_s, std::span<const double> frame_totals,
                       std::span<const double> dcf);

/// Weights for a study, T_i = total activity of the frame (sum of voxel values times voxel volume).
FitWeights fit_weights(const DynamicStudy& study);

struct KineticFit {
  double K1 = 0;  // mL/min/g
  double k2 = 0;  // 1/min
  double v = 0;   // blood fraction
  double mbf = 0; // mL/min/g
  double weighted_residual = 0;  // (1/n) sum w_i r_i^2 over frames with w_i > 0
  bool converged = false;
  int iterations = 0;
};

struct ParameterBounds {
  double K1_min = 1e-6, K1_max = 5.0;
  double k2_min = 1e-6, k2_max = 5.0;
  double v_min = 0.0, v_max = 0.7;
};

struct FitOptions {
  std::vector<double> K1_starts{0.2, 0.6, 1.2};
  std::vector<double> k2_starts{0.05, 0.2, 0.6};
  std::vector<double> v_starts{0.0, 0.2};
  ParameterBounds bounds{};
  double fine_dt_s = 0.1;
  int max_iterations = 200;
  double alpha = kRenkinCroneAlpha;
  double beta = kRenkinCroneBeta;
};

/// Bounded Levenberg-Marquardt from every start on the grid; returns the lowest cost.
/// Throws ValidationError on length mismatch or fewer than 4 positively weighted
/// frames, ConvergenceError if no start yields a finite cost.
KineticFit fit_compartment(std::span<const double> myo_tac, std::span<const double> lvbp_tac,
                           const FitWeights& weights, const FrameSchedule& schedule,
                           const FitOptions& options = {});

/// K1 for a given flow.
double renkin_crone_k1(double mbf, double alpha = kRenkinCroneAlpha, double beta = kRenkinCroneBeta);

/// Unique positive MBF with renkin_crone_k1(MBF) == K1, by bisection. K1 <= 0 throws.
double k1_to_mbf(double K1, double alpha = kRenkinCroneAlpha, double beta = kRenkinCroneBeta);

struct PercentDiff {
  double k1 = 0;   // %
  double mbf = 0;  // %
};

/// (estimate - baseline) / baseline, in percent.
PercentDiff percent_diff(const KineticFit& estimate, const KineticFit& baseline);

}  // namespace taigan
