#include "taigan/kinetics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

namespace taigan {

std::vector<double> convolve_exponential(std::span<const double> input, double dt, double K1, double k2) {
  std::vector<double> out(input.size(), 0.0);
  if (input.empty()) return out;
  const double kh = k2 * dt;
  double decay, a0, a1;  // out[n+1] = decay*out[n] + K1*(a0*p0 + a1*(p1 - p0))
  if (kh < 1e-8) {
    decay = 1.0 - kh;
    a0 = dt * (1.0 - 0.5 * kh);
    a1 = dt * (0.5 - kh / 6.0);
  } else {
    decay = std::exp(-kh);
    const double one_minus = -std::expm1(-kh);
    a0 = one_minus / k2;
    a1 = (dt / k2 - one_minus / (k2 * k2)) / dt;
  }
  for (std::size_t n = 0; n + 1 < input.size(); ++n) {
    const double p0 = input[n];
    const double p1 = input[n + 1];
    out[n + 1] = decay * out[n] + K1 * (a0 * p0 + a1 * (p1 - p0));
  }
  return out;
}

double average_sampled(std::span<const double> values, double dt, double t0, double t1) {
  if (values.empty() || !(t1 > t0)) return 0.0;
  const auto n = values.size();
  auto at = [&](double t) {
    const double s = t / dt;
    if (s <= 0) return values[0];
    const auto i = static_cast<std::size_t>(s);
    if (i + 1 >= n) return values[n - 1];
    const double f = s - static_cast<double>(i);
    return values[i] * (1 - f) + values[i + 1] * f;
  };
  // Exact integral of the linear interpolant: trapezoids between breakpoints.
  double integral = 0;
  double ta = t0;
  double va = at(t0);
  auto next_node = static_cast<std::size_t>(std::floor(t0 / dt)) + 1;
  while (ta < t1) {
    double tb = static_cast<double>(next_node) * dt;
    if (tb > t1 || next_node >= n) tb = t1;
    const double vb = at(tb);
    integral += 0.5 * (va + vb) * (tb - ta);
    ta = tb;
    va = vb;
    ++next_node;
  }
  return integral / (t1 - t0);
}

double interpolate_tac(std::span<const double> tac, const FrameSchedule& schedule, double t) {
  if (tac.empty() || t < schedule.start_times.front()) return 0.0;
  const std::size_t n = tac.size();
  if (t <= schedule.mid_time(0)) return tac[0];
  if (t >= schedule.mid_time(n - 1)) return tac[n - 1];
  std::size_t i = 0;
  while (i + 1 < n && schedule.mid_time(i + 1) < t) ++i;
  const double m0 = schedule.mid_time(i);
  const double m1 = schedule.mid_time(i + 1);
  const double f = (t - m0) / (m1 - m0);
  return tac[i] * (1 - f) + tac[i + 1] * f;
}

namespace {

struct FineInput {
  double dt = 0.1;  // s
  std::vector<double> samples;
};

FineInput sample_input(std::span<const double> input_tac, const FrameSchedule& schedule, double dt) {
  FineInput fi;
  fi.dt = dt;
  const double t_end = schedule.end_time(schedule.size() - 1);
  const auto n = static_cast<std::size_t>(std::ceil(t_end / dt - 1e-9)) + 1;
  fi.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) fi.samples[i] = interpolate_tac(input_tac, schedule, static_cast<double>(i) * dt);
  return fi;
}

/// Frame-averaged tissue curve for K1 = 1 (the model is linear in K1).
std::vector<double> unit_tissue_frames(const FineInput& fi, double k2_per_min, const FrameSchedule& schedule) {
  const double k2 = k2_per_min / 60.0;
  const auto ct = convolve_exponential(fi.samples, fi.dt, 1.0 / 60.0, k2);
  auto node = [&](double t, std::size_t& idx) {
    const double s = t / fi.dt;
    idx = static_cast<std::size_t>(std::llround(s));
    return std::fabs(s - static_cast<double>(idx)) < 1e-6 && idx < ct.size();
  };
  std::vector<double> out(schedule.size());
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    const double a = schedule.start_times[i], b = schedule.end_time(i);
    std::size_t ia = 0, ib = 0;
    if (k2 * (b - a) > 1e-3 && node(a, ia) && node(b, ib)) {
      // Integrating dCt/dt = Cp/60 - k2 Ct over the frame gives the exact mean
      // without resampling Ct between grid nodes.
      const double cp_mean = average_sampled(fi.samples, fi.dt, a, b);
      out[i] = (cp_mean / 60.0 - (ct[ib] - ct[ia]) / (b - a)) / k2;
    } else {
      out[i] = average_sampled(ct, fi.dt, a, b);
    }
  }
  return out;
}

void check_schedule_length(std::size_t n, const FrameSchedule& schedule) {
  schedule.validate();
  if (n != schedule.size()) throw ValidationError("TAC length does not match the frame schedule");
}

}  // namespace

std::vector<double> forward_model(double K1, double k2, double v, std::span<const double> input_tac,
                                  const FrameSchedule& schedule, double fine_dt_s) {
  check_schedule_length(input_tac.size(), schedule);
  if (K1 < 0 || k2 < 0) throw ValidationError("rate constants must be non-negative");
  if (v < 0 || v > 1) throw ValidationError("blood fraction must lie in [0, 1]");
  const auto fi = sample_input(input_tac, schedule, fine_dt_s);
  const auto unit = unit_tissue_frames(fi, k2, schedule);
  std::vector<double> out(unit.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1 - v) * K1 * unit[i] + v * input_tac[i];
  return out;
}

FitWeights fit_weights(std::span<const double> durations_s, std::span<const double> frame_totals,
                       std::span<const double> dcf) {
  if (durations_s.size() != frame_totals.size() || durations_s.size() != dcf.size()) {
    throw ValidationError("weight inputs differ in length");
  }
  FitWeights fw;
  fw.w.resize(durations_s.size());
  for (std::size_t i = 0; i < fw.w.size(); ++i) {
    if (!(durations_s[i] > 0)) throw ValidationError("frame durations must be positive");
    const double t = frame_totals[i];
    fw.w[i] = (t > 0 && std::isfinite(t)) ? durations_s[i] * durations_s[i] / (t * dcf[i] * dcf[i]) : 0.0;
  }
  return fw;
}

FitWeights fit_weights(const DynamicStudy& study) {
  std::vector<double> totals(study.frame_count());
  const double vox_ml = study.voxel_volume_ml();
  for (std::size_t i = 0; i < totals.size(); ++i) {
    double s = 0;
    for (float v : study.frames[i].storage()) s += v;
    totals[i] = s * vox_ml;
  }
  return fit_weights(study.frame_durations, totals, study.decay_correction_factors);
}

KineticFit fit_compartment(std::span<const double> myo_tac, std::span<const double> lvbp_tac,
                           const FitWeights& weights, const FrameSchedule& schedule, const FitOptions& options) {
  const std::size_t n = myo_tac.size();
  if (lvbp_tac.size() != n || weights.w.size() != n) throw ValidationError("fit inputs differ in length");
  check_schedule_length(n, schedule);
  std::size_t n_pos = 0;
  for (double w : weights.w) {
    if (w < 0 || !std::isfinite(w)) throw ValidationError("fit weights must be finite and non-negative");
    if (w > 0) ++n_pos;
  }
  if (n_pos < 4) throw ValidationError("need at least 4 frames with positive weight");

  const auto fi = sample_input(lvbp_tac, schedule, options.fine_dt_s);
  const auto& b = options.bounds;
  std::vector<double> sw(n);
  for (std::size_t i = 0; i < n; ++i) sw[i] = std::sqrt(weights.w[i]);

  using Vec3 = Eigen::Vector3d;
  auto clamp = [&](Vec3 p) {
    p[0] = std::clamp(p[0], b.K1_min, b.K1_max);
    p[1] = std::clamp(p[1], b.k2_min, b.k2_max);
    p[2] = std::clamp(p[2], b.v_min, b.v_max);
    return p;
  };
  auto residuals = [&](const std::vector<double>& unit, const Vec3& p) {
    Eigen::VectorXd r(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      const double model = (1 - p[2]) * p[0] * unit[i] + p[2] * lvbp_tac[i];
      r[static_cast<Eigen::Index>(i)] = sw[i] * (model - myo_tac[i]);
    }
    return r;
  };

  KineticFit best;
  double best_cost = std::numeric_limits<double>::infinity();

  for (double k1s : options.K1_starts) {
    for (double k2s : options.k2_starts) {
      for (double vs : options.v_starts) {
        Vec3 p = clamp(Vec3(k1s, k2s, vs));
        auto unit = unit_tissue_frames(fi, p[1], schedule);
        Eigen::VectorXd r = residuals(unit, p);
        double cost = r.squaredNorm();
        double lambda = 1e-3;
        int it = 0;
        bool converged = false;
        for (; it < options.max_iterations && std::isfinite(cost); ++it) {
          // Jacobian: analytic in K1 and v, central difference in k2.
          const double h = 1e-6 * std::max(1.0, p[1]);
          const double k2_lo = std::max(p[1] - h, 0.0);
          const double k2_hi = p[1] + h;
          const auto unit_lo = unit_tissue_frames(fi, k2_lo, schedule);
          const auto unit_hi = unit_tissue_frames(fi, k2_hi, schedule);
          Eigen::MatrixXd J(static_cast<Eigen::Index>(n), 3);
          for (std::size_t i = 0; i < n; ++i) {
            const auto row = static_cast<Eigen::Index>(i);
            J(row, 0) = sw[i] * (1 - p[2]) * unit[i];
            J(row, 1) = sw[i] * (1 - p[2]) * p[0] * (unit_hi[i] - unit_lo[i]) / (k2_hi - k2_lo);
            J(row, 2) = sw[i] * (lvbp_tac[i] - p[0] * unit[i]);
          }
          const Eigen::Matrix3d JtJ = J.transpose() * J;
          const Vec3 g = J.transpose() * r;
          bool improved = false;
          for (int tries = 0; tries < 30; ++tries) {
            Eigen::Matrix3d A = JtJ;
            for (int d = 0; d < 3; ++d) A(d, d) += lambda * std::max(JtJ(d, d), 1e-30);
            const Vec3 step = A.ldlt().solve(-g);
            const Vec3 trial = clamp(p + step);
            const auto trial_unit = unit_tissue_frames(fi, trial[1], schedule);
            const Eigen::VectorXd tr = residuals(trial_unit, trial);
            const double tc = tr.squaredNorm();
            if (std::isfinite(tc) && tc <= cost) {
              const double rel = (cost - tc) / std::max(cost, 1e-300);
              const double move = (trial - p).norm();
              p = trial;
              unit = trial_unit;
              r = tr;
              cost = tc;
              lambda = std::max(lambda * 0.3, 1e-12);
              improved = true;
              if (rel < 1e-14 || move < 1e-12) converged = true;
              break;
            }
            lambda *= 10;
          }
          if (!improved) {
            converged = true;  // no descent direction left at this damping: stationary point
            break;
          }
          if (converged) break;
        }
        if (std::isfinite(cost) && cost < best_cost) {
          best_cost = cost;
          best.K1 = p[0];
          best.k2 = p[1];
          best.v = p[2];
          best.converged = converged;
          best.iterations = it;
        }
      }
    }
  }
  if (!std::isfinite(best_cost)) throw ConvergenceError("every multi-start compartment fit failed");
  best.weighted_residual = best_cost / static_cast<double>(n_pos);
  best.mbf = k1_to_mbf(best.K1, options.alpha, options.beta);
  return best;
}

double renkin_crone_k1(double mbf, double alpha, double beta) {
  if (!(mbf > 0)) throw ValidationError("MBF must be positive");
  return mbf * (1.0 - alpha * std::exp(-beta / mbf));
}

double k1_to_mbf(double K1, double alpha, double beta) {
  if (!(K1 > 0) || !std::isfinite(K1)) throw ValidationError("K1 must be positive to convert to MBF");
  if (alpha == 0.0) return K1;
  // K1(MBF) < MBF for alpha > 0, so the root lies above K1.
  double lo = K1;
  double hi = alpha < 1 ? K1 / (1 - alpha) : 2 * K1;
  while (renkin_crone_k1(hi, alpha, beta) < K1) hi *= 2;
  for (int i = 0; i < 200 && hi - lo > 0; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (renkin_crone_k1(mid, alpha, beta) < K1) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

PercentDiff percent_diff(const KineticFit& estimate, const KineticFit& baseline) {
  if (!(baseline.K1 > 0) || !(baseline.mbf > 0)) throw ValidationError("baseline K1 and MBF must be positive");
  return {100.0 * (estimate.K1 - baseline.K1) / baseline.K1, 100.0 * (estimate.mbf - baseline.mbf) / baseline.mbf};
}

}  // namespace taigan
