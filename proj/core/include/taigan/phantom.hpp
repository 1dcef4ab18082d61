#pragma once

// Synthetic dynamic cardiac PET studies with known kinetics.
//
// Geometry: an ellipsoidal LV with a myocardial shell, an RV cavity beside it
// and a body ellipsoid, all rotated by `orientation_deg` in the xy plane about
// the grid centre. RVBP follows the bolus, LVBP the bolus delayed by the
// transit time, myocardium (1 - v) Ct + v Cp with Ct the one-tissue response to
// the LVBP curve, background a scaled copy of Ct.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "taigan/volume.hpp"

namespace taigan {

enum class InputShape {
  kGammaBolus,  // gamma variate peaking at time_to_peak_s, relaxing to a recirculation plateau
  kConstant,    // bolus_amplitude for t >= 0 (analytic test input)
};

struct PhantomSpec {
  Index3 grid{48, 48, 32};
  Spacing spacing{3.125, 3.125, 3.27};

  // Geometry, millimetres relative to the grid centre (before rotation).
  std::array<double, 3> lv_center_mm{10.0, -6.0, 0.0};
  std::array<double, 3> lv_radii_mm{30.0, 30.0, 38.0};  // epicardial surface
  double myo_thickness_mm = 11.0;
  std::array<double, 3> rv_center_mm{-26.0, 14.0, 0.0};
  std::array<double, 3> rv_radii_mm{22.0, 30.0, 34.0};
  double orientation_deg = 30.0;
  std::array<double, 3> body_radii_mm{92.0, 80.0, 60.0};

  // Input function.
  InputShape input_shape = InputShape::kGammaBolus;
  double bolus_amplitude = 1.2e5;  // Bq/mL at peak
  double time_to_peak_s = 30.0;
  double bolus_sharpness = 3.0;        // gamma-variate exponent
  double recirculation_fraction = 0.06;

  // Kinetics.
  double K1 = 0.8;              // mL/min/g
  double k2 = 0.25;             // 1/min
  double blood_fraction = 0.1;  // v
  double transit_delay_s = 10.0;
  double background_fraction = 0.25;

  // Acquisition.
  double noise_level = 0.3;   // relative sd at unit frame duration (1 s)
  double psf_fwhm_mm = 8.0;   // 0 disables blurring
  int supersample = 2;        // sub-samples per axis for partial-volume painting
  std::uint64_t seed = 1;

  void validate() const;
};

/// Ground truth accompanying a simulated study.
struct KineticTruth {
  double K1 = 0;
  double k2 = 0;
  double blood_fraction = 0;
  double transit_delay_s = 0;
  std::vector<double> rvbp_tac;  // frame-averaged analytic region curves
  std::vector<double> lvbp_tac;
  std::vector<double> myo_tac;
};

struct SimulatedStudy {
  DynamicStudy study;
  CardiacMasks masks;
  KineticTruth truth;
};

/// Bolus concentration at t seconds (0 for t <= 0).
double bolus_input_function(const PhantomSpec& spec, double t);

/// Region activity curves sampled on a fine grid of step `dt` from t = 0 to `t_end`.
struct RegionCurves {
  double dt = 0.1;
  std::vector<double> rvbp;
  std::vector<double> lvbp;
  std::vector<double> tissue;  // Ct only, no blood fraction
};
RegionCurves region_curves(const PhantomSpec& spec, double t_end, double dt = 0.05);

SimulatedStudy simulate_study(const PhantomSpec& spec, const FrameSchedule& schedule, const std::string& study_id = "phantom");

/// Relative jitter applied per study: rate constants, timing and amplitude are
/// scaled by U(1 - j, 1 + j); heart position shifts by U(-j, j) * 40 mm in-plane,
/// orientation by U(-j, j) * 60 degrees, radii by U(1 - j/2, 1 + j/2).
struct CohortEntry {
  std::string study_id;
  std::filesystem::path path;  // relative to the cohort directory
  PhantomSpec spec;
};

/// Deterministic cohort written to `out_dir` with a `manifest.txt` listing each
/// study and its true kinetics.
std::vector<CohortEntry> make_cohort(int n_studies, const PhantomSpec& base, double parameter_jitter, std::uint64_t seed,
                                     const FrameSchedule& schedule, const std::filesystem::path& out_dir);

/// Per-study specs without writing anything.
std::vector<CohortEntry> plan_cohort(int n_studies, const PhantomSpec& base, double parameter_jitter, std::uint64_t seed);

std::vector<CohortEntry> load_cohort_manifest(const std::filesystem::path& cohort_dir);

/// Rb-82 decay correction factor for a frame (half-life 76.4 s).
double rb82_decay_correction(double start_s, double duration_s);

}  // namespace taigan
