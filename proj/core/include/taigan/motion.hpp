#pragma once

// Non-rigid inter-frame motion: control-point displacement fields, dense
// warping, a multi-resolution free-form registration baseline and the
// control-point motion error.
//
// Convention: a field u maps reference space to moving space. Warping a
// frame F by u gives W(x) = F(x + u(x)) (backward warping). register(moving,
// reference) returns u with warp(moving, u) ~ reference. A simulated truth
// field is therefore applied to a motion-free frame through its inverse.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "taigan/random.hpp"
#include "taigan/volume.hpp"

namespace taigan {

using Vec3 = std::array<double, 3>;

/// Control-point field. Control point (i, j, k) sits at (i, j, k) * spacing_mm
/// in the physical frame whose origin is the centre of voxel (0, 0, 0).
struct MotionField {
  Index3 control_dims{};
  double spacing_mm = 16.0;
  int order = 1;  // 1 = trilinear, 3 = cubic B-spline densification
  int frame_index = -1;
  std::vector<Vec3> displacements;  // mm, x fastest

  /// Zero field whose control grid covers a volume of `dims` voxels.
  static MotionField covering(const Index3& dims, const Spacing& voxel, double spacing_mm, int order = 1);

  std::size_t size() const noexcept { return displacements.size(); }
  Vec3& at(int i, int j, int k) { return displacements[index(i, j, k)]; }
  const Vec3& at(int i, int j, int k) const { return displacements[index(i, j, k)]; }
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(control_dims.x) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(control_dims.y) * static_cast<std::size_t>(k));
  }

  /// Displacement (mm) at a physical position (mm).
  Vec3 displacement_at(const Vec3& position_mm) const;
  /// Densified displacement evaluated at every control point.
  std::vector<Vec3> control_point_displacements() const;
  /// Throws ValidationError on non-finite values or an inconsistent layout.
  void validate() const;
  /// Throws ValidationError unless the control grid spans a volume of `dims`.
  void check_covers(const Index3& dims, const Spacing& voxel) const;
  bool same_grid(const MotionField& other) const;

  MotionField scaled(double factor) const;

  friend bool operator==(const MotionField&, const MotionField&) = default;
};

/// Dense displacement in mm, one triple per voxel.
struct DenseField {
  Index3 dims{};
  std::vector<Vec3> values;

  Vec3& at(int x, int y, int z) { return values[offset(x, y, z)]; }
  const Vec3& at(int x, int y, int z) const { return values[offset(x, y, z)]; }
  std::size_t offset(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims.x) * (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims.y) * static_cast<std::size_t>(z));
  }
};

DenseField densify(const MotionField& field, const Index3& dims, const Spacing& voxel);

struct MotionSimulationSpec {
  Index3 dims{48, 48, 32};
  Spacing voxel{3.125, 3.125, 3.27};
  double control_spacing_mm = 16.0;
  int order = 1;
  double mean_magnitude_mm = 2.0;  // before magnitude_scale
  int modes = 3;                   // random Fourier modes per component
  double max_cycles = 0.25;         // highest spatial frequency, cycles across the field of view
};

/// Smooth random field: a random translation plus `modes` low-frequency
/// sinusoids per component, rescaled so the mean control-point magnitude is
/// mean_magnitude_mm * magnitude_scale.
MotionField simulate_motion_field(Rng& rng, double magnitude_scale, const MotionSimulationSpec& spec);

/// Largest |difference| between adjacent control-point displacements (mm).
double max_neighbour_difference(const MotionField& field);

/// Backward warp with trilinear sampling, zero outside.
Volume warp_frame(const Volume& frame, const MotionField& field, const Spacing& voxel);
Volume warp_dense(const Volume& frame, const DenseField& field, const Spacing& voxel);

/// Dense inverse v with u(x + v(x)) = -v(x), by fixed-point iteration.
DenseField invert_field(const MotionField& field, const Index3& dims, const Spacing& voxel, int iterations = 30);

/// Motion-corrupted version of a motion-free frame such that `truth` is the
/// field registration should recover.
Volume apply_simulated_motion(const Volume& frame, const MotionField& truth, const Spacing& voxel);

enum class Similarity { kMse, kNmi };

struct RegistrationConfig {
  Similarity similarity = Similarity::kMse;
  int levels = 3;
  double control_spacing_mm = 16.0;  // finest level; doubles per coarser level
  int order = 1;
  double smoothness_weight = 0.1;
  int iterations = 60;  // per level
  double step_mm = 2.0;  // initial maximum control-point update
  double min_step_mm = 0.02;
  int nmi_bins = 32;

  void validate() const;
};

struct RegistrationResult {
  MotionField field;
  double initial_cost = 0;
  double final_cost = 0;
  int iterations = 0;
  bool converged = true;  // false: iteration budget ran out with the step still above min_step_mm
};

RegistrationResult register_frames(const Volume& moving, const Volume& reference, const Spacing& voxel,
                                   const RegistrationConfig& config);

/// Registration objective at a given field (similarity cost + smoothness).
/// Similarity cost is normalised MSE or -NMI on border-replicated samples.
double registration_cost(const Volume& moving, const Volume& reference, const Spacing& voxel, const MotionField& field,
                         const RegistrationConfig& config, std::vector<Vec3>* gradient = nullptr);

/// Mean over control points of (|dx| + |dy| + |dz|) / 3, in mm.
double motion_error(const MotionField& predicted, const MotionField& truth);

/// Mean |displacement| over control points, in mm.
double mean_magnitude(const MotionField& field);

/// Warps each frame with its field (Bq/mL preserved, no normalisation). `fields`
/// is indexed by frame; frames whose field is empty (size 0) and the last
/// (reference) frame are copied unchanged.
DynamicStudy correct_study(const DynamicStudy& study, const std::vector<MotionField>& fields);

void save_motion_field(const MotionField& field, const std::filesystem::path& path);
MotionField load_motion_field(const std::filesystem::path& path);

}  // namespace taigan
