#pragma once

// Core data model for dynamic PET studies: 3-D grids, ROI masks, the
// on-disk study container and patch cropping.

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "taigan/errors.hpp"

namespace taigan {

struct Index3 {
  int x = 0;
  int y = 0;
  int z = 0;

  friend auto operator<=>(const Index3&, const Index3&) = default;
  Index3 operator+(const Index3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Index3 operator-(const Index3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  std::size_t volume() const {
    return static_cast<std::size_t>(x) * static_cast<std::size_t>(y) * static_cast<std::size_t>(z);
  }
};

/// Voxel size in millimetres.
struct Spacing {
  double dx = 1.0;
  double dy = 1.0;
  double dz = 1.0;

  friend bool operator==(const Spacing&, const Spacing&) = default;
  double operator[](int axis) const { return axis == 0 ? dx : (axis == 1 ? dy : dz); }
};

/// Dense 3-D grid, x fastest.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  explicit Grid(Index3 dims, T fill = T{}) : dims_(checked(dims)), data_(dims.volume(), fill) {}

  const Index3& dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  bool contains(int x, int y, int z) const noexcept {
    return x >= 0 && y >= 0 && z >= 0 && x < dims_.x && y < dims_.y && z < dims_.z;
  }
  bool contains(const Index3& p) const noexcept { return contains(p.x, p.y, p.z); }

  std::size_t offset(int x, int y, int z) const noexcept {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims_.x) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims_.y) * static_cast<std::size_t>(z));
  }

  T& at(int x, int y, int z) noexcept { return data_[offset(x, y, z)]; }
  const T& at(int x, int y, int z) const noexcept { return data_[offset(x, y, z)]; }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Zero outside the grid.
  T value_or_zero(int x, int y, int z) const noexcept { return contains(x, y, z) ? at(x, y, z) : T{}; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  static Index3 checked(Index3 d) {
    if (d.x < 0 || d.y < 0 || d.z < 0) throw ValidationError("negative grid dimension");
    return d;
  }

  Index3 dims_{};
  std::vector<T> data_;
};

using Volume = Grid<float>;
using Mask = Grid<std::uint8_t>;

/// Minimum admissible spatial extent along each axis.
inline constexpr int kMinSpatialDim = 8;

/// Frame timing in seconds.
struct FrameSchedule {
  std::vector<double> start_times;
  std::vector<double> durations;

  std::size_t size() const noexcept { return start_times.size(); }
  double mid_time(std::size_t i) const { return start_times[i] + 0.5 * durations[i]; }
  double end_time(std::size_t i) const { return start_times[i] + durations[i]; }
  void validate() const;

  /// 27 contiguous frames: 14x5 s, 6x10 s, 3x20 s, 3x30 s, 1x90 s (370 s total).
  static FrameSchedule rb82_27_frames();
  /// Contiguous frames from a list of durations, starting at t = 0.
  static FrameSchedule from_durations(const std::vector<double>& durations);

  friend bool operator==(const FrameSchedule&, const FrameSchedule&) = default;
};

struct DynamicStudy {
  std::vector<Volume> frames;  // Bq/mL
  Spacing voxel_spacing;
  std::vector<double> frame_durations;     // s
  std::vector<double> frame_start_times;   // s
  std::vector<double> decay_correction_factors;
  std::string study_id;

  std::size_t frame_count() const noexcept { return frames.size(); }
  Index3 dims() const { return frames.empty() ? Index3{} : frames.front().dims(); }
  double frame_mid_time(std::size_t i) const { return frame_start_times[i] + 0.5 * frame_durations[i]; }
  FrameSchedule schedule() const { return {frame_start_times, frame_durations}; }
  double voxel_volume_ml() const { return voxel_spacing.dx * voxel_spacing.dy * voxel_spacing.dz * 1e-3; }

  /// Throws ValidationError describing the first violated invariant.
  void validate() const;

  friend bool operator==(const DynamicStudy&, const DynamicStudy&) = default;
};

struct CardiacMasks {
  Mask rvbp;
  Mask lvbp;
  Mask myo;
  Index3 lv_inferior_wall_center;

  void validate(const Index3& dims) const;

  friend bool operator==(const CardiacMasks&, const CardiacMasks&) = default;
};

/// Writes `study.meta`, `frame_####.raw` and `mask_{rvbp,lvbp,myo}.raw` into `dir`.
/// Layout is documented in docs/formats.md.
void save_study(const DynamicStudy& study, const CardiacMasks& masks, const std::filesystem::path& dir);

/// Reads a container written by save_study; validates both study and masks.
std::pair<DynamicStudy, CardiacMasks> load_study(const std::filesystem::path& dir);

/// Extracts a `size` patch centred on `center` (centre voxel = center, i.e. patch
/// origin = center - size/2). Out-of-bounds voxels are zero.
template <typename T>
Grid<T> crop_patch(const Grid<T>& volume, const Index3& center, const Index3& size);

/// Inverse of crop_patch: writes `patch` back into `volume` at the same placement,
/// ignoring out-of-bounds voxels.
template <typename T>
void paste_patch(Grid<T>& volume, const Grid<T>& patch, const Index3& center);

/// Patch origin used by crop_patch / paste_patch.
inline Index3 patch_origin(const Index3& center, const Index3& size) {
  return {center.x - size.x / 2, center.y - size.y / 2, center.z - size.z / 2};
}

/// Translates a grid by an integer voxel offset, zero-filling uncovered voxels.
template <typename T>
Grid<T> shift_grid(const Grid<T>& g, const Index3& shift);

/// Centroid of a mask in voxel coordinates.
std::array<double, 3> mask_centroid(const Mask& m);

std::size_t mask_count(const Mask& m);

}  // namespace taigan
