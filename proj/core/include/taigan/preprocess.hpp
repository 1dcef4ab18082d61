#pragma once

// Data protocol between raw studies and the conversion network: TAC
// extraction, EQ-frame detection, frame selection, intensity and temporal
// normalisation, patch sampling with augmentation, and mask jitter.

#include <cstddef>
#include <vector>

#include "taigan/random.hpp"
#include "taigan/volume.hpp"

namespace taigan {

struct TimeActivityCurves {
  std::vector<double> rvbp;  // Bq/mL per frame
  std::vector<double> lvbp;
  std::vector<double> myo;
  FrameSchedule schedule;

  std::size_t size() const noexcept { return lvbp.size(); }
};

/// Mean frame value inside each mask. Throws ValidationError on an empty mask.
TimeActivityCurves extract_tacs(const DynamicStudy& study, const CardiacMasks& masks);

/// Mean of `frame` inside `mask`.
double region_mean(const Volume& frame, const Mask& mask);

/// Index of the first frame where either blood pool is non-zero.
std::size_t first_active_frame(const TimeActivityCurves& tacs);

/// First frame (after leading inactive frames) with LVBP >= RVBP.
/// Throws NoEqFrameError if the curves never cross.
std::size_t find_eq_frame(const TimeActivityCurves& tacs);

struct FrameSelection {
  std::vector<std::size_t> included;  // ascending, all < reference_index
  std::size_t eq_index = 0;
  std::size_t reference_index = 0;  // last frame

  /// Included frames strictly before the EQ frame.
  std::vector<std::size_t> pre_eq() const;
  bool is_included(std::size_t frame) const;
};

/// Included = frames i < T-1 with lvbp[i] > threshold_fraction * max(lvbp).
FrameSelection select_frames(const TimeActivityCurves& tacs, double threshold_fraction = 0.10);

struct IntensityRestore {
  double min = 0;
  double max = 1;

  double to_normalized(double v) const { return 2.0 * (v - min) / (max - min) - 1.0; }
  double to_original(double n) const { return min + 0.5 * (n + 1.0) * (max - min); }
};

/// Affine map of the frame range onto [-1, 1]; throws on a constant frame.
IntensityRestore intensity_params(const Volume& frame);
Volume normalize_intensity(const Volume& frame, const IntensityRestore& params);
std::pair<Volume, IntensityRestore> normalize_intensity(const Volume& frame);
Volume restore_intensity(const Volume& normalized, const IntensityRestore& params);

/// Per-frame auxiliary sequence for the temporal encoder: `steps` rows of
/// (RVBP, LVBP, one-hot bit), row-major.
struct TemporalConditioning {
  std::size_t steps = 0;
  static constexpr std::size_t kFeatures = 3;
  std::vector<double> values;  // steps * kFeatures

  double at(std::size_t step, std::size_t feature) const { return values[step * kFeatures + feature]; }
};

/// Peak-normalised, EQ-aligned blood-pool TACs. Sequence step s holds frame
/// s - eq_slot + eq_index, so the EQ frame of every study lands on eq_slot.
struct TemporalInputs {
  std::vector<double> rvbp;
  std::vector<double> lvbp;
  std::size_t eq_index = 0;
  std::size_t eq_slot = 0;

  std::size_t steps() const noexcept { return lvbp.size(); }
  /// One-hot position of a frame: clamp(i - eq_index + eq_slot, 0, T-1).
  std::size_t slot_of(std::size_t frame) const;
  TemporalConditioning conditioning(std::size_t frame) const;
};

/// eq_slot defaults to T/3.
TemporalInputs normalize_temporal(const TimeActivityCurves& tacs, std::size_t eq_index);

enum class MaskEncoding {
  kSingleChannel,  // RVBP=1, LVBP=2, myo=3, background=0, divided by 3
  kThreeChannel,   // one binary channel per region
};

/// Combined label map (0 background, 1 RVBP, 2 LVBP, 3 myo).
Grid<std::uint8_t> mask_labels(const CardiacMasks& masks);

/// Shifts all three masks by one integer offset drawn uniformly per axis in [-max_shift, max_shift].
CardiacMasks jitter_masks(const CardiacMasks& masks, Rng& rng, int max_shift);
CardiacMasks shift_masks(const CardiacMasks& masks, const Index3& shift);

struct AugmentationConfig {
  Index3 patch_size{64, 64, 32};
  double max_rotation_deg = 45.0;
  int max_shift_vox = 5;
  int mask_jitter_vox = 3;
  MaskEncoding mask_encoding = MaskEncoding::kSingleChannel;
};

/// Draws of one augmentation; recorded so tests can check bounds.
struct PatchTransform {
  double rotation_deg = 0;
  Index3 shift{};
  Index3 mask_shift{};
};

struct TrainingPatch {
  Volume input;                      // normalised early frame, [-1, 1]
  std::vector<Volume> mask_channels; // 1 or 3 channels in [0, 1]
  Volume target;                     // normalised reference frame
  PatchTransform transform;
};

/// Resamples a patch of `size` around `center` after rotating by `rotation_deg`
/// in the xy plane about the patch centre and translating by `shift`. Trilinear,
/// zero outside. Rotation 0 and shift 0 reproduce crop_patch.
Volume transform_patch(const Volume& volume, const Index3& center, const Index3& size, double rotation_deg,
                       const Index3& shift);
Grid<std::uint8_t> transform_labels(const Grid<std::uint8_t>& labels, const Index3& center, const Index3& size,
                                    double rotation_deg, const Index3& shift);

std::vector<Volume> encode_masks(const Grid<std::uint8_t>& labels, MaskEncoding encoding);

/// Training sample: the same geometric transform applied to the early frame,
/// the jittered masks and the reference frame; each frame normalised with its
/// own full-frame intensity range before cropping.
TrainingPatch sample_training_patch(const DynamicStudy& study, const CardiacMasks& masks, std::size_t frame_index,
                                    Rng& rng, const AugmentationConfig& config);

/// Same as above with the frames given directly (raw intensities).
TrainingPatch sample_training_patch(const Volume& early, const Volume& reference, const CardiacMasks& masks, Rng& rng,
                                    const AugmentationConfig& config);

/// Deterministic evaluation patch: no rotation, shift or jitter.
TrainingPatch centered_patch(const Volume& early, const Volume& reference, const CardiacMasks& masks,
                             const Index3& center, const Index3& size, MaskEncoding encoding);

}  // namespace taigan
