#include "taigan/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "taigan/interpolation.hpp"

namespace taigan {

double region_mean(const Volume& frame, const Mask& mask) {
  if (frame.dims() != mask.dims()) throw ValidationError("mask shape does not match frame");
  double acc = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < frame.size(); ++i) {
    if (mask[i]) {
      acc += frame[i];
      ++n;
    }
  }
  if (n == 0) throw ValidationError("empty ROI mask");
  return acc / static_cast<double>(n);
}

TimeActivityCurves extract_tacs(const DynamicStudy& study, const CardiacMasks& masks) {
  TimeActivityCurves t;
  t.schedule = study.schedule();
  for (const auto& f : study.frames) {
    t.rvbp.push_back(region_mean(f, masks.rvbp));
    t.lvbp.push_back(region_mean(f, masks.lvbp));
    t.myo.push_back(region_mean(f, masks.myo));
  }
  return t;
}

std::size_t first_active_frame(const TimeActivityCurves& tacs) {
  std::size_t i = 0;
  while (i < tacs.size() && tacs.rvbp[i] <= 0 && tacs.lvbp[i] <= 0) ++i;
  return i;
}

std::size_t find_eq_frame(const TimeActivityCurves& tacs) {
  if (tacs.size() == 0 || tacs.rvbp.size() != tacs.size()) throw ValidationError("TACs must be non-empty and equal length");
  for (std::size_t i = first_active_frame(tacs); i < tacs.size(); ++i) {
    if (tacs.lvbp[i] >= tacs.rvbp[i]) return i;
  }
  throw NoEqFrameError("LVBP activity never reaches RVBP activity");
}

std::vector<std::size_t> FrameSelection::pre_eq() const {
  std::vector<std::size_t> out;
  for (auto i : included) {
    if (i < eq_index) out.push_back(i);
  }
  return out;
}

bool FrameSelection::is_included(std::size_t frame) const {
  return std::binary_search(included.begin(), included.end(), frame);
}

FrameSelection select_frames(const TimeActivityCurves& tacs, double threshold_fraction) {
  if (tacs.size() < 2) throw ValidationError("need at least two frames");
  if (threshold_fraction < 0) throw ValidationError("threshold fraction must be non-negative");
  FrameSelection s;
  s.reference_index = tacs.size() - 1;
  s.eq_index = find_eq_frame(tacs);
  const double peak = *std::max_element(tacs.lvbp.begin(), tacs.lvbp.end());
  const double threshold = threshold_fraction * peak;
  for (std::size_t i = 0; i + 1 < tacs.size(); ++i) {
    if (tacs.lvbp[i] > threshold) s.included.push_back(i);
  }
  if (s.included.empty()) throw ValidationError("no frame passes the LVBP activity threshold");
  return s;
}

IntensityRestore intensity_params(const Volume& frame) {
  if (frame.empty()) throw ValidationError("empty frame");
  const auto [lo, hi] = std::minmax_element(frame.storage().begin(), frame.storage().end());
  if (!(*hi > *lo)) throw ValidationError("cannot normalise a constant frame");
  return {static_cast<double>(*lo), static_cast<double>(*hi)};
}

Volume normalize_intensity(const Volume& frame, const IntensityRestore& p) {
  Volume out(frame.dims());
  for (std::size_t i = 0; i < frame.size(); ++i) out[i] = static_cast<float>(p.to_normalized(frame[i]));
  return out;
}

std::pair<Volume, IntensityRestore> normalize_intensity(const Volume& frame) {
  const auto p = intensity_params(frame);
  return {normalize_intensity(frame, p), p};
}

Volume restore_intensity(const Volume& normalized, const IntensityRestore& p) {
  Volume out(normalized.dims());
  for (std::size_t i = 0; i < normalized.size(); ++i) out[i] = static_cast<float>(p.to_original(normalized[i]));
  return out;
}

std::size_t TemporalInputs::slot_of(std::size_t frame) const {
  const long long s = static_cast<long long>(frame) - static_cast<long long>(eq_index) + static_cast<long long>(eq_slot);
  return static_cast<std::size_t>(std::clamp<long long>(s, 0, static_cast<long long>(steps()) - 1));
}

TemporalConditioning TemporalInputs::conditioning(std::size_t frame) const {
  TemporalConditioning c;
  c.steps = steps();
  c.values.assign(c.steps * TemporalConditioning::kFeatures, 0.0);
  const std::size_t hot = slot_of(frame);
  for (std::size_t s = 0; s < c.steps; ++s) {
    c.values[s * 3 + 0] = rvbp[s];
    c.values[s * 3 + 1] = lvbp[s];
    c.values[s * 3 + 2] = s == hot ? 1.0 : 0.0;
  }
  return c;
}

TemporalInputs normalize_temporal(const TimeActivityCurves& tacs, std::size_t eq_index) {
  const std::size_t t = tacs.size();
  if (t == 0 || eq_index >= t) throw ValidationError("EQ index outside the TAC");
  TemporalInputs in;
  in.eq_index = eq_index;
  in.eq_slot = t / 3;
  const double rv_peak = *std::max_element(tacs.rvbp.begin(), tacs.rvbp.end());
  const double lv_peak = *std::max_element(tacs.lvbp.begin(), tacs.lvbp.end());
  in.rvbp.assign(t, 0.0);
  in.lvbp.assign(t, 0.0);
  for (std::size_t s = 0; s < t; ++s) {
    const long long frame = static_cast<long long>(s) - static_cast<long long>(in.eq_slot) + static_cast<long long>(eq_index);
    if (frame < 0 || frame >= static_cast<long long>(t)) continue;
    in.rvbp[s] = rv_peak > 0 ? tacs.rvbp[static_cast<std::size_t>(frame)] / rv_peak : 0.0;
    in.lvbp[s] = lv_peak > 0 ? tacs.lvbp[static_cast<std::size_t>(frame)] / lv_peak : 0.0;
  }
  return in;
}

Grid<std::uint8_t> mask_labels(const CardiacMasks& masks) {
  Grid<std::uint8_t> labels(masks.lvbp.dims());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (masks.rvbp[i]) labels[i] = 1;
    else if (masks.lvbp[i]) labels[i] = 2;
    else if (masks.myo[i]) labels[i] = 3;
  }
  return labels;
}

CardiacMasks shift_masks(const CardiacMasks& masks, const Index3& shift) {
  CardiacMasks out;
  out.rvbp = shift_grid(masks.rvbp, shift);
  out.lvbp = shift_grid(masks.lvbp, shift);
  out.myo = shift_grid(masks.myo, shift);
  out.lv_inferior_wall_center = masks.lv_inferior_wall_center;
  return out;
}

CardiacMasks jitter_masks(const CardiacMasks& masks, Rng& rng, int max_shift) {
  if (max_shift < 0) throw ValidationError("mask jitter must be non-negative");
  if (max_shift == 0) return masks;
  const Index3 s{rng.uniform_int(-max_shift, max_shift), rng.uniform_int(-max_shift, max_shift),
                 rng.uniform_int(-max_shift, max_shift)};
  return shift_masks(masks, s);
}

namespace {

template <typename Sampler>
void for_each_patch_voxel(const Index3& center, const Index3& size, double rotation_deg, const Index3& shift,
                          Sampler&& sample) {
  const double th = rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(th);
  const double s = std::sin(th);
  const Index3 half{size.x / 2, size.y / 2, size.z / 2};
  for (int z = 0; z < size.z; ++z) {
    for (int y = 0; y < size.y; ++y) {
      for (int x = 0; x < size.x; ++x) {
        const double px = x - half.x;
        const double py = y - half.y;
        const double sx = center.x + shift.x + c * px - s * py;
        const double sy = center.y + shift.y + s * px + c * py;
        const double sz = center.z + shift.z + (z - half.z);
        sample(x, y, z, sx, sy, sz);
      }
    }
  }
}

}  // namespace

Volume transform_patch(const Volume& volume, const Index3& center, const Index3& size, double rotation_deg,
                       const Index3& shift) {
  if (size.x <= 0 || size.y <= 0 || size.z <= 0) throw ValidationError("patch size must be positive");
  Volume out(size);
  for_each_patch_voxel(center, size, rotation_deg, shift, [&](int x, int y, int z, double sx, double sy, double sz) {
    out.at(x, y, z) = static_cast<float>(sample_trilinear(volume, sx, sy, sz));
  });
  return out;
}

Grid<std::uint8_t> transform_labels(const Grid<std::uint8_t>& labels, const Index3& center, const Index3& size,
                                    double rotation_deg, const Index3& shift) {
  Grid<std::uint8_t> out(size);
  for_each_patch_voxel(center, size, rotation_deg, shift, [&](int x, int y, int z, double sx, double sy, double sz) {
    out.at(x, y, z) = sample_nearest(labels, sx, sy, sz);
  });
  return out;
}

std::vector<Volume> encode_masks(const Grid<std::uint8_t>& labels, MaskEncoding encoding) {
  std::vector<Volume> out;
  if (encoding == MaskEncoding::kSingleChannel) {
    Volume v(labels.dims());
    for (std::size_t i = 0; i < labels.size(); ++i) v[i] = static_cast<float>(labels[i]) / 3.0f;
    out.push_back(std::move(v));
  } else {
    for (std::uint8_t code = 1; code <= 3; ++code) {
      Volume v(labels.dims());
      for (std::size_t i = 0; i < labels.size(); ++i) v[i] = labels[i] == code ? 1.0f : 0.0f;
      out.push_back(std::move(v));
    }
  }
  return out;
}

TrainingPatch sample_training_patch(const Volume& early, const Volume& reference, const CardiacMasks& masks, Rng& rng,
                                    const AugmentationConfig& config) {
  TrainingPatch p;
  auto& tf = p.transform;
  tf.rotation_deg = rng.uniform(-config.max_rotation_deg, config.max_rotation_deg);
  const int ms = config.max_shift_vox;
  tf.shift = {rng.uniform_int(-ms, ms), rng.uniform_int(-ms, ms), rng.uniform_int(-ms, ms)};
  const int mj = config.mask_jitter_vox;
  if (mj > 0) tf.mask_shift = {rng.uniform_int(-mj, mj), rng.uniform_int(-mj, mj), rng.uniform_int(-mj, mj)};

  const Index3 center = masks.lv_inferior_wall_center;
  const auto early_params = intensity_params(early);
  const auto ref_params = intensity_params(reference);
  p.input = normalize_intensity(transform_patch(early, center, config.patch_size, tf.rotation_deg, tf.shift), early_params);
  p.target = normalize_intensity(transform_patch(reference, center, config.patch_size, tf.rotation_deg, tf.shift), ref_params);
  const auto labels = mask_labels(shift_masks(masks, tf.mask_shift));
  p.mask_channels =
      encode_masks(transform_labels(labels, center, config.patch_size, tf.rotation_deg, tf.shift), config.mask_encoding);
  return p;
}

TrainingPatch sample_training_patch(const DynamicStudy& study, const CardiacMasks& masks, std::size_t frame_index,
                                    Rng& rng, const AugmentationConfig& config) {
  if (frame_index >= study.frame_count()) throw ValidationError("frame index out of range");
  return sample_training_patch(study.frames[frame_index], study.frames.back(), masks, rng, config);
}

TrainingPatch centered_patch(const Volume& early, const Volume& reference, const CardiacMasks& masks,
                             const Index3& center, const Index3& size, MaskEncoding encoding) {
  TrainingPatch p;
  p.input = normalize_intensity(crop_patch(early, center, size), intensity_params(early));
  p.target = normalize_intensity(crop_patch(reference, center, size), intensity_params(reference));
  p.mask_channels = encode_masks(crop_patch(mask_labels(masks), center, size), encoding);
  return p;
}

}  // namespace taigan
