#include "taigan/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "taigan/text_io.hpp"

namespace taigan {
namespace fs = std::filesystem;

namespace {

constexpr const char* kFormatName = "taigan-study";
constexpr int kFormatVersion = 1;

std::string frame_file_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%04zu.raw", i);
  return buf;
}

void write_bytes(const fs::path& p, const void* data, std::size_t n) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw PersistenceError("cannot open for writing: " + p.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw PersistenceError("write failed: " + p.string());
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary | std::ios::ate);
  if (!in) throw PersistenceError("cannot open for reading: " + p.string());
  const auto n = static_cast<std::size_t>(in.tellg());
  std::vector<char> buf(n);
  in.seekg(0);
  in.read(buf.data(), static_cast<std::streamsize>(n));
  if (!in) throw PersistenceError("read failed: " + p.string());
  return buf;
}

void write_float_le(const fs::path& p, const Volume& v) {
  if constexpr (std::endian::native == std::endian::little) {
    write_bytes(p, v.storage().data(), v.size() * sizeof(float));
  } else {
    std::vector<std::uint32_t> words(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      words[i] = __builtin_bswap32(std::bit_cast<std::uint32_t>(v[i]));
    }
    write_bytes(p, words.data(), words.size() * sizeof(std::uint32_t));
  }
}

Volume read_float_le(const fs::path& p, const Index3& dims, const std::string& field) {
  const auto bytes = read_bytes(p);
  Volume v(dims);
  if (bytes.size() != v.size() * sizeof(float)) {
    throw ParseError(field, "payload has " + std::to_string(bytes.size()) + " bytes, expected " +
                                std::to_string(v.size() * sizeof(float)));
  }
  std::memcpy(v.storage().data(), bytes.data(), bytes.size());
  if constexpr (std::endian::native != std::endian::little) {
    for (auto& f : v.storage()) f = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(f)));
  }
  return v;
}

Mask read_mask(const fs::path& p, const Index3& dims, const std::string& field) {
  const auto bytes = read_bytes(p);
  Mask m(dims);
  if (bytes.size() != m.size()) {
    throw ValidationError("mask '" + field + "' has " + std::to_string(bytes.size()) +
                          " voxels, study grid has " + std::to_string(m.size()));
  }
  std::memcpy(m.storage().data(), bytes.data(), bytes.size());
  for (auto b : m.storage()) {
    if (b > 1) throw ParseError(field, "mask values must be 0 or 1");
  }
  return m;
}

void check_mask(const Mask& m, const Index3& dims, const char* name) {
  if (m.dims() != dims) throw ValidationError(std::string("mask ") + name + " shape does not match study grid");
  if (mask_count(m) == 0) throw ValidationError(std::string("mask ") + name + " is empty");
}

}  // namespace

void FrameSchedule::validate() const {
  if (start_times.empty()) throw ValidationError("frame schedule is empty");
  if (start_times.size() != durations.size()) throw ValidationError("frame schedule vectors differ in length");
  for (std::size_t i = 0; i < size(); ++i) {
    if (!(durations[i] > 0)) throw ValidationError("frame " + std::to_string(i) + " has non-positive duration");
    if (i > 0 && !(start_times[i] > start_times[i - 1])) {
      throw ValidationError("frame start times must be strictly increasing");
    }
  }
  if (start_times.front() < 0) throw ValidationError("frame schedule starts before t = 0");
}

FrameSchedule FrameSchedule::from_durations(const std::vector<double>& durations) {
  FrameSchedule s;
  double t = 0;
  for (double d : durations) {
    s.start_times.push_back(t);
    s.durations.push_back(d);
    t += d;
  }
  return s;
}

FrameSchedule FrameSchedule::rb82_27_frames() {
  std::vector<double> d;
  d.insert(d.end(), 14, 5.0);
  d.insert(d.end(), 6, 10.0);
  d.insert(d.end(), 3, 20.0);
  d.insert(d.end(), 3, 30.0);
  d.push_back(90.0);
  return from_durations(d);
}

void DynamicStudy::validate() const {
  const std::size_t t = frames.size();
  if (t == 0) throw ValidationError("study has no frames");
  if (frame_durations.size() != t || frame_start_times.size() != t || decay_correction_factors.size() != t) {
    throw ValidationError("frame timing vectors must all have length T = " + std::to_string(t));
  }
  const Index3 d = frames.front().dims();
  if (d.x < kMinSpatialDim || d.y < kMinSpatialDim || d.z < kMinSpatialDim) {
    throw ValidationError("spatial dimensions must be >= 8");
  }
  for (const auto& f : frames) {
    if (f.dims() != d) throw ValidationError("frames have inconsistent shapes");
  }
  if (!(voxel_spacing.dx > 0 && voxel_spacing.dy > 0 && voxel_spacing.dz > 0)) {
    throw ValidationError("voxel spacing must be strictly positive");
  }
  for (std::size_t i = 0; i < t; ++i) {
    if (!(frame_durations[i] > 0)) throw ValidationError("frame " + std::to_string(i) + " has non-positive duration");
    if (!(decay_correction_factors[i] > 0)) {
      throw ValidationError("frame " + std::to_string(i) + " has non-positive decay correction factor");
    }
    if (i > 0 && !(frame_start_times[i] > frame_start_times[i - 1])) {
      throw ValidationError("frame start times must be strictly increasing");
    }
  }
}

void CardiacMasks::validate(const Index3& dims) const {
  check_mask(rvbp, dims, "rvbp");
  check_mask(lvbp, dims, "lvbp");
  check_mask(myo, dims, "myo");
  for (std::size_t i = 0; i < rvbp.size(); ++i) {
    if (rvbp[i] + lvbp[i] + myo[i] > 1) throw ValidationError("cardiac masks overlap");
  }
  if (!rvbp.contains(lv_inferior_wall_center)) throw ValidationError("LV inferior wall centre outside the volume");
}

void save_study(const DynamicStudy& study, const CardiacMasks& masks, const fs::path& dir) {
  study.validate();
  masks.validate(study.dims());

  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw PersistenceError("cannot create " + dir.string() + ": " + ec.message());

  KeyValueWriter meta;
  meta.put("format", kFormatName);
  meta.put("version", kFormatVersion);
  meta.put("study_id", study.study_id);
  const Index3 d = study.dims();
  meta.put("shape", std::vector<int>{d.x, d.y, d.z});
  meta.put("frames", static_cast<int>(study.frame_count()));
  meta.put("spacing", std::vector<double>{study.voxel_spacing.dx, study.voxel_spacing.dy, study.voxel_spacing.dz});
  meta.put("frame_start_times", study.frame_start_times);
  meta.put("frame_durations", study.frame_durations);
  meta.put("decay_correction_factors", study.decay_correction_factors);
  const Index3 c = masks.lv_inferior_wall_center;
  meta.put("lv_inferior_wall_center", std::vector<int>{c.x, c.y, c.z});
  meta.put("payload", "float32-le");

  for (std::size_t i = 0; i < study.frame_count(); ++i) write_float_le(dir / frame_file_name(i), study.frames[i]);
  write_bytes(dir / "mask_rvbp.raw", masks.rvbp.storage().data(), masks.rvbp.size());
  write_bytes(dir / "mask_lvbp.raw", masks.lvbp.storage().data(), masks.lvbp.size());
  write_bytes(dir / "mask_myo.raw", masks.myo.storage().data(), masks.myo.size());
  // Metadata last so a partially written container never looks complete.
  meta.save(dir / "study.meta");
}

std::pair<DynamicStudy, CardiacMasks> load_study(const fs::path& dir) {
  const KeyValueReader meta = KeyValueReader::load(dir / "study.meta");
  if (meta.get_string("format") != kFormatName) throw ParseError("format", "not a study container");
  if (meta.get_int("version") != kFormatVersion) throw ParseError("version", "unsupported container version");
  if (meta.has("payload") && meta.get_string("payload") != "float32-le") {
    throw ParseError("payload", "unsupported payload encoding");
  }

  const auto shape = meta.get_ints("shape");
  if (shape.size() != 3) throw ParseError("shape", "expected three integers");
  const Index3 dims{shape[0], shape[1], shape[2]};
  if (dims.x <= 0 || dims.y <= 0 || dims.z <= 0) throw ParseError("shape", "non-positive dimension");
  const int t = meta.get_int("frames");
  if (t <= 0) throw ParseError("frames", "must be positive");
  const auto spacing = meta.get_doubles("spacing");
  if (spacing.size() != 3) throw ParseError("spacing", "expected three values");

  DynamicStudy study;
  study.study_id = meta.get_string("study_id");
  study.voxel_spacing = {spacing[0], spacing[1], spacing[2]};
  study.frame_start_times = meta.get_doubles("frame_start_times");
  study.frame_durations = meta.get_doubles("frame_durations");
  study.decay_correction_factors = meta.get_doubles("decay_correction_factors");
  for (const char* key : {"frame_start_times", "frame_durations", "decay_correction_factors"}) {
    if (meta.get_doubles(key).size() != static_cast<std::size_t>(t)) {
      throw ParseError(key, "expected " + std::to_string(t) + " values");
    }
  }
  study.frames.reserve(static_cast<std::size_t>(t));
  for (int i = 0; i < t; ++i) {
    const auto name = frame_file_name(static_cast<std::size_t>(i));
    study.frames.push_back(read_float_le(dir / name, dims, name));
  }
  study.validate();

  CardiacMasks masks;
  masks.rvbp = read_mask(dir / "mask_rvbp.raw", dims, "mask_rvbp.raw");
  masks.lvbp = read_mask(dir / "mask_lvbp.raw", dims, "mask_lvbp.raw");
  masks.myo = read_mask(dir / "mask_myo.raw", dims, "mask_myo.raw");
  const auto c = meta.get_ints("lv_inferior_wall_center");
  if (c.size() != 3) throw ParseError("lv_inferior_wall_center", "expected three integers");
  masks.lv_inferior_wall_center = {c[0], c[1], c[2]};
  masks.validate(dims);
  return {std::move(study), std::move(masks)};
}

template <typename T>
Grid<T> crop_patch(const Grid<T>& volume, const Index3& center, const Index3& size) {
  if (size.x <= 0 || size.y <= 0 || size.z <= 0) throw ValidationError("patch size must be positive");
  Grid<T> patch(size);
  const Index3 o = patch_origin(center, size);
  const Index3& d = volume.dims();
  for (int z = 0; z < size.z; ++z) {
    const int sz = o.z + z;
    if (sz < 0 || sz >= d.z) continue;
    for (int y = 0; y < size.y; ++y) {
      const int sy = o.y + y;
      if (sy < 0 || sy >= d.y) continue;
      const int x0 = std::max(0, -o.x);
      const int x1 = std::min(size.x, d.x - o.x);
      for (int x = x0; x < x1; ++x) patch.at(x, y, z) = volume.at(o.x + x, sy, sz);
    }
  }
  return patch;
}

template <typename T>
void paste_patch(Grid<T>& volume, const Grid<T>& patch, const Index3& center) {
  const Index3 size = patch.dims();
  const Index3 o = patch_origin(center, size);
  for (int z = 0; z < size.z; ++z) {
    for (int y = 0; y < size.y; ++y) {
      for (int x = 0; x < size.x; ++x) {
        if (volume.contains(o.x + x, o.y + y, o.z + z)) volume.at(o.x + x, o.y + y, o.z + z) = patch.at(x, y, z);
      }
    }
  }
}

template <typename T>
Grid<T> shift_grid(const Grid<T>& g, const Index3& shift) {
  Grid<T> out(g.dims());
  const Index3& d = g.dims();
  for (int z = 0; z < d.z; ++z) {
    for (int y = 0; y < d.y; ++y) {
      for (int x = 0; x < d.x; ++x) {
        out.at(x, y, z) = g.value_or_zero(x - shift.x, y - shift.y, z - shift.z);
      }
    }
  }
  return out;
}

template Grid<float> crop_patch(const Grid<float>&, const Index3&, const Index3&);
template Grid<std::uint8_t> crop_patch(const Grid<std::uint8_t>&, const Index3&, const Index3&);
template Grid<double> crop_patch(const Grid<double>&, const Index3&, const Index3&);
template void paste_patch(Grid<float>&, const Grid<float>&, const Index3&);
template void paste_patch(Grid<double>&, const Grid<double>&, const Index3&);
template Grid<float> shift_grid(const Grid<float>&, const Index3&);
template Grid<std::uint8_t> shift_grid(const Grid<std::uint8_t>&, const Index3&);

std::array<double, 3> mask_centroid(const Mask& m) {
  std::array<double, 3> c{0, 0, 0};
  std::size_t n = 0;
  const Index3& d = m.dims();
  for (int z = 0; z < d.z; ++z) {
    for (int y = 0; y < d.y; ++y) {
      for (int x = 0; x < d.x; ++x) {
        if (m.at(x, y, z)) {
          c[0] += x;
          c[1] += y;
          c[2] += z;
          ++n;
        }
      }
    }
  }
  if (n == 0) throw ValidationError("centroid of an empty mask");
  for (auto& v : c) v /= static_cast<double>(n);
  return c;
}

std::size_t mask_count(const Mask& m) {
  return static_cast<std::size_t>(std::count_if(m.storage().begin(), m.storage().end(), [](auto b) { return b != 0; }));
}

}  // namespace taigan
