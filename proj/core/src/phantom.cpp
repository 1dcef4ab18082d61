#include "taigan/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "taigan/kinetics.hpp"
#include "taigan/random.hpp"
#include "taigan/text_io.hpp"

namespace taigan {
namespace fs = std::filesystem;

namespace {

enum Label : int { kOutside = 0, kBody = 1, kRv = 2, kLv = 3, kMyo = 4, kLabelCount = 5 };

bool inside_ellipsoid(const std::array<double, 3>& p, const std::array<double, 3>& c, const std::array<double, 3>& r) {
  const double dx = (p[0] - c[0]) / r[0];
  const double dy = (p[1] - c[1]) / r[1];
  const double dz = (p[2] - c[2]) / r[2];
  return dx * dx + dy * dy + dz * dz <= 1.0;
}

Label classify(const PhantomSpec& s, const std::array<double, 3>& world) {
  // Undo the in-plane rotation to get heart-frame coordinates.
  const double th = -s.orientation_deg * std::numbers::pi / 180.0;
  const std::array<double, 3> q{std::cos(th) * world[0] - std::sin(th) * world[1],
                                std::sin(th) * world[0] + std::cos(th) * world[1], world[2]};
  const auto& ro = s.lv_radii_mm;
  const std::array<double, 3> ri{ro[0] - s.myo_thickness_mm, ro[1] - s.myo_thickness_mm, ro[2] - s.myo_thickness_mm};
  if (inside_ellipsoid(q, s.lv_center_mm, ri)) return kLv;
  if (inside_ellipsoid(q, s.lv_center_mm, ro)) return kMyo;
  if (inside_ellipsoid(q, s.rv_center_mm, s.rv_radii_mm)) return kRv;
  if (inside_ellipsoid(world, {0, 0, 0}, s.body_radii_mm)) return kBody;
  return kOutside;
}

std::array<double, 3> voxel_to_world(const PhantomSpec& s, double x, double y, double z) {
  return {(x - 0.5 * (s.grid.x - 1)) * s.spacing.dx, (y - 0.5 * (s.grid.y - 1)) * s.spacing.dy,
          (z - 0.5 * (s.grid.z - 1)) * s.spacing.dz};
}

Index3 world_to_voxel(const PhantomSpec& s, const std::array<double, 3>& w) {
  return {static_cast<int>(std::lround(w[0] / s.spacing.dx + 0.5 * (s.grid.x - 1))),
          static_cast<int>(std::lround(w[1] / s.spacing.dy + 0.5 * (s.grid.y - 1))),
          static_cast<int>(std::lround(w[2] / s.spacing.dz + 0.5 * (s.grid.z - 1)))};
}

/// Per-voxel label fractions, label-major.
std::vector<std::vector<float>> paint_fractions(const PhantomSpec& s) {
  const std::size_t nvox = s.grid.volume();
  std::vector<std::vector<float>> frac(kLabelCount, std::vector<float>(nvox, 0.0f));
  const int ss = std::max(1, s.supersample);
  const double w = 1.0 / (ss * ss * ss);
  Grid<float> index_helper(s.grid);
  for (int z = 0; z < s.grid.z; ++z) {
    for (int y = 0; y < s.grid.y; ++y) {
      for (int x = 0; x < s.grid.x; ++x) {
        const std::size_t o = index_helper.offset(x, y, z);
        for (int k = 0; k < ss; ++k) {
          for (int j = 0; j < ss; ++j) {
            for (int i = 0; i < ss; ++i) {
              const auto p = voxel_to_world(s, x + (i + 0.5) / ss - 0.5, y + (j + 0.5) / ss - 0.5, z + (k + 0.5) / ss - 0.5);
              frac[classify(s, p)][o] += static_cast<float>(w);
            }
          }
        }
      }
    }
  }
  return frac;
}

std::vector<double> gaussian_kernel(double sigma_vox) {
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma_vox)));
  std::vector<double> k(2 * r + 1);
  double sum = 0;
  for (int i = -r; i <= r; ++i) {
    k[i + r] = std::exp(-0.5 * i * i / (sigma_vox * sigma_vox));
    sum += k[i + r];
  }
  for (auto& v : k) v /= sum;
  return k;
}

void blur_axis(std::vector<double>& data, const Index3& d, int axis, const std::vector<double>& kernel) {
  const int r = static_cast<int>(kernel.size() / 2);
  std::vector<double> out(data.size(), 0.0);
  const int n = axis == 0 ? d.x : (axis == 1 ? d.y : d.z);
  const std::size_t stride = axis == 0 ? 1 : (axis == 1 ? static_cast<std::size_t>(d.x) : static_cast<std::size_t>(d.x) * d.y);
  for (int z = 0; z < d.z; ++z) {
    for (int y = 0; y < d.y; ++y) {
      for (int x = 0; x < d.x; ++x) {
        const int c = axis == 0 ? x : (axis == 1 ? y : z);
        const std::size_t o = static_cast<std::size_t>(x) + static_cast<std::size_t>(d.x) * (y + static_cast<std::size_t>(d.y) * z);
        double acc = 0;
        for (int t = -r; t <= r; ++t) {
          const int cc = c + t;
          if (cc < 0 || cc >= n) continue;
          acc += kernel[t + r] * data[o + static_cast<std::ptrdiff_t>(t) * static_cast<std::ptrdiff_t>(stride)];
        }
        out[o] = acc;
      }
    }
  }
  data.swap(out);
}

double sample_curve(const std::vector<double>& c, double dt, double t) {
  if (t <= 0) return c.empty() ? 0.0 : c[0];
  const double s = t / dt;
  const auto i = static_cast<std::size_t>(s);
  if (i + 1 >= c.size()) return c.back();
  const double f = s - static_cast<double>(i);
  return c[i] * (1 - f) + c[i + 1] * f;
}

/// Midpoint-rule frame mean with at least 10 nodes.
template <typename F>
double frame_mean(F&& curve, double start, double dur) {
  const int n = std::max(10, static_cast<int>(std::ceil(dur / 0.25)));
  double acc = 0;
  for (int i = 0; i < n; ++i) acc += curve(start + (i + 0.5) * dur / n);
  return acc / n;
}

}  // namespace

void PhantomSpec::validate() const {
  if (grid.x < kMinSpatialDim || grid.y < kMinSpatialDim || grid.z < kMinSpatialDim) {
    throw ValidationError("phantom grid must be at least 8 voxels per axis");
  }
  if (!(spacing.dx > 0 && spacing.dy > 0 && spacing.dz > 0)) throw ValidationError("spacing must be positive");
  for (const auto* r : {&lv_radii_mm, &rv_radii_mm, &body_radii_mm}) {
    for (double v : *r) {
      if (!(v > 0)) throw ValidationError("radii must be positive");
    }
  }
  const double min_lv = std::min({lv_radii_mm[0], lv_radii_mm[1], lv_radii_mm[2]});
  if (!(myo_thickness_mm > 0) || !(myo_thickness_mm < min_lv)) {
    throw ValidationError("myocardial thickness must be positive and below the LV outer radius");
  }
  if (!(K1 >= 0) || !(k2 > 0)) throw ValidationError("K1 must be >= 0 and k2 > 0");
  if (blood_fraction < 0 || blood_fraction >= 1) throw ValidationError("blood fraction must lie in [0, 1)");
  if (noise_level < 0) throw ValidationError("noise level must be non-negative");
  if (!(time_to_peak_s > 0) || !(bolus_sharpness > 0)) throw ValidationError("bolus timing must be positive");
  if (transit_delay_s < 0) throw ValidationError("transit delay must be non-negative");
  if (recirculation_fraction < 0 || recirculation_fraction >= 1) {
    throw ValidationError("recirculation fraction must lie in [0, 1)");
  }

  // Heart must fit inside the field of view.
  const std::array<double, 3> half{0.5 * grid.x * spacing.dx, 0.5 * grid.y * spacing.dy, 0.5 * grid.z * spacing.dz};
  const double th = orientation_deg * std::numbers::pi / 180.0;
  auto rotated_extent_ok = [&](const std::array<double, 3>& c, const std::array<double, 3>& r) {
    const double cx = std::cos(th) * c[0] - std::sin(th) * c[1];
    const double cy = std::sin(th) * c[0] + std::cos(th) * c[1];
    const double reach = std::max(r[0], r[1]);
    return std::abs(cx) + reach <= half[0] && std::abs(cy) + reach <= half[1] && std::abs(c[2]) + r[2] <= half[2] + 1e-9;
  };
  if (!rotated_extent_ok(lv_center_mm, lv_radii_mm) || !rotated_extent_ok(rv_center_mm, rv_radii_mm)) {
    throw ValidationError("phantom heart geometry exceeds the grid");
  }
}

double bolus_input_function(const PhantomSpec& s, double t) {
  if (t <= 0) return 0.0;
  if (s.input_shape == InputShape::kConstant) return s.bolus_amplitude;
  const double u = t / s.time_to_peak_s;
  const double g = std::pow(u, s.bolus_sharpness) * std::exp(s.bolus_sharpness * (1.0 - u));
  // Before the peak: pure gamma variate. After: relaxes from the peak to the
  // recirculation plateau, so the peak stays at time_to_peak_s.
  if (u <= 1.0) return s.bolus_amplitude * g;
  return s.bolus_amplitude * ((1.0 - s.recirculation_fraction) * g + s.recirculation_fraction);
}

RegionCurves region_curves(const PhantomSpec& s, double t_end, double dt) {
  RegionCurves rc;
  rc.dt = dt;
  const auto n = static_cast<std::size_t>(std::ceil(t_end / dt)) + 2;
  rc.rvbp.resize(n);
  rc.lvbp.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * dt;
    rc.rvbp[i] = bolus_input_function(s, t);
    rc.lvbp[i] = bolus_input_function(s, t - s.transit_delay_s);
  }
  rc.tissue = convolve_exponential(rc.lvbp, dt, s.K1 / 60.0, s.k2 / 60.0);
  return rc;
}

double rb82_decay_correction(double start_s, double duration_s) {
  const double lambda = std::numbers::ln2 / 76.4;
  return lambda * duration_s / (std::exp(-lambda * start_s) * -std::expm1(-lambda * duration_s));
}

SimulatedStudy simulate_study(const PhantomSpec& spec, const FrameSchedule& schedule, const std::string& study_id) {
  spec.validate();
  schedule.validate();

  const auto frac = paint_fractions(spec);
  const std::size_t nvox = spec.grid.volume();
  const std::size_t t_frames = schedule.size();
  const auto rc = region_curves(spec, schedule.end_time(t_frames - 1), 0.05);

  SimulatedStudy out;
  auto& st = out.study;
  st.study_id = study_id;
  st.voxel_spacing = spec.spacing;
  st.frame_start_times = schedule.start_times;
  st.frame_durations = schedule.durations;
  for (std::size_t i = 0; i < t_frames; ++i) {
    st.decay_correction_factors.push_back(rb82_decay_correction(schedule.start_times[i], schedule.durations[i]));
  }

  auto& truth = out.truth;
  truth.K1 = spec.K1;
  truth.k2 = spec.k2;
  truth.blood_fraction = spec.blood_fraction;
  truth.transit_delay_s = spec.transit_delay_s;

  const double v = spec.blood_fraction;
  Rng rng(spec.seed);

  std::vector<double> kernel_x, kernel_y, kernel_z;
  if (spec.psf_fwhm_mm > 0) {
    const double sigma_mm = spec.psf_fwhm_mm / (2.0 * std::sqrt(2.0 * std::numbers::ln2));
    kernel_x = gaussian_kernel(sigma_mm / spec.spacing.dx);
    kernel_y = gaussian_kernel(sigma_mm / spec.spacing.dy);
    kernel_z = gaussian_kernel(sigma_mm / spec.spacing.dz);
  }

  for (std::size_t f = 0; f < t_frames; ++f) {
    const double t0 = schedule.start_times[f];
    const double dur = schedule.durations[f];
    const double rv = frame_mean([&](double t) { return sample_curve(rc.rvbp, rc.dt, t); }, t0, dur);
    const double lv = frame_mean([&](double t) { return sample_curve(rc.lvbp, rc.dt, t); }, t0, dur);
    const double ct = frame_mean([&](double t) { return sample_curve(rc.tissue, rc.dt, t); }, t0, dur);
    const double myo = (1 - v) * ct + v * lv;
    truth.rvbp_tac.push_back(rv);
    truth.lvbp_tac.push_back(lv);
    truth.myo_tac.push_back(myo);

    std::array<double, kLabelCount> value{};
    value[kOutside] = 0;
    value[kBody] = spec.background_fraction * ct;
    value[kRv] = rv;
    value[kLv] = lv;
    value[kMyo] = myo;

    std::vector<double> img(nvox, 0.0);
    for (std::size_t i = 0; i < nvox; ++i) {
      double a = 0;
      for (int l = 0; l < kLabelCount; ++l) a += frac[l][i] * value[l];
      img[i] = a;
    }
    if (spec.psf_fwhm_mm > 0) {
      blur_axis(img, spec.grid, 0, kernel_x);
      blur_axis(img, spec.grid, 1, kernel_y);
      blur_axis(img, spec.grid, 2, kernel_z);
    }
    Volume frame(spec.grid);
    const double rel_sd = spec.noise_level / std::sqrt(dur);
    for (std::size_t i = 0; i < nvox; ++i) {
      double a = img[i];
      if (rel_sd > 0) a += rel_sd * std::abs(a) * rng.normal();
      frame[i] = static_cast<float>(a);
    }
    st.frames.push_back(std::move(frame));
  }

  auto& m = out.masks;
  m.rvbp = Mask(spec.grid);
  m.lvbp = Mask(spec.grid);
  m.myo = Mask(spec.grid);
  for (std::size_t i = 0; i < nvox; ++i) {
    if (frac[kRv][i] >= 0.5f) m.rvbp[i] = 1;
    else if (frac[kLv][i] >= 0.5f) m.lvbp[i] = 1;
    else if (frac[kMyo][i] >= 0.5f) m.myo[i] = 1;
  }

  // Inferior wall: mid-wall point on the -y side of the LV in the heart frame.
  const double th = spec.orientation_deg * std::numbers::pi / 180.0;
  const std::array<double, 3> local{spec.lv_center_mm[0],
                                    spec.lv_center_mm[1] - (spec.lv_radii_mm[1] - 0.5 * spec.myo_thickness_mm),
                                    spec.lv_center_mm[2]};
  const std::array<double, 3> world{std::cos(th) * local[0] - std::sin(th) * local[1],
                                    std::sin(th) * local[0] + std::cos(th) * local[1], local[2]};
  Index3 c = world_to_voxel(spec, world);
  c.x = std::clamp(c.x, 0, spec.grid.x - 1);
  c.y = std::clamp(c.y, 0, spec.grid.y - 1);
  c.z = std::clamp(c.z, 0, spec.grid.z - 1);
  m.lv_inferior_wall_center = c;

  st.validate();
  m.validate(spec.grid);
  return out;
}

std::vector<CohortEntry> plan_cohort(int n_studies, const PhantomSpec& base, double jitter, std::uint64_t seed) {
  if (n_studies < 1) throw ValidationError("cohort size must be at least 1");
  if (jitter < 0 || jitter >= 1) throw ValidationError("parameter jitter must lie in [0, 1)");
  std::vector<CohortEntry> out;
  for (int i = 0; i < n_studies; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    auto u = [&](double lo, double hi) { return rng.uniform(lo, hi); };
    PhantomSpec s = base;
    s.seed = derive_seed(seed ^ 0x9e3779b97f4a7c15ULL, static_cast<std::uint64_t>(i));
    if (jitter > 0) {
      s.K1 *= u(1 - jitter, 1 + jitter);
      s.k2 *= u(1 - jitter, 1 + jitter);
      s.blood_fraction = std::clamp(s.blood_fraction * u(1 - jitter, 1 + jitter), 0.0, 0.9);
      s.time_to_peak_s *= u(1 - jitter, 1 + jitter);
      s.transit_delay_s *= u(1 - jitter, 1 + jitter);
      s.bolus_amplitude *= u(1 - jitter, 1 + jitter);
      s.orientation_deg += 60.0 * u(-jitter, jitter);
      const double dx = 40.0 * u(-jitter, jitter);
      const double dy = 40.0 * u(-jitter, jitter);
      for (auto* c : {&s.lv_center_mm, &s.rv_center_mm}) {
        (*c)[0] += dx;
        (*c)[1] += dy;
      }
      const double scale = u(1 - 0.5 * jitter, 1 + 0.5 * jitter);
      for (auto& r : s.lv_radii_mm) r *= scale;
      for (auto& r : s.rv_radii_mm) r *= scale;
    }
    char id[32];
    std::snprintf(id, sizeof(id), "study_%03d", i);
    out.push_back({id, fs::path(id), s});
  }
  return out;
}

std::vector<CohortEntry> make_cohort(int n_studies, const PhantomSpec& base, double jitter, std::uint64_t seed,
                                     const FrameSchedule& schedule, const fs::path& out_dir) {
  auto entries = plan_cohort(n_studies, base, jitter, seed);
  KeyValueWriter manifest;
  manifest.put("format", "taigan-cohort");
  manifest.put("version", 1);
  manifest.put("count", n_studies);
  manifest.put("seed", static_cast<long long>(seed));
  manifest.put("parameter_jitter", jitter);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& e = entries[i];
    const auto sim = simulate_study(e.spec, schedule, e.study_id);
    save_study(sim.study, sim.masks, out_dir / e.path);
    const std::string k = "study." + std::to_string(i) + ".";
    manifest.put(k + "id", e.study_id);
    manifest.put(k + "path", e.path.string());
    manifest.put(k + "K1", e.spec.K1);
    manifest.put(k + "k2", e.spec.k2);
    manifest.put(k + "blood_fraction", e.spec.blood_fraction);
    manifest.put(k + "transit_delay_s", e.spec.transit_delay_s);
    manifest.put(k + "time_to_peak_s", e.spec.time_to_peak_s);
    manifest.put(k + "mbf", e.spec.K1 > 0 ? k1_to_mbf(e.spec.K1) : 0.0);
    manifest.put(k + "seed", static_cast<long long>(e.spec.seed));
  }
  manifest.save(out_dir / "manifest.txt");
  return entries;
}

std::vector<CohortEntry> load_cohort_manifest(const fs::path& cohort_dir) {
  const auto m = KeyValueReader::load(cohort_dir / "manifest.txt");
  if (m.get_string("format") != "taigan-cohort") throw ParseError("format", "not a cohort manifest");
  const auto n = m.get_int("count");
  std::vector<CohortEntry> out;
  for (long long i = 0; i < n; ++i) {
    const std::string k = "study." + std::to_string(i) + ".";
    CohortEntry e;
    e.study_id = m.get_string(k + "id");
    e.path = m.get_string(k + "path");
    e.spec.K1 = m.get_double(k + "K1");
    e.spec.k2 = m.get_double(k + "k2");
    e.spec.blood_fraction = m.get_double(k + "blood_fraction");
    e.spec.transit_delay_s = m.get_double(k + "transit_delay_s");
    e.spec.time_to_peak_s = m.get_double(k + "time_to_peak_s");
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace taigan
