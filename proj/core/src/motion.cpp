#include "taigan/motion.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "taigan/interpolation.hpp"
#include "taigan/text_io.hpp"

namespace taigan {

namespace {

// Interpolation weights of one physical coordinate onto a 1-D control axis.
struct AxisWeights {
  int count = 0;
  int idx[4]{};
  double w[4]{};
};

AxisWeights axis_weights(double position_mm, int n, double spacing_mm, int order) {
  AxisWeights a;
  const double g = position_mm / spacing_mm;
  if (n == 1) {
    a.count = 1;
    a.idx[0] = 0;
    a.w[0] = 1.0;
    return a;
  }
  if (order == 1) {
    const int i0 = std::clamp(static_cast<int>(std::floor(g)), 0, n - 2);
    const double f = std::clamp(g - i0, 0.0, 1.0);
    a.count = 2;
    a.idx[0] = i0;
    a.idx[1] = i0 + 1;
    a.w[0] = 1.0 - f;
    a.w[1] = f;
    return a;
  }
  const int i0 = static_cast<int>(std::floor(g));
  const double f = g - i0;
  const double f2 = f * f;
  const double f3 = f2 * f;
  const double b[4] = {(1 - f) * (1 - f) * (1 - f) / 6.0, (3 * f3 - 6 * f2 + 4) / 6.0,
                       (-3 * f3 + 3 * f2 + 3 * f + 1) / 6.0, f3 / 6.0};
  a.count = 4;
  for (int k = 0; k < 4; ++k) {
    a.idx[k] = std::clamp(i0 - 1 + k, 0, n - 1);
    a.w[k] = b[k];
  }
  return a;
}

// Voxel grid geometry at one pyramid level.
struct LevelGeometry {
  Index3 dims;
  Spacing voxel;
  Vec3 origin_mm{0, 0, 0};  // physical position of voxel (0, 0, 0)
};

struct FieldWeights {
  std::vector<AxisWeights> x, y, z;
};

FieldWeights field_weights(const MotionField& f, const LevelGeometry& g) {
  FieldWeights w;
  for (int i = 0; i < g.dims.x; ++i)
    w.x.push_back(axis_weights(g.origin_mm[0] + i * g.voxel.dx, f.control_dims.x, f.spacing_mm, f.order));
  for (int i = 0; i < g.dims.y; ++i)
    w.y.push_back(axis_weights(g.origin_mm[1] + i * g.voxel.dy, f.control_dims.y, f.spacing_mm, f.order));
  for (int i = 0; i < g.dims.z; ++i)
    w.z.push_back(axis_weights(g.origin_mm[2] + i * g.voxel.dz, f.control_dims.z, f.spacing_mm, f.order));
  return w;
}

DenseField densify_level(const MotionField& f, const LevelGeometry& g) {
  const auto w = field_weights(f, g);
  DenseField d;
  d.dims = g.dims;
  d.values.assign(g.dims.volume(), Vec3{0, 0, 0});
  for (int z = 0; z < g.dims.z; ++z) {
    const auto& az = w.z[z];
    for (int y = 0; y < g.dims.y; ++y) {
      const auto& ay = w.y[y];
      for (int x = 0; x < g.dims.x; ++x) {
        const auto& ax = w.x[x];
        Vec3 u{0, 0, 0};
        for (int c = 0; c < az.count; ++c)
          for (int b = 0; b < ay.count; ++b) {
            const double wzy = az.w[c] * ay.w[b];
            for (int a = 0; a < ax.count; ++a) {
              const double wt = wzy * ax.w[a];
              const Vec3& p = f.at(ax.idx[a], ay.idx[b], az.idx[c]);
              u[0] += wt * p[0];
              u[1] += wt * p[1];
              u[2] += wt * p[2];
            }
          }
        d.at(x, y, z) = u;
      }
    }
  }
  return d;
}

// Adjoint of densify_level: scatters a per-voxel gradient onto control points.
void scatter_level(const MotionField& f, const LevelGeometry& g, const DenseField& dense_grad, std::vector<Vec3>& out) {
  const auto w = field_weights(f, g);
  out.assign(f.size(), Vec3{0, 0, 0});
  for (int z = 0; z < g.dims.z; ++z) {
    const auto& az = w.z[z];
    for (int y = 0; y < g.dims.y; ++y) {
      const auto& ay = w.y[y];
      for (int x = 0; x < g.dims.x; ++x) {
        const auto& ax = w.x[x];
        const Vec3& gv = dense_grad.at(x, y, z);
        if (gv[0] == 0 && gv[1] == 0 && gv[2] == 0) continue;
        for (int c = 0; c < az.count; ++c)
          for (int b = 0; b < ay.count; ++b) {
            const double wzy = az.w[c] * ay.w[b];
            for (int a = 0; a < ax.count; ++a) {
              const double wt = wzy * ax.w[a];
              Vec3& p = out[f.index(ax.idx[a], ay.idx[b], az.idx[c])];
              p[0] += wt * gv[0];
              p[1] += wt * gv[1];
              p[2] += wt * gv[2];
            }
          }
      }
    }
  }
}

// Trilinear sample with coordinates clamped to the grid (border replicate).
double sample_clamped_grad(const Grid<double>& g, double x, double y, double z, Vec3& grad) {
  const Index3& d = g.dims();
  grad = {0, 0, 0};
  const double cx = std::clamp(x, 0.0, static_cast<double>(d.x - 1));
  const double cy = std::clamp(y, 0.0, static_cast<double>(d.y - 1));
  const double cz = std::clamp(z, 0.0, static_cast<double>(d.z - 1));
  const int x0 = std::min(static_cast<int>(cx), std::max(d.x - 2, 0));
  const int y0 = std::min(static_cast<int>(cy), std::max(d.y - 2, 0));
  const int z0 = std::min(static_cast<int>(cz), std::max(d.z - 2, 0));
  const int x1 = std::min(x0 + 1, d.x - 1);
  const int y1 = std::min(y0 + 1, d.y - 1);
  const int z1 = std::min(z0 + 1, d.z - 1);
  const double fx = cx - x0, fy = cy - y0, fz = cz - z0;
  const double c000 = g.at(x0, y0, z0), c100 = g.at(x1, y0, z0), c010 = g.at(x0, y1, z0), c110 = g.at(x1, y1, z0);
  const double c001 = g.at(x0, y0, z1), c101 = g.at(x1, y0, z1), c011 = g.at(x0, y1, z1), c111 = g.at(x1, y1, z1);
  const double c00 = c000 + fx * (c100 - c000), c10 = c010 + fx * (c110 - c010);
  const double c01 = c001 + fx * (c101 - c001), c11 = c011 + fx * (c111 - c011);
  const double c0 = c00 + fy * (c10 - c00), c1 = c01 + fy * (c11 - c01);
  const bool inside_x = x > 0 && x < d.x - 1, inside_y = y > 0 && y < d.y - 1, inside_z = z > 0 && z < d.z - 1;
  if (inside_x) {
    const double e0 = (c100 - c000) + fy * ((c110 - c010) - (c100 - c000));
    const double e1 = (c101 - c001) + fy * ((c111 - c011) - (c101 - c001));
    grad[0] = e0 + fz * (e1 - e0);
  }
  if (inside_y) grad[1] = (c10 - c00) + fz * ((c11 - c01) - (c10 - c00));
  if (inside_z) grad[2] = c1 - c0;
  return c0 + fz * (c1 - c0);
}

Grid<double> to_double_grid(const Volume& v) {
  Grid<double> g(v.dims());
  for (std::size_t i = 0; i < v.size(); ++i) g[i] = v[i];
  return g;
}

// 2x block average along axes that stay >= 4 voxels; returns the new geometry.
std::pair<Grid<double>, LevelGeometry> downsample(const Grid<double>& g, const LevelGeometry& geo) {
  const Index3 d = g.dims();
  const int fx = d.x / 2 >= 4 ? 2 : 1, fy = d.y / 2 >= 4 ? 2 : 1, fz = d.z / 2 >= 4 ? 2 : 1;
  LevelGeometry out;
  out.dims = {d.x / fx, d.y / fy, d.z / fz};
  out.voxel = {geo.voxel.dx * fx, geo.voxel.dy * fy, geo.voxel.dz * fz};
  out.origin_mm = {geo.origin_mm[0] + 0.5 * (fx - 1) * geo.voxel.dx, geo.origin_mm[1] + 0.5 * (fy - 1) * geo.voxel.dy,
                   geo.origin_mm[2] + 0.5 * (fz - 1) * geo.voxel.dz};
  Grid<double> r(out.dims);
  const double inv = 1.0 / (fx * fy * fz);
  for (int z = 0; z < out.dims.z; ++z)
    for (int y = 0; y < out.dims.y; ++y)
      for (int x = 0; x < out.dims.x; ++x) {
        double s = 0;
        for (int k = 0; k < fz; ++k)
          for (int j = 0; j < fy; ++j)
            for (int i = 0; i < fx; ++i) s += g.at(x * fx + i, y * fy + j, z * fz + k);
        r.at(x, y, z) = s * inv;
      }
  return {std::move(r), out};
}

struct LevelImages {
  Grid<double> moving;
  Grid<double> reference;
  LevelGeometry geo;
};

double entropy_of(const std::vector<double>& p) {
  double h = 0;
  for (double v : p) {
    if (v > 0) h -= v * std::log(v);
  }
  return h;
}

double level_cost(const LevelImages& im, const MotionField& field, const RegistrationConfig& cfg,
                  std::vector<Vec3>* gradient) {
  const auto& geo = im.geo;
  const DenseField u = densify_level(field, geo);
  const std::size_t n = geo.dims.volume();
  std::vector<double> warped(n);
  std::vector<Vec3> img_grad(n);
  for (int z = 0; z < geo.dims.z; ++z)
    for (int y = 0; y < geo.dims.y; ++y)
      for (int x = 0; x < geo.dims.x; ++x) {
        const std::size_t o = im.reference.offset(x, y, z);
        const Vec3& d = u.values[o];
        warped[o] = sample_clamped_grad(im.moving, x + d[0] / geo.voxel.dx, y + d[1] / geo.voxel.dy,
                                        z + d[2] / geo.voxel.dz, img_grad[o]);
      }

  std::vector<double> dcost(gradient ? n : 0, 0.0);
  double sim = 0;
  const auto& ref = im.reference.storage();
  if (cfg.similarity == Similarity::kMse) {
    const auto [lo, hi] = std::minmax_element(ref.begin(), ref.end());
    const double range = *hi > *lo ? *hi - *lo : 1.0;
    const double norm = 1.0 / (static_cast<double>(n) * range * range);
    for (std::size_t i = 0; i < n; ++i) {
      const double r = warped[i] - ref[i];
      sim += r * r * norm;
      if (gradient) dcost[i] = 2.0 * r * norm;
    }
  } else {
    const auto& mov = im.moving.storage();
    const auto [mlo, mhi] = std::minmax_element(mov.begin(), mov.end());
    const auto [rlo, rhi] = std::minmax_element(ref.begin(), ref.end());
    const double lo = std::min(*mlo, *rlo), hi = std::max(*mhi, *rhi);
    const int bins = cfg.nmi_bins;
    const double scale = hi > lo ? (bins - 1) / (hi - lo) : 1.0;
    std::vector<double> joint(static_cast<std::size_t>(bins) * bins, 0.0), pa(bins, 0.0), pb(bins, 0.0);
    std::vector<int> a0(n), rb(n);
    std::vector<double> frac(n);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double t = std::clamp((warped[i] - lo) * scale, 0.0, bins - 1.0);
      int a = std::min(static_cast<int>(t), bins - 2);
      a0[i] = a;
      frac[i] = t - a;
      rb[i] = std::clamp(static_cast<int>(std::lround((ref[i] - lo) * scale)), 0, bins - 1);
      joint[static_cast<std::size_t>(a) * bins + rb[i]] += (1 - frac[i]) * inv_n;
      joint[static_cast<std::size_t>(a + 1) * bins + rb[i]] += frac[i] * inv_n;
      pa[a] += (1 - frac[i]) * inv_n;
      pa[a + 1] += frac[i] * inv_n;
      pb[rb[i]] += inv_n;
    }
    const double ha = entropy_of(pa), hb = entropy_of(pb), hab = entropy_of(joint);
    const double nmi = hab > 0 ? (ha + hb) / hab : 1.0;
    sim = -nmi;
    if (gradient && hab > 0) {
      // d(NMI)/d p_ab with the reference marginal held fixed.
      std::vector<double> g(joint.size());
      for (int a = 0; a < bins; ++a) {
        const double la = std::log(std::max(pa[a], 1e-300)) + 1.0;
        for (int b = 0; b < bins; ++b) {
          const double pab = joint[static_cast<std::size_t>(a) * bins + b];
          const double lab = std::log(std::max(pab, 1e-300)) + 1.0;
          g[static_cast<std::size_t>(a) * bins + b] = (-la * hab + (ha + hb) * lab) / (hab * hab);
        }
      }
      for (std::size_t i = 0; i < n; ++i) {
        const double g0 = g[static_cast<std::size_t>(a0[i]) * bins + rb[i]];
        const double g1 = g[static_cast<std::size_t>(a0[i] + 1) * bins + rb[i]];
        const bool clamped = (warped[i] - lo) * scale <= 0.0 || (warped[i] - lo) * scale >= bins - 1.0;
        dcost[i] = clamped ? 0.0 : -(g1 - g0) * scale * inv_n;
      }
    }
  }

  // Smoothness: mean squared neighbour difference, in units of the control spacing.
  const Index3 cd = field.control_dims;
  std::size_t pairs = 0;
  for (int axis = 0; axis < 3; ++axis) {
    const Index3 step{axis == 0, axis == 1, axis == 2};
    pairs += static_cast<std::size_t>(cd.x - step.x) * (cd.y - step.y) * (cd.z - step.z);
  }
  const double smooth_norm = pairs ? cfg.smoothness_weight / (static_cast<double>(pairs) * field.spacing_mm * field.spacing_mm) : 0.0;
  double smooth = 0;
  std::vector<Vec3> sgrad(gradient ? field.size() : 0, Vec3{0, 0, 0});
  for (int k = 0; k < cd.z; ++k)
    for (int j = 0; j < cd.y; ++j)
      for (int i = 0; i < cd.x; ++i)
        for (int axis = 0; axis < 3; ++axis) {
          const int ni = i + (axis == 0), nj = j + (axis == 1), nk = k + (axis == 2);
          if (ni >= cd.x || nj >= cd.y || nk >= cd.z) continue;
          const Vec3& p = field.at(i, j, k);
          const Vec3& q = field.at(ni, nj, nk);
          for (int c = 0; c < 3; ++c) {
            const double diff = p[c] - q[c];
            smooth += smooth_norm * diff * diff;
            if (gradient) {
              sgrad[field.index(i, j, k)][c] += 2 * smooth_norm * diff;
              sgrad[field.index(ni, nj, nk)][c] -= 2 * smooth_norm * diff;
            }
          }
        }

  if (gradient) {
    DenseField dg;
    dg.dims = geo.dims;
    dg.values.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      dg.values[i] = {dcost[i] * img_grad[i][0] / geo.voxel.dx, dcost[i] * img_grad[i][1] / geo.voxel.dy,
                      dcost[i] * img_grad[i][2] / geo.voxel.dz};
    scatter_level(field, geo, dg, *gradient);
    for (std::size_t i = 0; i < field.size(); ++i)
      for (int c = 0; c < 3; ++c) (*gradient)[i][c] += sgrad[i][c];
  }
  return sim + smooth;
}

MotionField covering_level(const LevelGeometry& full, double spacing_mm, int order) {
  return MotionField::covering(full.dims, full.voxel, spacing_mm, order);
}

void check_same_dims(const Volume& a, const Volume& b) {
  if (a.dims() != b.dims()) throw ValidationError("moving and reference frames differ in shape");
}

}  // namespace

MotionField MotionField::covering(const Index3& dims, const Spacing& voxel, double spacing_mm, int order) {
  if (!(spacing_mm > 0)) throw ValidationError("control spacing must be positive");
  if (order != 1 && order != 3) throw ValidationError("interpolation order must be 1 or 3");
  MotionField f;
  f.spacing_mm = spacing_mm;
  f.order = order;
  auto count = [&](int d, double v) {
    const double extent = std::max(d - 1, 0) * v;
    return static_cast<int>(std::ceil(extent / spacing_mm - 1e-9)) + 1;
  };
  f.control_dims = {count(dims.x, voxel.dx), count(dims.y, voxel.dy), count(dims.z, voxel.dz)};
  f.displacements.assign(f.control_dims.volume(), Vec3{0, 0, 0});
  return f;
}

Vec3 MotionField::displacement_at(const Vec3& p) const {
  const auto ax = axis_weights(p[0], control_dims.x, spacing_mm, order);
  const auto ay = axis_weights(p[1], control_dims.y, spacing_mm, order);
  const auto az = axis_weights(p[2], control_dims.z, spacing_mm, order);
  Vec3 u{0, 0, 0};
  for (int c = 0; c < az.count; ++c)
    for (int b = 0; b < ay.count; ++b)
      for (int a = 0; a < ax.count; ++a) {
        const double w = ax.w[a] * ay.w[b] * az.w[c];
        const Vec3& d = at(ax.idx[a], ay.idx[b], az.idx[c]);
        for (int k = 0; k < 3; ++k) u[k] += w * d[k];
      }
  return u;
}

std::vector<Vec3> MotionField::control_point_displacements() const {
  if (order == 1) return displacements;
  std::vector<Vec3> out;
  out.reserve(size());
  for (int k = 0; k < control_dims.z; ++k)
    for (int j = 0; j < control_dims.y; ++j)
      for (int i = 0; i < control_dims.x; ++i)
        out.push_back(displacement_at({i * spacing_mm, j * spacing_mm, k * spacing_mm}));
  return out;
}

void MotionField::validate() const {
  if (control_dims.x < 1 || control_dims.y < 1 || control_dims.z < 1) throw ValidationError("empty control grid");
  if (displacements.size() != control_dims.volume()) throw ValidationError("displacement count does not match control grid");
  if (!(spacing_mm > 0) || !std::isfinite(spacing_mm)) throw ValidationError("control spacing must be positive");
  if (order != 1 && order != 3) throw ValidationError("interpolation order must be 1 or 3");
  for (const auto& d : displacements)
    for (double v : d)
      if (!std::isfinite(v)) throw ValidationError("non-finite displacement");
}

void MotionField::check_covers(const Index3& dims, const Spacing& voxel) const {
  validate();
  const double ex = (dims.x - 1) * voxel.dx, ey = (dims.y - 1) * voxel.dy, ez = (dims.z - 1) * voxel.dz;
  const double tol = 1e-9;
  if ((control_dims.x - 1) * spacing_mm < ex - tol || (control_dims.y - 1) * spacing_mm < ey - tol ||
      (control_dims.z - 1) * spacing_mm < ez - tol)
    throw ValidationError("control grid does not cover the volume");
}

bool MotionField::same_grid(const MotionField& o) const {
  return control_dims == o.control_dims && spacing_mm == o.spacing_mm;
}

MotionField MotionField::scaled(double factor) const {
  MotionField f = *this;
  for (auto& d : f.displacements)
    for (double& v : d) v *= factor;
  return f;
}

DenseField densify(const MotionField& field, const Index3& dims, const Spacing& voxel) {
  field.check_covers(dims, voxel);
  return densify_level(field, LevelGeometry{dims, voxel, {0, 0, 0}});
}

MotionField simulate_motion_field(Rng& rng, double magnitude_scale, const MotionSimulationSpec& spec) {
  if (!(magnitude_scale >= 0)) throw ValidationError("magnitude scale must be non-negative");
  MotionField f = MotionField::covering(spec.dims, spec.voxel, spec.control_spacing_mm, spec.order);
  const Vec3 fov{(spec.dims.x - 1) * spec.voxel.dx, (spec.dims.y - 1) * spec.voxel.dy, (spec.dims.z - 1) * spec.voxel.dz};
  struct Mode {
    Vec3 k;
    double phase;
    Vec3 amp;
  };
  std::vector<Mode> modes;
  for (int m = 0; m < spec.modes; ++m) {
    Mode md;
    for (int a = 0; a < 3; ++a) {
      const double cycles = rng.uniform(-spec.max_cycles, spec.max_cycles);
      md.k[a] = fov[a] > 0 ? 2.0 * std::numbers::pi * cycles / fov[a] : 0.0;
    }
    md.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (int a = 0; a < 3; ++a) md.amp[a] = rng.normal();
    modes.push_back(md);
  }
  Vec3 translation;
  for (int a = 0; a < 3; ++a) translation[a] = rng.normal();
  for (int k = 0; k < f.control_dims.z; ++k)
    for (int j = 0; j < f.control_dims.y; ++j)
      for (int i = 0; i < f.control_dims.x; ++i) {
        const Vec3 p{i * f.spacing_mm, j * f.spacing_mm, k * f.spacing_mm};
        Vec3 d = translation;
        for (const auto& md : modes) {
          const double s = std::sin(md.k[0] * p[0] + md.k[1] * p[1] + md.k[2] * p[2] + md.phase);
          for (int a = 0; a < 3; ++a) d[a] += md.amp[a] * s;
        }
        f.at(i, j, k) = d;
      }
  const double mag = mean_magnitude(f);
  const double factor = mag > 0 ? spec.mean_magnitude_mm * magnitude_scale / mag : 0.0;
  return f.scaled(factor);
}

double max_neighbour_difference(const MotionField& f) {
  double best = 0;
  const Index3 cd = f.control_dims;
  for (int k = 0; k < cd.z; ++k)
    for (int j = 0; j < cd.y; ++j)
      for (int i = 0; i < cd.x; ++i) {
        const int n[3][3] = {{i + 1, j, k}, {i, j + 1, k}, {i, j, k + 1}};
        for (const auto& q : n) {
          if (q[0] >= cd.x || q[1] >= cd.y || q[2] >= cd.z) continue;
          const Vec3& a = f.at(i, j, k);
          const Vec3& b = f.at(q[0], q[1], q[2]);
          best = std::max(best, std::hypot(a[0] - b[0], a[1] - b[1], a[2] - b[2]));
        }
      }
  return best;
}

Volume warp_dense(const Volume& frame, const DenseField& field, const Spacing& voxel) {
  if (field.dims != frame.dims()) throw ValidationError("dense field does not match frame");
  Volume out(frame.dims());
  const Index3 d = frame.dims();
  for (int z = 0; z < d.z; ++z)
    for (int y = 0; y < d.y; ++y)
      for (int x = 0; x < d.x; ++x) {
        const Vec3& u = field.at(x, y, z);
        out.at(x, y, z) =
            static_cast<float>(sample_trilinear(frame, x + u[0] / voxel.dx, y + u[1] / voxel.dy, z + u[2] / voxel.dz));
      }
  return out;
}

Volume warp_frame(const Volume& frame, const MotionField& field, const Spacing& voxel) {
  return warp_dense(frame, densify(field, frame.dims(), voxel), voxel);
}

DenseField invert_field(const MotionField& field, const Index3& dims, const Spacing& voxel, int iterations) {
  field.check_covers(dims, voxel);
  DenseField v = densify(field, dims, voxel);
  for (auto& e : v.values)
    for (double& c : e) c = -c;
  for (int it = 0; it < iterations; ++it) {
    for (int z = 0; z < dims.z; ++z)
      for (int y = 0; y < dims.y; ++y)
        for (int x = 0; x < dims.x; ++x) {
          Vec3& cur = v.at(x, y, z);
          const Vec3 u = field.displacement_at({x * voxel.dx + cur[0], y * voxel.dy + cur[1], z * voxel.dz + cur[2]});
          cur = {-u[0], -u[1], -u[2]};
        }
  }
  return v;
}

Volume apply_simulated_motion(const Volume& frame, const MotionField& truth, const Spacing& voxel) {
  return warp_dense(frame, invert_field(truth, frame.dims(), voxel), voxel);
}

void RegistrationConfig::validate() const {
  if (levels < 1) throw ValidationError("registration needs at least one level");
  if (!(control_spacing_mm > 0)) throw ValidationError("control spacing must be positive");
  if (order != 1 && order != 3) throw ValidationError("interpolation order must be 1 or 3");
  if (smoothness_weight < 0) throw ValidationError("smoothness weight must be non-negative");
  if (iterations < 0) throw ValidationError("iterations must be non-negative");
  if (!(step_mm > 0) || !(min_step_mm > 0)) throw ValidationError("step sizes must be positive");
  if (nmi_bins < 4) throw ValidationError("NMI needs at least four bins");
}

double registration_cost(const Volume& moving, const Volume& reference, const Spacing& voxel, const MotionField& field,
                         const RegistrationConfig& config, std::vector<Vec3>* gradient) {
  check_same_dims(moving, reference);
  config.validate();
  field.check_covers(moving.dims(), voxel);
  LevelImages im{to_double_grid(moving), to_double_grid(reference), {moving.dims(), voxel, {0, 0, 0}}};
  return level_cost(im, field, config, gradient);
}

RegistrationResult register_frames(const Volume& moving, const Volume& reference, const Spacing& voxel,
                                   const RegistrationConfig& config) {
  check_same_dims(moving, reference);
  config.validate();
  const LevelGeometry full{moving.dims(), voxel, {0, 0, 0}};
  std::vector<LevelImages> pyramid;
  pyramid.push_back({to_double_grid(moving), to_double_grid(reference), full});
  for (int l = 1; l < config.levels; ++l) {
    const auto& prev = pyramid.back();
    auto [m, g] = downsample(prev.moving, prev.geo);
    auto [r, g2] = downsample(prev.reference, prev.geo);
    pyramid.push_back({std::move(m), std::move(r), g});
  }

  RegistrationResult result;
  MotionField field;
  bool first = true;
  for (int l = config.levels - 1; l >= 0; --l) {
    const double spacing = config.control_spacing_mm * std::ldexp(1.0, l);
    MotionField next = covering_level(full, spacing, config.order);
    if (!first) {
      for (int k = 0; k < next.control_dims.z; ++k)
        for (int j = 0; j < next.control_dims.y; ++j)
          for (int i = 0; i < next.control_dims.x; ++i)
            next.at(i, j, k) = field.displacement_at({i * spacing, j * spacing, k * spacing});
    }
    field = std::move(next);
    const auto& im = pyramid[static_cast<std::size_t>(l)];
    std::vector<Vec3> grad;
    double cost = level_cost(im, field, config, &grad);
    if (first) result.initial_cost = cost;
    first = false;
    double step = config.step_mm;
    bool level_converged = false;
    for (int it = 0; it < config.iterations; ++it) {
      ++result.iterations;
      double gmax = 0;
      for (const auto& g : grad) gmax = std::max(gmax, std::hypot(g[0], g[1], g[2]));
      if (!(gmax > 0)) {
        level_converged = true;
        break;
      }
      MotionField trial = field;
      for (std::size_t i = 0; i < field.size(); ++i)
        for (int c = 0; c < 3; ++c) trial.displacements[i][c] -= step * grad[i][c] / gmax;
      std::vector<Vec3> trial_grad;
      const double trial_cost = level_cost(im, trial, config, &trial_grad);
      if (trial_cost < cost) {
        field = std::move(trial);
        grad = std::move(trial_grad);
        cost = trial_cost;
        step = std::min(step * 1.25, config.step_mm);
      } else {
        step *= 0.5;
        if (step < config.min_step_mm) {
          level_converged = true;
          break;
        }
      }
    }
    if (l == 0) {
      result.final_cost = cost;
      result.converged = level_converged;
    }
  }
  result.field = std::move(field);
  return result;
}

double motion_error(const MotionField& predicted, const MotionField& truth) {
  if (!predicted.same_grid(truth)) throw ValidationError("motion fields use different control grids");
  predicted.validate();
  truth.validate();
  const auto p = predicted.control_point_displacements();
  const auto t = truth.control_point_displacements();
  double acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    acc += (std::abs(t[i][0] - p[i][0]) + std::abs(t[i][1] - p[i][1]) + std::abs(t[i][2] - p[i][2])) / 3.0;
  return acc / static_cast<double>(p.size());
}

double mean_magnitude(const MotionField& field) {
  if (field.size() == 0) return 0;
  double acc = 0;
  for (const auto& d : field.control_point_displacements()) acc += std::hypot(d[0], d[1], d[2]);
  return acc / static_cast<double>(field.size());
}

DynamicStudy correct_study(const DynamicStudy& study, const std::vector<MotionField>& fields) {
  if (fields.size() > study.frame_count()) throw ValidationError("more fields than frames");
  DynamicStudy out = study;
  for (std::size_t i = 0; i + 1 < study.frame_count() && i < fields.size(); ++i) {
    if (fields[i].size() == 0) continue;
    out.frames[i] = warp_frame(study.frames[i], fields[i], study.voxel_spacing);
  }
  return out;
}

namespace {
constexpr const char* kHeaderEnd = "end_header\n";
}

void save_motion_field(const MotionField& field, const std::filesystem::path& path) {
  field.validate();
  KeyValueWriter w;
  w.put("format", "taigan-motion");
  w.put("version", 1);
  w.put("control_dims", std::vector<int>{field.control_dims.x, field.control_dims.y, field.control_dims.z});
  w.put("spacing_mm", field.spacing_mm);
  w.put("order", field.order);
  w.put("frame_index", field.frame_index);
  w.put("payload", "float64-le");
  w.put("count", static_cast<long long>(field.size() * 3));
  std::string bytes = w.str() + kHeaderEnd;
  const std::size_t header = bytes.size();
  bytes.resize(header + field.size() * 3 * sizeof(double));
  std::size_t pos = header;
  for (const auto& d : field.displacements)
    for (double v : d) {
      std::uint64_t u = std::bit_cast<std::uint64_t>(v);
      if constexpr (std::endian::native != std::endian::little) u = __builtin_bswap64(u);
      std::memcpy(bytes.data() + pos, &u, sizeof u);
      pos += sizeof u;
    }
  write_text_atomic(path, bytes);
}

MotionField load_motion_field(const std::filesystem::path& path) {
  const std::string bytes = read_text(path);
  const auto end = bytes.find(kHeaderEnd);
  if (end == std::string::npos) throw ParseError("end_header", "missing header terminator in " + path.string());
  const auto kv = KeyValueReader::parse(std::string_view(bytes).substr(0, end), path.string());
  if (!kv.has("format") || kv.get_string("format") != "taigan-motion")
    throw ParseError("format", "not a motion field file: " + path.string());
  if (kv.get_int("version") != 1) throw ParseError("version", "unsupported motion field version");
  if (kv.get_string("payload") != "float64-le") throw ParseError("payload", "unsupported payload encoding");
  const auto dims = kv.get_ints("control_dims");
  if (dims.size() != 3) throw ParseError("control_dims", "expected three integers");
  MotionField f;
  f.control_dims = {dims[0], dims[1], dims[2]};
  if (f.control_dims.x < 1 || f.control_dims.y < 1 || f.control_dims.z < 1)
    throw ParseError("control_dims", "dimensions must be positive");
  f.spacing_mm = kv.get_double("spacing_mm");
  f.order = static_cast<int>(kv.get_int("order"));
  f.frame_index = static_cast<int>(kv.get_int("frame_index"));
  const auto count = static_cast<std::size_t>(kv.get_int("count"));
  if (count != f.control_dims.volume() * 3) throw ParseError("count", "does not match control_dims");
  const std::size_t start = end + std::strlen(kHeaderEnd);
  if (bytes.size() - start != count * sizeof(double)) throw ParseError("payload", "truncated or oversized payload");
  f.displacements.resize(f.control_dims.volume());
  std::size_t pos = start;
  for (auto& d : f.displacements)
    for (double& v : d) {
      std::uint64_t u;
      std::memcpy(&u, bytes.data() + pos, sizeof u);
      if constexpr (std::endian::native != std::endian::little) u = __builtin_bswap64(u);
      v = std::bit_cast<double>(u);
      pos += sizeof u;
    }
  try {
    f.validate();
  } catch (const ValidationError& e) {
    throw ParseError("payload", e.what());
  }
  return f;
}

}  // namespace taigan
