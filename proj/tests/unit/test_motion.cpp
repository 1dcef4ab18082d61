#include <doctest.h>

#include <cmath>

#include "taigan/motion.hpp"
#include "taigan/phantom.hpp"
#include "taigan/preprocess.hpp"
#include "test_util.hpp"

using namespace taigan;

namespace {

const Spacing kVoxel{2.0, 2.0, 3.0};

Volume ramp(Index3 d) {
  Volume v(d);
  for (int z = 0; z < d.z; ++z)
    for (int y = 0; y < d.y; ++y)
      for (int x = 0; x < d.x; ++x) v.at(x, y, z) = static_cast<float>(x + 2 * y + 3 * z);
  return v;
}

MotionField translation(const Index3& dims, const Vec3& t) {
  auto f = MotionField::covering(dims, kVoxel, 8.0);
  for (auto& d : f.displacements) d = t;
  return f;
}

}  // namespace

TEST_CASE("zero field warps to the identity") {
  Rng rng(41);
  const Index3 d{16, 16, 12};
  const Volume v = testing::random_volume(rng, d);
  const auto f = MotionField::covering(d, kVoxel, 8.0);
  CHECK(warp_frame(v, f, kVoxel) == v);
  CHECK(mean_magnitude(f) == 0.0);
}

TEST_CASE("a uniform field is an exact translation") {
  const Index3 d{16, 16, 12};
  const Volume v = ramp(d);
  const auto f = translation(d, {2.0, -4.0, 3.0});  // (+1, -2, +1) voxels
  const Volume w = warp_frame(v, f, kVoxel);
  for (int z = 2; z < 10; ++z)
    for (int y = 3; y < 13; ++y)
      for (int x = 2; x < 13; ++x) CHECK(w.at(x, y, z) == doctest::Approx(v.at(x + 1, y - 2, z + 1)));
  // Sub-voxel shifts on a linear ramp are exact too.
  const Volume h = warp_frame(v, translation(d, {1.0, 0.0, 0.0}), kVoxel);
  CHECK(h.at(5, 5, 5) == doctest::Approx(v.at(5, 5, 5) + 0.5f));
}

TEST_CASE("control point layout and trilinear interpolation") {
  const Index3 d{17, 9, 5};
  auto f = MotionField::covering(d, kVoxel, 8.0);
  CHECK(f.control_dims == Index3{5, 3, 3});
  CHECK_NOTHROW(f.check_covers(d, kVoxel));
  f.at(1, 1, 1) = {4.0, 0.0, 0.0};
  const auto mid = f.displacement_at({4.0, 4.0, 4.0});  // halfway to (1,1,1) on every axis
  CHECK(mid[0] == doctest::Approx(4.0 * 0.125));
  const auto cp = f.control_point_displacements();
  CHECK(cp[f.index(1, 1, 1)][0] == doctest::Approx(4.0));
  CHECK_THROWS_AS(f.check_covers({40, 9, 5}, kVoxel), ValidationError);
}

TEST_CASE("motion error is the mean per-axis absolute difference over control points") {
  Rng rng(42);
  const Index3 d{16, 16, 12};
  auto a = MotionField::covering(d, kVoxel, 8.0);
  auto b = a;
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (int k = 0; k < 3; ++k) {
      a.displacements[i][k] = rng.uniform(-3, 3);
      b.displacements[i][k] = rng.uniform(-3, 3);
      acc += std::fabs(a.displacements[i][k] - b.displacements[i][k]) / 3.0;
    }
  }
  CHECK(motion_error(a, b) == doctest::Approx(acc / a.size()).epsilon(1e-12));
  CHECK(motion_error(a, a) == 0.0);
  const auto other = MotionField::covering(d, kVoxel, 16.0);
  CHECK_THROWS_AS(motion_error(a, other), ValidationError);
}

TEST_CASE("simulated fields hit the requested magnitude and scale linearly") {
  MotionSimulationSpec spec;
  spec.dims = {24, 24, 16};
  spec.voxel = kVoxel;
  Rng r1(43), r2(43);
  const auto f1 = simulate_motion_field(r1, 1.0, spec);
  const auto f2 = simulate_motion_field(r2, 2.0, spec);
  CHECK(mean_magnitude(f1) == doctest::Approx(spec.mean_magnitude_mm).epsilon(1e-9));
  CHECK(mean_magnitude(f2) == doctest::Approx(2 * spec.mean_magnitude_mm).epsilon(1e-9));
  CHECK(max_neighbour_difference(f2) == doctest::Approx(2 * max_neighbour_difference(f1)).epsilon(1e-9));
  // Band-limited: adjacent control points differ by much less than the magnitude scale allows.
  CHECK(max_neighbour_difference(f1) < 3.0 * spec.mean_magnitude_mm);
  CHECK_NOTHROW(f1.validate());
  Rng r3(44);
  CHECK_THROWS_AS(simulate_motion_field(r3, -1.0, spec), ValidationError);
}

TEST_CASE("inverse field satisfies the fixed-point identity") {
  MotionSimulationSpec spec;
  spec.dims = {24, 24, 16};
  spec.voxel = kVoxel;
  Rng rng(45);
  const auto u = simulate_motion_field(rng, 1.0, spec);
  const auto v = invert_field(u, spec.dims, kVoxel);
  double worst = 0;
  for (int z = 0; z < spec.dims.z; ++z)
    for (int y = 0; y < spec.dims.y; ++y)
      for (int x = 0; x < spec.dims.x; ++x) {
        const Vec3 p{x * kVoxel.dx, y * kVoxel.dy, z * kVoxel.dz};
        const Vec3 vv = v.at(x, y, z);
        const Vec3 uu = u.displacement_at({p[0] + vv[0], p[1] + vv[1], p[2] + vv[2]});
        for (int k = 0; k < 3; ++k) worst = std::max(worst, std::fabs(uu[k] + vv[k]));
      }
  CHECK(worst < 1e-3);
}

TEST_CASE("simulated motion followed by the truth warp restores the frame") {
  const Index3 d{24, 24, 16};
  const Volume v = ramp(d);
  const auto t = translation(d, {2.0, 2.0, 0.0});
  const Volume moved = apply_simulated_motion(v, t, kVoxel);
  const Volume back = warp_frame(moved, t, kVoxel);
  for (int z = 3; z < 13; ++z)
    for (int y = 4; y < 20; ++y)
      for (int x = 4; x < 20; ++x) CHECK(back.at(x, y, z) == doctest::Approx(v.at(x, y, z)).epsilon(1e-4));
}

TEST_CASE("registration of a frame to itself stays below 0.2 voxel") {
  PhantomSpec ps;
  ps.noise_level = 0;
  const auto sim = simulate_study(ps, FrameSchedule::from_durations({60, 60}), "r");
  const Volume& ref = sim.study.frames.back();
  for (auto sim_kind : {Similarity::kMse, Similarity::kNmi}) {
    RegistrationConfig cfg;
    cfg.similarity = sim_kind;
    cfg.iterations = 20;
    const auto r = register_frames(ref, ref, ps.spacing, cfg);
    const auto zero = MotionField::covering(ref.dims(), ps.spacing, cfg.control_spacing_mm);
    CHECK(motion_error(r.field, zero) < 0.2 * ps.spacing.dx);
  }
}

TEST_CASE("registration recovers a smooth simulated field better than doing nothing") {
  PhantomSpec ps;
  ps.noise_level = 0;
  const auto sim = simulate_study(ps, FrameSchedule::from_durations({60, 60}), "r");
  const Volume ref = normalize_intensity(sim.study.frames.back()).first;
  MotionSimulationSpec ms;
  ms.dims = ref.dims();
  ms.voxel = ps.spacing;
  Rng rng(46);
  const auto truth = simulate_motion_field(rng, 2.0, ms);
  const Volume moved = apply_simulated_motion(ref, truth, ps.spacing);
  RegistrationConfig cfg;
  cfg.iterations = 30;
  const auto r = register_frames(moved, ref, ps.spacing, cfg);
  const auto zero = MotionField::covering(ref.dims(), ps.spacing, cfg.control_spacing_mm);
  CHECK(motion_error(r.field, truth) < 0.6 * motion_error(zero, truth));
  CHECK(r.final_cost < r.initial_cost);
}

TEST_CASE("registration cost gradient matches finite differences") {
  const Index3 d{16, 16, 12};
  Rng rng(47);
  Volume a(d), b(d);
  for (int z = 0; z < d.z; ++z)
    for (int y = 0; y < d.y; ++y)
      for (int x = 0; x < d.x; ++x) {
        a.at(x, y, z) = static_cast<float>(std::sin(0.4 * x) * std::cos(0.3 * y) + 0.1 * z);
        b.at(x, y, z) = static_cast<float>(std::sin(0.4 * x + 0.3) * std::cos(0.3 * y) + 0.1 * z);
      }
  RegistrationConfig cfg;
  cfg.control_spacing_mm = 8.0;
  auto f = MotionField::covering(d, kVoxel, 8.0);
  for (auto& v : f.displacements) v = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
  std::vector<Vec3> g;
  registration_cost(a, b, kVoxel, f, cfg, &g);
  for (std::size_t i : {std::size_t{3}, f.size() / 2}) {
    for (int k = 0; k < 3; ++k) {
      const double h = 1e-4;
      auto fp = f, fm = f;
      fp.displacements[i][k] += h;
      fm.displacements[i][k] -= h;
      const double fd = (registration_cost(a, b, kVoxel, fp, cfg) - registration_cost(a, b, kVoxel, fm, cfg)) / (2 * h);
      CHECK(g[i][k] == doctest::Approx(fd).epsilon(1e-3).scale(1e-6));
    }
  }
}

TEST_CASE("motion field files round-trip and reject corruption") {
  Rng rng(48);
  auto f = MotionField::covering({16, 16, 12}, kVoxel, 8.0, 3);
  f.frame_index = 4;
  for (auto& v : f.displacements) v = {rng.normal(), rng.normal(), rng.normal()};
  const auto dir = testing::scratch_dir("motion_io");
  save_motion_field(f, dir / "a.motion");
  CHECK(load_motion_field(dir / "a.motion") == f);
  std::filesystem::resize_file(dir / "a.motion", std::filesystem::file_size(dir / "a.motion") - 8);
  CHECK_THROWS_AS(load_motion_field(dir / "a.motion"), ParseError);
}

TEST_CASE("correct_study warps frames and leaves the reference alone") {
  const Index3 d{16, 16, 12};
  DynamicStudy s;
  s.frames = {ramp(d), ramp(d), ramp(d)};
  s.frame_start_times = {0, 10, 20};
  s.frame_durations = {10, 10, 10};
  s.decay_correction_factors = {1, 1, 1};
  s.voxel_spacing = kVoxel;
  const auto t = translation(d, {2.0, 0.0, 0.0});
  const auto out = correct_study(s, {t, MotionField{}, t});
  CHECK(out.frames[0] == warp_frame(s.frames[0], t, kVoxel));
  CHECK(out.frames[1] == s.frames[1]);
  CHECK(out.frames[2] == s.frames[2]);
}
