#include <doctest.h>

#include <algorithm>

#include "taigan/preprocess.hpp"
#include "test_util.hpp"

using namespace taigan;
using taigan::testing::random_volume;

namespace {

TimeActivityCurves curves(std::vector<double> rv, std::vector<double> lv) {
  TimeActivityCurves t;
  t.rvbp = std::move(rv);
  t.lvbp = std::move(lv);
  t.myo.assign(t.lvbp.size(), 1.0);
  std::vector<double> d(t.lvbp.size(), 5.0);
  t.schedule = FrameSchedule::from_durations(d);
  return t;
}

CardiacMasks box_masks(Index3 d) {
  CardiacMasks m{Mask(d), Mask(d), Mask(d), {d.x / 2, d.y / 2, d.z / 2}};
  for (int z = 0; z < d.z; ++z)
    for (int y = 0; y < d.y; ++y)
      for (int x = 0; x < d.x; ++x) {
        if (x < 3) m.rvbp.at(x, y, z) = 1;
        else if (x < 6) m.lvbp.at(x, y, z) = 1;
        else if (x < 8) m.myo.at(x, y, z) = 1;
      }
  return m;
}

}  // namespace

TEST_CASE("EQ frame is the first crossing after leading empty frames") {
  const auto t = curves({0, 0, 10, 50, 40, 20, 10}, {0, 0, 1, 20, 45, 30, 15});
  CHECK(first_active_frame(t) == 2);
  CHECK(find_eq_frame(t) == 4);
  // Leading frames where both are zero do not count as a crossing.
  const auto z = curves({0, 5, 3}, {0, 1, 4});
  CHECK(find_eq_frame(z) == 2);
}

TEST_CASE("curves that never cross raise NoEqFrameError") {
  const auto t = curves({1, 5, 4, 3}, {0, 2, 2, 2});
  CHECK_THROWS_AS(find_eq_frame(t), NoEqFrameError);
  CHECK_THROWS_AS(select_frames(t), NoEqFrameError);
}

TEST_CASE("frame selection applies the LVBP threshold and excludes the reference") {
  const auto t = curves({0, 10, 50, 40, 20, 10, 8}, {0, 1, 20, 45, 100, 30, 15});
  const auto s = select_frames(t, 0.10);
  CHECK(s.reference_index == 6);
  CHECK(s.eq_index == 3);
  CHECK(s.included == std::vector<std::size_t>{2, 3, 4, 5});
  CHECK(s.pre_eq() == std::vector<std::size_t>{2});
  CHECK(s.is_included(4));
  CHECK_FALSE(s.is_included(6));
  // Strict inequality: a frame exactly at the threshold is excluded.
  const auto s2 = select_frames(t, 0.20);
  CHECK_FALSE(s2.is_included(2));
  CHECK(s2.is_included(5));
}

TEST_CASE("intensity normalisation maps onto [-1, 1] and restores") {
  Rng rng(7);
  const Volume v = random_volume(rng, {8, 8, 8}, 10, 5000);
  const auto [n, p] = normalize_intensity(v);
  const auto [lo, hi] = std::minmax_element(n.storage().begin(), n.storage().end());
  CHECK(*lo == doctest::Approx(-1.0));
  CHECK(*hi == doctest::Approx(1.0));
  const Volume r = restore_intensity(n, p);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(r[i] == doctest::Approx(v[i]).epsilon(1e-5));
  CHECK_THROWS_AS(intensity_params(Volume({8, 8, 8}, 3.0f)), ValidationError);
}

TEST_CASE("temporal normalisation aligns the EQ frame to a fixed slot") {
  const auto t = curves({0, 10, 50, 40, 20, 10, 8, 6, 5}, {0, 1, 20, 45, 100, 30, 15, 12, 10});
  const auto in = normalize_temporal(t, 3);
  CHECK(in.steps() == 9);
  CHECK(in.eq_slot == 3);
  CHECK(in.slot_of(3) == 3);
  CHECK(in.slot_of(0) == 0);
  CHECK(in.slot_of(8) == 8);
  CHECK(*std::max_element(in.lvbp.begin(), in.lvbp.end()) == doctest::Approx(1.0));
  CHECK(in.lvbp[4] == doctest::Approx(1.0));  // frame 4 holds the LV peak

  const auto shifted = normalize_temporal(t, 5);
  CHECK(shifted.slot_of(5) == shifted.eq_slot);
  CHECK(shifted.lvbp[shifted.eq_slot] == doctest::Approx(30.0 / 100.0));
  CHECK(shifted.lvbp[0] == doctest::Approx(20.0 / 100.0));  // frame 2
  CHECK(shifted.slot_of(0) == 0);                           // clamped

  const auto c = in.conditioning(2);
  REQUIRE(c.values.size() == 27);
  double hot = 0;
  for (std::size_t s = 0; s < c.steps; ++s) hot += c.at(s, 2);
  CHECK(hot == 1.0);
  CHECK(c.at(2, 2) == 1.0);
  CHECK_THROWS_AS(normalize_temporal(t, 9), ValidationError);
}

TEST_CASE("zero rotation and shift reproduce crop_patch") {
  Rng rng(8);
  const Volume v = random_volume(rng, {16, 16, 12});
  const Index3 c{8, 7, 6}, size{8, 8, 4};
  CHECK(transform_patch(v, c, size, 0.0, {0, 0, 0}) == crop_patch(v, c, size));
  const Mask m = Mask({16, 16, 12}, 1);
  CHECK(transform_labels(m, c, size, 0.0, {0, 0, 0}) == crop_patch(m, c, size));
}

TEST_CASE("a 90 degree rotation permutes patch axes exactly") {
  Rng rng(9);
  const Volume v = random_volume(rng, {16, 16, 4});
  const Index3 c{8, 8, 2}, size{8, 8, 4};
  const Volume r = transform_patch(v, c, size, 90.0, {0, 0, 0});
  // Patch voxel (x, y) samples source (c.x - (y - 4), c.y + (x - 4)).
  CHECK(r.at(5, 2, 1) == doctest::Approx(v.at(8 + 2, 8 + 1, 1)).epsilon(1e-5));
  CHECK(r.at(6, 6, 0) == doctest::Approx(v.at(8 - 2, 8 + 2, 0)).epsilon(1e-5));
}

TEST_CASE("augmentation draws stay within configured bounds") {
  Rng rng(10);
  const Index3 d{16, 16, 12};
  const auto masks = box_masks(d);
  const Volume early = random_volume(rng, d, 0, 10);
  const Volume ref = random_volume(rng, d, 0, 100);
  AugmentationConfig cfg;
  cfg.patch_size = {8, 8, 8};
  cfg.max_rotation_deg = 45;
  cfg.max_shift_vox = 2;
  cfg.mask_jitter_vox = 1;
  for (int i = 0; i < 50; ++i) {
    const auto p = sample_training_patch(early, ref, masks, rng, cfg);
    CHECK(std::abs(p.transform.rotation_deg) <= 45.0);
    for (int a : {p.transform.shift.x, p.transform.shift.y, p.transform.shift.z}) CHECK(std::abs(a) <= 2);
    for (int a : {p.transform.mask_shift.x, p.transform.mask_shift.y, p.transform.mask_shift.z}) CHECK(std::abs(a) <= 1);
    CHECK(p.input.dims() == cfg.patch_size);
    CHECK(p.target.dims() == cfg.patch_size);
    REQUIRE(p.mask_channels.size() == 1);
    for (float x : p.input.storage()) CHECK((x >= -1.0001f && x <= 1.0001f));
  }
}

TEST_CASE("mask jitter shifts every mask by the same bounded offset") {
  const Index3 d{16, 16, 12};
  const auto m = box_masks(d);
  Rng rng(11);
  for (int i = 0; i < 20; ++i) {
    const auto j = jitter_masks(m, rng, 2);
    const auto c0 = mask_centroid(m.myo), c1 = mask_centroid(j.myo);
    const auto l0 = mask_centroid(m.lvbp), l1 = mask_centroid(j.lvbp);
    CHECK(std::abs(c1[1] - c0[1]) <= 2.0);
    CHECK(std::abs(c1[2] - c0[2]) <= 2.0);
    // Same offset for all masks (y and z are unaffected by clipping for these slabs).
    CHECK((c1[1] - c0[1]) == doctest::Approx(l1[1] - l0[1]));
  }
  CHECK(jitter_masks(m, rng, 0) == m);
}

TEST_CASE("mask encodings") {
  const auto labels = mask_labels(box_masks({16, 16, 12}));
  CHECK(labels.at(1, 0, 0) == 1);
  CHECK(labels.at(4, 0, 0) == 2);
  CHECK(labels.at(7, 0, 0) == 3);
  CHECK(labels.at(12, 0, 0) == 0);
  const auto one = encode_masks(labels, MaskEncoding::kSingleChannel);
  REQUIRE(one.size() == 1);
  CHECK(one[0].at(4, 0, 0) == doctest::Approx(2.0 / 3.0));
  const auto three = encode_masks(labels, MaskEncoding::kThreeChannel);
  REQUIRE(three.size() == 3);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const float sum = three[0][i] + three[1][i] + three[2][i];
    CHECK(sum == (labels[i] ? 1.0f : 0.0f));
  }
}

TEST_CASE("TAC extraction is the mean inside each mask") {
  const Index3 d{16, 16, 12};
  const auto m = box_masks(d);
  DynamicStudy s;
  Volume f(d);
  for (int z = 0; z < d.z; ++z)
    for (int y = 0; y < d.y; ++y)
      for (int x = 0; x < d.x; ++x) f.at(x, y, z) = static_cast<float>(x);
  s.frames = {f, f};
  s.frame_start_times = {0, 5};
  s.frame_durations = {5, 5};
  s.decay_correction_factors = {1, 1};
  const auto t = extract_tacs(s, m);
  CHECK(t.rvbp[0] == doctest::Approx(1.0));
  CHECK(t.lvbp[1] == doctest::Approx(4.0));
  CHECK(t.myo[0] == doctest::Approx(6.5));
  CHECK_THROWS_AS(region_mean(f, Mask(d)), ValidationError);
}
