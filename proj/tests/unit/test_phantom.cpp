#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "taigan/phantom.hpp"
#include "taigan/preprocess.hpp"
#include "test_util.hpp"

using namespace taigan;

namespace {

PhantomSpec quiet_spec() {
  PhantomSpec s;
  s.noise_level = 0.0;
  s.supersample = 1;
  return s;
}

}  // namespace

TEST_CASE("simulation is deterministic for a fixed seed") {
  PhantomSpec spec;
  spec.seed = 11;
  const auto sched = FrameSchedule::from_durations({10, 10, 20});
  const auto a = simulate_study(spec, sched, "a");
  const auto b = simulate_study(spec, sched, "a");
  CHECK(a.study == b.study);
  CHECK(a.masks == b.masks);
  spec.seed = 12;
  const auto c = simulate_study(spec, sched, "a");
  CHECK_FALSE(a.study.frames[1] == c.study.frames[1]);
}

TEST_CASE("masks are disjoint, non-empty and the study validates") {
  const auto sim = simulate_study(quiet_spec(), FrameSchedule::from_durations({10, 20}), "m");
  CHECK_NOTHROW(sim.study.validate());
  CHECK_NOTHROW(sim.masks.validate(sim.study.dims()));
  CHECK(mask_count(sim.masks.myo) > 100);
  CHECK(sim.masks.myo.at(sim.masks.lv_inferior_wall_center.x, sim.masks.lv_inferior_wall_center.y,
                         sim.masks.lv_inferior_wall_center.z) == 1);
}

TEST_CASE("RVBP peaks before LVBP and the curves cross") {
  const auto sim = simulate_study(PhantomSpec{}, FrameSchedule::rb82_27_frames(), "x");
  const auto& t = sim.truth;
  const auto rv_peak = std::max_element(t.rvbp_tac.begin(), t.rvbp_tac.end()) - t.rvbp_tac.begin();
  const auto lv_peak = std::max_element(t.lvbp_tac.begin(), t.lvbp_tac.end()) - t.lvbp_tac.begin();
  CHECK(rv_peak < lv_peak);
  const auto tacs = extract_tacs(sim.study, sim.masks);
  CHECK_NOTHROW(find_eq_frame(tacs));
  for (double v : t.myo_tac) CHECK(v >= 0.0);
}

TEST_CASE("constant input gives the closed-form one-tissue response") {
  PhantomSpec spec = quiet_spec();
  spec.input_shape = InputShape::kConstant;
  spec.bolus_amplitude = 1000.0;
  const double dt = 0.05;
  const auto c = region_curves(spec, 200.0, dt);
  for (double t : {30.0, 60.0, 120.0, 190.0}) {
    const auto i = static_cast<std::size_t>(std::lround(t / dt));
    const double tau = (t - spec.transit_delay_s) / 60.0;
    const double expected = spec.bolus_amplitude * spec.K1 / spec.k2 * (1.0 - std::exp(-spec.k2 * tau));
    CHECK(c.tissue[i] == doctest::Approx(expected).epsilon(2e-3));
    CHECK(c.rvbp[i] == doctest::Approx(spec.bolus_amplitude));
    CHECK(c.lvbp[i] == doctest::Approx(spec.bolus_amplitude));
  }
  // Before the transit delay the LV sees nothing.
  CHECK(c.lvbp[static_cast<std::size_t>(5.0 / dt)] == 0.0);
}

TEST_CASE("noise-free frames match the analytic region curves in the cavity centre") {
  PhantomSpec spec = quiet_spec();
  spec.psf_fwhm_mm = 0.0;
  const auto sched = FrameSchedule::from_durations({30, 30, 60});
  const auto sim = simulate_study(spec, sched, "n");
  const auto tacs = extract_tacs(sim.study, sim.masks);
  for (std::size_t f = 0; f < sched.size(); ++f) {
    CHECK(tacs.lvbp[f] == doctest::Approx(sim.truth.lvbp_tac[f]).epsilon(0.02));
    CHECK(tacs.rvbp[f] == doctest::Approx(sim.truth.rvbp_tac[f]).epsilon(0.02));
  }
}

TEST_CASE("cohort planning is reproducible and jitter stays in bounds") {
  PhantomSpec base;
  const auto a = plan_cohort(8, base, 0.2, 99);
  const auto b = plan_cohort(8, base, 0.2, 99);
  REQUIRE(a.size() == 8);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].study_id == b[i].study_id);
    CHECK(a[i].spec.K1 == b[i].spec.K1);
    CHECK(a[i].spec.K1 >= base.K1 * 0.8);
    CHECK(a[i].spec.K1 <= base.K1 * 1.2);
    CHECK(a[i].spec.k2 >= base.k2 * 0.8);
    CHECK(a[i].spec.k2 <= base.k2 * 1.2);
  }
  CHECK(a[0].spec.K1 != a[1].spec.K1);
}

TEST_CASE("invalid specs are rejected") {
  PhantomSpec s;
  s.K1 = -1;
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s = PhantomSpec{};
  s.grid = {32, 32, 16};
  CHECK_THROWS_AS(s.validate(), ValidationError);
}

TEST_CASE("Rb-82 decay correction") {
  CHECK(rb82_decay_correction(0.0, 1e-6) == doctest::Approx(1.0).epsilon(1e-6));
  // A frame starting one half-life later needs at least twice the correction.
  CHECK(rb82_decay_correction(76.4, 5.0) > 2.0 * rb82_decay_correction(0.0, 5.0) * 0.999);
  const double lambda = std::log(2.0) / 76.4;
  const double d = 30.0, s = 40.0;
  const double expected = lambda * d * std::exp(lambda * s) / (1.0 - std::exp(-lambda * d));
  CHECK(rb82_decay_correction(s, d) == doctest::Approx(expected).epsilon(1e-9));
}
