#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "taigan/phantom.hpp"
#include "taigan/text_io.hpp"
#include "taigan/train.hpp"
#include "test_util.hpp"

using namespace taigan;

namespace {

const std::vector<PreparedStudy>& cohort() {
  static const std::vector<PreparedStudy> studies = [] {
    std::vector<PreparedStudy> out;
    const auto plan = plan_cohort(3, PhantomSpec{}, 0.1, 77);
    for (const auto& e : plan) {
      auto sim = simulate_study(e.spec, FrameSchedule::rb82_27_frames(), e.study_id);
      out.push_back(prepare_study(std::move(sim.study), std::move(sim.masks)));
    }
    return out;
  }();
  return studies;
}

TrainConfig tiny_config(Variant v) {
  TrainConfig c;
  c.variant = v;
  c.epochs = 2;
  c.batch_size = 2;
  c.max_samples_per_epoch = 4;
  c.base_channels = 2;
  c.discriminator_channels = 2;
  c.temporal_hidden = 4;
  c.temporal_conv_channels = 2;
  c.validation_studies = 1;
  c.augmentation.patch_size = {16, 16, 8};
  c.seed = 5;
  return c;
}

std::vector<nlohmann::json> read_log(const std::filesystem::path& p) {
  std::vector<nlohmann::json> out;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  return out;
}

}  // namespace

TEST_CASE("variant wiring") {
  const auto t = wiring(Variant::kTaiGan);
  CHECK((t.masks && t.film && t.mse && t.adversarial));
  const auto v = wiring(Variant::kVanillaGan);
  CHECK((!v.masks && !v.film && !v.mse && v.adversarial));
  const auto m = wiring(Variant::kMseGan);
  CHECK((!m.masks && !m.film && m.mse));
  CHECK(wiring(Variant::kMsePlusMask).masks);
  CHECK_FALSE(wiring(Variant::kMsePlusMask).film);
  CHECK(wiring(Variant::kMsePlusFilm).film);
  CHECK_FALSE(wiring(Variant::kMsePlusFilm).masks);
  CHECK(wiring(Variant::kOneToOneEqMinus1).pair_offset == -1);
  CHECK(wiring(Variant::kOneToOneEqPlus1).pair_offset == 1);
  for (auto var : {Variant::kTaiGan, Variant::kVanillaGan, Variant::kMseGan, Variant::kMsePlusMask,
                   Variant::kMsePlusFilm, Variant::kOneToOneEqMinus1, Variant::kOneToOneEqPlus1})
    CHECK(parse_variant(variant_name(var)) == var);
  CHECK_THROWS_AS(parse_variant("bogus"), ValidationError);
  CHECK(ablation_variants().size() == 5);

  TrainConfig c;
  c.variant = Variant::kTaiGan;
  c.augmentation.mask_encoding = MaskEncoding::kThreeChannel;
  CHECK(c.generator_config().mask_channels == 3);
  c.variant = Variant::kMseGan;
  CHECK(c.generator_config().mask_channels == 0);
  CHECK_FALSE(c.generator_config().use_film);
}

TEST_CASE("folds partition the studies deterministically") {
  std::vector<std::string> ids;
  for (int i = 0; i < 11; ++i) ids.push_back("s" + std::to_string(100 + i));
  const auto f = make_folds(ids, 3, 42);
  REQUIRE(f.folds() == 3);
  std::multiset<std::string> all;
  for (std::size_t k = 0; k < 3; ++k) {
    for (const auto& id : f.test[k]) all.insert(id);
    CHECK(f.test[k].size() + f.train[k].size() == ids.size());
    for (const auto& id : f.test[k]) CHECK(std::find(f.train[k].begin(), f.train[k].end(), id) == f.train[k].end());
    CHECK(f.test[k].size() >= 3);
    CHECK(f.test[k].size() <= 4);
  }
  CHECK(all == std::multiset<std::string>(ids.begin(), ids.end()));
  const auto g = make_folds(ids, 3, 42);
  CHECK(g.test == f.test);
  auto shuffled = ids;
  std::reverse(shuffled.begin(), shuffled.end());
  CHECK(make_folds(shuffled, 3, 42).test == f.test);
  CHECK(make_folds(ids, 3, 43).test != f.test);
  CHECK_THROWS_AS(make_folds(ids, 12, 1), ValidationError);
}

TEST_CASE("training frames per variant") {
  const auto& s = cohort().front();
  const auto all = training_frames(s, Variant::kTaiGan);
  CHECK(all == s.selection.included);
  const auto m1 = training_frames(s, Variant::kOneToOneEqMinus1);
  const auto p1 = training_frames(s, Variant::kOneToOneEqPlus1);
  REQUIRE(m1.size() == 1);
  REQUIRE(p1.size() == 1);
  CHECK(m1[0] == s.selection.eq_index - 1);
  CHECK(p1[0] == s.selection.eq_index + 1);
}

TEST_CASE("a tiny training run writes a log and a loadable checkpoint") {
  const auto& c = cohort();
  const auto dir = testing::scratch_dir("train_tiny");
  const auto r = train_model(tiny_config(Variant::kTaiGan), 0, {&c[0], &c[1]}, {&c[2]}, dir);
  REQUIRE(r.history.size() == 2);
  CHECK(r.history[0].samples == 4);
  CHECK(std::isfinite(r.history[1].g_loss));
  CHECK(std::filesystem::exists(dir / "model.ckpt"));
  const auto loaded = load_checkpoint(dir / "model.ckpt");
  CHECK(loaded.generator_config == r.model.generator_config);

  const auto log = read_log(dir / "train_log.jsonl");
  REQUIRE(log.size() == 3);
  CHECK(log[0]["event"] == "start");
  for (std::size_t i = 1; i < log.size(); ++i) {
    CHECK(log[i]["event"] == "epoch");
    for (const auto& id : log[i]["study_ids"]) CHECK(id != c[2].id);
  }
  CHECK(audit_training_log(dir / "train_log.jsonl", {c[2].id}).empty());
  CHECK(audit_training_log(dir / "train_log.jsonl", {c[0].id}) == std::vector<std::string>{c[0].id});

  const auto again = train_model(tiny_config(Variant::kTaiGan), 0, {&c[0], &c[1]}, {&c[2]});
  CHECK(again.model.generator->params()[0].second->value.data == r.model.generator->params()[0].second->value.data);
}

TEST_CASE("conversion evaluation covers every included frame") {
  const auto& c = cohort();
  const auto r = train_model(tiny_config(Variant::kVanillaGan), 0, {&c[0]}, {});
  const auto ev = evaluate_conversion(r.model, c[1]);
  CHECK(ev.size() == c[1].selection.included.size());
  std::size_t pre = 0;
  for (const auto& e : ev) {
    pre += e.pre_eq;
    CHECK(e.eq_minus_1 == (e.frame + 1 == c[1].selection.eq_index));
    CHECK(e.converted.ssim <= 1.0);
  }
  CHECK(pre == c[1].selection.pre_eq().size());
  const Volume v = convert_frame(r.model, c[1], c[1].selection.included.front());
  CHECK(v.dims() == c[1].study.dims());
}

TEST_CASE("divergence is detected and leaves a diagnostic snapshot") {
  const auto& c = cohort();
  auto cfg = tiny_config(Variant::kMseGan);
  cfg.lr_generator = 1e300;
  cfg.lr_discriminator = 1e300;
  cfg.epochs = 4;
  const auto dir = testing::scratch_dir("train_diverge");
  CHECK_THROWS_AS(train_model(cfg, 0, {&c[0]}, {}, dir), TrainingDivergedError);
  CHECK(std::filesystem::exists(dir / "diverged.ckpt"));
  const auto log = read_log(dir / "train_log.jsonl");
  CHECK(log.back()["event"] == "diverged");
}

TEST_CASE("invalid training configs are rejected") {
  auto c = tiny_config(Variant::kTaiGan);
  c.lr_generator = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = tiny_config(Variant::kTaiGan);
  c.beta2 = 1.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}
