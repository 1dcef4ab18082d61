#include "taigan/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>

#include "taigan/text_io.hpp"

namespace taigan {

using nn::Shape;
using nn::Tensor;
using nn::Var;

namespace {

const std::vector<std::pair<Variant, std::string>>& variant_names() {
  static const std::vector<std::pair<Variant, std::string>> names{
      {Variant::kTaiGan, "tai_gan"},
      {Variant::kVanillaGan, "vanilla_gan"},
      {Variant::kMseGan, "mse_gan"},
      {Variant::kMsePlusMask, "mse_plus_mask"},
      {Variant::kMsePlusFilm, "mse_plus_film"},
      {Variant::kOneToOneEqMinus1, "vanilla_one_to_one_eq_minus_1"},
      {Variant::kOneToOneEqPlus1, "vanilla_one_to_one_eq_plus_1"},
  };
  return names;
}

}  // namespace

std::string variant_name(Variant v) {
  for (const auto& [k, n] : variant_names())
    if (k == v) return n;
  throw ValidationError("unknown variant");
}

Variant parse_variant(const std::string& name) {
  for (const auto& [k, n] : variant_names())
    if (n == name) return k;
  throw ValidationError("unknown variant '" + name + "'");
}

std::vector<Variant> ablation_variants() {
  return {Variant::kVanillaGan, Variant::kMseGan, Variant::kMsePlusMask, Variant::kMsePlusFilm, Variant::kTaiGan};
}

VariantWiring wiring(Variant v) {
  switch (v) {
    case Variant::kTaiGan: return {true, true, true, true, 0};
    case Variant::kVanillaGan: return {false, false, false, true, 0};
    case Variant::kMseGan: return {false, false, true, true, 0};
    case Variant::kMsePlusMask: return {true, false, true, true, 0};
    case Variant::kMsePlusFilm: return {false, true, true, true, 0};
    case Variant::kOneToOneEqMinus1: return {false, false, false, true, -1};
    case Variant::kOneToOneEqPlus1: return {false, false, false, true, +1};
  }
  throw ValidationError("unknown variant");
}

void TrainConfig::validate() const {
  if (!(lr_generator > 0) || !(lr_discriminator > 0)) throw ValidationError("learning rates must be positive");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ValidationError("Adam betas must be in [0, 1)");
  if (epochs < 0) throw ValidationError("epochs must be non-negative");
  if (batch_size < 1) throw ValidationError("batch size must be positive");
  if (base_channels < 1 || discriminator_channels < 1) throw ValidationError("channel widths must be positive");
  if (max_samples_per_epoch < 0) throw ValidationError("max_samples_per_epoch must be non-negative");
  if (mse_weight < 0 || adv_weight < 0) throw ValidationError("loss weights must be non-negative");
  const auto& p = augmentation.patch_size;
  if (p.x < 1 || p.y < 1 || p.z < 1) throw ValidationError("patch size must be positive");
  if (augmentation.max_rotation_deg < 0 || augmentation.max_shift_vox < 0 || augmentation.mask_jitter_vox < 0)
    throw ValidationError("augmentation ranges must be non-negative");
}

GeneratorConfig TrainConfig::generator_config() const {
  const auto w = wiring(variant);
  GeneratorConfig g;
  g.base_channels = base_channels;
  g.mask_channels = w.masks ? (augmentation.mask_encoding == MaskEncoding::kThreeChannel ? 3 : 1) : 0;
  g.use_film = w.film;
  return g;
}

FoldSplit make_folds(const std::vector<std::string>& ids, int k, std::uint64_t seed) {
  if (k < 1) throw ValidationError("fold count must be positive");
  if (static_cast<std::size_t>(k) > ids.size())
    throw ValidationError("fold count " + std::to_string(k) + " exceeds cohort size " + std::to_string(ids.size()));
  std::set<std::string> unique(ids.begin(), ids.end());
  if (unique.size() != ids.size()) throw ValidationError("duplicate study ids");
  std::vector<std::string> order(ids.begin(), ids.end());
  std::sort(order.begin(), order.end());
  Rng rng(derive_seed(seed, 0xF01D));
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }
  FoldSplit f;
  f.test.resize(k);
  for (std::size_t i = 0; i < order.size(); ++i) f.test[i % k].push_back(order[i]);
  for (auto& t : f.test) std::sort(t.begin(), t.end());
  f.train.resize(k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      if (j != i) f.train[i].insert(f.train[i].end(), f.test[j].begin(), f.test[j].end());
  for (auto& t : f.train) std::sort(t.begin(), t.end());
  return f;
}

PreparedStudy prepare_study(DynamicStudy study, CardiacMasks masks, double threshold_fraction) {
  PreparedStudy p;
  p.id = study.study_id;
  p.tacs = extract_tacs(study, masks);
  p.selection = select_frames(p.tacs, threshold_fraction);
  p.temporal = normalize_temporal(p.tacs, p.selection.eq_index);
  p.study = std::move(study);
  p.masks = std::move(masks);
  return p;
}

std::vector<std::size_t> training_frames(const PreparedStudy& s, Variant v) {
  const auto w = wiring(v);
  if (w.pair_offset == 0) return s.selection.included;
  const long long f = static_cast<long long>(s.selection.eq_index) + w.pair_offset;
  if (f < 0 || f >= static_cast<long long>(s.selection.reference_index)) return {};
  return {static_cast<std::size_t>(f)};
}

namespace {

struct Sample {
  const PreparedStudy* study;
  std::size_t frame;
};

std::vector<Var> vars_of(const NamedParams& p) {
  std::vector<Var> v;
  for (const auto& [n, var] : p) v.push_back(var);
  return v;
}

bool finite(double v) { return std::isfinite(v); }

void append_line(const std::filesystem::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw PersistenceError("cannot append to " + path.string());
  out << line << '\n';
  if (!out) throw PersistenceError("write failed: " + path.string());
}

double validation_ssim(const ModelBundle& model, const std::vector<const PreparedStudy*>& val, int max_studies,
                       MaskEncoding enc) {
  double acc = 0;
  std::size_t n = 0;
  for (int i = 0; i < max_studies && i < static_cast<int>(val.size()); ++i) {
    const auto& s = *val[i];
    const Volume ref = normalize_intensity(s.study.frames.back(), intensity_params(s.study.frames.back()));
    for (auto f : s.selection.pre_eq()) {
      acc += ssim(convert_frame(model, s, f, enc), ref);
      ++n;
    }
  }
  return n ? acc / static_cast<double>(n) : std::nan("");
}

}  // namespace

TrainResult train_model(const TrainConfig& config, int fold, const std::vector<const PreparedStudy*>& train,
                        const std::vector<const PreparedStudy*>& validation, const std::filesystem::path& run_dir) {
  config.validate();
  if (train.empty()) throw ValidationError("no training studies");
  const auto w = wiring(config.variant);
  const GeneratorConfig gcfg = config.generator_config();
  TemporalEncoderConfig tcfg;
  tcfg.steps = static_cast<int>(train.front()->study.frame_count());
  tcfg.hidden = config.temporal_hidden;
  tcfg.conv_channels = config.temporal_conv_channels;
  tcfg.conv_kernel = config.temporal_kernel;
  DiscriminatorConfig dcfg;
  dcfg.base_channels = config.discriminator_channels;
  const std::uint64_t run_seed = derive_seed(config.seed, 1000 * static_cast<std::uint64_t>(fold) +
                                                              static_cast<std::uint64_t>(config.variant));
  TrainResult result{ModelBundle::create(gcfg, tcfg, dcfg, run_seed), {}};
  auto& model = result.model;
  model.metadata["variant"] = variant_name(config.variant);
  model.metadata["fold"] = std::to_string(fold);
  model.metadata["seed"] = std::to_string(config.seed);
  model.metadata["epoch"] = "0";

  for (const auto* s : train)
    if (static_cast<int>(s->study.frame_count()) != tcfg.steps)
      throw ValidationError("all studies must share one frame count");

  nn::Adam g_opt(vars_of(model.generator_side_params()), {config.lr_generator, config.beta1, config.beta2, 1e-8});
  nn::Adam d_opt(vars_of(model.discriminator->params()), {config.lr_discriminator, config.beta1, config.beta2, 1e-8});

  std::vector<Sample> pool;
  for (const auto* s : train)
    for (auto f : training_frames(*s, config.variant)) pool.push_back({s, f});
  if (pool.empty()) throw ValidationError("variant " + variant_name(config.variant) + " has no training frames");

  const std::filesystem::path log_path = run_dir.empty() ? std::filesystem::path{} : run_dir / "train_log.jsonl";
  const std::filesystem::path ckpt_path = run_dir.empty() ? std::filesystem::path{} : run_dir / "model.ckpt";
  if (!run_dir.empty()) {
    std::filesystem::create_directories(run_dir);
    std::filesystem::remove(log_path);
    nlohmann::json start{{"event", "start"}, {"variant", variant_name(config.variant)}, {"fold", fold},
                         {"seed", config.seed}, {"epochs", config.epochs}};
    std::vector<std::string> ids;
    for (const auto* s : train) ids.push_back(s->id);
    start["train_ids"] = ids;
    std::vector<std::string> vids;
    for (const auto* s : validation) vids.push_back(s->id);
    start["validation_ids"] = vids;
    append_line(log_path, start.dump());
  }

  Rng rng(derive_seed(run_seed, 7));
  const MaskEncoding enc = config.augmentation.mask_encoding;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<Sample> order = pool;
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
    if (config.max_samples_per_epoch > 0 && order.size() > static_cast<std::size_t>(config.max_samples_per_epoch))
      order.resize(static_cast<std::size_t>(config.max_samples_per_epoch));

    EpochRecord rec;
    rec.epoch = epoch;
    std::set<std::string> contributors;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const int B = static_cast<int>(end - start);
      std::vector<TrainingPatch> patches;
      std::vector<TemporalConditioning> cond;
      for (std::size_t i = start; i < end; ++i) {
        const auto& s = *order[i].study;
        patches.push_back(sample_training_patch(s.study.frames[order[i].frame], s.study.frames.back(), s.masks, rng,
                                                config.augmentation));
        cond.push_back(s.temporal.conditioning(order[i].frame));
        contributors.insert(s.id);
      }
      const Index3 ps = config.augmentation.patch_size;
      const std::size_t sp = ps.volume();
      const int cin = gcfg.input_channels();
      Tensor in(Shape{B, cin, ps.z, ps.y, ps.x}), tgt(Shape{B, 1, ps.z, ps.y, ps.x});
      for (int b = 0; b < B; ++b) {
        const auto& p = patches[b];
        std::copy(p.input.storage().begin(), p.input.storage().end(), in.data.begin() + b * cin * sp);
        for (int c = 1; c < cin; ++c)
          std::copy(p.mask_channels[c - 1].storage().begin(), p.mask_channels[c - 1].storage().end(),
                    in.data.begin() + (b * cin + c) * sp);
        std::copy(p.target.storage().begin(), p.target.storage().end(), tgt.data.begin() + b * sp);
      }
      Var input = nn::constant(std::move(in));
      Var target = nn::constant(std::move(tgt));
      Var gamma, beta;
      if (gcfg.use_film) std::tie(gamma, beta) = model.temporal->forward(cond);
      Var fake = model.generator->forward(input, gamma, beta);

      double d_loss_v = 0;
      if (w.adversarial && config.adv_weight > 0) {
        d_opt.zero_grad();
        Var d_loss = nn::add(nn::bce_with_logits(model.discriminator->forward(target), 1.0),
                             nn::bce_with_logits(model.discriminator->forward(nn::detach(fake)), 0.0));
        d_loss_v = d_loss->value[0];
        if (finite(d_loss_v)) {
          nn::backward(d_loss);
          d_opt.step();
        }
      }

      g_opt.zero_grad();
      Var mse_term = nn::mse(fake, target);
      Var g_loss = nn::scale(mse_term, w.mse ? config.mse_weight : 0.0);
      if (w.adversarial && config.adv_weight > 0) {
        Var logits = model.discriminator->forward(fake);
        Var adv = config.adv_variant == AdversarialVariant::kNonSaturating
                      ? nn::bce_with_logits(logits, 1.0)
                      : nn::scale(nn::bce_with_logits(logits, 0.0), -1.0);
        g_loss = nn::add(g_loss, nn::scale(adv, config.adv_weight));
      }
      const double g_loss_v = g_loss->value[0];
      if (!finite(g_loss_v) || !finite(d_loss_v)) {
        if (!run_dir.empty()) {
          model.metadata["epoch"] = std::to_string(epoch);
          model.metadata["diverged"] = "true";
          save_checkpoint(model, run_dir / "diverged.ckpt");
          nlohmann::json j{{"event", "diverged"}, {"epoch", epoch}, {"batch", batches},
                           {"g_loss", std::isfinite(g_loss_v) ? nlohmann::json(g_loss_v) : nlohmann::json(nullptr)},
                           {"d_loss", std::isfinite(d_loss_v) ? nlohmann::json(d_loss_v) : nlohmann::json(nullptr)}};
          append_line(log_path, j.dump());
        }
        throw TrainingDivergedError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(batches) + " (variant " + variant_name(config.variant) + ", fold " +
                                    std::to_string(fold) + ")");
      }
      if (g_loss->requires_grad) {
        nn::backward(g_loss);
        g_opt.step();
      }
      rec.d_loss += d_loss_v;
      rec.g_loss += g_loss_v;
      rec.mse += mse_term->value[0];
      rec.samples += static_cast<std::size_t>(B);
      ++batches;
    }
    if (batches) {
      rec.d_loss /= static_cast<double>(batches);
      rec.g_loss /= static_cast<double>(batches);
      rec.mse /= static_cast<double>(batches);
    }
    rec.study_ids.assign(contributors.begin(), contributors.end());
    rec.val_ssim = validation_ssim(model, validation, config.validation_studies, enc);
    model.metadata["epoch"] = std::to_string(epoch);
    if (!run_dir.empty()) {
      nlohmann::json j{{"event", "epoch"},       {"epoch", epoch},   {"d_loss", rec.d_loss},
                       {"g_loss", rec.g_loss},   {"mse", rec.mse},   {"samples", rec.samples},
                       {"study_ids", rec.study_ids}};
      j["val_ssim"] = std::isfinite(rec.val_ssim) ? nlohmann::json(rec.val_ssim) : nlohmann::json(nullptr);
      append_line(log_path, j.dump());
      save_checkpoint(model, ckpt_path);
    }
    result.history.push_back(std::move(rec));
  }
  if (!run_dir.empty() && config.epochs == 0) save_checkpoint(model, ckpt_path);
  return result;
}

std::vector<std::string> audit_training_log(const std::filesystem::path& log, const std::vector<std::string>& test_ids) {
  const std::set<std::string> held_out(test_ids.begin(), test_ids.end());
  std::set<std::string> leaked;
  std::ifstream in(log);
  if (!in) throw PersistenceError("cannot open " + log.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(log.string() + ":" + std::to_string(lineno), e.what());
    }
    for (const char* key : {"train_ids", "study_ids"}) {
      if (!j.contains(key)) continue;
      for (const auto& id : j[key])
        if (held_out.count(id.get<std::string>())) leaked.insert(id.get<std::string>());
    }
  }
  return {leaked.begin(), leaked.end()};
}

Volume convert_frame(const ModelBundle& model, const PreparedStudy& s, std::size_t frame, MaskEncoding encoding,
                     const Volume* frame_override) {
  if (frame >= s.study.frame_count()) throw ValidationError("frame index out of range");
  const Volume& raw = frame_override ? *frame_override : s.study.frames[frame];
  const Volume input = normalize_intensity(raw, intensity_params(raw));
  std::vector<Volume> masks;
  if (model.generator_config.mask_channels > 0) masks = encode_masks(mask_labels(s.masks), encoding);
  const TemporalConditioning cond = s.temporal.conditioning(frame);
  return generate(model, input, masks, model.generator_config.use_film ? &cond : nullptr);
}

std::vector<FrameEvaluation> evaluate_conversion(const ModelBundle& model, const PreparedStudy& s, MaskEncoding encoding) {
  const Volume& ref_raw = s.study.frames.back();
  const Volume ref = normalize_intensity(ref_raw, intensity_params(ref_raw));
  std::vector<FrameEvaluation> out;
  for (auto f : s.selection.included) {
    FrameEvaluation e;
    e.study_id = s.id;
    e.frame = f;
    e.pre_eq = f < s.selection.eq_index;
    e.eq_minus_1 = f + 1 == s.selection.eq_index;
    e.eq_plus_1 = f == s.selection.eq_index + 1;
    e.converted = similarity(convert_frame(model, s, f, encoding), ref);
    e.raw = similarity(normalize_intensity(s.study.frames[f], intensity_params(s.study.frames[f])), ref);
    out.push_back(e);
  }
  return out;
}

std::vector<AblationRow> run_ablation_matrix(const TrainConfig& base, const std::vector<PreparedStudy>& cohort,
                                             const FoldSplit& folds, const std::vector<Variant>& variants,
                                             const std::filesystem::path& out_dir) {
  std::map<std::string, const PreparedStudy*> by_id;
  for (const auto& s : cohort) by_id[s.id] = &s;
  auto lookup = [&](const std::vector<std::string>& ids) {
    std::vector<const PreparedStudy*> v;
    for (const auto& id : ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw ValidationError("fold references unknown study '" + id + "'");
      v.push_back(it->second);
    }
    return v;
  };
  std::vector<AblationRow> rows;
  for (auto variant : variants) {
    for (std::size_t k = 0; k < folds.folds(); ++k) {
      TrainConfig cfg = base;
      cfg.variant = variant;
      const auto train = lookup(folds.train[k]);
      const auto test = lookup(folds.test[k]);
      const auto dir = out_dir.empty() ? std::filesystem::path{}
                                       : out_dir / variant_name(variant) / ("fold_" + std::to_string(k));
      auto trained = train_model(cfg, static_cast<int>(k), train, test, dir);
      AblationRow row{variant, static_cast<int>(k), {}};
      for (const auto* s : test) {
        auto ev = evaluate_conversion(trained.model, *s, cfg.augmentation.mask_encoding);
        row.frames.insert(row.frames.end(), ev.begin(), ev.end());
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace taigan
