#include <functional>
#include <set>
#include <sstream>

#include "taigan/text_io.hpp"
#include "taigan_pipeline/experiment.hpp"

namespace taigan::pipeline {

namespace {

const std::vector<std::pair<Stage, std::string>>& stage_names() {
  static const std::vector<std::pair<Stage, std::string>> names{
      {Stage::kPhantom, "phantom"},   {Stage::kPreprocess, "preprocess"},
      {Stage::kTrain, "train"},       {Stage::kConvert, "convert"},
      {Stage::kSimulateMotion, "simulate-motion"}, {Stage::kRegister, "register"},
      {Stage::kQuantify, "quantify"}, {Stage::kReport, "report"},
  };
  return names;
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : " ") + x;
  return s;
}

template <typename T>
std::string join_numbers(const std::vector<T>& v) {
  std::vector<std::string> s;
  for (auto x : v) {
    if constexpr (std::is_floating_point_v<T>)
      s.push_back(format_double(x));
    else
      s.push_back(std::to_string(x));
  }
  return join(s);
}

// One config key: how to print its current value and how to set it from text.
struct Binding {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <typename Ref>
Binding number(const std::string& key, Ref ref) {
  using T = std::remove_reference_t<decltype(ref(std::declval<ExperimentConfig&>()))>;
  return {key,
          [ref](const ExperimentConfig& c) {
            auto& v = ref(const_cast<ExperimentConfig&>(c));
            if constexpr (std::is_floating_point_v<T>)
              return format_double(v);
            else
              return std::to_string(v);
          },
          [ref, key](ExperimentConfig& c, const std::string& text) {
            if constexpr (std::is_floating_point_v<T>)
              ref(c) = parse_double(text, key);
            else {
              const long long v = parse_int(text, key);
              if constexpr (std::is_unsigned_v<T>) {
                if (v < 0) throw ParseError(key, "must be non-negative");
              }
              ref(c) = static_cast<T>(v);
            }
          }};
}

template <typename Ref>
Binding triple_int(const std::string& key, Ref ref) {
  return {key,
          [ref](const ExperimentConfig& c) {
            const Index3& v = ref(const_cast<ExperimentConfig&>(c));
            return std::to_string(v.x) + " " + std::to_string(v.y) + " " + std::to_string(v.z);
          },
          [ref, key](ExperimentConfig& c, const std::string& text) {
            const auto parts = split_ws(text);
            if (parts.size() != 3) throw ParseError(key, "expected 3 integers (x y z)");
            ref(c) = Index3{static_cast<int>(parse_int(parts[0], key)), static_cast<int>(parse_int(parts[1], key)),
                            static_cast<int>(parse_int(parts[2], key))};
          }};
}

template <typename Ref>
Binding list_double(const std::string& key, Ref ref) {
  return {key, [ref](const ExperimentConfig& c) { return join_numbers(ref(const_cast<ExperimentConfig&>(c))); },
          [ref, key](ExperimentConfig& c, const std::string& text) {
            std::vector<double> v;
            for (const auto& p : split_ws(text)) v.push_back(parse_double(p, key));
            if (v.empty()) throw ParseError(key, "empty list");
            ref(c) = v;
          }};
}

template <typename Ref>
Binding choice(const std::string& key, const std::vector<std::string>& options, Ref ref) {
  // ref(c) is an int-like enum; options are indexed by its underlying value.
  return {key,
          [ref, options](const ExperimentConfig& c) {
            return options.at(static_cast<std::size_t>(ref(const_cast<ExperimentConfig&>(c))));
          },
          [ref, options, key](ExperimentConfig& c, const std::string& text) {
            for (std::size_t i = 0; i < options.size(); ++i)
              if (options[i] == text) {
                ref(c) = static_cast<std::remove_reference_t<decltype(ref(c))>>(i);
                return;
              }
            throw ParseError(key, "'" + text + "' is not one of: " + join(options));
          }};
}

void add_registration(std::vector<Binding>& b, const std::string& section,
                      RegistrationConfig& (*pick)(ExperimentConfig&)) {
  b.push_back(choice(section + ".similarity", {"mse", "nmi"}, [pick](ExperimentConfig& c) -> Similarity& { return pick(c).similarity; }));
  b.push_back(number(section + ".levels", [pick](ExperimentConfig& c) -> int& { return pick(c).levels; }));
  b.push_back(number(section + ".control_spacing_mm", [pick](ExperimentConfig& c) -> double& { return pick(c).control_spacing_mm; }));
  b.push_back(number(section + ".order", [pick](ExperimentConfig& c) -> int& { return pick(c).order; }));
  b.push_back(number(section + ".smoothness_weight", [pick](ExperimentConfig& c) -> double& { return pick(c).smoothness_weight; }));
  b.push_back(number(section + ".iterations", [pick](ExperimentConfig& c) -> int& { return pick(c).iterations; }));
  b.push_back(number(section + ".step_mm", [pick](ExperimentConfig& c) -> double& { return pick(c).step_mm; }));
  b.push_back(number(section + ".min_step_mm", [pick](ExperimentConfig& c) -> double& { return pick(c).min_step_mm; }));
  b.push_back(number(section + ".nmi_bins", [pick](ExperimentConfig& c) -> int& { return pick(c).nmi_bins; }));
}

#define FIELD(expr) [](ExperimentConfig& c) -> auto& { return expr; }

const std::vector<Binding>& bindings() {
  static const std::vector<Binding> all = [] {
    std::vector<Binding> b;
    b.push_back(number("seed", FIELD(c.seed)));
    b.push_back({"out", [](const ExperimentConfig& c) { return c.out.string(); },
                 [](ExperimentConfig& c, const std::string& t) { c.out = t; }});
    b.push_back({"stages",
                 [](const ExperimentConfig& c) {
                   std::vector<std::string> s;
                   for (auto st : c.stages) s.push_back(stage_name(st));
                   return join(s);
                 },
                 [](ExperimentConfig& c, const std::string& t) {
                   c.stages.clear();
                   for (const auto& p : split_ws(t)) c.stages.push_back(parse_stage(p));
                 }});

    b.push_back(number("phantom.studies", FIELD(c.studies)));
    b.push_back(number("phantom.parameter_jitter", FIELD(c.parameter_jitter)));
    b.push_back(triple_int("phantom.grid", FIELD(c.phantom.grid)));
    b.push_back({"phantom.spacing",
                 [](const ExperimentConfig& c) {
                   return join_numbers(std::vector<double>{c.phantom.spacing.dx, c.phantom.spacing.dy, c.phantom.spacing.dz});
                 },
                 [](ExperimentConfig& c, const std::string& t) {
                   const auto p = split_ws(t);
                   if (p.size() != 3) throw ParseError("phantom.spacing", "expected 3 values (dx dy dz)");
                   c.phantom.spacing = {parse_double(p[0], "phantom.spacing"), parse_double(p[1], "phantom.spacing"),
                                        parse_double(p[2], "phantom.spacing")};
                 }});
    b.push_back(number("phantom.noise_level", FIELD(c.phantom.noise_level)));
    b.push_back(number("phantom.psf_fwhm_mm", FIELD(c.phantom.psf_fwhm_mm)));
    b.push_back(number("phantom.supersample", FIELD(c.phantom.supersample)));
    b.push_back(number("phantom.K1", FIELD(c.phantom.K1)));
    b.push_back(number("phantom.k2", FIELD(c.phantom.k2)));
    b.push_back(number("phantom.blood_fraction", FIELD(c.phantom.blood_fraction)));
    b.push_back(number("phantom.transit_delay_s", FIELD(c.phantom.transit_delay_s)));
    b.push_back(number("phantom.bolus_amplitude", FIELD(c.phantom.bolus_amplitude)));
    b.push_back(number("phantom.time_to_peak_s", FIELD(c.phantom.time_to_peak_s)));
    b.push_back(number("phantom.background_fraction", FIELD(c.phantom.background_fraction)));
    b.push_back(number("phantom.orientation_deg", FIELD(c.phantom.orientation_deg)));

    b.push_back(number("preprocess.threshold_fraction", FIELD(c.threshold_fraction)));
    b.push_back(choice("preprocess.mask_encoding", {"single", "three"}, FIELD(c.train.augmentation.mask_encoding)));

    b.push_back({"train.variants",
                 [](const ExperimentConfig& c) {
                   std::vector<std::string> s;
                   for (auto v : c.variants) s.push_back(variant_name(v));
                   return join(s);
                 },
                 [](ExperimentConfig& c, const std::string& t) {
                   c.variants.clear();
                   for (const auto& p : split_ws(t)) c.variants.push_back(parse_variant(p));
                 }});
    b.push_back(number("train.folds", FIELD(c.folds)));
    b.push_back(number("train.epochs", FIELD(c.train.epochs)));
    b.push_back(number("train.batch_size", FIELD(c.train.batch_size)));
    b.push_back(number("train.max_samples_per_epoch", FIELD(c.train.max_samples_per_epoch)));
    b.push_back(number("train.base_channels", FIELD(c.train.base_channels)));
    b.push_back(number("train.discriminator_channels", FIELD(c.train.discriminator_channels)));
    b.push_back(number("train.lr_generator", FIELD(c.train.lr_generator)));
    b.push_back(number("train.lr_discriminator", FIELD(c.train.lr_discriminator)));
    b.push_back(number("train.beta1", FIELD(c.train.beta1)));
    b.push_back(number("train.beta2", FIELD(c.train.beta2)));
    b.push_back(number("train.mse_weight", FIELD(c.train.mse_weight)));
    b.push_back(number("train.adv_weight", FIELD(c.train.adv_weight)));
    b.push_back(choice("train.adv_variant", {"non_saturating", "minimax"}, FIELD(c.train.adv_variant)));
    b.push_back(triple_int("train.patch_size", FIELD(c.train.augmentation.patch_size)));
    b.push_back(number("train.max_rotation_deg", FIELD(c.train.augmentation.max_rotation_deg)));
    b.push_back(number("train.max_shift_vox", FIELD(c.train.augmentation.max_shift_vox)));
    b.push_back(number("train.mask_jitter_vox", FIELD(c.train.augmentation.mask_jitter_vox)));
    b.push_back(number("train.temporal_hidden", FIELD(c.train.temporal_hidden)));
    b.push_back(number("train.temporal_conv_channels", FIELD(c.train.temporal_conv_channels)));
    b.push_back(number("train.temporal_kernel", FIELD(c.train.temporal_kernel)));
    b.push_back(number("train.validation_studies", FIELD(c.train.validation_studies)));

    b.push_back(number("motion.magnitude_scale", FIELD(c.magnitude_scale)));
    b.push_back(number("motion.mean_magnitude_mm", FIELD(c.motion.mean_magnitude_mm)));
    b.push_back(number("motion.control_spacing_mm", FIELD(c.motion.control_spacing_mm)));
    b.push_back(number("motion.order", FIELD(c.motion.order)));
    b.push_back(number("motion.modes", FIELD(c.motion.modes)));
    b.push_back(number("motion.max_cycles", FIELD(c.motion.max_cycles)));

    add_registration(b, "register.raw", [](ExperimentConfig& c) -> RegistrationConfig& { return c.raw_registration; });
    add_registration(b, "register.converted",
                     [](ExperimentConfig& c) -> RegistrationConfig& { return c.converted_registration; });

    b.push_back(list_double("quantify.K1_starts", FIELD(c.fit.K1_starts)));
    b.push_back(list_double("quantify.k2_starts", FIELD(c.fit.k2_starts)));
    b.push_back(list_double("quantify.v_starts", FIELD(c.fit.v_starts)));
    b.push_back(number("quantify.fine_dt_s", FIELD(c.fit.fine_dt_s)));
    b.push_back(number("quantify.max_iterations", FIELD(c.fit.max_iterations)));
    b.push_back(number("quantify.alpha", FIELD(c.fit.alpha)));
    b.push_back(number("quantify.beta", FIELD(c.fit.beta)));
    return b;
  }();
  return all;
}

#undef FIELD

}  // namespace

ExperimentConfig default_experiment_config() {
  ExperimentConfig c;
  c.raw_registration.similarity = Similarity::kNmi;
  c.raw_registration.smoothness_weight = 10.0;
  c.converted_registration.similarity = Similarity::kMse;
  c.converted_registration.smoothness_weight = 1.0;
  return c;
}

std::string stage_name(Stage s) {
  for (const auto& [k, n] : stage_names())
    if (k == s) return n;
  throw ValidationError("unknown stage");
}

Stage parse_stage(const std::string& name) {
  for (const auto& [k, n] : stage_names())
    if (n == name) return k;
  throw ValidationError("unknown stage '" + name + "'");
}

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> s{Stage::kPhantom,        Stage::kPreprocess, Stage::kTrain,    Stage::kConvert,
                                    Stage::kSimulateMotion, Stage::kRegister,   Stage::kQuantify, Stage::kReport};
  return s;
}

std::string method_label(Variant v) { return variant_name(v); }

void ExperimentConfig::validate() const {
  if (studies < 2) throw ValidationError("phantom.studies must be at least 2");
  if (parameter_jitter < 0 || parameter_jitter >= 1) throw ValidationError("phantom.parameter_jitter must be in [0, 1)");
  phantom.validate();
  if (!(threshold_fraction >= 0 && threshold_fraction < 1))
    throw ValidationError("preprocess.threshold_fraction must be in [0, 1)");
  if (variants.empty()) throw ValidationError("train.variants is empty");
  std::set<Variant> seen;
  for (auto v : variants)
    if (!seen.insert(v).second) throw ValidationError("train.variants lists " + variant_name(v) + " twice");
  if (folds < 2 || folds > studies) throw ValidationError("train.folds must be in [2, phantom.studies]");
  train.validate();
  const Index3 p = train.augmentation.patch_size;
  const Index3 g = phantom.grid;
  if (p.x > g.x || p.y > g.y || p.z > g.z) throw ValidationError("train.patch_size exceeds phantom.grid");
  const int div = 1 << 3;
  for (int d : {g.x, g.y, g.z, p.x, p.y, p.z})
    if (d % div) throw ValidationError("phantom.grid and train.patch_size must be multiples of 8 (generator depth)");
  if (!(magnitude_scale >= 0)) throw ValidationError("motion.magnitude_scale must be non-negative");
  if (!(motion.mean_magnitude_mm >= 0)) throw ValidationError("motion.mean_magnitude_mm must be non-negative");
  if (!(motion.control_spacing_mm > 0)) throw ValidationError("motion.control_spacing_mm must be positive");
  if (motion.order != 1 && motion.order != 3) throw ValidationError("motion.order must be 1 or 3");
  if (motion.modes < 0) throw ValidationError("motion.modes must be non-negative");
  if (!(motion.max_cycles > 0)) throw ValidationError("motion.max_cycles must be positive");
  raw_registration.validate();
  converted_registration.validate();
  if (raw_registration.control_spacing_mm != motion.control_spacing_mm ||
      converted_registration.control_spacing_mm != motion.control_spacing_mm ||
      raw_registration.order != motion.order || converted_registration.order != motion.order)
    throw ValidationError("registration control grids must match the simulated motion grid (spacing and order)");
  if (fit.fine_dt_s <= 0 || fit.max_iterations < 1) throw ValidationError("quantify fit options must be positive");
  std::vector<Stage> order = stages;
  for (std::size_t i = 1; i < order.size(); ++i)
    if (static_cast<int>(order[i]) <= static_cast<int>(order[i - 1]))
      throw ValidationError("stages must be listed once each in dependency order");
}

ExperimentConfig parse_experiment_config(const std::string& text, const std::string& source) {
  const auto reader = KeyValueReader::parse(text, source);
  ExperimentConfig c = default_experiment_config();
  for (const auto& key : reader.keys()) {
    const Binding* b = nullptr;
    for (const auto& cand : bindings())
      if (cand.key == key) b = &cand;
    if (!b) throw ParseError(key, "unknown setting (see --print-config for the schema)");
    b->set(c, reader.get_string(key));
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return parse_experiment_config(read_text(path), path.string());
}

std::string render_experiment_config(const ExperimentConfig& config) {
  std::ostringstream out;
  std::string section;
  for (const auto& b : bindings()) {
    const auto dot = b.key.rfind('.');
    const std::string sec = dot == std::string::npos ? "" : b.key.substr(0, dot);
    const std::string name = dot == std::string::npos ? b.key : b.key.substr(dot + 1);
    if (sec != section) {
      out << "\n[" << sec << "]\n";
      section = sec;
    }
    out << name << " = " << b.get(config) << "\n";
  }
  return out.str();
}

}  // namespace taigan::pipeline
