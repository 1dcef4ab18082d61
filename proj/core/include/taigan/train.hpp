#pragma once

// Training of the conversion networks: variant wiring (loss terms and input
// channels), study-level k-fold splits, the alternating D/G loop with a
// line-delimited log and atomic checkpoints, and conversion evaluation.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "taigan/conversion_net.hpp"
#include "taigan/metrics.hpp"
#include "taigan/preprocess.hpp"

namespace taigan {

enum class Variant {
  kTaiGan,           // MSE + adversarial, masks, FiLM
  kVanillaGan,       // adversarial only
  kMseGan,           // MSE + adversarial
  kMsePlusMask,      // MSE + adversarial, masks
  kMsePlusFilm,      // MSE + adversarial, FiLM
  kOneToOneEqMinus1, // adversarial only, trained on (EQ-1 -> last) pairs
  kOneToOneEqPlus1,  // adversarial only, trained on (EQ+1 -> last) pairs
};

std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);
/// The five ablation-matrix variants in table order.
std::vector<Variant> ablation_variants();

struct VariantWiring {
  bool masks = false;
  bool film = false;
  bool mse = false;
  bool adversarial = true;
  int pair_offset = 0;  // 0: all included frames; -1 / +1: only EQ-1 / EQ+1
};
VariantWiring wiring(Variant v);

struct TrainConfig {
  Variant variant = Variant::kTaiGan;
  double lr_generator = 2e-4;
  double lr_discriminator = 5e-5;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int epochs = 100;
  int batch_size = 2;
  int base_channels = 8;
  int discriminator_channels = 8;
  int max_samples_per_epoch = 0;  // 0: every (study, frame) pair once per epoch
  double mse_weight = 1.0;
  double adv_weight = 1.0;
  AdversarialVariant adv_variant = AdversarialVariant::kNonSaturating;
  AugmentationConfig augmentation{{32, 32, 16}, 45.0, 5, 3, MaskEncoding::kSingleChannel};
  int temporal_hidden = 16;
  int temporal_conv_channels = 8;
  int temporal_kernel = 3;
  int validation_studies = 4;
  std::uint64_t seed = 1;

  void validate() const;
  /// Generator configuration implied by the variant.
  GeneratorConfig generator_config() const;
};

struct FoldSplit {
  std::vector<std::vector<std::string>> train;
  std::vector<std::vector<std::string>> test;
  std::size_t folds() const { return test.size(); }
};

/// Deterministic study-level partition: shuffled with the seed and dealt
/// round-robin, so fold sizes differ by at most one.
FoldSplit make_folds(const std::vector<std::string>& ids, int k, std::uint64_t seed);

/// A study with everything the networks need precomputed.
struct PreparedStudy {
  std::string id;
  DynamicStudy study;
  CardiacMasks masks;
  TimeActivityCurves tacs;
  FrameSelection selection;
  TemporalInputs temporal;
};

/// Throws NoEqFrameError when the blood-pool curves never cross.
PreparedStudy prepare_study(DynamicStudy study, CardiacMasks masks, double threshold_fraction = 0.10);

/// Training frames a variant uses for one study.
std::vector<std::size_t> training_frames(const PreparedStudy& s, Variant v);

struct EpochRecord {
  int epoch = 0;
  double d_loss = 0;
  double g_loss = 0;
  double mse = 0;
  double val_ssim = 0;
  std::size_t samples = 0;
  std::vector<std::string> study_ids;  // studies that contributed patches this epoch
};

struct TrainResult {
  ModelBundle model;
  std::vector<EpochRecord> history;
};

/// Trains one variant on `train` studies. `validation` studies are only used
/// for the logged validation SSIM. When `run_dir` is non-empty, writes
/// train_log.jsonl and model.ckpt there (checkpoint rewritten atomically each
/// epoch). Throws TrainingDivergedError after writing a diagnostic snapshot if
/// a loss becomes non-finite.
TrainResult train_model(const TrainConfig& config, int fold, const std::vector<const PreparedStudy*>& train,
                        const std::vector<const PreparedStudy*>& validation, const std::filesystem::path& run_dir = {});

/// Checks a training log against a list of held-out ids; returns the ids that
/// appear as contributors (empty when the audit passes).
std::vector<std::string> audit_training_log(const std::filesystem::path& log, const std::vector<std::string>& test_ids);

/// Full-grid conversion of one frame (normalised [-1, 1]). `frame_override`
/// replaces the study frame (e.g. a motion-corrupted copy) while keeping the
/// study's masks and TACs.
Volume convert_frame(const ModelBundle& model, const PreparedStudy& s, std::size_t frame,
                     MaskEncoding encoding = MaskEncoding::kSingleChannel, const Volume* frame_override = nullptr);

struct FrameEvaluation {
  std::string study_id;
  std::size_t frame = 0;
  bool pre_eq = false;
  bool eq_minus_1 = false;
  bool eq_plus_1 = false;
  SimilarityScores converted;
  SimilarityScores raw;
};

/// Metrics on normalised intensities: converted vs reference and raw vs reference,
/// for every included frame.
std::vector<FrameEvaluation> evaluate_conversion(const ModelBundle& model, const PreparedStudy& s,
                                                 MaskEncoding encoding = MaskEncoding::kSingleChannel);

struct AblationRow {
  Variant variant;
  int fold = 0;
  std::vector<FrameEvaluation> frames;
};

/// Trains and evaluates every variant in `variants` on every fold.
std::vector<AblationRow> run_ablation_matrix(const TrainConfig& base, const std::vector<PreparedStudy>& cohort,
                                             const FoldSplit& folds, const std::vector<Variant>& variants,
                                             const std::filesystem::path& out_dir = {});

}  // namespace taigan
