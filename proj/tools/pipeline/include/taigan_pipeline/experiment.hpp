#pragma once

// Experiment runner: a declarative config, the eight pipeline stages and the
// artifact tree they produce under `out`.
//
//   out/
//     config.effective          every setting actually used
//     cohort/                   phantom studies + manifest.txt
//     records/                  per-study / per-frame CSV rows (source of every table number)
//     models/<variant>/fold_<k>/model.ckpt, train_log.jsonl
//     models/folds.txt
//     motion/<study>/truth_fNN.motion, <method>/est_fNN.motion
//     tables/*.csv, *.md
//     plots/*.svg
//     failure_report.txt        only when a stage failed

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "taigan/kinetics.hpp"
#include "taigan/motion.hpp"
#include "taigan/phantom.hpp"
#include "taigan/train.hpp"

namespace taigan::pipeline {

enum class Stage { kPhantom, kPreprocess, kTrain, kConvert, kSimulateMotion, kRegister, kQuantify, kReport };

std::string stage_name(Stage s);
Stage parse_stage(const std::string& name);
/// All stages in dependency order.
const std::vector<Stage>& all_stages();

struct ExperimentConfig {
  std::uint64_t seed = 2024;
  std::filesystem::path out = "runs/desk";
  std::vector<Stage> stages = all_stages();

  // phantom
  int studies = 40;
  double parameter_jitter = 0.2;
  PhantomSpec phantom{};

  // preprocess
  double threshold_fraction = 0.10;

  // train
  std::vector<Variant> variants{Variant::kVanillaGan, Variant::kMseGan, Variant::kTaiGan};
  int folds = 2;
  TrainConfig train{};

  // simulate-motion
  double magnitude_scale = 2.0;
  MotionSimulationSpec motion{};

  // register
  RegistrationConfig raw_registration{};        // unconverted frames
  RegistrationConfig converted_registration{};  // converted frames vs normalised reference

  // quantify
  FitOptions fit{};

  /// Throws ValidationError naming the first bad setting.
  void validate() const;
};

/// Desk defaults: NMI registration for raw frames, MSE for converted frames.
ExperimentConfig default_experiment_config();
/// Defaults overlaid with the file. Unknown keys are rejected.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
ExperimentConfig parse_experiment_config(const std::string& text, const std::string& source = "<string>");
/// Full effective configuration in the same format load_experiment_config reads.
std::string render_experiment_config(const ExperimentConfig& config);

/// Method label used in records and tables for a variant.
std::string method_label(Variant v);

struct RunOptions {
  /// Empty: config.stages.
  std::vector<Stage> only_stages;
  /// Progress lines; null for silence.
  std::ostream* log = nullptr;
};

/// Runs the selected stages. On failure writes out/failure_report.txt, keeps
/// partial artifacts and rethrows.
void run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

/// Rebuilds tables/ and plots/ from records/.
void write_report(const std::filesystem::path& out, std::ostream* log = nullptr);

/// Recomputes every table cell from records/ and checks the training logs
/// against the fold split. Returns human-readable problems; empty means clean.
std::vector<std::string> audit_run(const std::filesystem::path& out);

}  // namespace taigan::pipeline
