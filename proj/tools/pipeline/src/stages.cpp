#include <chrono>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "csv.hpp"
#include "taigan/metrics.hpp"
#include "taigan/text_io.hpp"
#include "taigan_pipeline/experiment.hpp"

namespace fs = std::filesystem;

namespace taigan::pipeline {

namespace {

std::string frame_tag(std::size_t f) {
  std::ostringstream s;
  s << 'f' << std::setw(2) << std::setfill('0') << f;
  return s.str();
}

std::string flag(bool b) { return b ? "1" : "0"; }

std::string join_indices(const std::vector<std::size_t>& v) {
  std::string s;
  for (auto x : v) s += (s.empty() ? "" : " ") + std::to_string(x);
  return s;
}

class Run {
 public:
  Run(const ExperimentConfig& c, std::ostream* log) : config_(c), log_(log) {
    train_ = c.train;
    train_.seed = derive_seed(c.seed, 0x7121);
    motion_ = c.motion;
    motion_.dims = c.phantom.grid;
    motion_.voxel = c.phantom.spacing;
  }

  fs::path out() const { return config_.out; }
  fs::path cohort_dir() const { return out() / "cohort"; }
  fs::path records() const { return out() / "records"; }
  fs::path model_dir(Variant v, std::size_t k) const {
    return out() / "models" / variant_name(v) / ("fold_" + std::to_string(k));
  }
  fs::path motion_dir(const std::string& id) const { return out() / "motion" / id; }

  void stage(Stage s) {
    const auto t0 = std::chrono::steady_clock::now();
    say("[" + stage_name(s) + "] start");
    switch (s) {
      case Stage::kPhantom: phantom(); break;
      case Stage::kPreprocess: preprocess(); break;
      case Stage::kTrain: train(); break;
      case Stage::kConvert: convert(); break;
      case Stage::kSimulateMotion: simulate_motion(); break;
      case Stage::kRegister: register_frames_stage(); break;
      case Stage::kQuantify: quantify(); break;
      case Stage::kReport: write_report(out(), log_); break;
    }
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ostringstream m;
    m << "[" << stage_name(s) << "] done in " << std::fixed << std::setprecision(1) << sec << " s";
    say(m.str());
  }

 private:
  void say(const std::string& line) const {
    if (log_) *log_ << line << std::endl;
  }

  // ---- phantom -------------------------------------------------------------

  void phantom() {
    make_cohort(config_.studies, config_.phantom, config_.parameter_jitter, derive_seed(config_.seed, 1),
                FrameSchedule::rb82_27_frames(), cohort_dir());
  }

  // ---- preprocess ----------------------------------------------------------

  void preprocess() {
    CsvTable sel({"study_id", "eq_index", "reference_index", "included", "pre_eq"});
    CsvTable excluded({"study_id", "reason"});
    CsvTable tacs({"study_id", "frame", "mid_time_s", "rvbp", "lvbp", "myo"});
    for (const auto& e : load_cohort_manifest(cohort_dir())) {
      auto [study, masks] = load_study(cohort_dir() / e.path);
      try {
        const auto p = prepare_study(std::move(study), std::move(masks), config_.threshold_fraction);
        sel.add({p.id, std::to_string(p.selection.eq_index), std::to_string(p.selection.reference_index),
                 join_indices(p.selection.included), join_indices(p.selection.pre_eq())});
        for (std::size_t f = 0; f < p.tacs.size(); ++f)
          tacs.add({p.id, std::to_string(f), format_double(p.tacs.schedule.mid_time(f)), format_double(p.tacs.rvbp[f]),
                    format_double(p.tacs.lvbp[f]), format_double(p.tacs.myo[f])});
      } catch (const NoEqFrameError& err) {
        excluded.add({e.study_id, "no_eq_frame"});
        say("  excluded " + e.study_id + ": " + err.what());
      }
    }
    if (sel.size() < static_cast<std::size_t>(config_.folds))
      throw ValidationError("only " + std::to_string(sel.size()) + " usable studies for " +
                            std::to_string(config_.folds) + " folds");
    sel.save(records() / "frame_selection.csv");
    excluded.save(records() / "excluded.csv");
    tacs.save(records() / "tacs_motion_free.csv");
  }

  // ---- shared loading ------------------------------------------------------

  std::vector<PreparedStudy>& cohort() {
    if (!cohort_.empty()) return cohort_;
    const auto sel = CsvTable::load(records() / "frame_selection.csv");
    std::map<std::string, fs::path> paths;
    for (const auto& e : load_cohort_manifest(cohort_dir())) paths[e.study_id] = e.path;
    for (std::size_t r = 0; r < sel.size(); ++r) {
      const auto& id = sel.at(r, "study_id");
      if (!paths.count(id)) throw ValidationError("frame selection names unknown study " + id);
      auto [study, masks] = load_study(cohort_dir() / paths[id]);
      cohort_.push_back(prepare_study(std::move(study), std::move(masks), config_.threshold_fraction));
      if (join_indices(cohort_.back().selection.included) != sel.at(r, "included"))
        throw ValidationError("frame selection for " + id + " no longer matches the study on disk");
    }
    return cohort_;
  }

  const PreparedStudy& study(const std::string& id) {
    for (const auto& s : cohort())
      if (s.id == id) return s;
    throw ValidationError("unknown study " + id);
  }

  FoldSplit& folds() {
    if (!folds_.test.empty()) return folds_;
    const auto path = out() / "models" / "folds.txt";
    const auto r = KeyValueReader::load(path);
    const int k = static_cast<int>(r.get_int("folds"));
    folds_.train.resize(k);
    folds_.test.resize(k);
    for (int i = 0; i < k; ++i) {
      const std::string p = "fold_" + std::to_string(i) + ".";
      folds_.train[i] = split_ws(r.get_string(p + "train"));
      folds_.test[i] = split_ws(r.get_string(p + "test"));
    }
    return folds_;
  }

  std::vector<const PreparedStudy*> lookup(const std::vector<std::string>& ids) {
    std::vector<const PreparedStudy*> v;
    for (const auto& id : ids) v.push_back(&study(id));
    return v;
  }

  ModelBundle& model(Variant v, std::size_t k) {
    const auto key = std::make_pair(v, k);
    auto it = models_.find(key);
    if (it == models_.end()) it = models_.emplace(key, load_checkpoint(model_dir(v, k) / "model.ckpt")).first;
    return it->second;
  }

  // ---- train ---------------------------------------------------------------

  void train() {
    std::vector<std::string> ids;
    for (const auto& s : cohort()) ids.push_back(s.id);
    folds_ = make_folds(ids, config_.folds, derive_seed(config_.seed, 2));
    KeyValueWriter w;
    w.put("folds", static_cast<int>(folds_.folds()));
    for (std::size_t k = 0; k < folds_.folds(); ++k) {
      w.section("fold_" + std::to_string(k));
      std::string tr, te;
      for (const auto& s : folds_.train[k]) tr += (tr.empty() ? "" : " ") + s;
      for (const auto& s : folds_.test[k]) te += (te.empty() ? "" : " ") + s;
      w.put("train", tr);
      w.put("test", te);
    }
    fs::create_directories(out() / "models");
    w.save(out() / "models" / "folds.txt");

    for (auto v : config_.variants) {
      for (std::size_t k = 0; k < folds_.folds(); ++k) {
        TrainConfig c = train_;
        c.variant = v;
        const auto t0 = std::chrono::steady_clock::now();
        auto result = train_model(c, static_cast<int>(k), lookup(folds_.train[k]), lookup(folds_.test[k]),
                                  model_dir(v, k));
        const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::ostringstream m;
        m << "  " << variant_name(v) << " fold " << k << ": " << result.history.size() << " epochs, " << std::fixed
          << std::setprecision(1) << sec << " s";
        if (!result.history.empty())
          m << ", last mse " << std::setprecision(4) << result.history.back().mse << ", val ssim "
            << result.history.back().val_ssim;
        say(m.str());
        models_.insert_or_assign(std::make_pair(v, k), std::move(result.model));
      }
    }
  }

  // ---- convert -------------------------------------------------------------

  void convert() {
    CsvTable t({"method", "fold", "study_id", "frame", "eq_minus_1", "eq_plus_1", "pre_eq", "nmae", "mse", "ssim",
                "psnr"});
    auto add = [&](const std::string& method, std::size_t k, const FrameEvaluation& e, const SimilarityScores& s) {
      t.add({method, std::to_string(k), e.study_id, std::to_string(e.frame), flag(e.eq_minus_1), flag(e.eq_plus_1),
             flag(e.pre_eq), format_double(s.nmae), format_double(s.mse), format_double(s.ssim),
             format_double(s.psnr)});
    };
    const auto enc = train_.augmentation.mask_encoding;
    auto& f = folds();
    for (std::size_t k = 0; k < f.folds(); ++k) {
      for (const auto& id : f.test[k]) {
        const auto& s = study(id);
        bool raw_done = false;
        for (auto v : config_.variants) {
          for (const auto& e : evaluate_conversion(model(v, k), s, enc)) {
            if (!raw_done) add("no_conversion", k, e, e.raw);
            add(method_label(v), k, e, e.converted);
          }
          raw_done = true;
        }
      }
    }
    t.save(records() / "conversion.csv");
  }

  // ---- simulate-motion -----------------------------------------------------

  void simulate_motion() {
    const std::uint64_t base = derive_seed(config_.seed, 3);
    std::uint64_t index = 0;
    for (const auto& s : cohort()) {
      const auto dir = motion_dir(s.id);
      fs::remove_all(dir);
      fs::create_directories(dir);
      for (auto f : s.selection.included) {
        Rng rng(derive_seed(base, index * 64 + f));
        MotionField m = simulate_motion_field(rng, config_.magnitude_scale, motion_);
        m.frame_index = static_cast<int>(f);
        save_motion_field(m, dir / ("truth_" + frame_tag(f) + ".motion"));
      }
      ++index;
    }
  }

  MotionField truth(const PreparedStudy& s, std::size_t f) const {
    return load_motion_field(motion_dir(s.id) / ("truth_" + frame_tag(f) + ".motion"));
  }

  /// Motion-corrupted copy of the study: every included frame moved by its truth field.
  DynamicStudy corrupted(const PreparedStudy& s) const {
    DynamicStudy c = s.study;
    for (auto f : s.selection.included)
      c.frames[f] = apply_simulated_motion(s.study.frames[f], truth(s, f), s.study.voxel_spacing);
    return c;
  }

  // ---- register ------------------------------------------------------------

  void register_frames_stage() {
    CsvTable t({"method", "fold", "study_id", "frame", "eq_minus_1", "eq_plus_1", "pre_eq", "motion_error_mm",
                "nmi_no_motion", "nmi_motion", "nmi_corrected", "converged"});
    const auto enc = train_.augmentation.mask_encoding;
    auto& f = folds();
    for (std::size_t k = 0; k < f.folds(); ++k) {
      for (const auto& id : f.test[k]) {
        const auto& s = study(id);
        const auto& sp = s.study.voxel_spacing;
        const Volume& ref = s.study.frames.back();
        const Volume ref_norm = normalize_intensity(ref, intensity_params(ref));
        const DynamicStudy moved = corrupted(s);
        for (auto fr : s.selection.included) {
          const MotionField tr = truth(s, fr);
          const Volume& mv = moved.frames[fr];
          const double nmi_free = nmi(s.study.frames[fr], ref);
          const double nmi_moved = nmi(mv, ref);
          const bool em1 = fr + 1 == s.selection.eq_index;
          const bool ep1 = fr == s.selection.eq_index + 1;
          const bool pre = fr < s.selection.eq_index;
          auto row = [&](const std::string& method, const MotionField& est, double nmi_after, bool conv) {
            t.add({method, std::to_string(k), s.id, std::to_string(fr), flag(em1), flag(ep1), flag(pre),
                   format_double(motion_error(est, tr)), format_double(nmi_free), format_double(nmi_moved),
                   format_double(nmi_after), flag(conv)});
          };
          const MotionField zero = MotionField::covering(s.study.dims(), sp, motion_.control_spacing_mm, motion_.order);
          row("simulated_motion", zero, nmi_moved, true);

          auto finish = [&](const std::string& method, RegistrationResult r) {
            r.field.frame_index = static_cast<int>(fr);
            const auto dir = motion_dir(s.id) / method;
            fs::create_directories(dir);
            save_motion_field(r.field, dir / ("est_" + frame_tag(fr) + ".motion"));
            row(method, r.field, nmi(warp_frame(mv, r.field, sp), ref), r.converged);
          };
          finish("no_conversion", register_frames(mv, ref, sp, config_.raw_registration));
          for (auto v : config_.variants) {
            const Volume converted = convert_frame(model(v, k), s, fr, enc, &mv);
            finish(method_label(v), register_frames(converted, ref_norm, sp, config_.converted_registration));
          }
        }
      }
      say("  registered fold " + std::to_string(k));
    }
    t.save(records() / "registration.csv");
  }

  // ---- quantify ------------------------------------------------------------

  void quantify() {
    CsvTable kin({"method", "study_id", "true_K1", "true_mbf", "K1", "k2", "v", "mbf", "fit_error", "converged",
                  "k1_pct_diff", "mbf_pct_diff"});
    CsvTable tacs({"method", "study_id", "frame", "mid_time_s", "lvbp", "myo"});
    std::map<std::string, CohortEntry> manifest;
    for (const auto& e : load_cohort_manifest(cohort_dir())) manifest[e.study_id] = e;

    std::vector<std::string> methods{"no_conversion"};
    for (auto v : config_.variants) methods.push_back(method_label(v));

    for (const auto& s : cohort()) {
      const auto& truth_spec = manifest.at(s.id).spec;
      auto fit = [&](const DynamicStudy& st, const std::string& method, const KineticFit* baseline) {
        const auto t = extract_tacs(st, s.masks);
        const auto sched = st.schedule();
        for (std::size_t fr = 0; fr < t.size(); ++fr)
          tacs.add({method, s.id, std::to_string(fr), format_double(sched.mid_time(fr)), format_double(t.lvbp[fr]),
                    format_double(t.myo[fr])});
        const KineticFit k = fit_compartment(t.myo, t.lvbp, fit_weights(st), sched, config_.fit);
        std::string dk = "nan", dm = "nan";
        if (baseline) {
          const auto d = percent_diff(k, *baseline);
          dk = format_double(d.k1);
          dm = format_double(d.mbf);
        }
        kin.add({method, s.id, format_double(truth_spec.K1), format_double(k1_to_mbf(truth_spec.K1)),
                 format_double(k.K1), format_double(k.k2), format_double(k.v), format_double(k.mbf),
                 format_double(k.weighted_residual), flag(k.converged), dk, dm});
        return k;
      };
      const KineticFit base = fit(s.study, "motion_free", nullptr);
      const DynamicStudy moved = corrupted(s);
      fit(moved, "simulated_motion", &base);
      for (const auto& method : methods) {
        std::vector<MotionField> fields(s.study.frame_count());
        for (auto fr : s.selection.included)
          fields[fr] = load_motion_field(motion_dir(s.id) / method / ("est_" + frame_tag(fr) + ".motion"));
        fit(correct_study(moved, fields), method, &base);
      }
    }
    kin.save(records() / "kinetics.csv");
    tacs.save(records() / "tacs.csv");
  }

  const ExperimentConfig& config_;
  std::ostream* log_;
  TrainConfig train_;
  MotionSimulationSpec motion_;
  std::vector<PreparedStudy> cohort_;
  FoldSplit folds_;
  std::map<std::pair<Variant, std::size_t>, ModelBundle> models_;
};

}  // namespace

void run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  config.validate();
  const std::vector<Stage>& stages = options.only_stages.empty() ? config.stages : options.only_stages;
  fs::create_directories(config.out);
  fs::remove(config.out / "failure_report.txt");
  write_text_atomic(config.out / "config.effective", render_experiment_config(config));
  Run run(config, options.log);
  Stage current = stages.empty() ? Stage::kPhantom : stages.front();
  try {
    for (auto s : stages) {
      current = s;
      run.stage(s);
    }
  } catch (const std::exception& e) {
    std::ostringstream r;
    r << "stage: " << stage_name(current) << "\n"
      << "error: " << e.what() << "\n"
      << "partial artifacts retained under " << config.out.string() << "\n";
    write_text_atomic(config.out / "failure_report.txt", r.str());
    throw;
  }
}

}  // namespace taigan::pipeline
