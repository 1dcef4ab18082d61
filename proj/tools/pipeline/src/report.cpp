#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "csv.hpp"
#include "svg.hpp"
#include "taigan/stats.hpp"
#include "taigan/text_io.hpp"
#include "taigan/train.hpp"
#include "taigan_pipeline/experiment.hpp"

namespace fs = std::filesystem;

namespace taigan::pipeline {

namespace {

const std::vector<std::string> kSets{"eq_minus_1", "eq_plus_1", "pre_eq", "all"};
const std::map<std::string, std::string> kSetTitles{
    {"eq_minus_1", "EQ-1"}, {"eq_plus_1", "EQ+1"}, {"pre_eq", "pre-EQ"}, {"all", "all frames"}};

bool in_set(const CsvTable& t, std::size_t r, const std::string& set) {
  return set == "all" || t.at(r, set) == "1";
}

/// Methods in order of first appearance.
std::vector<std::string> methods_of(const CsvTable& t) {
  std::vector<std::string> m;
  for (std::size_t r = 0; r < t.size(); ++r)
    if (std::find(m.begin(), m.end(), t.at(r, "method")) == m.end()) m.push_back(t.at(r, "method"));
  return m;
}

std::string proposed_of(const std::vector<std::string>& methods) {
  for (const auto& m : methods)
    if (m == variant_name(Variant::kTaiGan)) return m;
  return methods.empty() ? "" : methods.back();
}

/// Values of one column for one method and set, with the study each came from.
struct Sample {
  std::vector<double> values;
  std::vector<std::string> studies;

  std::map<std::string, double> per_study_mean() const {
    std::map<std::string, std::pair<double, int>> acc;
    for (std::size_t i = 0; i < values.size(); ++i) {
      acc[studies[i]].first += values[i];
      acc[studies[i]].second += 1;
    }
    std::map<std::string, double> out;
    for (const auto& [s, a] : acc) out[s] = a.first / a.second;
    return out;
  }
};

Sample collect(const CsvTable& t, const std::string& method, const std::string& set, const std::string& column,
               bool absolute = false) {
  Sample s;
  for (std::size_t r = 0; r < t.size(); ++r) {
    if (t.at(r, "method") != method) continue;
    if (set != "*" && !in_set(t, r, set)) continue;
    const double v = t.number(r, column);
    s.values.push_back(absolute ? std::fabs(v) : v);
    s.studies.push_back(t.at(r, "study_id"));
  }
  return s;
}

/// Paired two-tailed p-value on per-study means; nan when fewer than 2 studies pair up.
double paired_p(const Sample& a, const Sample& b) {
  const auto ma = a.per_study_mean(), mb = b.per_study_mean();
  std::vector<double> x, y;
  for (const auto& [s, v] : ma) {
    auto it = mb.find(s);
    if (it == mb.end()) continue;
    x.push_back(v);
    y.push_back(it->second);
  }
  if (x.size() < 2) return std::nan("");
  return paired_t_test(x, y).p_value;
}

std::string fixed(double v, int d) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return format_fixed(v, d);
}

std::string p_text(double p) {
  if (std::isnan(p)) return "";
  if (p < 1e-4) return "<0.0001";
  return format_fixed(p, 4);
}

struct Cell {
  double mean = std::nan("");
  double sd = std::nan("");
  std::size_t n = 0;
  double p = std::nan("");  // vs proposed
};

Cell summarize(const Sample& s, const Sample* proposed, bool is_proposed) {
  Cell c;
  c.n = s.values.size();
  if (c.n) {
    const auto ms = mean_sd(s.values);
    c.mean = ms.mean;
    c.sd = ms.sd;
  }
  if (proposed && !is_proposed) c.p = paired_p(s, *proposed);
  return c;
}

enum class Rank { kLower, kHigher, kCloserToZero };

/// Markdown grid: rows x methods, best per row in bold, * when p < 0.05 vs the proposed method.
struct MdTable {
  std::vector<std::string> row_labels;
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> cells;
  std::vector<Rank> rank;
  std::vector<int> decimals;
  std::vector<bool> rankable;  // per column; reference columns are never bolded

  std::string render(const std::string& title, const std::string& note) const {
    std::ostringstream o;
    o << "# " << title << "\n\n";
    o << "| |";
    for (const auto& c : columns) o << " " << c << " |";
    o << "\n|---|";
    for (std::size_t i = 0; i < columns.size(); ++i) o << "---|";
    o << "\n";
    for (std::size_t r = 0; r < row_labels.size(); ++r) {
      int best = -1;
      for (std::size_t c = 0; c < columns.size(); ++c) {
        if (!rankable[c] || std::isnan(cells[r][c].mean)) continue;
        if (best < 0) {
          best = static_cast<int>(c);
          continue;
        }
        const double a = cells[r][c].mean, b = cells[r][best].mean;
        const bool better = rank[r] == Rank::kHigher  ? a > b
                            : rank[r] == Rank::kLower ? a < b
                                                      : std::fabs(a) < std::fabs(b);
        if (better) best = static_cast<int>(c);
      }
      o << "| " << row_labels[r] << " |";
      for (std::size_t c = 0; c < columns.size(); ++c) {
        const Cell& x = cells[r][c];
        std::string text = x.n ? fixed(x.mean, decimals[r]) + " ± " + fixed(x.sd, decimals[r]) : "n/a";
        if (!std::isnan(x.p) && x.p < 0.05) text += "*";
        if (static_cast<int>(c) == best) text = "**" + text + "**";
        o << " " << text << " |";
      }
      o << "\n";
    }
    o << "\n" << note << "\n";
    return o.str();
  }
};

void require_complete(const CsvTable& t, const std::string& baseline, const std::string& file) {
  std::set<std::pair<std::string, std::string>> keys;
  for (std::size_t r = 0; r < t.size(); ++r)
    if (t.at(r, "method") == baseline) keys.insert({t.at(r, "study_id"), t.at(r, "frame")});
  for (const auto& m : methods_of(t)) {
    std::set<std::pair<std::string, std::string>> have;
    for (std::size_t r = 0; r < t.size(); ++r)
      if (t.at(r, "method") == m) have.insert({t.at(r, "study_id"), t.at(r, "frame")});
    for (const auto& k : keys)
      if (!have.count(k))
        throw ValidationError(file + ": method " + m + " has no row for study " + k.first + " frame " + k.second);
  }
}

using Files = std::map<std::string, std::string>;

// ---- conversion similarity (and ablation) ------------------------------------

struct MetricSpec {
  std::string column;
  std::string title;
  bool higher_better;
  int decimals;
};
const std::vector<MetricSpec> kSimilarity{{"nmae", "NMAE", false, 4},
                                          {"mse", "MSE", false, 4},
                                          {"ssim", "SSIM", true, 4},
                                          {"psnr", "PSNR (dB)", true, 2}};

void similarity_tables(const CsvTable& conv, const std::vector<std::string>& methods, const std::vector<std::string>& sets,
                       const std::string& name, const std::string& title, bool reference_column, Files& files) {
  const std::string proposed = proposed_of(methods);
  CsvTable csv({"set", "metric", "method", "mean", "sd", "n", "p_vs_" + proposed});
  MdTable md;
  md.columns = methods;
  for (const auto& m : methods) md.rankable.push_back(!(reference_column && m == "no_conversion"));
  for (const auto& set : sets) {
    for (const auto& metric : kSimilarity) {
      const Sample prop = collect(conv, proposed, set, metric.column);
      std::vector<Cell> row;
      for (const auto& m : methods) {
        const Cell c = summarize(collect(conv, m, set, metric.column), &prop, m == proposed);
        csv.add({set, metric.column, m, fixed(c.mean, 6), fixed(c.sd, 6), std::to_string(c.n), p_text(c.p)});
        row.push_back(c);
      }
      md.row_labels.push_back(kSetTitles.at(set) + " " + metric.title);
      md.cells.push_back(row);
      md.rank.push_back(metric.higher_better ? Rank::kHigher : Rank::kLower);
      md.decimals.push_back(metric.decimals);
    }
  }
  files["tables/" + name + ".csv"] = csv.str();
  files["tables/" + name + ".md"] =
      md.render(title, "Mean ± SD over test frames (normalised intensities, reference = last frame). Bold: best "
                       "method per row. *: paired two-tailed t-test on per-study means vs " +
                           proposed + ", p < 0.05.");
}

// ---- motion error and frame NMI ----------------------------------------------

void motion_tables(const CsvTable& reg, Files& files) {
  require_complete(reg, "simulated_motion", "registration.csv");
  const auto methods = methods_of(reg);
  const std::string proposed = proposed_of(methods);

  CsvTable err({"set", "method", "mean", "sd", "n", "p_vs_" + proposed});
  MdTable md;
  md.columns = methods;
  for (const auto& m : methods) md.rankable.push_back(m != "simulated_motion");
  for (const auto& set : kSets) {
    const Sample prop = collect(reg, proposed, set, "motion_error_mm");
    std::vector<Cell> row;
    for (const auto& m : methods) {
      const Cell c = summarize(collect(reg, m, set, "motion_error_mm"), &prop, m == proposed);
      err.add({set, m, fixed(c.mean, 6), fixed(c.sd, 6), std::to_string(c.n), p_text(c.p)});
      row.push_back(c);
    }
    md.row_labels.push_back(kSetTitles.at(set));
    md.cells.push_back(row);
    md.rank.push_back(Rank::kLower);
    md.decimals.push_back(3);
  }
  files["tables/motion_error.csv"] = err.str();
  files["tables/motion_error.md"] = md.render(
      "Motion estimation error (mm)",
      "Mean ± SD over test frames of the control-point error (|dx| + |dy| + |dz|) / 3 against the simulated field. "
      "simulated_motion: no correction. no_conversion: raw frames registered to the raw last frame. Variant columns: "
      "converted frames registered to the intensity-normalized last frame. Registration settings are in "
      "config.effective. Bold: best corrected method. *: paired t-test on per-study means vs " +
          proposed + ", p < 0.05.");

  // NMI: the reference columns come from the simulated_motion rows.
  std::vector<std::string> cols{"no_motion"};
  cols.insert(cols.end(), methods.begin(), methods.end());
  CsvTable nm({"set", "method", "mean", "sd", "n", "p_vs_" + proposed});
  MdTable mn;
  mn.columns = cols;
  for (const auto& c : cols) mn.rankable.push_back(c != "no_motion" && c != "simulated_motion");
  for (const auto& set : kSets) {
    const Sample prop = collect(reg, proposed, set, "nmi_corrected");
    std::vector<Cell> row;
    for (const auto& m : cols) {
      Sample s;
      if (m == "no_motion")
        s = collect(reg, "simulated_motion", set, "nmi_no_motion");
      else if (m == "simulated_motion")
        s = collect(reg, "simulated_motion", set, "nmi_motion");
      else
        s = collect(reg, m, set, "nmi_corrected");
      const Cell c = summarize(s, &prop, m == proposed);
      nm.add({set, m, fixed(c.mean, 6), fixed(c.sd, 6), std::to_string(c.n), p_text(c.p)});
      row.push_back(c);
    }
    mn.row_labels.push_back(kSetTitles.at(set));
    mn.cells.push_back(row);
    mn.rank.push_back(Rank::kHigher);
    mn.decimals.push_back(4);
  }
  files["tables/frame_nmi.csv"] = nm.str();
  files["tables/frame_nmi.md"] = mn.render(
      "Frame NMI with the reference frame",
      "Mean ± SD over test frames of NMI(frame, last frame), 64 bins. no_motion: motion-free frames. "
      "simulated_motion: corrupted frames. Other columns: corrupted frames warped with each method's estimate. Bold: "
      "best corrected method. *: paired t-test on per-study means vs " +
          proposed + ", p < 0.05.");
}

// ---- kinetics -------------------------------------------------------------------

double median_of(std::vector<double> v) { return v.empty() ? std::nan("") : median(v); }

void kinetics_table(const CsvTable& kin, Files& files) {
  auto methods = methods_of(kin);
  const std::string proposed = proposed_of(methods);
  {
    std::set<std::string> base;
    for (std::size_t r = 0; r < kin.size(); ++r)
      if (kin.at(r, "method") == "motion_free") base.insert(kin.at(r, "study_id"));
    for (const auto& m : methods)
      for (const auto& s : base) {
        bool found = false;
        for (std::size_t r = 0; r < kin.size() && !found; ++r)
          found = kin.at(r, "method") == m && kin.at(r, "study_id") == s;
        if (!found) throw ValidationError("kinetics.csv: method " + m + " has no row for study " + s);
      }
  }
  CsvTable csv({"method", "fit_error_mean", "fit_error_sd", "k1_pct_mean", "k1_pct_sd", "mbf_pct_mean", "mbf_pct_sd",
                "median_abs_mbf_pct", "n", "p_fit_error_vs_" + proposed, "p_abs_mbf_pct_vs_" + proposed});
  const Sample prop_fit = collect(kin, proposed, "*", "fit_error");
  const Sample prop_mbf = collect(kin, proposed, "*", "mbf_pct_diff", true);

  MdTable md;
  md.row_labels = {"Fitting error", "K1 % difference", "MBF % difference", "median |MBF % difference|"};
  md.columns = methods;
  md.rank = {Rank::kLower, Rank::kCloserToZero, Rank::kCloserToZero, Rank::kLower};
  md.decimals = {4, 2, 2, 2};
  for (const auto& m : methods) md.rankable.push_back(m != "motion_free" && m != "simulated_motion");
  md.cells.assign(4, std::vector<Cell>(methods.size()));

  for (std::size_t i = 0; i < methods.size(); ++i) {
    const auto& m = methods[i];
    const bool is_base = m == "motion_free";
    const Sample fit = collect(kin, m, "*", "fit_error");
    const Sample k1 = collect(kin, m, "*", "k1_pct_diff");
    const Sample mbf = collect(kin, m, "*", "mbf_pct_diff");
    const Sample amb = collect(kin, m, "*", "mbf_pct_diff", true);
    const auto fs = mean_sd(fit.values);
    const double med = is_base ? std::nan("") : median_of(amb.values);
    const double p_fit = m == proposed ? std::nan("") : paired_p(fit, prop_fit);
    const double p_mbf = (m == proposed || is_base) ? std::nan("") : paired_p(amb, prop_mbf);
    MeanSd k1s{std::nan(""), std::nan(""), 0}, mbs{std::nan(""), std::nan(""), 0};
    if (!is_base) {
      k1s = mean_sd(k1.values);
      mbs = mean_sd(mbf.values);
    }
    csv.add({m, fixed(fs.mean, 9), fixed(fs.sd, 9), fixed(k1s.mean, 6), fixed(k1s.sd, 6), fixed(mbs.mean, 6),
             fixed(mbs.sd, 6), fixed(med, 6), std::to_string(fit.values.size()), p_text(p_fit), p_text(p_mbf)});

    Cell f{fs.mean, fs.sd, fit.values.size(), p_fit};
    md.cells[0][i] = f;
    if (!is_base) {
      md.cells[1][i] = Cell{k1s.mean, k1s.sd, k1.values.size(), std::nan("")};
      md.cells[2][i] = Cell{mbs.mean, mbs.sd, mbf.values.size(), std::nan("")};
    }
    Cell mc;
    mc.mean = med;
    mc.sd = 0;
    mc.n = is_base ? 0 : amb.values.size();
    mc.p = p_mbf;
    md.cells[3][i] = mc;
  }
  std::string text = md.render(
      "Kinetic quantification against the motion-free fit",
      "Fitting error: weighted mean squared residual. % differences: (estimate - motion-free) / motion-free per "
      "study, mean ± SD. The median row shows the cohort median of |MBF % difference| (SD column fixed at 0). "
      "Bold: best corrected method (signed rows: mean closest to 0). *: paired t-test on per-study values vs " +
          proposed + ", p < 0.05.");
  files["tables/kinetics.csv"] = csv.str();
  files["tables/kinetics.md"] = text;
}

// ---- plots ------------------------------------------------------------------------

void tac_plots(const CsvTable& tacs, const std::vector<std::string>& methods, Files& files) {
  std::vector<std::string> studies;
  for (std::size_t r = 0; r < tacs.size(); ++r)
    if (std::find(studies.begin(), studies.end(), tacs.at(r, "study_id")) == studies.end())
      studies.push_back(tacs.at(r, "study_id"));
  const std::string proposed = proposed_of(methods);
  std::vector<std::string> shown{"motion_free", "simulated_motion", "no_conversion"};
  if (!proposed.empty() && proposed != "no_conversion") shown.push_back(proposed);
  for (const auto& s : studies) {
    std::vector<Series> lv, myo;
    for (const auto& m : shown) {
      Series a{m, {}, {}}, b{m, {}, {}};
      for (std::size_t r = 0; r < tacs.size(); ++r) {
        if (tacs.at(r, "study_id") != s || tacs.at(r, "method") != m) continue;
        const double t = tacs.number(r, "mid_time_s");
        a.x.push_back(t);
        a.y.push_back(tacs.number(r, "lvbp") * 1e-3);
        b.x.push_back(t);
        b.y.push_back(tacs.number(r, "myo") * 1e-3);
      }
      if (!a.x.empty()) {
        lv.push_back(a);
        myo.push_back(b);
      }
    }
    Figure fig(900, 380);
    fig.line_panel({0, 0, 450, 380}, "LVBP TAC " + s, "time (s)", "kBq/mL", lv);
    fig.line_panel({450, 0, 450, 380}, "Myocardium TAC " + s, "time (s)", "kBq/mL", myo);
    files["plots/tac_" + s + ".svg"] = fig.str();
  }
}

void mbf_scatter(const CsvTable& kin, Files& files) {
  std::map<std::string, double> base;
  for (std::size_t r = 0; r < kin.size(); ++r)
    if (kin.at(r, "method") == "motion_free") base[kin.at(r, "study_id")] = kin.number(r, "mbf");
  for (const auto& m : methods_of(kin)) {
    if (m == "motion_free") continue;
    Series pts{m, {}, {}};
    for (std::size_t r = 0; r < kin.size(); ++r) {
      if (kin.at(r, "method") != m) continue;
      pts.x.push_back(base.at(kin.at(r, "study_id")));
      pts.y.push_back(kin.number(r, "mbf"));
    }
    Figure fig(460, 440);
    fig.scatter_panel({0, 0, 460, 440}, "MBF: " + m, "motion-free MBF (mL/min/g)", "MBF (mL/min/g)", pts);
    files["plots/mbf_scatter_" + m + ".svg"] = fig.str();
  }
}

Files build_report(const fs::path& out) {
  const fs::path rec = out / "records";
  Files files;
  const bool have_conv = fs::exists(rec / "conversion.csv");
  const bool have_reg = fs::exists(rec / "registration.csv");
  const bool have_kin = fs::exists(rec / "kinetics.csv");
  if (!have_conv && !have_reg && !have_kin)
    throw ValidationError("no records under " + rec.string() + " (run the pipeline stages first)");
  if (have_conv) {
    const auto conv = CsvTable::load(rec / "conversion.csv");
    require_complete(conv, "no_conversion", "conversion.csv");
    const auto methods = methods_of(conv);
    similarity_tables(conv, methods, kSets, "conversion_similarity", "Frame conversion similarity", true, files);
    std::vector<std::string> abl;
    for (auto v : ablation_variants()) abl.push_back(variant_name(v));
    if (std::all_of(abl.begin(), abl.end(),
                    [&](const auto& m) { return std::find(methods.begin(), methods.end(), m) != methods.end(); }))
      similarity_tables(conv, abl, {"pre_eq", "all"}, "ablation", "Ablation of anatomical and temporal inputs", false,
                        files);
  }
  if (have_reg) motion_tables(CsvTable::load(rec / "registration.csv"), files);
  if (have_kin) {
    const auto kin = CsvTable::load(rec / "kinetics.csv");
    kinetics_table(kin, files);
    mbf_scatter(kin, files);
    if (fs::exists(rec / "tacs.csv")) tac_plots(CsvTable::load(rec / "tacs.csv"), methods_of(kin), files);
  }
  return files;
}

}  // namespace

void write_report(const fs::path& out, std::ostream* log) {
  const Files files = build_report(out);
  fs::remove_all(out / "tables");
  fs::remove_all(out / "plots");
  for (const auto& [rel, content] : files) {
    fs::create_directories((out / rel).parent_path());
    write_text_atomic(out / rel, content);
  }
  if (log) *log << "  wrote " << files.size() << " report files" << std::endl;
}

std::vector<std::string> audit_run(const fs::path& out) {
  std::vector<std::string> problems;
  // 1. Every table and plot is exactly what the records produce.
  try {
    const Files files = build_report(out);
    for (const auto& [rel, content] : files) {
      if (!fs::exists(out / rel))
        problems.push_back(rel + ": missing");
      else if (read_text(out / rel) != content)
        problems.push_back(rel + ": differs from recomputation from records/");
    }
    for (const char* dir : {"tables", "plots"}) {
      if (!fs::exists(out / dir)) continue;
      for (const auto& e : fs::directory_iterator(out / dir)) {
        const auto rel = (fs::path(dir) / e.path().filename()).generic_string();
        if (!files.count(rel)) problems.push_back(rel + ": not produced by any record");
      }
    }
  } catch (const std::exception& e) {
    problems.push_back(std::string("report recomputation failed: ") + e.what());
  }

  // 2. Percentage differences in the kinetics records follow from the fitted values.
  if (fs::exists(out / "records" / "kinetics.csv")) {
    const auto kin = CsvTable::load(out / "records" / "kinetics.csv");
    std::map<std::string, std::pair<double, double>> base;
    for (std::size_t r = 0; r < kin.size(); ++r)
      if (kin.at(r, "method") == "motion_free")
        base[kin.at(r, "study_id")] = {kin.number(r, "K1"), kin.number(r, "mbf")};
    for (std::size_t r = 0; r < kin.size(); ++r) {
      if (kin.at(r, "method") == "motion_free") continue;
      const auto& b = base.at(kin.at(r, "study_id"));
      const double dk = 100.0 * (kin.number(r, "K1") - b.first) / b.first;
      const double dm = 100.0 * (kin.number(r, "mbf") - b.second) / b.second;
      if (std::fabs(dk - kin.number(r, "k1_pct_diff")) > 1e-9 * std::max(1.0, std::fabs(dk)) ||
          std::fabs(dm - kin.number(r, "mbf_pct_diff")) > 1e-9 * std::max(1.0, std::fabs(dm)))
        problems.push_back("kinetics.csv row " + std::to_string(r + 2) + ": % difference does not match K1/MBF");
    }
  }

  // 3. No test-fold study ever contributed a training sample.
  const fs::path folds_path = out / "models" / "folds.txt";
  if (fs::exists(folds_path)) {
    const auto f = KeyValueReader::load(folds_path);
    const int k = static_cast<int>(f.get_int("folds"));
    for (const auto& vdir : fs::directory_iterator(out / "models")) {
      if (!vdir.is_directory()) continue;
      for (int i = 0; i < k; ++i) {
        const auto log = vdir.path() / ("fold_" + std::to_string(i)) / "train_log.jsonl";
        if (!fs::exists(log)) continue;
        const auto leaked = audit_training_log(log, split_ws(f.get_string("fold_" + std::to_string(i) + ".test")));
        for (const auto& id : leaked)
          problems.push_back(log.lexically_relative(out).generic_string() + ": held-out study " + id +
                             " used for training");
      }
    }
  }
  return problems;
}

}  // namespace taigan::pipeline
