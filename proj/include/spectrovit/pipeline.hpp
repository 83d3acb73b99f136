#pragma once

// End-to-end pipelines behind the CLI verbs: group selection, the model and
// averaging reconstructions, the spectra CSV format, per-scan evaluation,
// summaries and plot data.
//
// Spectra CSV:
//   # comment lines (config echo, axis)
//   scan_id,pipeline,group,<ppm of point 0>,...,<ppm of point n-1>
//   one row per reconstruction, values printed with 17 significant digits
// group is 1-4, or 0 when the pipeline used every transient.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spectrovit/dataset.hpp"
#include "spectrovit/errors.hpp"
#include "spectrovit/metrics.hpp"
#include "spectrovit/pipeline_config.hpp"
#include "spectrovit/signal.hpp"
#include "spectrovit/simulator.hpp"
#include "spectrovit/spectrogram.hpp"
#include "spectrovit/stats.hpp"
#include "spectrovit/vit.hpp"

namespace spectrovit {

// Target is not a reconstruction: it copies the dataset target, for sanity
// checks of the evaluation itself.
enum class PipelineKind { SpectroVit, QuarterAverage, FullAverage, Target };

inline const char* to_string(PipelineKind k) {
  switch (k) {
    case PipelineKind::SpectroVit: return "SpectroVit";
    case PipelineKind::QuarterAverage: return "QuarterAverage";
    case PipelineKind::FullAverage: return "FullAverage";
    case PipelineKind::Target: return "Target";
  }
  return "?";
}

inline std::optional<PipelineKind> try_parse_pipeline(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "spectrovit" || s == "vit") return PipelineKind::SpectroVit;
  if (s == "quarteraverage" || s == "quarter") return PipelineKind::QuarterAverage;
  if (s == "fullaverage" || s == "full") return PipelineKind::FullAverage;
  if (s == "target") return PipelineKind::Target;
  return std::nullopt;
}

inline PipelineKind parse_pipeline(const std::string& s) {
  if (auto k = try_parse_pipeline(s)) return *k;
  fail(ErrorKind::Usage, "unknown pipeline '" + s + "' (expected spectrovit, quarter, full or target)");
}

inline constexpr int kGroups = 4;

inline bool uses_group(PipelineKind k) { return k == PipelineKind::SpectroVit || k == PipelineKind::QuarterAverage; }

// Transients of group g (1-4): offsets (g-1)*40 .. g*40 of both sub-signals.
inline SampleWindow group_window(const ScanRecord& scan, int group) {
  if (group < 1 || group > kGroups)
    fail(ErrorKind::Usage, "group must be in 1-4, got " + std::to_string(group));
  if (scan.transients_per_subsignal() != kGroups * kWindowSize)
    fail(ErrorKind::Data, "scan " + std::to_string(scan.scan_id) + " has " +
                              std::to_string(scan.transients_per_subsignal()) + " transients per sub-signal, groups need " +
                              std::to_string(kGroups * kWindowSize));
  return {&scan, static_cast<std::size_t>(group - 1) * kWindowSize, kWindowSize};
}

// Plain average and subtraction with line broadening.
inline Spectrum averaged_difference(std::span<const ComplexFid> on, std::span<const ComplexFid> off, double center_ppm,
                                    double lb_hz) {
  return processed_spectrum(difference_fid(mean_fid(on), mean_fid(off)), center_ppm, lb_hz);
}

inline Spectrum averaged_off(std::span<const ComplexFid> off, double center_ppm, double lb_hz) {
  return processed_spectrum(mean_fid(off), center_ppm, lb_hz);
}

// Least-squares scale s minimizing |s*model - reference|^2 over a ppm window.
inline double least_squares_scale(const Spectrum& model, const Spectrum& reference, double lo_ppm, double hi_ppm) {
  const IndexRange r = model.axis.require_window(lo_ppm, hi_ppm);
  double mm = 0.0, mr = 0.0;
  for (std::size_t i = r.begin; i < r.end; ++i) {
    mm += model.values[i] * model.values[i];
    mr += model.values[i] * reference.values[i];
  }
  if (!(mm > 0.0)) fail(ErrorKind::Numerical, "model output is zero over the rescale window");
  return mr / mm;
}

struct Reconstruction {
  std::uint32_t scan_id = 0;
  PipelineKind pipeline = PipelineKind::FullAverage;
  int group = 0;
  Spectrum spectrum;
};

class Reconstructor {
 public:
  Reconstructor(const PipelineConfig& cfg, const vit::ModelParams* params)
      : cfg_(cfg), params_(params), builder_(cfg.stft) {}

  // The model's max-normalized output is brought onto the absolute scale of
  // the averaged spectrum of the same input transients, so quantification
  // ratios against the water reference are comparable across pipelines.
  Spectrum run(PipelineKind kind, const ScanRecord& scan, int group, const PpmAxis& target_axis) const {
    const double center = target_axis.center_ppm();
    switch (kind) {
      case PipelineKind::FullAverage:
        return averaged_difference(scan.on_transients, scan.off_transients, center, cfg_.lb_hz);
      case PipelineKind::Target:
        return scan.target;
      case PipelineKind::QuarterAverage: {
        const SampleWindow w = group_window(scan, group);
        return averaged_difference(w.on_window(), w.off_window(), center, cfg_.lb_hz);
      }
      case PipelineKind::SpectroVit: {
        if (!params_) fail(ErrorKind::Usage, "the SpectroVit pipeline needs a parameter file");
        const SampleWindow w = group_window(scan, group);
        const SpectrogramImage img = builder_.build(w.on_window(), w.off_window());
        const std::vector<float> out = vit::predict(*params_, img.pixels);
        Spectrum s;
        s.axis = target_axis;
        s.values.assign(out.begin(), out.end());
        for (double v : s.values)
          if (!std::isfinite(v)) fail(ErrorKind::Numerical, "model produced a non-finite output");
        const Spectrum ref = averaged_difference(w.on_window(), w.off_window(), center, cfg_.lb_hz);
        const double scale = least_squares_scale(s, ref, cfg_.rescale_lo_ppm, cfg_.rescale_hi_ppm);
        for (double& v : s.values) v *= scale;
        return s;
      }
    }
    fail(ErrorKind::Usage, "unknown pipeline");
  }

 private:
  PipelineConfig cfg_;
  const vit::ModelParams* params_;
  SpectrogramBuilder builder_;
};

inline std::vector<const ScanRecord*> select_scans(const Dataset& ds, const std::string& split) {
  if (split == "all") {
    std::vector<const ScanRecord*> out;
    for (const auto& s : ds.scans) out.push_back(&s);
    return out;
  }
  if (split == "train") return ds.scans_in(Split::Train);
  if (split == "validation") return ds.scans_in(Split::Validation);
  if (split == "test") return ds.scans_in(Split::Test);
  fail(ErrorKind::Usage, "unknown split '" + split + "' (expected train, validation, test or all)");
}

inline std::vector<Reconstruction> reconstruct_scans(const Reconstructor& rec, PipelineKind kind, const Dataset& ds,
                                                     const std::vector<const ScanRecord*>& scans, int group) {
  if (group < 1 || group > kGroups) fail(ErrorKind::Usage, "group must be in 1-4, got " + std::to_string(group));
  std::vector<Reconstruction> out;
  out.reserve(scans.size());
  const PpmAxis axis = ds.target_axis();
  for (const ScanRecord* s : scans)
    out.push_back({s->scan_id, kind, uses_group(kind) ? group : 0, rec.run(kind, *s, group, axis)});
  return out;
}

// ---------------------------------------------------------------------------
// Spectra CSV

namespace csv {

inline std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fixed(double v, int digits) {
  if (std::isnan(v)) return "nan";
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream ss(line);
  while (std::getline(ss, item, ',')) out.push_back(item);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double to_double(const std::string& s, const std::string& where) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail(ErrorKind::Data, where + ": not a number '" + s + "'");
  }
}

}  // namespace csv

inline std::string axis_comment(const PpmAxis& a) {
  return "# axis: points=" + std::to_string(a.size()) + " center_ppm=" + cfgio::fmt(a.center_ppm()) +
         " sweep_width_hz=" + cfgio::fmt(a.sweep_width_hz()) + " transmitter_hz=" + cfgio::fmt(a.transmitter_hz()) +
         "\n";
}

inline std::string spectra_csv(const std::vector<Reconstruction>& recs, const PpmAxis& axis, const std::string& header) {
  std::string out = header + axis_comment(axis) + "scan_id,pipeline,group";
  for (std::size_t i = 0; i < axis.size(); ++i) out += "," + csv::fixed(axis.ppm(i), 6);
  out += "\n";
  for (const auto& r : recs) {
    if (!(r.spectrum.axis == axis)) fail(ErrorKind::Usage, "reconstruction is not on the output axis");
    out += std::to_string(r.scan_id) + "," + to_string(r.pipeline) + "," + std::to_string(r.group);
    for (double v : r.spectrum.values) out += "," + csv::num(v);
    out += "\n";
  }
  return out;
}

// Reads a spectra CSV onto the given axis; the ppm header must match it.
inline std::vector<Reconstruction> read_spectra_csv(const std::filesystem::path& path, const PpmAxis& axis) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Data, "cannot open " + path.string());
  std::string line;
  std::vector<std::string> header;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    header = csv::split(line);
    break;
  }
  const std::string where = path.string();
  if (header.size() < 3 || header[0] != "scan_id") fail(ErrorKind::Data, where + ": missing scan_id header");
  if (header[1] != "pipeline") fail(ErrorKind::Data, where + ": missing pipeline column");
  if (header[2] != "group") fail(ErrorKind::Data, where + ": missing group column");
  if (header.size() != 3 + axis.size())
    fail(ErrorKind::Data, where + ": " + std::to_string(header.size() - 3) + " spectrum columns, dataset axis has " +
                              std::to_string(axis.size()));
  for (std::size_t i = 0; i < axis.size(); ++i)
    if (std::abs(csv::to_double(header[3 + i], where) - axis.ppm(i)) > 1e-5)
      fail(ErrorKind::Data, where + ": ppm header does not match the dataset axis at column " + std::to_string(i));

  std::vector<Reconstruction> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto cells = csv::split(line);
    const std::string at = where + ":" + std::to_string(line_no);
    if (cells.size() != header.size()) fail(ErrorKind::Data, at + ": wrong number of columns");
    Reconstruction r;
    r.scan_id = static_cast<std::uint32_t>(csv::to_double(cells[0], at));
    const auto kind = try_parse_pipeline(cells[1]);
    if (!kind) fail(ErrorKind::Data, at + ": unknown pipeline '" + cells[1] + "'");
    r.pipeline = *kind;
    r.group = static_cast<int>(csv::to_double(cells[2], at));
    r.spectrum.axis = axis;
    r.spectrum.values.resize(axis.size());
    for (std::size_t i = 0; i < axis.size(); ++i) r.spectrum.values[i] = csv::to_double(cells[3 + i], at);
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct ScanEvaluation {
  std::uint32_t scan_id = 0;
  PipelineKind pipeline = PipelineKind::FullAverage;
  int group = 0;
  double mse = NAN, snr = NAN, fwhm_ppm = NAN, shape_score = NAN, fit_error_pct = NAN;
  double gaba_water = NAN, gaba_cr = NAN, glx_water = NAN;
  double fit_error_gaba_water = NAN, fit_error_gaba_cr = NAN, fit_error_glx_water = NAN;
  std::vector<std::string> failures;  // numerical failures, one per affected quantity
};

// Metrics against the dataset target and quantification. The OFF spectrum for
// Cr uses the transients the pipeline consumed. Numerical failures leave NaN
// and a note; other errors propagate.
inline ScanEvaluation evaluate_reconstruction(const Reconstruction& r, const ScanRecord& scan, const PipelineConfig& cfg) {
  ScanEvaluation e;
  e.scan_id = r.scan_id;
  e.pipeline = r.pipeline;
  e.group = r.group;
  const MetricWindows& w = cfg.windows;
  auto guarded = [&](const char* what, auto&& fn) {
    try {
      fn();
    } catch (const Error& err) {
      if (err.kind() != ErrorKind::Numerical) throw;
      e.failures.push_back(std::string(what) + ": " + err.what());
    }
  };
  guarded("mse", [&] { e.mse = mse_windowed(r.spectrum, scan.target, w); });
  guarded("snr", [&] { e.snr = snr_gaba(r.spectrum, w); });
  guarded("fwhm", [&] { e.fwhm_ppm = fwhm_gaba(r.spectrum, w); });
  guarded("shape_score", [&] { e.shape_score = shape_score(r.spectrum, scan.target, w); });
  guarded("quantification", [&] {
    const double center = r.spectrum.axis.center_ppm();
    Spectrum off;
    if (r.group >= 1 && uses_group(r.pipeline)) {
      const SampleWindow win = group_window(scan, r.group);
      off = averaged_off(win.off_window(), center, cfg.lb_hz);
    } else {
      off = averaged_off(scan.off_transients, center, cfg.lb_hz);
    }
    const QuantResult q = quantify(r.spectrum, off, scan.water_reference, center);
    e.gaba_water = q.gaba_water;
    e.gaba_cr = q.gaba_cr;
    e.glx_water = q.glx_water;
    e.fit_error_gaba_water = q.fit_error_gaba_water;
    e.fit_error_gaba_cr = q.fit_error_gaba_cr;
    e.fit_error_glx_water = q.fit_error_glx_water;
    e.fit_error_pct = q.fit_error_gaba_water;
  });
  return e;
}

inline std::vector<ScanEvaluation> evaluate_all(const std::vector<Reconstruction>& recs, const Dataset& ds,
                                                const PipelineConfig& cfg) {
  std::vector<ScanEvaluation> out;
  out.reserve(recs.size());
  for (const auto& r : recs) out.push_back(evaluate_reconstruction(r, ds.scan_by_id(r.scan_id), cfg));
  return out;
}

inline const char* kMetricsHeader = "scan_id,pipeline,group,mse,snr,fwhm_ppm,shape_score,fit_error_pct\n";

inline std::string metrics_csv(const std::vector<ScanEvaluation>& evals, const std::string& header) {
  std::string out = header + kMetricsHeader;
  for (const auto& e : evals)
    out += std::to_string(e.scan_id) + "," + to_string(e.pipeline) + "," + std::to_string(e.group) + "," +
           csv::num(e.mse) + "," + csv::num(e.snr) + "," + csv::num(e.fwhm_ppm) + "," + csv::num(e.shape_score) +
           "," + csv::num(e.fit_error_pct) + "\n";
  return out;
}

inline std::string quantification_csv(const std::vector<ScanEvaluation>& evals, const std::string& header) {
  std::string out = header +
                    "scan_id,pipeline,group,gaba_water,gaba_cr,glx_water,fit_error_gaba_water,fit_error_gaba_cr,"
                    "fit_error_glx_water\n";
  for (const auto& e : evals)
    out += std::to_string(e.scan_id) + "," + to_string(e.pipeline) + "," + std::to_string(e.group) + "," +
           csv::num(e.gaba_water) + "," + csv::num(e.gaba_cr) + "," + csv::num(e.glx_water) + "," +
           csv::num(e.fit_error_gaba_water) + "," + csv::num(e.fit_error_gaba_cr) + "," +
           csv::num(e.fit_error_glx_water) + "\n";
  return out;
}

namespace summary {

inline std::vector<double> finite(const std::vector<double>& v) {
  std::vector<double> out;
  for (double x : v)
    if (std::isfinite(x)) out.push_back(x);
  return out;
}

inline nlohmann::json mean_std(const std::vector<double>& values) {
  const auto v = finite(values);
  if (v.empty()) return {{"mean", nullptr}, {"std", nullptr}, {"n", 0}};
  return {{"mean", mean_of(v)}, {"std", std_of(v)}, {"n", v.size()}};
}

using Getter = double ScanEvaluation::*;

inline const std::vector<std::pair<const char*, Getter>>& metric_columns() {
  static const std::vector<std::pair<const char*, Getter>> cols = {
      {"mse", &ScanEvaluation::mse},
      {"snr", &ScanEvaluation::snr},
      {"fwhm_ppm", &ScanEvaluation::fwhm_ppm},
      {"shape_score", &ScanEvaluation::shape_score},
      {"fit_error_pct", &ScanEvaluation::fit_error_pct},
  };
  return cols;
}

struct Ratio {
  const char* name;
  Getter value;
  Getter fit_error;
};

inline const std::vector<Ratio>& ratios() {
  static const std::vector<Ratio> r = {
      {"gaba_water", &ScanEvaluation::gaba_water, &ScanEvaluation::fit_error_gaba_water},
      {"glx_water", &ScanEvaluation::glx_water, &ScanEvaluation::fit_error_glx_water},
      {"gaba_cr", &ScanEvaluation::gaba_cr, &ScanEvaluation::fit_error_gaba_cr},
  };
  return r;
}

inline std::vector<double> column(const std::vector<const ScanEvaluation*>& rows, Getter g) {
  std::vector<double> out;
  for (const auto* r : rows) out.push_back(r->*g);
  return out;
}

// Signed-rank test of a pipeline's ratios against the reference, paired by
// scan. All-zero differences are reported as identical distributions.
inline nlohmann::json compare_to_reference(const std::vector<const ScanEvaluation*>& rows,
                                           const std::vector<const ScanEvaluation*>& ref, Getter g) {
  std::map<std::uint32_t, double> ref_by_scan;
  for (const auto* r : ref) ref_by_scan[r->scan_id] = r->*g;
  std::vector<double> x, y;
  for (const auto* r : rows) {
    const auto it = ref_by_scan.find(r->scan_id);
    if (it == ref_by_scan.end() || !std::isfinite(r->*g) || !std::isfinite(it->second)) continue;
    x.push_back(r->*g);
    y.push_back(it->second);
  }
  nlohmann::json j;
  j["n_pairs"] = x.size();
  if (x.empty()) {
    j["wilcoxon_p"] = nullptr;
    j["note"] = "no paired scans";
    return j;
  }
  const ErrorStats es = error_stats(x, y);
  j["abs_error_mean"] = es.abs_error_mean;
  j["abs_error_std"] = es.abs_error_std;
  j["mape_percent"] = es.mape_percent;
  try {
    const WilcoxonResult w = wilcoxon_signed_rank(x, y);
    j["wilcoxon_p"] = w.p_value;
    j["wilcoxon_statistic"] = w.statistic;
    j["wilcoxon_exact"] = w.exact;
    j["note"] = "";
  } catch (const Error& err) {
    if (err.kind() != ErrorKind::Data) throw;
    j["wilcoxon_p"] = nullptr;
    j["note"] = x == y ? "identical distributions" : err.what();
  }
  return j;
}

inline nlohmann::json quantification(const std::vector<const ScanEvaluation*>& rows,
                                     const std::vector<const ScanEvaluation*>* ref) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& ratio : ratios()) {
    const auto values = column(rows, ratio.value);
    nlohmann::json j = mean_std(values);
    const auto v = finite(values);
    j["cv_percent"] = v.size() > 1 && mean_of(v) != 0.0 ? 100.0 * std_of(v) / std::abs(mean_of(v)) : 0.0;
    j["fit_error_pct"] = mean_std(column(rows, ratio.fit_error));
    j["vs_reference"] = ref ? compare_to_reference(rows, *ref, ratio.value) : nlohmann::json(nullptr);
    out[ratio.name] = j;
  }
  return out;
}

inline nlohmann::json metrics(const std::vector<const ScanEvaluation*>& rows) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [name, g] : metric_columns()) out[name] = mean_std(column(rows, g));
  return out;
}

// Five-number summary with linearly interpolated quartiles.
inline nlohmann::json box(const std::vector<double>& values) {
  auto v = finite(values);
  if (v.empty()) return nullptr;
  std::sort(v.begin(), v.end());
  auto q = [&](double p) {
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  return {{"min", v.front()}, {"q1", q(0.25)}, {"median", q(0.5)}, {"q3", q(0.75)}, {"max", v.back()}};
}

}  // namespace summary

// Pipelines in first-appearance order, each with its rows.
inline std::vector<std::pair<PipelineKind, std::vector<const ScanEvaluation*>>> by_pipeline(
    const std::vector<ScanEvaluation>& evals) {
  std::vector<std::pair<PipelineKind, std::vector<const ScanEvaluation*>>> out;
  for (const auto& e : evals) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& p) { return p.first == e.pipeline; });
    if (it == out.end()) {
      out.push_back({e.pipeline, {}});
      it = out.end() - 1;
    }
    for (const auto* prev : it->second)
      if (prev->scan_id == e.scan_id)
        fail(ErrorKind::Data, std::string("duplicate reconstruction of scan ") + std::to_string(e.scan_id) + " for " +
                                  to_string(e.pipeline));
    it->second.push_back(&e);
  }
  return out;
}

inline nlohmann::json evaluation_summary(const std::vector<ScanEvaluation>& evals, PipelineKind reference,
                                         const PipelineConfig& cfg) {
  const auto groups = by_pipeline(evals);
  const std::vector<const ScanEvaluation*>* ref = nullptr;
  for (const auto& [k, rows] : groups)
    if (k == reference) ref = &rows;
  nlohmann::json j;
  j["reference_pipeline"] = to_string(reference);
  j["metrics"] = nlohmann::json::object();
  j["quantification"] = nlohmann::json::object();
  j["counts"] = nlohmann::json::object();
  for (const auto& [k, rows] : groups) {
    j["metrics"][to_string(k)] = summary::metrics(rows);
    j["quantification"][to_string(k)] = summary::quantification(rows, ref);
    std::size_t failures = 0;
    for (const auto* r : rows) failures += r->failures.size();
    j["counts"][to_string(k)] = {{"scans", rows.size()}, {"numerical_failures", failures}};
  }
  if (!ref) j["note"] = std::string("reference pipeline ") + to_string(reference) + " absent; no paired tests";
  j["config"] = cfg.to_ini();
  return j;
}

// ---------------------------------------------------------------------------
// Plot data

struct OverlaySeries {
  std::string label;
  const Spectrum* spectrum;
};

// Values in [lo, hi] ppm, each series min-max normalized over that window.
inline std::string overlay_csv(const std::vector<OverlaySeries>& series, double lo, double hi) {
  const PpmAxis& axis = series.front().spectrum->axis;
  const IndexRange r = axis.require_window(lo, hi);
  std::vector<std::vector<double>> cols;
  std::string out = "ppm";
  for (const auto& s : series) {
    out += "," + s.label;
    const auto v = s.spectrum->view(r);
    const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
    std::vector<double> c(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) c[i] = *mx > *mn ? (v[i] - *mn) / (*mx - *mn) : 0.0;
    cols.push_back(std::move(c));
  }
  out += "\n";
  for (std::size_t i = 0; i < r.size(); ++i) {
    out += csv::fixed(axis.ppm(r.begin + i), 6);
    for (const auto& c : cols) out += "," + csv::fixed(c[i], 8);
    out += "\n";
  }
  return out;
}

// Line plot of the overlay CSV content, ppm decreasing to the right.
inline std::string overlay_svg(const std::vector<OverlaySeries>& series, double lo, double hi, const std::string& title) {
  static const char* colors[] = {"#000000", "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"};
  const double W = 640, H = 360, m = 40;
  const PpmAxis& axis = series.front().spectrum->axis;
  const IndexRange r = axis.require_window(lo, hi);
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"360\" viewBox=\"0 0 640 360\">\n";
  out += "<rect width=\"640\" height=\"360\" fill=\"white\"/>\n";
  out += "<text x=\"40\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" + title + "</text>\n";
  char buf[96];
  for (double p = std::ceil(lo * 2) / 2; p <= hi + 1e-9; p += 0.5) {
    const double x = m + (hi - p) / (hi - lo) * (W - 2 * m);
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"11\">%.1f</text>\n",
                  x - 8, H - 12, p);
    out += buf;
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto v = series[s].spectrum->view(r);
    const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
    const double span = *mx > *mn ? *mx - *mn : 1.0;
    out += "<polyline fill=\"none\" stroke-width=\"1.2\" stroke=\"" + std::string(colors[s % 6]) + "\" points=\"";
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double x = m + (hi - axis.ppm(r.begin + i)) / (hi - lo) * (W - 2 * m);
      const double y = H - m - (v[i] - *mn) / span * (H - 2 * m);
      std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", i ? " " : "", x, y);
      out += buf;
    }
    out += "\"/>\n";
    std::snprintf(buf, sizeof buf, "<text x=\"%.0f\" y=\"%.0f\" font-family=\"sans-serif\" font-size=\"11\" fill=\"%s\">",
                  W - 150, 24 + 14.0 * static_cast<double>(s), colors[s % 6]);
    out += buf + series[s].label + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

// ---------------------------------------------------------------------------
// Commands

inline std::string provenance_header(const std::string& verb, const PipelineConfig& cfg) {
  return "# spectrovit " + verb + "\n" + commented(cfg.to_ini());
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Data, "cannot create directory " + dir.string() + ": " + ec.message());
}

inline Dataset cmd_simulate(const PipelineConfig& cfg, const std::filesystem::path& out, std::ostream& log) {
  cfg.validate();
  if (cfg.n_scans == 0) fail(ErrorKind::Usage, "--scans must be >= 1");
  Dataset ds = simulate_dataset(cfg.simulation(), cfg.n_scans, cfg.split, cfg.seed);
  write_dataset(out, ds);
  const SplitCounts c = split_counts(cfg.n_scans, cfg.split);
  log << "wrote " << out.string() << ": " << ds.scans.size() << " scans (train " << c.train << ", validation "
      << c.validation << ", test " << c.test << ")\n";
  return ds;
}

inline std::string train_log_header(const PipelineConfig& cfg) {
  return "# spectrovit train\n# model: " + cfg.model.to_json().dump() + "\n# train: " + cfg.train_config().to_json().dump() +
         "\n" + commented(cfg.to_ini());
}

struct TrainOutputs {
  vit::ModelParams params;
  std::vector<vit::EpochLog> log;
  double initial_val_loss = 0.0;
};

inline TrainOutputs cmd_train(const PipelineConfig& cfg, const std::filesystem::path& dataset_path,
                              const std::filesystem::path& out_params, const std::filesystem::path& loss_csv,
                              const std::optional<std::filesystem::path>& resume, std::ostream& log) {
  cfg.validate();
  const Dataset ds = read_dataset(dataset_path);
  const vit::TrainConfig tc = cfg.train_config();
  std::optional<vit::ModelParams> initial;
  std::size_t first_epoch = 1;
  if (resume) {
    initial = vit::import_params(*resume, &cfg.model);
    std::size_t windows = 0;
    for (const ScanRecord* s : ds.scans_in(Split::Train))
      windows += window_count(s->transients_per_subsignal(), tc.include_final_offset);
    const std::size_t per_epoch = tc.samples_per_epoch ? std::min(tc.samples_per_epoch, windows) : windows;
    const std::size_t steps = (per_epoch + tc.batch_size - 1) / tc.batch_size;
    first_epoch = steps ? initial->optimizer_step / steps + 1 : 1;
    log << "resuming from " << resume->string() << " at optimizer step " << initial->optimizer_step << " (epoch "
        << first_epoch << ")\n";
  }
  auto on_epoch = [&](const vit::EpochLog& e) {
    char line[160];
    std::snprintf(line, sizeof line, "epoch %zu: train %.6f  val %.6f  (%zu steps, %.1f s)\n", e.epoch, e.train_loss,
                  e.val_loss, e.steps, e.wall_seconds);
    log << line << std::flush;
  };
  vit::TrainResult r = vit::train(cfg.model, tc, ds, cfg.stft, std::move(initial), on_epoch, first_epoch);
  vit::export_params(out_params, r.params);
  io::write_text(loss_csv, train_log_header(cfg) + "# initial_val_loss: " + csv::num(r.initial_val_loss) + "\n" +
                           vit::loss_log_csv(r.log));
  log << "wrote " << out_params.string() << " and " << loss_csv.string() << "\n";
  return {std::move(r.params), std::move(r.log), r.initial_val_loss};
}

inline std::vector<Reconstruction> cmd_reconstruct(const PipelineConfig& cfg, PipelineKind kind,
                                                   const std::filesystem::path& dataset_path,
                                                   const std::optional<std::filesystem::path>& params_path, int group,
                                                   const std::string& split, const std::filesystem::path& out) {
  cfg.validate();
  if (group < 1 || group > kGroups) fail(ErrorKind::Usage, "--group must be in 1-4, got " + std::to_string(group));
  std::optional<vit::ModelParams> params;
  if (kind == PipelineKind::SpectroVit) {
    if (!params_path) fail(ErrorKind::Usage, "the SpectroVit pipeline needs --params");
    params = vit::import_params(*params_path);
  }
  const Dataset ds = read_dataset(dataset_path);
  const Reconstructor rec(cfg, params ? &*params : nullptr);
  auto recs = reconstruct_scans(rec, kind, ds, select_scans(ds, split), group);
  io::write_text(out, spectra_csv(recs, ds.target_axis(),
                              provenance_header("reconstruct", cfg) + "# pipeline: " + to_string(kind) +
                                  " group: " + std::to_string(group) + " split: " + split + "\n"));
  return recs;
}

struct EvaluateOptions {
  PipelineKind reference = PipelineKind::FullAverage;
  bool svg = false;
  bool overlays = true;
};

inline nlohmann::json cmd_evaluate(const PipelineConfig& cfg, const std::vector<std::filesystem::path>& recon_csvs,
                                   const std::filesystem::path& dataset_path, const std::filesystem::path& out_dir,
                                   const EvaluateOptions& opt = {}) {
  cfg.validate();
  if (recon_csvs.empty()) fail(ErrorKind::Usage, "evaluate needs at least one reconstruction CSV");
  const Dataset ds = read_dataset(dataset_path);
  std::vector<Reconstruction> recs;
  for (const auto& p : recon_csvs) {
    auto part = read_spectra_csv(p, ds.target_axis());
    for (auto& r : part) recs.push_back(std::move(r));
  }
  const auto evals = evaluate_all(recs, ds, cfg);
  const nlohmann::json summary = evaluation_summary(evals, opt.reference, cfg);

  ensure_dir(out_dir);
  const std::string header = provenance_header("evaluate", cfg);
  io::write_text(out_dir / "metrics.csv", metrics_csv(evals, header));
  io::write_text(out_dir / "quantification.csv", quantification_csv(evals, header));
  io::write_text(out_dir / "summary.json", summary.dump(2) + "\n");

  if (opt.overlays) {
    ensure_dir(out_dir / "overlays");
    std::map<std::uint32_t, std::vector<const Reconstruction*>> per_scan;
    for (const auto& r : recs) per_scan[r.scan_id].push_back(&r);
    for (const auto& [id, rows] : per_scan) {
      const ScanRecord& scan = ds.scan_by_id(id);
      std::vector<OverlaySeries> series{{"target", &scan.target}};
      for (const auto* r : rows) series.push_back({to_string(r->pipeline), &r->spectrum});
      char name[32];
      std::snprintf(name, sizeof name, "scan_%04u", id);
      io::write_text(out_dir / "overlays" / (std::string(name) + ".csv"),
                 overlay_csv(series, cfg.windows.mse_lo, cfg.windows.mse_hi));
      if (opt.svg)
        io::write_text(out_dir / "overlays" / (std::string(name) + ".svg"),
                   overlay_svg(series, cfg.windows.mse_lo, cfg.windows.mse_hi, std::string("scan ") + std::to_string(id)));
    }
  }
  return summary;
}

// Groups 1-4 of one pipeline against the all-transient reference: per-scan
// box-plot data and a summary with per-group statistics and paired tests.
inline nlohmann::json cmd_compare_groups(const PipelineConfig& cfg, PipelineKind kind,
                                         const std::filesystem::path& dataset_path,
                                         const std::optional<std::filesystem::path>& params_path,
                                         const std::string& split, const std::filesystem::path& out_dir) {
  cfg.validate();
  if (!uses_group(kind)) fail(ErrorKind::Usage, "compare-groups needs a per-group pipeline (spectrovit or quarter)");
  std::optional<vit::ModelParams> params;
  if (kind == PipelineKind::SpectroVit) {
    if (!params_path) fail(ErrorKind::Usage, "the SpectroVit pipeline needs --params");
    params = vit::import_params(*params_path);
  }
  const Dataset ds = read_dataset(dataset_path);
  const auto scans = select_scans(ds, split);
  const Reconstructor rec(cfg, params ? &*params : nullptr);

  const auto ref_evals = evaluate_all(reconstruct_scans(rec, PipelineKind::FullAverage, ds, scans, 1), ds, cfg);
  std::vector<const ScanEvaluation*> ref_rows;
  for (const auto& e : ref_evals) ref_rows.push_back(&e);

  std::vector<std::vector<ScanEvaluation>> per_group;
  for (int g = 1; g <= kGroups; ++g) per_group.push_back(evaluate_all(reconstruct_scans(rec, kind, ds, scans, g), ds, cfg));

  std::string boxdata = provenance_header("compare-groups", cfg) +
                        "group,scan_id,mse,snr,fwhm_ppm,shape_score,fit_error_pct,gaba_water,glx_water,gaba_cr\n";
  auto add_rows = [&](const std::string& label, const std::vector<ScanEvaluation>& evals) {
    for (const auto& e : evals)
      boxdata += label + "," + std::to_string(e.scan_id) + "," + csv::num(e.mse) + "," + csv::num(e.snr) + "," +
                 csv::num(e.fwhm_ppm) + "," + csv::num(e.shape_score) + "," + csv::num(e.fit_error_pct) + "," +
                 csv::num(e.gaba_water) + "," + csv::num(e.glx_water) + "," + csv::num(e.gaba_cr) + "\n";
  };

  nlohmann::json j;
  j["pipeline"] = to_string(kind);
  j["reference_pipeline"] = to_string(PipelineKind::FullAverage);
  j["groups"] = nlohmann::json::array();
  double best = -std::numeric_limits<double>::infinity(), worst = std::numeric_limits<double>::infinity();
  for (int g = 1; g <= kGroups; ++g) {
    const auto& evals = per_group[static_cast<std::size_t>(g - 1)];
    add_rows(std::to_string(g), evals);
    std::vector<const ScanEvaluation*> rows;
    for (const auto& e : evals) rows.push_back(&e);
    nlohmann::json gj;
    gj["group"] = g;
    gj["transients"] = std::to_string((g - 1) * 2 * kWindowSize + 1) + "-" + std::to_string(g * 2 * kWindowSize);
    gj["metrics"] = summary::metrics(rows);
    gj["box"] = nlohmann::json::object();
    for (const auto& [name, getter] : summary::metric_columns()) gj["box"][name] = summary::box(summary::column(rows, getter));
    gj["quantification"] = summary::quantification(rows, &ref_rows);
    const auto shape = summary::finite(summary::column(rows, &ScanEvaluation::shape_score));
    if (!shape.empty()) {
      best = std::max(best, mean_of(shape));
      worst = std::min(worst, mean_of(shape));
    }
    j["groups"].push_back(gj);
  }
  add_rows("full", ref_evals);
  j["reference"] = {{"metrics", summary::metrics(ref_rows)}, {"quantification", summary::quantification(ref_rows, nullptr)}};
  j["shape_score_spread"] = std::isfinite(best) && std::isfinite(worst) ? nlohmann::json(best - worst) : nlohmann::json(nullptr);
  j["config"] = cfg.to_ini();

  ensure_dir(out_dir);
  io::write_text(out_dir / "groups_boxplot.csv", boxdata);
  io::write_text(out_dir / "groups_summary.json", j.dump(2) + "\n");
  return j;
}

}  // namespace spectrovit
