// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--workdir DIR] [--only 1,2,...] [--keep]
//
// Criteria 8-10 simulate, train and evaluate at desk scale inside DIR.

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "spectrovit/pipeline.hpp"

using namespace spectrovit;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt(const char* f, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 1. DFT against the O(N^2) sum, and Parseval.
Outcome dft_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Xoshiro256ss rng(101);
  double worst = 0.0, worst_parseval = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(64);
    std::vector<cdouble> x(n);
    for (auto& v : x) v = {rng.normal(), rng.normal()};
    const auto got = dft(x, n);
    const auto expected = descending_order(oracle::naive_dft(x));
    worst = std::max(worst, oracle::max_abs_diff(got, expected) / oracle::max_abs(expected));
    double et = 0.0, ef = 0.0;
    for (const auto& v : x) et += std::norm(v);
    for (const auto& v : got) ef += std::norm(v);
    worst_parseval = std::max(worst_parseval, std::abs(ef / static_cast<double>(n) - et) / et);
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-10 && worst_parseval <= 1e-9 && secs < 10.0,
          fmt("max rel err %.2e, Parseval %.2e", worst, worst_parseval) + fmt(", %.2f s", secs)};
}

// 2. STFT frame count and per-frame windowed DFT.
Outcome stft_dimensions() {
  const auto t0 = std::chrono::steady_clock::now();
  Xoshiro256ss rng(102);
  ComplexFid fid{std::vector<cdouble>(2048), 5e-4, 127.7e6, EditLabel::Off};
  for (auto& s : fid.samples) s = {rng.normal(), rng.normal()};
  const StftConfig cfg;  // 256, 10, 446
  const ComplexMatrix m = stft(fid, cfg);
  double worst = 0.0;
  for (std::size_t f = 0; f < m.cols; ++f) {
    std::vector<cdouble> seg(cfg.fft_length, cdouble{});
    for (std::size_t i = 0; i < cfg.window_size; ++i) {
      const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / 256.0);
      seg[i] = fid.samples[f * cfg.hop + i] * w;
    }
    const auto expected = descending_order(oracle::naive_dft(seg));
    double err = 0.0;
    for (std::size_t k = 0; k < cfg.fft_length; ++k) err = std::max(err, std::abs(m(k, f) - expected[k]));
    worst = std::max(worst, err / oracle::max_abs(expected));
  }
  const double secs = seconds_since(t0);
  return {m.cols == 180 && m.rows == 446 && worst <= 1e-10 && secs < 5.0,
          std::to_string(m.cols) + " frames, max rel err " + fmt("%.2e", worst) + fmt(", %.2f s", secs)};
}

// 3. Gradient check on the tiny model, three seeds.
Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string where;
  std::size_t tensors = 0, entries = 0;
  bool pass = true;
  for (std::uint64_t seed : {21u, 22u, 23u}) {
    const auto r = oracle::gradient_check(seed);
    tensors = r.tensors_checked;
    entries += r.entries_checked;
    if (r.worst_ratio > worst) {
      worst = r.worst_ratio;
      where = r.worst_tensor;
    }
    pass = pass && r.worst_ratio <= 1.0;
  }
  const double secs = seconds_since(t0);
  return {pass && secs < 300.0, std::to_string(tensors) + " tensors, " + std::to_string(entries) +
                                    " entries, worst tolerance ratio " + fmt("%.2e", worst) + " (" + where + ")" +
                                    fmt(", %.1f s", secs)};
}

// 4. Loss arithmetic.
Outcome loss_arithmetic() {
  const vit::WeightedMae loss(vit::LossSpec{}, PpmAxis::standard());
  Xoshiro256ss rng(104);
  std::vector<double> y(2048);
  for (auto& v : y) v = std::ldexp(static_cast<double>(static_cast<int>(rng.below(2049)) - 1024), -10);
  const double zero = loss(std::span<const double>(y), std::span<const double>(y));
  std::vector<double> shifted(y);
  for (auto& v : shifted) v += 1.0;
  const double one = loss(std::span<const double>(shifted), std::span<const double>(y));

  const IndexRange w = loss.gaba_window();
  std::vector<double> amp, val;
  for (double a : {0.1, 0.2, 0.4, 0.8, 1.6}) {
    std::vector<double> p(y);
    for (std::size_t i = w.begin; i < w.end; ++i) p[i] += a;
    amp.push_back(a);
    val.push_back(loss(std::span<const double>(p), std::span<const double>(y)));
  }
  const double ma = mean_of(amp), mv = mean_of(val);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < amp.size(); ++i) {
    sxy += (amp[i] - ma) * (val[i] - mv);
    sxx += (amp[i] - ma) * (amp[i] - ma);
    syy += (val[i] - mv) * (val[i] - mv);
  }
  const double r2 = sxy * sxy / (sxx * syy);
  return {zero == 0.0 && one == 1.0 && r2 > 0.999,
          fmt("loss(y,y) = %g, offset loss = %.17g", zero, one) + fmt(", R^2 = %.12f", r2)};
}

// 5. Metric analytics.
Outcome metric_analytics() {
  const auto t0 = std::chrono::steady_clock::now();
  const PpmAxis axis = PpmAxis::standard();
  auto gaussian = [&](double c, double h, double sd) {
    Spectrum s{std::vector<double>(axis.size()), axis};
    for (std::size_t i = 0; i < axis.size(); ++i)
      s.values[i] = h * std::exp(-0.5 * std::pow((axis.ppm(i) - c) / sd, 2));
    return s;
  };
  double g_err = 0.0;
  for (double sd : {0.02, 0.035, 0.05}) g_err = std::max(g_err, std::abs(fwhm_gaba(gaussian(3.0, 1.0, sd)) - 2.3548 * sd));

  double l_err = 0.0;
  for (double t2 : {0.03, 0.05, 0.1}) {
    ComplexFid fid{std::vector<cdouble>(axis.size()), 1.0 / axis.sweep_width_hz(), axis.transmitter_hz(), EditLabel::Off};
    const double f = axis.ppm_to_hz_offset(3.0);
    for (std::size_t i = 0; i < fid.size(); ++i)
      fid.samples[i] = std::polar(std::exp(-fid.time(i) / t2), 2.0 * std::numbers::pi * f * fid.time(i));
    const double expected = 1.0 / (std::numbers::pi * t2) / axis.hz_per_ppm();
    l_err = std::max(l_err, std::abs(fwhm_gaba(fid_to_spectrum(fid, axis)) - expected));
  }

  Xoshiro256ss rng(105);
  const double h = 1.0, sigma = 0.05;
  double acc = 0.0;
  for (int t = 0; t < 100; ++t) {
    Spectrum s = gaussian(3.0, h, 0.035);
    for (auto& v : s.values) v += rng.normal(0.0, sigma);
    acc += snr_gaba(s);
  }
  const double snr_rel = std::abs(acc / 100.0 / (h / (2.0 * sigma)) - 1.0);

  Spectrum x = gaussian(3.0, 1.0, 0.035);
  const Spectrum glx = gaussian(3.75, 0.6, 0.03);
  for (std::size_t i = 0; i < x.values.size(); ++i) x.values[i] += glx.values[i] + rng.normal(0.0, 0.02);
  const double shape_dev = std::abs(shape_score(x, x) - 1.0);

  const double step = axis.step_ppm(), secs = seconds_since(t0);
  const bool pass = g_err <= 2 * step && l_err <= 2 * step && snr_rel < 0.15 && shape_dev <= 1e-12 && secs < 60.0;
  return {pass, fmt("Gaussian FWHM err %.2f steps", g_err / step) + fmt(", Lorentzian %.2f steps", l_err / step) +
                    fmt(", SNR rel dev %.3f", snr_rel) + fmt(", |shape-1| %.1e", shape_dev) + fmt(", %.1f s", secs)};
}

// 6. Sliding-window counts.
std::pair<std::size_t, std::size_t> window_counts() {
  SimulationConfig sim;
  sim.axis = PpmAxis(256, 4.7, 2000.0, 127.7e6);
  const Dataset ds = simulate_dataset(sim, 84, {1, 0, 0}, 106);
  std::size_t total = 0;
  for (const auto& s : ds.scans) total += sliding_window_samples(s).size();
  return {sliding_window_samples(ds.scans.front()).size(), total};
}

Outcome sliding_windows() {
  const auto [per_scan, total] = window_counts();
  return {per_scan == 120 && total == 10080,
          std::to_string(per_scan) + " windows per scan, " + std::to_string(total) + " over 84 scans"};
}

// 7. Wilcoxon exact vs enumeration, exact vs normal.
Outcome wilcoxon() {
  Xoshiro256ss rng(107);
  std::size_t checked = 0, mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> x(8), y(8);
    for (std::size_t i = 0; i < 8; ++i) {
      x[i] = std::round(rng.normal(0.4, 1.0) * 4.0) / 4.0;
      y[i] = std::round(rng.normal() * 4.0) / 4.0;
    }
    std::size_t nonzero = 0;
    for (std::size_t i = 0; i < 8; ++i) nonzero += x[i] != y[i];
    if (nonzero < 5) continue;
    ++checked;
    mismatches += wilcoxon_signed_rank(x, y).p_value != oracle::wilcoxon_enumerate(x, y);
  }
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x(20), y(20);
    for (std::size_t i = 0; i < 20; ++i) {
      x[i] = rng.normal(0.25 * (trial % 4), 1.0);
      y[i] = rng.normal();
    }
    worst = std::max(worst, std::abs(wilcoxon_signed_rank(x, y, WilcoxonMethod::Exact).p_value -
                                     wilcoxon_signed_rank(x, y, WilcoxonMethod::Normal).p_value));
  }
  return {mismatches == 0 && checked > 100 && worst < 0.02,
          std::to_string(checked) + " n=8 cases, " + std::to_string(mismatches) + " mismatches; n=20 max |exact-approx| " +
              fmt("%.4f", worst)};
}

// 8-10. Desk-scale end to end.
struct DeskRun {
  fs::path dir;
  double train_cpu_seconds = 0.0;
  nlohmann::json summary;
  nlohmann::json groups;
};

PipelineConfig desk_config() {
  PipelineConfig cfg;  // desk preset, 80 scans split 64/0/16, moderate corruption
  cfg.n_scans = 80;
  cfg.split = {64, 0, 16};
  cfg.corruption = CorruptionParams{};
  cfg.corruption.amp_base = 3.0;
  cfg.corruption.freq_base_hz = 2.0;
  cfg.corruption.phase_base_deg = 2.0;
  cfg.validate();
  return cfg;
}

DeskRun desk_run(const fs::path& dir) {
  fs::create_directories(dir);
  const PipelineConfig cfg = desk_config();
  DeskRun r;
  r.dir = dir;
  std::ostringstream log;
  cmd_simulate(cfg, dir / "dataset.mrsd", std::cout);
  const std::clock_t c0 = std::clock();
  cmd_train(cfg, dir / "dataset.mrsd", dir / "model.vitp", dir / "loss.csv", std::nullopt, std::cout);
  r.train_cpu_seconds = static_cast<double>(std::clock() - c0) / CLOCKS_PER_SEC;
  cmd_reconstruct(cfg, PipelineKind::SpectroVit, dir / "dataset.mrsd", dir / "model.vitp", 1, "test", dir / "vit_g1.csv");
  cmd_reconstruct(cfg, PipelineKind::QuarterAverage, dir / "dataset.mrsd", std::nullopt, 1, "test", dir / "quarter_g1.csv");
  cmd_reconstruct(cfg, PipelineKind::FullAverage, dir / "dataset.mrsd", std::nullopt, 1, "test", dir / "full.csv");
  EvaluateOptions opt;
  opt.svg = true;
  r.summary = cmd_evaluate(cfg, {dir / "vit_g1.csv", dir / "quarter_g1.csv", dir / "full.csv"}, dir / "dataset.mrsd",
                           dir / "evaluate", opt);
  r.groups = cmd_compare_groups(cfg, PipelineKind::SpectroVit, dir / "dataset.mrsd", dir / "model.vitp", "test",
                                dir / "groups");
  return r;
}

double mean_metric(const nlohmann::json& summary, const char* pipeline, const char* metric) {
  const auto& v = summary["metrics"][pipeline][metric]["mean"];
  return v.is_null() ? NAN : v.get<double>();
}

Outcome end_to_end(const DeskRun& r) {
  const auto& s = r.summary;
  const double vm = mean_metric(s, "SpectroVit", "mse"), qm = mean_metric(s, "QuarterAverage", "mse");
  const double vs = mean_metric(s, "SpectroVit", "shape_score"), qs = mean_metric(s, "QuarterAverage", "shape_score");
  const double vsnr = mean_metric(s, "SpectroVit", "snr"), fsnr = mean_metric(s, "FullAverage", "snr");
  const bool pass = r.train_cpu_seconds <= 1800.0 && vm < qm && vs > qs && vs >= 0.90 && vsnr >= 0.8 * fsnr;
  return {pass, fmt("train %.0f CPU-s; MSE vit %.5f", r.train_cpu_seconds, vm) + fmt(" vs quarter %.5f", qm) +
                    fmt("; shape vit %.4f vs quarter %.4f", vs, qs) + fmt("; SNR vit %.1f vs 0.8*full %.1f", vsnr, 0.8 * fsnr)};
}

Outcome subset_robustness(const DeskRun& r) {
  const auto& g = r.groups;
  const double spread = g["shape_score_spread"].is_null() ? NAN : g["shape_score_spread"].get<double>();
  bool pass = spread < 0.05;
  std::string ps;
  for (const auto& grp : g["groups"]) {
    const auto& p = grp["quantification"]["gaba_water"]["vs_reference"]["wilcoxon_p"];
    const double pv = p.is_null() ? NAN : p.get<double>();
    pass = pass && pv > 0.05;
    ps += (ps.empty() ? "" : ", ") + fmt("%.3f", pv);
  }
  return {pass, fmt("shape spread %.4f", spread) + "; GABA+/Water p vs full per group: " + ps};
}

Outcome determinism(const DeskRun& a, const DeskRun& b) {
  const auto [w1, t1] = window_counts();
  const auto [w2, t2] = window_counts();
  std::vector<std::string> differing;
  for (const char* f : {"dataset.mrsd", "model.vitp", "loss.csv", "vit_g1.csv", "quarter_g1.csv", "full.csv",
                        "evaluate/metrics.csv", "evaluate/quantification.csv", "evaluate/summary.json",
                        "groups/groups_boxplot.csv"})
    if (slurp(a.dir / f) != slurp(b.dir / f) || !fs::exists(a.dir / f)) differing.push_back(f);
  std::string detail = "window counts " + std::string(w1 == w2 && t1 == t2 ? "identical" : "differ") + "; ";
  if (differing.empty()) {
    detail += "dataset, parameters, spectra and metric files byte-identical";
  } else {
    detail += "differing:";
    for (const auto& d : differing) detail += " " + d;
  }
  return {differing.empty() && w1 == w2 && t1 == t2, detail};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path workdir = fs::temp_directory_path() / "spectrovit_acceptance";
  std::set<int> only;
  bool keep = false;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--workdir" && i + 1 < argc) {
      workdir = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string item;
      while (std::getline(ss, item, ',')) only.insert(std::stoi(item));
    } else if (a == "--keep") {
      keep = true;
    } else {
      std::cerr << "usage: acceptance [--workdir DIR] [--only 1,2,...] [--keep]\n";
      return 2;
    }
  }
  auto wanted = [&](int n) { return only.empty() || only.count(n) > 0; };

  int failures = 0;
  auto report = [&](int n, const char* name, const std::function<Outcome()>& fn) {
    if (!wanted(n)) return;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << n << "] " << name << ": " << o.detail << std::endl;
  };

  report(1, "numerics oracles", dft_oracle);
  report(2, "STFT dimensions", stft_dimensions);
  report(3, "gradient check", gradient_check);
  report(4, "loss arithmetic", loss_arithmetic);
  report(5, "metric analytics", metric_analytics);
  report(6, "sliding-window counts", sliding_windows);
  report(7, "Wilcoxon exactness", wilcoxon);

  if (wanted(8) || wanted(9) || wanted(10)) {
    std::optional<DeskRun> first, second;
    std::string error;
    try {
      first = desk_run(workdir / "run1");
      if (wanted(10)) second = desk_run(workdir / "run2");
    } catch (const std::exception& e) {
      error = e.what();
    }
    auto need = [&](const std::optional<DeskRun>& r) {
      if (!r) throw std::runtime_error("desk run failed: " + error);
      return *r;
    };
    report(8, "end-to-end desk reconstruction", [&] { return end_to_end(need(first)); });
    report(9, "subset robustness", [&] { return subset_robustness(need(first)); });
    report(10, "determinism", [&] { return determinism(need(first), need(second)); });
    if (!keep)
      for (const char* run : {"run1", "run2"}) fs::remove(workdir / run / "dataset.mrsd");
  }
  return failures == 0 ? 0 : 1;
}
