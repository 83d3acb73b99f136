#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "spectrovit/pipeline.hpp"

using namespace spectrovit;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "spectrovit_test_pipeline";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

PipelineConfig small_config(std::size_t scans = 4) {
  PipelineConfig cfg;
  cfg.n_scans = scans;
  cfg.split = {1.0, 0.0, 1.0};
  return cfg;
}

// Shared noisy dataset of four scans (two train, two test).
const fs::path& shared_dataset() {
  static const fs::path path = [] {
    const fs::path p = scratch("shared.mrsd");
    std::ostringstream log;
    cmd_simulate(small_config(), p, log);
    return p;
  }();
  return path;
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::Usage;
}

boost::property_tree::ptree ini(const std::string& text) {
  boost::property_tree::ptree t;
  std::istringstream in(text);
  boost::property_tree::ini_parser::read_ini(in, t);
  return t;
}

}  // namespace

TEST_CASE("config defaults, INI round trip and validation", "[pipeline][config]") {
  const PipelineConfig def;
  REQUIRE_NOTHROW(def.validate());
  const std::string text = def.to_ini();
  CHECK(PipelineConfig::from_ptree(ini(text)).to_ini() == text);

  const auto custom = PipelineConfig::from_ptree(ini("[general]\nseed = 99\n[train]\nepochs = 3\nlearning_rate = 2e-4\n"
                                                     "[simulation]\nsplit = 84,24,36\n"));
  CHECK(custom.seed == 99);
  CHECK(custom.train.epochs == 3);
  CHECK(custom.train.learning_rate == 2e-4);
  CHECK(custom.train_config().seed == 99);
  CHECK(PipelineConfig::from_ptree(ini(custom.to_ini())).to_ini() == custom.to_ini());

  CHECK(kind_of([] { PipelineConfig::from_ptree(ini("[train]\nepoch = 3\n")); }) == ErrorKind::Usage);
  CHECK(kind_of([] { PipelineConfig::from_ptree(ini("[train]\nepochs = three\n")); }) == ErrorKind::Usage);
  CHECK(kind_of([] { PipelineConfig::from_ptree(ini("[simulation]\nsplit = 1,2\n")); }) == ErrorKind::Usage);
  CHECK(kind_of([] { PipelineConfig::from_ptree(ini("[model]\npatch_size = 30\n")); }) == ErrorKind::Usage);
  CHECK(kind_of([] { PipelineConfig::from_ptree(ini("[general]\npreset = huge\n")); }) == ErrorKind::Usage);
  // A narrow sweep no longer reaches the 10-12 ppm noise window.
  CHECK_THROWS_WITH(PipelineConfig::from_ptree(ini("[axis]\nsweep_width_hz = 1000\n")),
                    Catch::Matchers::ContainsSubstring("does not cover"));
}

TEST_CASE("config file, environment default and presets", "[pipeline][config]") {
  const fs::path p = scratch("cfg.ini");
  {
    std::ofstream out(p);
    out << "[general]\nseed = 11\n[train]\nepochs = 2\n";
  }
  CHECK(PipelineConfig::load(p).seed == 11);
  ::setenv(kConfigEnvVar, p.c_str(), 1);
  CHECK(PipelineConfig::resolve(std::nullopt).train.epochs == 2);
  ::unsetenv(kConfigEnvVar);
  CHECK(PipelineConfig::resolve(std::nullopt).train.epochs == vit::TrainConfig::desk().epochs);
  CHECK(kind_of([] { PipelineConfig::load(scratch("missing.ini")); }) == ErrorKind::Usage);

  // Preset first, then explicit keys.
  const auto paper = PipelineConfig::resolve(p, std::string("paper"));
  CHECK(paper.model == vit::ModelConfig::paper());
  CHECK(paper.train.batch_size == 100);
  CHECK(paper.train.epochs == 2);

  const std::string header = train_log_header(PipelineConfig::resolve(std::nullopt, std::string("paper")));
  CHECK_THAT(header, Catch::Matchers::ContainsSubstring("\"batch_size\":100"));
  CHECK_THAT(header, Catch::Matchers::ContainsSubstring("\"learning_rate\":0.0001"));
  CHECK_THAT(header, Catch::Matchers::ContainsSubstring("\"epochs\":50"));
  CHECK_THAT(header, Catch::Matchers::ContainsSubstring("# preset = paper"));
}

TEST_CASE("simulate is deterministic and validates its arguments", "[pipeline][simulate]") {
  PipelineConfig cfg = small_config(16);
  cfg.seed = 7;
  std::ostringstream log;
  cmd_simulate(cfg, scratch("a.mrsd"), log);
  cmd_simulate(cfg, scratch("b.mrsd"), log);
  CHECK(slurp(scratch("a.mrsd")) == slurp(scratch("b.mrsd")));
  CHECK_THAT(log.str(), Catch::Matchers::ContainsSubstring("16 scans (train 8, validation 0, test 8)"));
  CHECK(read_dataset(scratch("a.mrsd")).scans.size() == 16);
  fs::remove(scratch("a.mrsd"));
  fs::remove(scratch("b.mrsd"));

  cfg.n_scans = 0;
  CHECK(kind_of([&] { cmd_simulate(cfg, scratch("c.mrsd"), log); }) == ErrorKind::Usage);
  cfg.n_scans = 1;
  CHECK(kind_of([&] { cmd_simulate(cfg, "/proc/no/such/dir/x.mrsd", log); }) == ErrorKind::Data);

  const SplitCounts paper = split_counts(144, {84, 24, 36});
  CHECK(paper.train == 84);
  CHECK(paper.validation == 24);
  CHECK(paper.test == 36);
}

TEST_CASE("groups tile the transients without overlap", "[pipeline][groups][property]") {
  const Dataset ds = read_dataset(shared_dataset());
  const ScanRecord& scan = ds.scans.front();
  std::vector<int> owner(scan.transients_per_subsignal(), 0);
  for (int g = 1; g <= kGroups; ++g) {
    const SampleWindow w = group_window(scan, g);
    CHECK(w.size == kWindowSize);
    for (std::size_t i = w.offset; i < w.offset + w.size; ++i) owner[i] += g;
  }
  for (std::size_t i = 0; i < owner.size(); ++i) CHECK(owner[i] == static_cast<int>(i / kWindowSize) + 1);
  CHECK(kind_of([&] { group_window(scan, 0); }) == ErrorKind::Usage);
  CHECK(kind_of([&] { group_window(scan, 5); }) == ErrorKind::Usage);
}

TEST_CASE("quarter average of a noiseless scan reproduces the target", "[pipeline][reconstruct]") {
  PipelineConfig cfg = small_config(1);
  cfg.noise_std = 0.0;
  cfg.corruption = {};
  cfg.split = {0, 0, 1};
  std::ostringstream log;
  const Dataset ds = cmd_simulate(cfg, scratch("clean.mrsd"), log);
  const Reconstructor rec(cfg, nullptr);
  for (int g = 1; g <= kGroups; ++g) {
    const Spectrum s = normalize_max_abs(rec.run(PipelineKind::QuarterAverage, ds.scans[0], g, ds.target_axis()));
    double mse = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) mse += std::pow(s.values[i] - ds.scans[0].target.values[i], 2);
    CHECK(mse / static_cast<double>(s.size()) < 1e-12);
  }
  fs::remove(scratch("clean.mrsd"));
}

TEST_CASE("SpectroVit group 1 is the offset-0 window, rescaled", "[pipeline][reconstruct]") {
  PipelineConfig cfg = small_config();
  cfg.apply_preset("tiny");
  const Dataset ds = read_dataset(shared_dataset());
  const vit::ModelParams params = vit::init_params<float>(cfg.model, 3);
  const Reconstructor rec(cfg, &params);
  const ScanRecord& scan = ds.scans.back();

  std::vector<float> image(kImageSize * kImageSize);
  const SpectrogramBuilder builder(cfg.stft);
  vit::window_image(builder, SampleWindow{&scan, 0, kWindowSize}, CorruptionParams{}, image);
  const std::vector<float> raw = vit::predict(params, image);

  const Spectrum s = rec.run(PipelineKind::SpectroVit, scan, 1, ds.target_axis());
  // s = c * raw for one constant c.
  const double c = s.values[100] / raw[100];
  for (std::size_t i = 0; i < raw.size(); i += 37) CHECK(s.values[i] == Catch::Approx(c * raw[i]).epsilon(1e-12));

  // c is the least-squares scale against the averaged spectrum of the same transients.
  const SampleWindow w = group_window(scan, 1);
  const Spectrum ref = averaged_difference(w.on_window(), w.off_window(), ds.center_ppm, cfg.lb_hz);
  const IndexRange r = ds.target_axis().window(cfg.rescale_lo_ppm, cfg.rescale_hi_ppm);
  double up = 0.0, down = 0.0;
  for (std::size_t i = r.begin; i < r.end; ++i) {
    up += (c * raw[i] - ref.values[i]) * (c * raw[i] - ref.values[i]);
    down += (1.01 * c * raw[i] - ref.values[i]) * (1.01 * c * raw[i] - ref.values[i]);
  }
  CHECK(up < down);

  CHECK(kind_of([&] { Reconstructor(cfg, nullptr).run(PipelineKind::SpectroVit, scan, 1, ds.target_axis()); }) ==
        ErrorKind::Usage);
}

TEST_CASE("reconstruct command: rows, CSV round trip, errors", "[pipeline][reconstruct]") {
  const PipelineConfig cfg = small_config();
  const fs::path out = scratch("q.csv");
  std::set<std::vector<double>> distinct;
  for (int g = 1; g <= kGroups; ++g) {
    const auto recs = cmd_reconstruct(cfg, PipelineKind::QuarterAverage, shared_dataset(), std::nullopt, g, "test", out);
    REQUIRE(recs.size() == 2);
    distinct.insert(recs[0].spectrum.values);
    const auto back = read_spectra_csv(out, recs[0].spectrum.axis);
    REQUIRE(back.size() == recs.size());
    CHECK(back[0].spectrum.values == recs[0].spectrum.values);
    CHECK(back[1].group == g);
    CHECK(back[1].pipeline == PipelineKind::QuarterAverage);
  }
  CHECK(distinct.size() == 4);  // four groups, four different spectra

  const auto full = cmd_reconstruct(cfg, PipelineKind::FullAverage, shared_dataset(), std::nullopt, 3, "all", out);
  CHECK(full.size() == 4);
  CHECK(full[0].group == 0);

  CHECK(kind_of([&] { cmd_reconstruct(cfg, PipelineKind::QuarterAverage, shared_dataset(), std::nullopt, 5, "test", out); }) ==
        ErrorKind::Usage);
  CHECK(kind_of([&] { cmd_reconstruct(cfg, PipelineKind::SpectroVit, shared_dataset(), std::nullopt, 1, "test", out); }) ==
        ErrorKind::Usage);
  CHECK(kind_of([&] { cmd_reconstruct(cfg, PipelineKind::FullAverage, shared_dataset(), std::nullopt, 1, "tset", out); }) ==
        ErrorKind::Usage);

  // Header without the pipeline column.
  std::string text = slurp(out);
  const auto pos = text.find("scan_id,pipeline,group");
  text.replace(pos, 22, "scan_id,method,group");
  {
    std::ofstream f(scratch("bad.csv"));
    f << text;
  }
  CHECK_THROWS_WITH(read_spectra_csv(scratch("bad.csv"), full[0].spectrum.axis),
                    Catch::Matchers::ContainsSubstring("missing pipeline column"));
}

TEST_CASE("evaluating the target against itself", "[pipeline][evaluate]") {
  const PipelineConfig cfg = small_config();
  const fs::path csv = scratch("target.csv");
  cmd_reconstruct(cfg, PipelineKind::Target, shared_dataset(), std::nullopt, 1, "all", csv);
  EvaluateOptions opt;
  opt.reference = PipelineKind::Target;
  const auto j = cmd_evaluate(cfg, {csv}, shared_dataset(), scratch("ev_target"), opt);
  const auto& m = j["metrics"]["Target"];
  CHECK(m["mse"]["mean"].get<double>() == 0.0);
  CHECK(m["shape_score"]["mean"].get<double>() == Catch::Approx(1.0).margin(1e-12));
  const auto& w = j["quantification"]["Target"]["gaba_water"]["vs_reference"];
  CHECK(w["note"] == "identical distributions");
  CHECK(w["wilcoxon_p"].is_null());
  CHECK(w["mape_percent"].get<double>() == 0.0);
}

TEST_CASE("evaluate outputs: five metric columns, files, determinism", "[pipeline][evaluate]") {
  const PipelineConfig cfg = small_config();
  const fs::path q = scratch("eq.csv"), f = scratch("ef.csv");
  cmd_reconstruct(cfg, PipelineKind::QuarterAverage, shared_dataset(), std::nullopt, 1, "all", q);
  cmd_reconstruct(cfg, PipelineKind::FullAverage, shared_dataset(), std::nullopt, 1, "all", f);
  EvaluateOptions opt;
  opt.svg = true;
  const auto j = cmd_evaluate(cfg, {q, f}, shared_dataset(), scratch("ev1"), opt);
  cmd_evaluate(cfg, {q, f}, shared_dataset(), scratch("ev2"), opt);

  for (const char* p : {"QuarterAverage", "FullAverage"}) {
    std::set<std::string> keys;
    for (const auto& [k, v] : j["metrics"][p].items()) keys.insert(k);
    CHECK(keys == std::set<std::string>{"mse", "snr", "fwhm_ppm", "shape_score", "fit_error_pct"});
  }
  // Four scans are too few for the signed-rank test; the note says so.
  CHECK_THAT(j["quantification"]["QuarterAverage"]["gaba_water"]["vs_reference"]["note"].get<std::string>(),
             Catch::Matchers::ContainsSubstring("insufficient pairs"));

  for (const char* file : {"metrics.csv", "quantification.csv", "summary.json", "overlays/scan_0000.csv",
                           "overlays/scan_0000.svg"}) {
    INFO(file);
    REQUIRE(fs::exists(scratch("ev1") / file));
    CHECK(slurp(scratch("ev1") / file) == slurp(scratch("ev2") / file));
  }
  const std::string metrics = slurp(scratch("ev1") / "metrics.csv");
  CHECK_THAT(metrics, Catch::Matchers::ContainsSubstring("scan_id,pipeline,group,mse,snr,fwhm_ppm,shape_score,fit_error_pct\n"));
  CHECK_THAT(metrics, Catch::Matchers::StartsWith("# spectrovit evaluate\n# [general]"));

  // Overlay: ppm column inside 2.5-4 and series normalized to [0, 1].
  std::istringstream overlay(slurp(scratch("ev1") / "overlays/scan_0000.csv"));
  std::string line;
  std::getline(overlay, line);
  CHECK(line == "ppm,target,QuarterAverage,FullAverage");
  while (std::getline(overlay, line)) {
    const auto cells = csv::split(line);
    const double ppm = std::stod(cells[0]);
    CHECK(ppm >= 2.5 - 1e-9);
    CHECK(ppm <= 4.0 + 1e-9);
    for (std::size_t i = 1; i < cells.size(); ++i) {
      CHECK(std::stod(cells[i]) >= 0.0);
      CHECK(std::stod(cells[i]) <= 1.0);
    }
  }

  // Same scan twice for one pipeline is rejected.
  CHECK(kind_of([&] { cmd_evaluate(cfg, {q, q}, shared_dataset(), scratch("ev3")); }) == ErrorKind::Data);
}

TEST_CASE("compare-groups emits per-group box-plot data", "[pipeline][groups]") {
  const PipelineConfig cfg = small_config();
  const auto j = cmd_compare_groups(cfg, PipelineKind::QuarterAverage, shared_dataset(), std::nullopt, "all",
                                    scratch("cg"));
  REQUIRE(j["groups"].size() == 4);
  for (std::size_t g = 0; g < 4; ++g) {
    const auto& box = j["groups"][g]["box"];
    for (const char* m : {"mse", "snr", "fwhm_ppm", "shape_score"}) {
      INFO(m);
      CHECK(box[m]["min"].get<double>() <= box[m]["q1"].get<double>());
      CHECK(box[m]["q1"].get<double>() <= box[m]["median"].get<double>());
      CHECK(box[m]["median"].get<double>() <= box[m]["q3"].get<double>());
      CHECK(box[m]["q3"].get<double>() <= box[m]["max"].get<double>());
    }
  }
  CHECK(j["groups"][0]["transients"] == "1-80");
  CHECK(j["groups"][3]["transients"] == "241-320");
  CHECK(j["shape_score_spread"].get<double>() >= 0.0);

  // 4 groups x 4 scans + 4 reference rows.
  std::istringstream in(slurp(scratch("cg") / "groups_boxplot.csv"));
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#' && !line.starts_with("group,")) ++rows;
  CHECK(rows == 20);
  CHECK(kind_of([&] { cmd_compare_groups(cfg, PipelineKind::FullAverage, shared_dataset(), std::nullopt, "all", scratch("cg")); }) ==
        ErrorKind::Usage);
}

TEST_CASE("box-plot quartiles", "[pipeline][groups]") {
  const auto b = summary::box({4.0, 1.0, 3.0, 2.0, 5.0});
  CHECK(b["min"] == 1.0);
  CHECK(b["q1"] == 2.0);
  CHECK(b["median"] == 3.0);
  CHECK(b["q3"] == 4.0);
  CHECK(b["max"] == 5.0);
  CHECK(summary::box({1.0, 2.0})["median"] == 1.5);
}

TEST_CASE("train command writes parameters and log; resume continues the step count", "[pipeline][train]") {
  PipelineConfig cfg = small_config();
  cfg.apply_preset("tiny");
  std::ostringstream log;
  const auto first = cmd_train(cfg, shared_dataset(), scratch("t1.vitp"), scratch("t1.csv"), std::nullopt, log);
  const std::size_t steps = first.params.optimizer_step;
  CHECK(steps == 2);  // 32 windows per epoch, batch 16
  const auto second = cmd_train(cfg, shared_dataset(), scratch("t2.vitp"), scratch("t2.csv"), scratch("t1.vitp"), log);
  CHECK(second.params.optimizer_step == 2 * steps);
  CHECK(second.log.front().epoch == 2);
  CHECK(vit::import_params(scratch("t2.vitp")).optimizer_step == 2 * steps);

  const std::string csv = slurp(scratch("t1.csv"));
  CHECK_THAT(csv, Catch::Matchers::StartsWith("# spectrovit train\n# model: "));
  CHECK_THAT(csv, Catch::Matchers::ContainsSubstring("epoch,steps,train_loss,val_loss\n1,2,"));

  // Resuming with a different architecture names the mismatch.
  PipelineConfig other = cfg;
  other.model.embed_dim = 32;
  CHECK(kind_of([&] { cmd_train(other, shared_dataset(), scratch("t3.vitp"), scratch("t3.csv"), scratch("t1.vitp"), log); }) ==
        ErrorKind::Data);
}

TEST_CASE("desk preset on 16 scans halves the validation loss", "[pipeline][train][slow]") {
  PipelineConfig cfg = small_config(16);
  cfg.split = {12.0, 0.0, 4.0};
  std::ostringstream log;
  cmd_simulate(cfg, scratch("desk16.mrsd"), log);
  const auto out = cmd_train(cfg, scratch("desk16.mrsd"), scratch("desk16.vitp"), scratch("desk16.csv"), std::nullopt, log);
  REQUIRE(out.log.size() == cfg.train.epochs);
  INFO("initial " << out.initial_val_loss << ", final " << out.log.back().val_loss);
  CHECK(out.log.back().val_loss < 0.5 * out.initial_val_loss);
  fs::remove(scratch("desk16.mrsd"));
}

TEST_CASE("exit codes", "[pipeline][cli]") {
  CHECK(exit_code(ErrorKind::Usage) == 2);
  CHECK(exit_code(ErrorKind::Data) == 3);
  CHECK(exit_code(ErrorKind::Numerical) == 4);
}
