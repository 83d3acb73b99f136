// spectrovit: simulate, train, reconstruct, evaluate, compare-groups.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spectrovit/pipeline.hpp"

namespace fs = std::filesystem;
using namespace spectrovit;

namespace {

struct Common {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
};

PipelineConfig load_config(const Common& c) {
  std::optional<fs::path> path;
  if (!c.config.empty()) path = c.config;
  std::optional<std::string> preset;
  if (!c.preset.empty()) preset = c.preset;
  PipelineConfig cfg = PipelineConfig::resolve(path, preset);
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

std::optional<fs::path> opt_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return fs::path(s);
}

fs::path or_default(const std::string& s, const fs::path& fallback) { return s.empty() ? fallback : fs::path(s); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GABA-edited difference spectra from 80 transients: simulation, ViT training, evaluation"};
  app.require_subcommand(1);

  Common common;
  app.add_option("--config", common.config,
                 std::string("INI config file (default: $") + kConfigEnvVar + ", else built-in defaults)");
  app.add_option("--seed", common.seed, "Override general.seed");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Write a synthetic MRSD1 dataset");
  std::optional<std::size_t> scans;
  std::string split_arg, sim_out;
  sim->add_option("--scans", scans, "Number of scans");
  sim->add_option("--split", split_arg, "Train,validation,test weights, e.g. 64,0,16");
  sim->add_option("--out", sim_out, "Dataset path (default paths.dataset)");

  // train
  auto* tr = app.add_subcommand("train", "Train the ViT on a dataset");
  std::string tr_data, tr_out, tr_log, tr_resume;
  tr->add_option("--preset", common.preset, "desk, paper or tiny")->check(CLI::IsMember({"desk", "paper", "tiny"}));
  tr->add_option("--dataset", tr_data, "Dataset path (default paths.dataset)");
  tr->add_option("--out", tr_out, "Parameter file (default paths.params)");
  tr->add_option("--log", tr_log, "Loss CSV (default <output_dir>/loss.csv)");
  tr->add_option("--resume", tr_resume, "Continue from a parameter file");

  // reconstruct
  auto* rc = app.add_subcommand("reconstruct", "Reconstruct spectra with one pipeline");
  std::string rc_pipeline = "spectrovit", rc_data, rc_params, rc_out, rc_split = "test";
  int rc_group = 1;
  rc->add_option("--pipeline", rc_pipeline, "spectrovit, quarter, full or target");
  rc->add_option("--dataset", rc_data, "Dataset path (default paths.dataset)");
  rc->add_option("--params", rc_params, "Parameter file (default paths.params, spectrovit only)");
  rc->add_option("--group", rc_group, "Transient group 1-4");
  rc->add_option("--split", rc_split, "train, validation, test or all");
  rc->add_option("--out", rc_out, "Spectra CSV")->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Metrics, quantification and plot data for reconstructions");
  std::vector<std::string> ev_inputs;
  std::string ev_data, ev_out, ev_ref = "full";
  bool ev_svg = false;
  ev->add_option("inputs", ev_inputs, "Spectra CSVs")->required();
  ev->add_option("--dataset", ev_data, "Dataset path (default paths.dataset)");
  ev->add_option("--out", ev_out, "Output directory (default paths.output_dir)");
  ev->add_option("--reference", ev_ref, "Reference pipeline for paired tests");
  ev->add_flag("--svg", ev_svg, "Also write SVG overlays");

  // compare-groups
  auto* cg = app.add_subcommand("compare-groups", "Groups 1-4 against the all-transient reference");
  std::string cg_pipeline = "spectrovit", cg_data, cg_params, cg_out, cg_split = "test";
  cg->add_option("--pipeline", cg_pipeline, "spectrovit or quarter");
  cg->add_option("--dataset", cg_data, "Dataset path (default paths.dataset)");
  cg->add_option("--params", cg_params, "Parameter file (default paths.params)");
  cg->add_option("--split", cg_split, "train, validation, test or all");
  cg->add_option("--out", cg_out, "Output directory (default paths.output_dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_code(ErrorKind::Usage);
  }

  try {
    PipelineConfig cfg = load_config(common);
    if (*sim) {
      if (scans) cfg.n_scans = *scans;
      if (!split_arg.empty()) cfg.split = cfgio::parse_list<3>("--split", split_arg);
      if (cfg.n_scans == 0) fail(ErrorKind::Usage, "--scans must be >= 1");
      cmd_simulate(cfg, or_default(sim_out, cfg.dataset_path), std::cout);
    } else if (*tr) {
      const fs::path log = or_default(tr_log, cfg.output_dir / "loss.csv");
      if (log.has_parent_path()) ensure_dir(log.parent_path());
      cmd_train(cfg, or_default(tr_data, cfg.dataset_path), or_default(tr_out, cfg.params_path), log,
                opt_path(tr_resume), std::cout);
    } else if (*rc) {
      const PipelineKind kind = parse_pipeline(rc_pipeline);
      std::optional<fs::path> params;
      if (kind == PipelineKind::SpectroVit) params = or_default(rc_params, cfg.params_path);
      const auto recs = cmd_reconstruct(cfg, kind, or_default(rc_data, cfg.dataset_path), params, rc_group, rc_split,
                                        rc_out);
      std::cout << "wrote " << recs.size() << " spectra to " << rc_out << "\n";
    } else if (*ev) {
      std::vector<fs::path> inputs(ev_inputs.begin(), ev_inputs.end());
      EvaluateOptions opt;
      opt.reference = parse_pipeline(ev_ref);
      opt.svg = ev_svg;
      const fs::path out = or_default(ev_out, cfg.output_dir);
      const auto summary = cmd_evaluate(cfg, inputs, or_default(ev_data, cfg.dataset_path), out, opt);
      std::cout << summary["metrics"].dump(2) << "\nwrote " << out.string() << "\n";
    } else if (*cg) {
      const PipelineKind kind = parse_pipeline(cg_pipeline);
      std::optional<fs::path> params;
      if (kind == PipelineKind::SpectroVit) params = or_default(cg_params, cfg.params_path);
      const fs::path out = or_default(cg_out, cfg.output_dir);
      const auto j = cmd_compare_groups(cfg, kind, or_default(cg_data, cfg.dataset_path), params, cg_split, out);
      std::cout << "shape score spread across groups: " << j["shape_score_spread"].dump() << "\nwrote "
                << out.string() << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(ErrorKind::Data);
  }
  return 0;
}
