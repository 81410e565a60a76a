// ulab: command-line driver for training, unlearning runs, sweeps and reports.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "ulab/config.hpp"
#include "ulab/harness.hpp"

namespace {

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  int workers = 0;
};

ulab::ExperimentConfig resolve(const GlobalOptions& g) {
  ulab::ExperimentConfig cfg = g.config.empty() ? ulab::ExperimentConfig{} : ulab::load_config(g.config);
  if (g.seed) cfg.seeds = {*g.seed};
  if (!g.out.empty()) cfg.output_dir = g.out;
  if (g.workers > 0) cfg.workers = g.workers;
  ulab::validate(cfg);
  return cfg;
}

void print_table(const ulab::ExperimentConfig& cfg) {
  std::ifstream in(cfg.output_dir / "aggregate.txt");
  std::cout << in.rdbuf();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ulab: gradient-mask unlearning experiments on synthetic data"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config, "configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "restrict to a single seed");
  app.add_option("--out", g.out, "output directory (overrides run.output_dir)");
  app.add_option("--workers", g.workers, "concurrent runs (overrides run.workers)");
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "only print warnings and errors");

  auto* train = app.add_subcommand("train", "train theta_0 and the retain-only ideal model");
  train->fallthrough();

  std::string method_name = "SRL";
  std::string addon_name = "none";
  auto* unlearn = app.add_subcommand("unlearn", "execute one unlearning run");
  unlearn->fallthrough();
  unlearn->add_option("--method", method_name, "FT, GA, NGPlus, SRL, L1Sparse or SCRUB");
  unlearn->add_option("--addon", addon_name, "none, salun, and, prob, bernoulli or focus");

  auto* sweep = app.add_subcommand("sweep", "all methods x addons x seeds, then the aggregate table");
  sweep->fallthrough();

  auto* report = app.add_subcommand("report", "recompute the aggregate table from completed runs");
  report->fallthrough();

  std::string figures_dir;
  auto* figures = app.add_subcommand("figures", "write plot-data CSVs from completed runs");
  figures->fallthrough();
  figures->add_option("--dir", figures_dir, "destination (default <out>/figures)");

  std::string manifest_path;
  auto* rerun = app.add_subcommand("rerun", "re-execute the run described by a manifest.json");
  rerun->fallthrough();
  rerun->add_option("--manifest", manifest_path, "manifest of a previous run")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);
  if (quiet) spdlog::set_level(spdlog::level::warn);

  try {
    if (*rerun) {
      std::ifstream in(manifest_path);
      const auto manifest = nlohmann::json::parse(in);
      const auto out = g.out.empty() ? std::filesystem::path("ulab-rerun") : std::filesystem::path(g.out);
      const auto [cfg, key] = ulab::from_manifest(manifest, out);
      const auto rec = ulab::execute_run(cfg, key);
      std::cout << rec.dir.string() << '\n';
      return 0;
    }
    const auto cfg = resolve(g);
    if (*train) {
      for (auto seed : cfg.seeds) {
        const auto models = ulab::prepare_models(cfg, seed);
        std::cout << "seed " << seed << ": " << models.theta0_path.string() << ' '
                  << models.ideal_path.string() << '\n';
      }
    } else if (*unlearn) {
      const auto method = ulab::parse_method(method_name);
      const auto addon = ulab::parse_mask_kind(addon_name);
      int failures = 0;
      for (auto seed : cfg.seeds) {
        const auto rec = ulab::execute_run(cfg, {method, addon, seed});
        if (rec.error) ++failures;
        std::cout << rec.dir.string() << '\n';
      }
      return failures == 0 ? 0 : 1;
    } else if (*sweep) {
      const auto records = ulab::run_sweep(cfg);
      print_table(cfg);
      int failures = 0;
      for (const auto& r : records) failures += r.error ? 1 : 0;
      if (failures > 0) {
        std::cerr << failures << " of " << records.size() << " runs failed\n";
        return 1;
      }
    } else if (*report) {
      const auto records = ulab::load_records(cfg.output_dir);
      if (records.empty()) throw std::runtime_error("no completed runs below " + cfg.output_dir.string());
      ulab::write_aggregate(cfg.output_dir, ulab::aggregate(records));
      print_table(cfg);
    } else if (*figures) {
      const auto records = ulab::load_records(cfg.output_dir);
      if (records.empty()) throw std::runtime_error("no completed runs below " + cfg.output_dir.string());
      const auto dir = figures_dir.empty() ? cfg.output_dir / "figures" : std::filesystem::path(figures_dir);
      for (const auto& h : ulab::emit_figures(records, dir)) {
        std::cout << h.series << " seed " << h.seed << ": f<0.35 " << h.low << ", 0.35<=f<=0.65 "
                  << h.mid << ", f>0.65 " << h.high << " of " << h.total << '\n';
      }
      std::cout << "wrote " << dir.string() << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "ulab: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
