#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ulab/config.hpp"
#include "ulab/data.hpp"
#include "ulab/metrics.hpp"
#include "ulab/unlearn.hpp"

namespace ulab {

inline constexpr const char* kCodeVersion = "ulab 0.1.0";

TrainTest make_dataset(const ExperimentConfig& cfg);
DatasetSplit make_split(const ExperimentConfig& cfg, const TrainTest& data, std::uint64_t seed);

// Plain minibatch SGD on cross-entropy. Throws std::runtime_error when the
// loss becomes non-finite.
ParamVector train_model(const ModelSpec& spec, const ParamVector& init, const LabeledBatch& data,
                        int epochs, double lr, int batch_size, std::uint64_t order_seed);

// theta_0 on the full train set. Initialization and batch order depend only
// on `seed`, so the ideal model for the same seed starts identically.
ParamVector train_initial(const ExperimentConfig& cfg, const LabeledBatch& train, std::uint64_t seed);

// theta* on the retain set with the same initialization and schedule.
ParamVector train_ideal(const ExperimentConfig& cfg, const DatasetSplit& split, std::uint64_t seed);

struct ModelPair {
  ParamVector theta0;
  ParamVector ideal;
  std::filesystem::path theta0_path;
  std::filesystem::path ideal_path;
};

// Trains theta_0 and theta* for `seed`, or loads them from
// <output_dir>/models/<settings hash>/ when already present.
ModelPair prepare_models(const ExperimentConfig& cfg, std::uint64_t seed);

struct RunKey {
  MethodName method;
  MaskKind addon;
  std::uint64_t seed;
};

// Resolved configuration of one run. Everything that influences its output is
// included; output_dir and workers are not.
nlohmann::json make_manifest(const ExperimentConfig& cfg, const RunKey& key);
std::string run_id_for(const nlohmann::json& manifest);

// Inverse of make_manifest: the configuration and run key a manifest
// describes, writing into `output_dir`.
std::pair<ExperimentConfig, RunKey> from_manifest(const nlohmann::json& manifest,
                                                  const std::filesystem::path& output_dir);

struct RunRecord {
  std::string run_id;
  RunKey key;
  nlohmann::json manifest;
  std::vector<MetricsRow> rows;  // as read back from the run's metrics.csv
  std::filesystem::path dir;
  std::filesystem::path theta0_path;
  std::filesystem::path ideal_path;
  std::filesystem::path unlearned_path;
  std::optional<std::string> error;
};

// Executes one run (training theta_0 / theta* if not cached) and writes
// metrics.csv, manifest.json, theta_u.ckpt and agree_prob.csv into
// <output_dir>/runs/<run_id>/. A run whose directory holds a completion marker
// is loaded instead of recomputed.
RunRecord execute_run(const ExperimentConfig& cfg, const RunKey& key);

// All (method, addon, seed) runs, then the aggregate table. Failed runs are
// recorded in RunRecord::error and the sweep continues.
std::vector<RunRecord> run_sweep(const ExperimentConfig& cfg);

// Loads every completed run below <output_dir>/runs.
std::vector<RunRecord> load_records(const std::filesystem::path& output_dir);

struct AggregateCell {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single seed
};

struct AggregateRow {
  std::string method;
  std::string addon;
  int epoch = 0;
  int runs = 0;
  std::map<std::string, AggregateCell> cells;  // keyed by metrics CSV column name
};

inline const std::vector<std::string>& metric_columns() {
  static const std::vector<std::string> cols = {
      "ua", "ra", "ta", "rua", "fid", "mia_correctness", "mia_confidence", "mia_logits",
      "mia_entropy", "mia_mix_entropy", "rte_seconds"};
  return cols;
}

double metric_value(const MetricsReport& r, const std::string& column);

// Mean and std across seeds at the last epoch of each (method, addon).
std::vector<AggregateRow> aggregate(const std::vector<RunRecord>& records);
void write_aggregate(const std::filesystem::path& output_dir, const std::vector<AggregateRow>& rows);
std::string format_aggregate_table(const std::vector<AggregateRow>& rows);

struct HistogramSummary {
  std::string series;
  std::uint64_t seed = 0;
  std::vector<std::int64_t> counts;  // equal-width bins over [0, 1]
  std::int64_t low = 0;              // f < 0.35
  std::int64_t mid = 0;              // 0.35 <= f <= 0.65
  std::int64_t high = 0;             // f > 0.65
  std::int64_t total = 0;
};

std::vector<std::int64_t> histogram(const Eigen::VectorXd& values, int bins);
HistogramSummary summarize_agree_prob(const Eigen::VectorXd& f, int bins);

// Writes fig_<metric>.csv (x, series, mean, std) for every metric column,
// agree_prob_hist.csv and agree_prob_regimes.csv into `dir`.
std::vector<HistogramSummary> emit_figures(const std::vector<RunRecord>& records,
                                           const std::filesystem::path& dir);

}  // namespace ulab
