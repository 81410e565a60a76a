#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ulab/data.hpp"
#include "ulab/nn.hpp"

namespace ulab {

// Percentage of argmax-correct predictions. Throws on an empty batch.
double accuracy(const ModelSpec& spec, const ParamVector& theta, const LabeledBatch& batch);

// Forget-set accuracy of the unlearned model minus that of the ideal model.
double rua(const ModelSpec& spec, const ParamVector& theta_unlearned, const ParamVector& theta_ideal,
           const LabeledBatch& forget);

// Percentage of forget examples on which both models predict the same class.
double fidelity(const ModelSpec& spec, const ParamVector& theta_unlearned,
                const ParamVector& theta_ideal, const LabeledBatch& forget);

enum class MiaFeature { correctness, confidence, logits, entropy, mix_entropy };

inline constexpr std::array<MiaFeature, 5> kAllMiaFeatures = {
    MiaFeature::correctness, MiaFeature::confidence, MiaFeature::logits, MiaFeature::entropy,
    MiaFeature::mix_entropy};

std::string_view to_string(MiaFeature f);
MiaFeature parse_mia_feature(std::string_view s);

// One row per example.
//   correctness  1 if the argmax equals the label, else 0
//   confidence   softmax probability of the true label
//   logits       the raw logit vector
//   entropy      Shannon entropy of the softmax (nats)
//   mix_entropy  -(1 - p_y) ln p_y - sum_{i != y} p_i ln(1 - p_i)
Matrix mia_features(const ModelSpec& spec, const ParamVector& theta, const LabeledBatch& batch,
                    MiaFeature kind);

struct MiaOutcome {
  double score = 0.5;           // mean predicted membership over the targets
  double train_accuracy = 0.5;  // accuracy of the rule on its own training pool
  bool degenerate = false;      // all features constant; constant-1/2 rule used
};

// Trains a linear max-margin rule separating members (+1) from non-members
// (-1) on standardized features and reports its mean membership decision
// over `targets`. The larger pool is subsampled (seeded) to balance classes.
MiaOutcome mia_attack_on_features(const Matrix& members, const Matrix& nonmembers,
                                  const Matrix& targets, std::uint64_t seed);

// Population attack: members are drawn from retain, non-members from test,
// targets are the forget set. Lower is better.
double mia_attack(const ModelSpec& spec, const ParamVector& theta, const DatasetSplit& split,
                  MiaFeature kind, std::uint64_t seed);

struct MetricsReport {
  int epoch = 0;
  double ua = 0.0;
  double ra = 0.0;
  double ta = 0.0;
  double rua = 0.0;
  double fid = 0.0;
  std::map<std::string, double> mia;
  double rte_seconds = 0.0;
};

struct ReportInputs {
  const ModelSpec* spec = nullptr;
  const ParamVector* theta = nullptr;        // model under evaluation
  const ParamVector* theta_ideal = nullptr;  // retrained-from-scratch reference
  const DatasetSplit* split = nullptr;
  int epoch = 0;
  double rte_seconds = 0.0;
  std::uint64_t seed = 0;  // drives the attack subsampling
};

MetricsReport report(const ReportInputs& in);

struct MetricsRow {
  std::string run_id;
  std::uint64_t seed = 0;
  std::string method;
  std::string addon;
  MetricsReport report;
};

// Column order: run_id, seed, method, addon, epoch, ua, ra, ta, rua, fid,
// mia_correctness, mia_confidence, mia_logits, mia_entropy, mia_mix_entropy,
// rte_seconds. Reals carry 12 significant digits.
std::string metrics_csv_header();
std::string metrics_csv_line(const MetricsRow& row);
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

}  // namespace ulab
