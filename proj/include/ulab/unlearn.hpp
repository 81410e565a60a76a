#pragma once

// First-order unlearning as constrained minimisation:
//
//     min U(theta)   s.t.  C(theta) <= 0
//     U(theta) = E_{D_U} L_U(theta)
//     C(theta) = E_{D_C} [L_C(theta) - L_C(theta_0)]
//
// Each supported method is one choice of (L_U, D_U, L_C, D_C). Every step
// samples a batch from D_U and one from D_C, computes both batch gradients,
// tracks their per-component noise, and moves along
// -weights (.) agg(g_u, g_c) where the weights come from the add-on.

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "ulab/data.hpp"
#include "ulab/masks.hpp"
#include "ulab/metrics.hpp"
#include "ulab/nn.hpp"
#include "ulab/optim.hpp"

namespace ulab {

enum class MethodName { FT, GA, NGPlus, SRL, L1Sparse, SCRUB };

std::string_view to_string(MethodName m);
MethodName parse_method(std::string_view s);

enum class DataRole { retain, forget, relabeled_train };

std::string_view to_string(DataRole r);

struct UnlearnMethodSpec {
  MethodName name = MethodName::FT;
  Objective loss_u;
  DataRole dataset_u = DataRole::retain;
  std::optional<Objective> loss_c;  // empty for FT and GA (null constraint)
  std::optional<DataRole> dataset_c;
  double gamma = 0.0;               // SCRUB weight of the cross-entropy term
  ParamVector reference_theta;      // theta_0, used by the KL terms

  bool has_constraint() const { return loss_c.has_value(); }
};

// FT      L_U = CE on retain, no constraint
// GA      L_U = -CE on forget, no constraint
// NGPlus  L_U = -CE on forget, L_C = CE on retain
// SRL     L_U = CE on train with forget labels randomized, L_C = CE on retain
// L1Sparse L_U = |theta|_1 (paced by retain batches), L_C = CE on retain
// SCRUB   L_U = -KL(theta_0 || theta) on forget,
//         L_C = KL(theta_0 || theta) + gamma * CE on retain
UnlearnMethodSpec make_method(MethodName name, const ParamVector& theta0, double gamma = 1.0);

struct AddOnSpec {
  MaskKind kind = MaskKind::none;
  double p = 0.3;  // certainty level, prob only
  AggSpec agg;
  VarianceProvider variance_provider = VarianceProvider::adam_raw;
};

// Throws std::invalid_argument when the add-on needs a constraint gradient
// the method does not have, or when its parameters are out of range.
void validate(const UnlearnMethodSpec& method, const AddOnSpec& addon);

// Mean L_C difference against theta_0 over `batch_c`; exactly 0 at theta_0.
// Throws std::logic_error for methods without a constraint.
double constraint_value(const ModelSpec& spec, const UnlearnMethodSpec& method,
                        const ParamVector& theta, const ParamVector& theta0,
                        const LabeledBatch& batch_c);

struct UnlearnRunState {
  ParamVector theta;
  AdamState adam_u;
  AdamState adam_c;
  int epoch = 0;
  long step = 0;                        // global batch counter
  std::uint64_t mask_seed = 0;          // Bernoulli draws use derive_seed(mask_seed, step)
  double rte_seconds = 0.0;
  std::optional<Eigen::VectorXd> salun_weights;  // fixed for the whole run
  ParamVector last_sigma2_u;            // reused by the per-example provider on 1-example batches
  ParamVector last_sigma2_c;

  static UnlearnRunState start(const ParamVector& theta0, std::uint64_t mask_seed);
};

struct StepDiagnostics {
  double grad_inner = 0.0;          // <g_u, g_c> of the batch gradients
  Eigen::VectorXd agree_prob;       // empty when the method has no constraint
  std::int64_t support = 0;         // nonzero weights of the applied mask
  ParamVector direction;
};

UnlearnRunState unlearn_step(const UnlearnRunState& state, const ModelSpec& spec,
                             const UnlearnMethodSpec& method, const AddOnSpec& addon,
                             const LabeledBatch& batch_u, const LabeledBatch& batch_c, double eta,
                             double eps, StepDiagnostics* diag = nullptr);

// SalUn saliency mask from the gradient-ascent direction over the full forget set.
Eigen::VectorXd salun_weights(const ModelSpec& spec, const ParamVector& theta,
                              const LabeledBatch& forget);

// Training set with the forget examples' labels resampled among the other classes.
LabeledBatch relabeled_train(const DatasetSplit& split, int num_classes, std::uint64_t seed);

struct RunOptions {
  int epochs = 10;
  double eta = 1e-4;
  double eps = 1e-8;
  int batch_size = 32;
  std::uint64_t seed = 0;
  bool evaluate = true;           // compute a MetricsReport at every epoch boundary
  bool capture_agree_prob = true; // keep the agree-prob vector of one mid-run step
};

struct RunResult {
  ParamVector theta;
  std::vector<MetricsReport> reports;  // epoch 0 (before unlearning) through `epochs`
  std::vector<double> grad_inner;      // per step
  Eigen::VectorXd agree_prob_snapshot; // first step of epoch ceil(epochs / 2)
};

RunResult run_unlearning(const ModelSpec& spec, const ParamVector& theta0,
                         const ParamVector& theta_ideal, const UnlearnMethodSpec& method,
                         const AddOnSpec& addon, const DatasetSplit& split,
                         const RunOptions& options);

}  // namespace ulab
