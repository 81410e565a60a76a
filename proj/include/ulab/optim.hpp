#pragma once

#include <span>

#include "ulab/nn.hpp"

namespace ulab {

// theta + eta * direction. Throws on a non-finite direction or eta <= 0.
ParamVector sgd_step(const ParamVector& theta, const ParamVector& direction, double eta);

// Exponential moving averages of the gradient and its square. Used here only
// as a per-component noise tracker; the unlearning loop itself steps with SGD.
struct AdamState {
  ParamVector m;
  ParamVector v;
  long step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState zeros(Eigen::Index n, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
};

AdamState adam_update(const AdamState& state, const ParamVector& grad);

// Per-component variance of the tracked gradient stream,
// max(0, v_hat - m_hat^2) with bias-corrected moments.
// Throws std::logic_error before the first update.
ParamVector variance_estimate(const AdamState& state);

// Bias-corrected uncentered second moment v_hat, for callers that take the
// raw Adam statistic as the noise scale.
ParamVector second_moment_estimate(const AdamState& state);

// Variance of the batch-mean gradient: the per-component sample variance
// (n - 1 denominator) across examples divided by batch_size.
ParamVector per_batch_variance(std::span<const ParamVector> per_example, double batch_size);

// adam: v_hat - m_hat^2; adam_raw (default): v_hat; per_example:
// per_batch_variance.
enum class VarianceProvider { adam, adam_raw, per_example };

std::string_view to_string(VarianceProvider p);
VarianceProvider parse_variance_provider(std::string_view s);

}  // namespace ulab
