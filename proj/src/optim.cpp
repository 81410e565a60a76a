#include "ulab/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ulab {

ParamVector sgd_step(const ParamVector& theta, const ParamVector& direction, double eta) {
  if (!(eta > 0.0)) throw std::invalid_argument("sgd_step: eta must be positive");
  if (theta.size() != direction.size()) throw std::invalid_argument("sgd_step: length mismatch");
  if (!direction.allFinite()) throw std::domain_error("sgd_step: non-finite update direction");
  return theta + eta * direction;
}

AdamState AdamState::zeros(Eigen::Index n, double beta1, double beta2, double eps) {
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("Adam betas must lie in [0, 1)");
  }
  return {ParamVector::Zero(n), ParamVector::Zero(n), 0, beta1, beta2, eps};
}

AdamState adam_update(const AdamState& state, const ParamVector& grad) {
  if (grad.size() != state.m.size()) throw std::invalid_argument("adam_update: length mismatch");
  AdamState next = state;
  next.m = state.beta1 * state.m + (1.0 - state.beta1) * grad;
  next.v = state.beta2 * state.v + (1.0 - state.beta2) * grad.cwiseAbs2();
  next.step_count = state.step_count + 1;
  return next;
}

ParamVector variance_estimate(const AdamState& state) {
  if (state.step_count < 1) throw std::logic_error("variance_estimate: no statistics yet");
  const double t = static_cast<double>(state.step_count);
  const ParamVector m_hat = state.m / (1.0 - std::pow(state.beta1, t));
  return (second_moment_estimate(state) - m_hat.cwiseAbs2()).cwiseMax(0.0);
}

ParamVector second_moment_estimate(const AdamState& state) {
  if (state.step_count < 1) throw std::logic_error("second_moment_estimate: no statistics yet");
  const double t = static_cast<double>(state.step_count);
  return state.v / (1.0 - std::pow(state.beta2, t));
}

ParamVector per_batch_variance(std::span<const ParamVector> per_example, double batch_size) {
  if (per_example.size() < 2) throw std::invalid_argument("per_batch_variance: need at least 2 examples");
  if (!(batch_size > 0.0)) throw std::invalid_argument("per_batch_variance: batch_size must be positive");
  const auto n = per_example.front().size();
  ParamVector mean = ParamVector::Zero(n);
  for (const auto& g : per_example) {
    if (g.size() != n) throw std::invalid_argument("per_batch_variance: length mismatch");
    mean += g;
  }
  mean /= static_cast<double>(per_example.size());
  ParamVector ss = ParamVector::Zero(n);
  for (const auto& g : per_example) ss += (g - mean).cwiseAbs2();
  return ss / (static_cast<double>(per_example.size() - 1) * batch_size);
}

std::string_view to_string(VarianceProvider p) {
  switch (p) {
    case VarianceProvider::adam: return "adam";
    case VarianceProvider::adam_raw: return "adam_raw";
    case VarianceProvider::per_example: return "per_example";
  }
  return "?";
}

VarianceProvider parse_variance_provider(std::string_view s) {
  if (s == "adam") return VarianceProvider::adam;
  if (s == "adam_raw") return VarianceProvider::adam_raw;
  if (s == "per_example") return VarianceProvider::per_example;
  throw std::invalid_argument("unknown variance provider '" + std::string(s) + "'");
}

}  // namespace ulab
