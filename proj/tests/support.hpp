#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "ulab/nn.hpp"

namespace ulab::testing {

inline LabeledBatch random_batch(int n, int dim, int classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<int> label(0, classes - 1);
  LabeledBatch b;
  b.inputs.resize(n, dim);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < dim; ++j) b.inputs(i, j) = normal(rng);
    b.labels.push_back(label(rng));
  }
  return b;
}

inline ParamVector random_params(const ModelSpec& spec, std::uint64_t seed, double scale = 0.5) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  ParamVector theta(param_count(spec));
  for (auto& v : theta) v = normal(rng);
  return theta;
}

inline ParamVector random_vector(Eigen::Index n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  ParamVector v(n);
  for (auto& x : v) x = normal(rng);
  return v;
}

// Central finite differences of loss_value.
inline ParamVector numeric_grad(const ModelSpec& spec, const ParamVector& theta, const LabeledBatch& b,
                                const Objective& obj, const ParamVector* ref, double h = 1e-5) {
  ParamVector g(theta.size());
  ParamVector t = theta;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    t[i] = theta[i] + h;
    const double up = loss_value(spec, t, b, obj, ref);
    t[i] = theta[i] - h;
    const double down = loss_value(spec, t, b, obj, ref);
    t[i] = theta[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

}  // namespace ulab::testing
