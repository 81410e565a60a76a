#pragma once

// Fully connected classifier over a flat parameter vector, with exact
// analytic gradients for the losses the unlearning methods are built from.
//
// Flattening order is fixed: layer-major, the weight matrix of a layer
// (out x in, row-major) followed by its bias (out). Masks and checkpoints
// index into this order, so it must not change.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace ulab {

using ParamVector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Activation { relu, tanh };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view s);

struct ModelSpec {
  int input_dim = 0;
  std::vector<int> hidden_dims;
  int num_classes = 2;
  Activation activation = Activation::relu;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// Throws std::invalid_argument when a dimension is non-positive or
// num_classes < 2.
void validate(const ModelSpec& spec);

struct LayerShape {
  int out = 0;
  int in = 0;
  std::int64_t offset = 0;  // start of the weight block in the flat vector

  std::int64_t weight_count() const { return std::int64_t{out} * in; }
  std::int64_t bias_offset() const { return offset + weight_count(); }
  std::int64_t count() const { return weight_count() + out; }
};

std::vector<LayerShape> layout(const ModelSpec& spec);
std::int64_t param_count(const ModelSpec& spec);

struct LayerParams {
  RowMatrix weight;  // out x in
  Eigen::VectorXd bias;
};

std::vector<LayerParams> unflatten(const ModelSpec& spec, const ParamVector& theta);
ParamVector flatten(const ModelSpec& spec, std::span<const LayerParams> layers);

// Glorot-uniform weights, zero biases.
ParamVector init_params(const ModelSpec& spec, std::uint64_t seed);

struct LabeledBatch {
  Matrix inputs;            // B x input_dim
  std::vector<int> labels;  // length B

  Eigen::Index size() const { return inputs.rows(); }
  bool empty() const { return inputs.rows() == 0; }
};

// Rows of `source` selected by `indices`, in that order.
LabeledBatch select(const LabeledBatch& source, std::span<const std::int64_t> indices);

Matrix forward(const ModelSpec& spec, const ParamVector& theta, const Matrix& inputs);

Matrix softmax(const Matrix& logits);
Matrix log_softmax(const Matrix& logits);

double cross_entropy(const Matrix& logits, std::span<const int> labels);

// Mean over rows of KL(softmax(ref) || softmax(cur)).
double kl_divergence(const Matrix& logits_ref, const Matrix& logits_cur);

enum class LossKind {
  cross_entropy,
  negative_cross_entropy,
  kl_to_reference,
  negative_kl_to_reference,
  l1_param_norm,
};

std::string_view to_string(LossKind k);
LossKind parse_loss_kind(std::string_view s);
bool needs_reference(LossKind k);

struct LossTerm {
  LossKind kind = LossKind::cross_entropy;
  double weight = 1.0;
};

// Weighted sum of loss terms, each averaged over the batch.
using Objective = std::vector<LossTerm>;

bool needs_reference(const Objective& obj);

double loss_value(const ModelSpec& spec, const ParamVector& theta, const LabeledBatch& batch,
                  const Objective& obj, const ParamVector* reference = nullptr);

ParamVector grad(const ModelSpec& spec, const ParamVector& theta, const LabeledBatch& batch,
                 const Objective& obj, const ParamVector* reference = nullptr);

inline ParamVector grad(const ModelSpec& spec, const ParamVector& theta,
                        const LabeledBatch& batch, LossKind kind,
                        const ParamVector* reference = nullptr) {
  return grad(spec, theta, batch, Objective{{kind, 1.0}}, reference);
}

// Gradient of each example's own loss. Their mean equals grad() on the batch.
std::vector<ParamVector> per_example_grads(const ModelSpec& spec, const ParamVector& theta,
                                           const LabeledBatch& batch, const Objective& obj,
                                           const ParamVector* reference = nullptr);

// Argmax per row, ties broken by the lowest class index.
std::vector<int> predict(const ModelSpec& spec, const ParamVector& theta, const Matrix& inputs);

// Plain-text checkpoint. Values are written as hexadecimal floats so the
// round trip is bit-exact.
struct Checkpoint {
  ModelSpec spec;
  ParamVector theta;
};

void save_checkpoint(const std::filesystem::path& path, const ModelSpec& spec,
                     const ParamVector& theta);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ulab
