#include "ulab/nn.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace ulab {

namespace {

struct ForwardCache {
  std::vector<Matrix> pre;   // pre-activation of every layer
  std::vector<Matrix> acts;  // acts[0] = inputs, acts[l+1] = activation(pre[l]) for hidden layers
};

void check_theta(const ModelSpec& spec, const ParamVector& theta) {
  if (theta.size() != param_count(spec)) {
    throw std::invalid_argument("parameter vector has length " + std::to_string(theta.size()) +
                                ", model expects " + std::to_string(param_count(spec)));
  }
}

void check_inputs(const ModelSpec& spec, const Matrix& inputs) {
  if (inputs.cols() != spec.input_dim) {
    throw std::invalid_argument("input width " + std::to_string(inputs.cols()) +
                                " does not match input_dim " + std::to_string(spec.input_dim));
  }
}

void check_labels(const ModelSpec& spec, const LabeledBatch& batch) {
  if (static_cast<Eigen::Index>(batch.labels.size()) != batch.inputs.rows()) {
    throw std::invalid_argument("label count does not match batch size");
  }
  for (int y : batch.labels) {
    if (y < 0 || y >= spec.num_classes) {
      throw std::invalid_argument("label " + std::to_string(y) + " out of range");
    }
  }
}

Eigen::Map<const RowMatrix> weight_view(const ParamVector& theta, const LayerShape& s) {
  return {theta.data() + s.offset, s.out, s.in};
}

Eigen::Map<const Eigen::VectorXd> bias_view(const ParamVector& theta, const LayerShape& s) {
  return {theta.data() + s.bias_offset(), s.out};
}

Matrix apply_activation(Activation a, const Matrix& z) {
  if (a == Activation::relu) return z.cwiseMax(0.0);
  return z.array().tanh().matrix();
}

ForwardCache forward_cached(const ModelSpec& spec, const ParamVector& theta, const Matrix& inputs) {
  const auto shapes = layout(spec);
  ForwardCache cache;
  cache.acts.reserve(shapes.size());
  cache.pre.reserve(shapes.size());
  cache.acts.push_back(inputs);
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const auto w = weight_view(theta, shapes[l]);
    const auto b = bias_view(theta, shapes[l]);
    Matrix z = cache.acts.back() * w.transpose();
    z.rowwise() += b.transpose();
    if (l + 1 < shapes.size()) cache.acts.push_back(apply_activation(spec.activation, z));
    cache.pre.push_back(std::move(z));
  }
  return cache;
}

// Backpropagates d(loss)/d(logits) through the cached forward pass.
ParamVector backprop(const ModelSpec& spec, const ParamVector& theta, const ForwardCache& cache,
                     Matrix dlogits) {
  const auto shapes = layout(spec);
  ParamVector g = ParamVector::Zero(theta.size());
  Matrix delta = std::move(dlogits);
  for (std::size_t k = shapes.size(); k-- > 0;) {
    const auto& s = shapes[k];
    Eigen::Map<RowMatrix> gw(g.data() + s.offset, s.out, s.in);
    gw.noalias() = delta.transpose() * cache.acts[k];
    g.segment(s.bias_offset(), s.out) = delta.colwise().sum().transpose();
    if (k == 0) break;
    Matrix back = delta * weight_view(theta, s);
    if (spec.activation == Activation::relu) {
      back.array() *= (cache.pre[k - 1].array() > 0.0).cast<double>();
    } else {
      back.array() *= 1.0 - cache.acts[k].array().square();
    }
    delta = std::move(back);
  }
  return g;
}

ParamVector l1_subgradient(const ParamVector& theta) {
  return theta.unaryExpr([](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

void check_reference(const ModelSpec& spec, const Objective& obj, const ParamVector* reference) {
  if (!needs_reference(obj)) return;
  if (reference == nullptr) throw std::invalid_argument("KL loss requires a reference parameter vector");
  check_theta(spec, *reference);
}

// d(objective)/d(logits) where each term is averaged over `scale` examples.
Matrix logit_gradient(const Matrix& logits, std::span<const int> labels,
                      const Objective& obj, const Matrix* ref_logits, double scale) {
  Matrix d = Matrix::Zero(logits.rows(), logits.cols());
  const Matrix p = softmax(logits);
  for (const auto& term : obj) {
    switch (term.kind) {
      case LossKind::cross_entropy:
      case LossKind::negative_cross_entropy: {
        const double s = term.kind == LossKind::cross_entropy ? term.weight : -term.weight;
        Matrix t = p;
        for (Eigen::Index i = 0; i < t.rows(); ++i) t(i, labels[i]) -= 1.0;
        d += (s / scale) * t;
        break;
      }
      case LossKind::kl_to_reference:
      case LossKind::negative_kl_to_reference: {
        const double s = term.kind == LossKind::kl_to_reference ? term.weight : -term.weight;
        d += (s / scale) * (p - softmax(*ref_logits));
        break;
      }
      case LossKind::l1_param_norm:
        break;
    }
  }
  return d;
}

void add_parameter_terms(const Objective& obj, const ParamVector& theta, ParamVector& g) {
  for (const auto& term : obj) {
    if (term.kind == LossKind::l1_param_norm) g += term.weight * l1_subgradient(theta);
  }
}

bool has_data_terms(const Objective& obj) {
  for (const auto& term : obj) {
    if (term.kind != LossKind::l1_param_norm) return true;
  }
  return false;
}

}  // namespace

std::string_view to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw std::invalid_argument("unknown activation '" + std::string(s) + "'");
}

void validate(const ModelSpec& spec) {
  if (spec.input_dim <= 0) throw std::invalid_argument("input_dim must be positive");
  if (spec.num_classes < 2) throw std::invalid_argument("num_classes must be at least 2");
  for (int h : spec.hidden_dims) {
    if (h <= 0) throw std::invalid_argument("hidden layer widths must be positive");
  }
}

std::vector<LayerShape> layout(const ModelSpec& spec) {
  validate(spec);
  std::vector<LayerShape> shapes;
  int in = spec.input_dim;
  std::int64_t offset = 0;
  auto push = [&](int out) {
    shapes.push_back({out, in, offset});
    offset += shapes.back().count();
    in = out;
  };
  for (int h : spec.hidden_dims) push(h);
  push(spec.num_classes);
  return shapes;
}

std::int64_t param_count(const ModelSpec& spec) {
  std::int64_t n = 0;
  for (const auto& s : layout(spec)) n += s.count();
  return n;
}

std::vector<LayerParams> unflatten(const ModelSpec& spec, const ParamVector& theta) {
  check_theta(spec, theta);
  std::vector<LayerParams> layers;
  for (const auto& s : layout(spec)) {
    layers.push_back({weight_view(theta, s), bias_view(theta, s)});
  }
  return layers;
}

ParamVector flatten(const ModelSpec& spec, std::span<const LayerParams> layers) {
  const auto shapes = layout(spec);
  if (layers.size() != shapes.size()) throw std::invalid_argument("layer count mismatch");
  ParamVector theta(param_count(spec));
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const auto& s = shapes[l];
    if (layers[l].weight.rows() != s.out || layers[l].weight.cols() != s.in ||
        layers[l].bias.size() != s.out) {
      throw std::invalid_argument("layer " + std::to_string(l) + " has the wrong shape");
    }
    Eigen::Map<RowMatrix>(theta.data() + s.offset, s.out, s.in) = layers[l].weight;
    theta.segment(s.bias_offset(), s.out) = layers[l].bias;
  }
  return theta;
}

ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParamVector theta = ParamVector::Zero(param_count(spec));
  for (const auto& s : layout(spec)) {
    const double limit = std::sqrt(6.0 / (s.in + s.out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (std::int64_t i = 0; i < s.weight_count(); ++i) theta[s.offset + i] = dist(rng);
  }
  return theta;
}

LabeledBatch select(const LabeledBatch& source, std::span<const std::int64_t> indices) {
  LabeledBatch out;
  out.inputs.resize(static_cast<Eigen::Index>(indices.size()), source.inputs.cols());
  out.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto j = indices[i];
    if (j < 0 || j >= source.size()) throw std::out_of_range("batch index out of range");
    out.inputs.row(static_cast<Eigen::Index>(i)) = source.inputs.row(j);
    out.labels.push_back(source.labels[static_cast<std::size_t>(j)]);
  }
  return out;
}

Matrix forward(const ModelSpec& spec, const ParamVector& theta, const Matrix& inputs) {
  check_theta(spec, theta);
  check_inputs(spec, inputs);
  return std::move(forward_cached(spec, theta, inputs).pre.back());
}

Matrix log_softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    out.row(i) = logits.row(i).array() - lse;
  }
  return out;
}

Matrix softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    auto e = (logits.row(i).array() - mx).exp();
    out.row(i) = e / e.sum();
  }
  return out;
}

double cross_entropy(const Matrix& logits, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows()) {
    throw std::invalid_argument("label count does not match logit rows");
  }
  if (logits.rows() == 0) throw std::invalid_argument("empty batch");
  const Matrix lp = log_softmax(logits);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < lp.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= lp.cols()) throw std::invalid_argument("label out of range");
    sum -= lp(i, y);
  }
  return sum / static_cast<double>(lp.rows());
}

double kl_divergence(const Matrix& logits_ref, const Matrix& logits_cur) {
  if (logits_ref.rows() != logits_cur.rows() || logits_ref.cols() != logits_cur.cols()) {
    throw std::invalid_argument("kl_divergence: shape mismatch");
  }
  if (logits_ref.rows() == 0) throw std::invalid_argument("empty batch");
  const Matrix lp = log_softmax(logits_ref);
  const Matrix lq = log_softmax(logits_cur);
  const double total = (lp.array().exp() * (lp - lq).array()).sum();
  // Each row's KL is nonnegative; clamp the rounding residue of the sum.
  return std::max(0.0, total / static_cast<double>(lp.rows()));
}

std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::cross_entropy: return "cross_entropy";
    case LossKind::negative_cross_entropy: return "negative_cross_entropy";
    case LossKind::kl_to_reference: return "kl_to_reference";
    case LossKind::negative_kl_to_reference: return "negative_kl_to_reference";
    case LossKind::l1_param_norm: return "l1_param_norm";
  }
  return "?";
}

LossKind parse_loss_kind(std::string_view s) {
  for (auto k : {LossKind::cross_entropy, LossKind::negative_cross_entropy, LossKind::kl_to_reference,
                 LossKind::negative_kl_to_reference, LossKind::l1_param_norm}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown loss kind '" + std::string(s) + "'");
}

bool needs_reference(LossKind k) {
  return k == LossKind::kl_to_reference || k == LossKind::negative_kl_to_reference;
}

bool needs_reference(const Objective& obj) {
  for (const auto& t : obj) {
    if (needs_reference(t.kind)) return true;
  }
  return false;
}

double loss_value(const ModelSpec& spec, const ParamVector& theta, const LabeledBatch& batch,
                  const Objective& obj, const ParamVector* reference) {
  check_theta(spec, theta);
  check_reference(spec, obj, reference);
  double total = 0.0;
  Matrix logits;
  Matrix ref_logits;
  if (has_data_terms(obj)) {
    check_labels(spec, batch);
    logits = forward(spec, theta, batch.inputs);
    if (needs_reference(obj)) ref_logits = forward(spec, *reference, batch.inputs);
  }
  for (const auto& term : obj) {
    switch (term.kind) {
      case LossKind::cross_entropy: total += term.weight * cross_entropy(logits, batch.labels); break;
      case LossKind::negative_cross_entropy: total -= term.weight * cross_entropy(logits, batch.labels); break;
      case LossKind::kl_to_reference: total += term.weight * kl_divergence(ref_logits, logits); break;
      case LossKind::negative_kl_to_reference: total -= term.weight * kl_divergence(ref_logits, logits); break;
      case LossKind::l1_param_norm: total += term.weight * theta.lpNorm<1>(); break;
    }
  }
  return total;
}

ParamVector grad(const ModelSpec& spec, const ParamVector& theta, const LabeledBatch& batch,
                 const Objective& obj, const ParamVector* reference) {
  check_theta(spec, theta);
  check_reference(spec, obj, reference);
  ParamVector g = ParamVector::Zero(theta.size());
  if (has_data_terms(obj)) {
    check_inputs(spec, batch.inputs);
    check_labels(spec, batch);
    if (batch.empty()) throw std::invalid_argument("grad: empty batch");
    const auto cache = forward_cached(spec, theta, batch.inputs);
    Matrix ref_logits;
    if (needs_reference(obj)) ref_logits = forward(spec, *reference, batch.inputs);
    g = backprop(spec, theta, cache,
                 logit_gradient(cache.pre.back(), batch.labels, obj, &ref_logits,
                                static_cast<double>(batch.size())));
  }
  add_parameter_terms(obj, theta, g);
  return g;
}

std::vector<ParamVector> per_example_grads(const ModelSpec& spec, const ParamVector& theta,
                                           const LabeledBatch& batch, const Objective& obj,
                                           const ParamVector* reference) {
  check_theta(spec, theta);
  check_reference(spec, obj, reference);
  check_inputs(spec, batch.inputs);
  check_labels(spec, batch);
  if (batch.empty()) throw std::invalid_argument("per_example_grads: empty batch");
  std::vector<ParamVector> out;
  out.reserve(static_cast<std::size_t>(batch.size()));
  const bool data = has_data_terms(obj);
  const auto cache = data ? forward_cached(spec, theta, batch.inputs) : ForwardCache{};
  Matrix ref_logits;
  if (data && needs_reference(obj)) ref_logits = forward(spec, *reference, batch.inputs);
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    ParamVector g = ParamVector::Zero(theta.size());
    if (data) {
      ForwardCache row;
      for (const auto& a : cache.acts) row.acts.push_back(a.row(i));
      for (const auto& z : cache.pre) row.pre.push_back(z.row(i));
      Matrix ref_row;
      if (needs_reference(obj)) ref_row = ref_logits.row(i);
      const int label = batch.labels[static_cast<std::size_t>(i)];
      g = backprop(spec, theta, row,
                   logit_gradient(row.pre.back(), std::span<const int>(&label, 1), obj,
                                  &ref_row, 1.0));
    }
    add_parameter_terms(obj, theta, g);
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<int> predict(const ModelSpec& spec, const ParamVector& theta, const Matrix& inputs) {
  const Matrix logits = forward(spec, theta, inputs);
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    int best = 0;
    for (Eigen::Index k = 1; k < logits.cols(); ++k) {
      if (logits(i, k) > logits(i, best)) best = static_cast<int>(k);
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ModelSpec& spec,
                     const ParamVector& theta) {
  check_theta(spec, theta);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << "ulab-checkpoint 1\n";
  out << "input_dim " << spec.input_dim << "\n";
  out << "hidden_dims " << spec.hidden_dims.size();
  for (int h : spec.hidden_dims) out << ' ' << h;
  out << "\nnum_classes " << spec.num_classes << "\n";
  out << "activation " << to_string(spec.activation) << "\n";
  const auto shapes = layout(spec);
  out << "layers " << shapes.size() << "\n";
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    out << "layer " << l << ' ' << shapes[l].out << ' ' << shapes[l].in << ' ' << shapes[l].offset
        << "\n";
  }
  out << "values " << theta.size() << "\n";
  char buf[64];
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%a\n", theta[i]);
    out << buf;
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  auto expect = [&](const std::string& word) {
    std::string got;
    if (!(in >> got) || got != word) {
      throw std::runtime_error("malformed checkpoint " + path.string() + ": expected '" + word + "'");
    }
  };
  Checkpoint ck;
  int version = 0;
  expect("ulab-checkpoint");
  in >> version;
  if (version != 1) throw std::runtime_error("unsupported checkpoint version");
  expect("input_dim");
  in >> ck.spec.input_dim;
  expect("hidden_dims");
  std::size_t nh = 0;
  in >> nh;
  ck.spec.hidden_dims.resize(nh);
  for (auto& h : ck.spec.hidden_dims) in >> h;
  expect("num_classes");
  in >> ck.spec.num_classes;
  expect("activation");
  std::string act;
  in >> act;
  ck.spec.activation = parse_activation(act);
  if (!in) throw std::runtime_error("malformed checkpoint header in " + path.string());
  const auto shapes = layout(ck.spec);
  expect("layers");
  std::size_t nl = 0;
  in >> nl;
  if (nl != shapes.size()) throw std::runtime_error("checkpoint layout table does not match spec");
  for (std::size_t l = 0; l < nl; ++l) {
    std::size_t idx = 0;
    LayerShape s;
    expect("layer");
    in >> idx >> s.out >> s.in >> s.offset;
    if (!in || idx != l || s.out != shapes[l].out || s.in != shapes[l].in ||
        s.offset != shapes[l].offset) {
      throw std::runtime_error("checkpoint layout table does not match spec");
    }
  }
  expect("values");
  std::int64_t n = 0;
  in >> n;
  if (n != param_count(ck.spec)) throw std::runtime_error("checkpoint value count mismatch");
  ck.theta.resize(n);
  std::string tok;
  for (std::int64_t i = 0; i < n; ++i) {
    if (!(in >> tok)) throw std::runtime_error("truncated checkpoint " + path.string());
    char* end = nullptr;
    ck.theta[i] = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') throw std::runtime_error("bad value in checkpoint");
  }
  return ck;
}

}  // namespace ulab
