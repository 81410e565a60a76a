#include "ulab/unlearn.hpp"

#include <algorithm>
#include <chrono>
#include <stdexcept>
#include <string>

namespace ulab {

namespace {

enum SeedStream : std::uint64_t { kRelabel = 101, kLoaderU = 102, kLoaderC = 103, kMask = 104, kMetrics = 105 };

const LabeledBatch& dataset_for(DataRole role, const DatasetSplit& split, const LabeledBatch& relabeled) {
  switch (role) {
    case DataRole::retain: return split.retain;
    case DataRole::forget: return split.forget;
    case DataRole::relabeled_train: return relabeled;
  }
  throw std::logic_error("unknown data role");
}

bool needs_constraint(MaskKind k) {
  return k == MaskKind::and_mask || k == MaskKind::prob || k == MaskKind::bernoulli ||
         k == MaskKind::focus;
}

void require_finite(const ParamVector& g, const char* which, long step) {
  if (!g.allFinite()) {
    throw std::runtime_error(std::string("non-finite ") + which + " gradient at step " +
                             std::to_string(step));
  }
}

}  // namespace

std::string_view to_string(MethodName m) {
  switch (m) {
    case MethodName::FT: return "FT";
    case MethodName::GA: return "GA";
    case MethodName::NGPlus: return "NGPlus";
    case MethodName::SRL: return "SRL";
    case MethodName::L1Sparse: return "L1Sparse";
    case MethodName::SCRUB: return "SCRUB";
  }
  return "?";
}

MethodName parse_method(std::string_view s) {
  for (auto m : {MethodName::FT, MethodName::GA, MethodName::NGPlus, MethodName::SRL,
                 MethodName::L1Sparse, MethodName::SCRUB}) {
    if (to_string(m) == s) return m;
  }
  throw std::invalid_argument("unknown unlearning method '" + std::string(s) + "'");
}

std::string_view to_string(DataRole r) {
  switch (r) {
    case DataRole::retain: return "retain";
    case DataRole::forget: return "forget";
    case DataRole::relabeled_train: return "relabeled_train";
  }
  return "?";
}

UnlearnMethodSpec make_method(MethodName name, const ParamVector& theta0, double gamma) {
  if (gamma < 0.0) throw std::invalid_argument("gamma must be nonnegative");
  UnlearnMethodSpec m;
  m.name = name;
  m.reference_theta = theta0;
  const Objective ce{{LossKind::cross_entropy, 1.0}};
  switch (name) {
    case MethodName::FT:
      m.loss_u = ce;
      m.dataset_u = DataRole::retain;
      break;
    case MethodName::GA:
      m.loss_u = {{LossKind::negative_cross_entropy, 1.0}};
      m.dataset_u = DataRole::forget;
      break;
    case MethodName::NGPlus:
      m.loss_u = {{LossKind::negative_cross_entropy, 1.0}};
      m.dataset_u = DataRole::forget;
      m.loss_c = ce;
      m.dataset_c = DataRole::retain;
      break;
    case MethodName::SRL:
      m.loss_u = ce;
      m.dataset_u = DataRole::relabeled_train;
      m.loss_c = ce;
      m.dataset_c = DataRole::retain;
      break;
    case MethodName::L1Sparse:
      m.loss_u = {{LossKind::l1_param_norm, 1.0}};
      m.dataset_u = DataRole::retain;
      m.loss_c = ce;
      m.dataset_c = DataRole::retain;
      break;
    case MethodName::SCRUB:
      m.gamma = gamma;
      m.loss_u = {{LossKind::negative_kl_to_reference, 1.0}};
      m.dataset_u = DataRole::forget;
      m.loss_c = Objective{{LossKind::kl_to_reference, 1.0}, {LossKind::cross_entropy, gamma}};
      m.dataset_c = DataRole::retain;
      break;
  }
  return m;
}

void validate(const UnlearnMethodSpec& method, const AddOnSpec& addon) {
  if (needs_constraint(addon.kind) && !method.has_constraint()) {
    throw std::invalid_argument("add-on '" + std::string(to_string(addon.kind)) +
                                "' needs a constraint gradient; method " +
                                std::string(to_string(method.name)) + " has none");
  }
  if (addon.kind == MaskKind::prob && !(addon.p > 0.0 && addon.p < 1.0)) {
    throw std::invalid_argument("prob add-on: p must lie in (0, 1)");
  }
  validate(addon.agg);
}

double constraint_value(const ModelSpec& spec, const UnlearnMethodSpec& method,
                        const ParamVector& theta, const ParamVector& theta0,
                        const LabeledBatch& batch_c) {
  if (!method.has_constraint()) {
    throw std::logic_error("method " + std::string(to_string(method.name)) + " has no constraint");
  }
  const auto* ref = &method.reference_theta;
  return loss_value(spec, theta, batch_c, *method.loss_c, ref) -
         loss_value(spec, theta0, batch_c, *method.loss_c, ref);
}

UnlearnRunState UnlearnRunState::start(const ParamVector& theta0, std::uint64_t mask_seed) {
  UnlearnRunState s;
  s.theta = theta0;
  s.adam_u = AdamState::zeros(theta0.size());
  s.adam_c = AdamState::zeros(theta0.size());
  s.mask_seed = mask_seed;
  s.last_sigma2_u = ParamVector::Zero(theta0.size());
  s.last_sigma2_c = ParamVector::Zero(theta0.size());
  return s;
}

UnlearnRunState unlearn_step(const UnlearnRunState& state, const ModelSpec& spec,
                             const UnlearnMethodSpec& method, const AddOnSpec& addon,
                             const LabeledBatch& batch_u, const LabeledBatch& batch_c, double eta,
                             double eps, StepDiagnostics* diag) {
  validate(method, addon);
  UnlearnRunState next = state;
  const auto* ref = &method.reference_theta;

  const ParamVector g_u = grad(spec, state.theta, batch_u, method.loss_u, ref);
  require_finite(g_u, "objective", state.step);

  ParamVector direction;
  std::int64_t support = g_u.size();
  Eigen::VectorXd agree;
  double inner = 0.0;

  if (!method.has_constraint()) {
    direction = -g_u;
    if (addon.kind == MaskKind::salun) {
      if (!state.salun_weights) throw std::logic_error("salun add-on used before its mask was computed");
      direction = direction.cwiseProduct(*state.salun_weights);
      support = (state.salun_weights->array() != 0.0).count();
    }
  } else {
    const ParamVector g_c = grad(spec, state.theta, batch_c, *method.loss_c, ref);
    require_finite(g_c, "constraint", state.step);
    inner = g_u.dot(g_c);

    GradientPair pair{g_u, g_c, {}, {}};
    if (addon.variance_provider != VarianceProvider::per_example) {
      next.adam_u = adam_update(state.adam_u, g_u);
      next.adam_c = adam_update(state.adam_c, g_c);
      const auto estimate = addon.variance_provider == VarianceProvider::adam ? variance_estimate
                                                                              : second_moment_estimate;
      pair.sigma2_u = estimate(next.adam_u);
      pair.sigma2_c = estimate(next.adam_c);
    } else {
      auto variance = [&](const LabeledBatch& b, const Objective& obj, const ParamVector& last) {
        if (b.size() < 2) return last;
        const auto per = per_example_grads(spec, state.theta, b, obj, ref);
        return per_batch_variance(per, static_cast<double>(b.size()));
      };
      pair.sigma2_u = variance(batch_u, method.loss_u, state.last_sigma2_u);
      pair.sigma2_c = variance(batch_c, *method.loss_c, state.last_sigma2_c);
    }
    next.last_sigma2_u = pair.sigma2_u;
    next.last_sigma2_c = pair.sigma2_c;
    agree = agree_prob(pair, eps);

    MaskOrFocus weights;
    switch (addon.kind) {
      case MaskKind::none:
        weights = {Eigen::VectorXd::Ones(g_u.size()), MaskKind::none};
        break;
      case MaskKind::salun:
        if (!state.salun_weights) throw std::logic_error("salun add-on used before its mask was computed");
        weights = {*state.salun_weights, MaskKind::salun};
        break;
      case MaskKind::and_mask:
        weights = mask_and(g_u, g_c);
        break;
      case MaskKind::prob:
        weights = mask_prob(pair, addon.p, eps);
        break;
      case MaskKind::bernoulli:
        weights = mask_bernoulli(pair, eps, derive_seed(state.mask_seed, static_cast<std::uint64_t>(state.step)));
        break;
      case MaskKind::focus:
        weights = focus_vector(pair, eps);
        break;
    }
    support = weights.support();
    direction = update_direction(weights, addon.agg, g_u, g_c);
  }

  next.theta = sgd_step(state.theta, direction, eta);
  next.step = state.step + 1;
  if (diag) {
    diag->grad_inner = inner;
    diag->agree_prob = std::move(agree);
    diag->support = support;
    diag->direction = std::move(direction);
  }
  return next;
}

Eigen::VectorXd salun_weights(const ModelSpec& spec, const ParamVector& theta,
                              const LabeledBatch& forget) {
  return mask_salun(grad(spec, theta, forget, LossKind::negative_cross_entropy)).weights;
}

LabeledBatch relabeled_train(const DatasetSplit& split, int num_classes, std::uint64_t seed) {
  const LabeledBatch noisy = randomize_labels(split.forget, num_classes, seed);
  LabeledBatch out = split.train;
  for (std::size_t i = 0; i < split.forget_indices.size(); ++i) {
    out.labels[static_cast<std::size_t>(split.forget_indices[i])] = noisy.labels[i];
  }
  return out;
}

RunResult run_unlearning(const ModelSpec& spec, const ParamVector& theta0,
                         const ParamVector& theta_ideal, const UnlearnMethodSpec& method,
                         const AddOnSpec& addon, const DatasetSplit& split,
                         const RunOptions& options) {
  if (options.epochs < 1) throw std::invalid_argument("run_unlearning: epochs must be at least 1");
  if (!(options.eta > 0.0)) throw std::invalid_argument("run_unlearning: eta must be positive");
  validate(method, addon);

  const LabeledBatch relabeled = method.dataset_u == DataRole::relabeled_train
                                     ? relabeled_train(split, spec.num_classes,
                                                       derive_seed(options.seed, kRelabel))
                                     : LabeledBatch{};
  const LabeledBatch& data_u = dataset_for(method.dataset_u, split, relabeled);
  const LabeledBatch& data_c =
      method.has_constraint() ? dataset_for(*method.dataset_c, split, relabeled) : data_u;

  CyclingLoader loader_u(data_u, options.batch_size, derive_seed(options.seed, kLoaderU));
  CyclingLoader loader_c(data_c, options.batch_size, derive_seed(options.seed, kLoaderC));
  const std::size_t steps_per_epoch =
      method.has_constraint() ? std::max(loader_u.batches_per_epoch(), loader_c.batches_per_epoch())
                              : loader_u.batches_per_epoch();

  using Clock = std::chrono::steady_clock;
  UnlearnRunState state = UnlearnRunState::start(theta0, derive_seed(options.seed, kMask));
  if (addon.kind == MaskKind::salun) {
    const auto t0 = Clock::now();
    state.salun_weights = salun_weights(spec, theta0, split.forget);
    state.rte_seconds += std::chrono::duration<double>(Clock::now() - t0).count();
  }

  RunResult result;
  auto evaluate = [&](int epoch) {
    if (!options.evaluate) return;
    ReportInputs in;
    in.spec = &spec;
    in.theta = &state.theta;
    in.theta_ideal = &theta_ideal;
    in.split = &split;
    in.epoch = epoch;
    in.rte_seconds = state.rte_seconds;
    in.seed = derive_seed(options.seed, kMetrics + static_cast<std::uint64_t>(epoch));
    result.reports.push_back(report(in));
  };

  evaluate(0);
  const int snapshot_epoch = (options.epochs + 1) / 2;
  for (int e = 1; e <= options.epochs; ++e) {
    state.epoch = e;
    const auto t0 = Clock::now();
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      const LabeledBatch batch_u = loader_u.next();
      const LabeledBatch batch_c = method.has_constraint() ? loader_c.next() : LabeledBatch{};
      StepDiagnostics diag;
      state = unlearn_step(state, spec, method, addon, batch_u, batch_c, options.eta, options.eps, &diag);
      result.grad_inner.push_back(diag.grad_inner);
      if (options.capture_agree_prob && e == snapshot_epoch && b == 0) {
        result.agree_prob_snapshot = std::move(diag.agree_prob);
      }
    }
    state.rte_seconds += std::chrono::duration<double>(Clock::now() - t0).count();
    evaluate(e);
  }
  result.theta = state.theta;
  return result;
}

}  // namespace ulab
