#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"
#include "ulab/data.hpp"
#include "ulab/unlearn.hpp"

using namespace ulab;

namespace {

const ModelSpec kSpec{6, {8}, 3, Activation::tanh};

DatasetSplit toy_split(std::uint64_t seed) {
  DatasetSplit s;
  s.train = ulab::testing::random_batch(60, 6, 3, seed);
  s.test = ulab::testing::random_batch(30, 6, 3, seed + 1);
  return split_forget(s.train, s.test, {Scenario::random_fraction, 0.2, std::nullopt, seed});
}

AddOnSpec addon(MaskKind k) {
  AddOnSpec a;
  a.kind = k;
  return a;
}

}  // namespace

TEST(MethodRegistry, Definitions) {
  const ParamVector t0 = ulab::testing::random_params(kSpec, 1);
  const auto ft = make_method(MethodName::FT, t0);
  EXPECT_FALSE(ft.has_constraint());
  EXPECT_EQ(ft.dataset_u, DataRole::retain);
  EXPECT_EQ(ft.loss_u[0].kind, LossKind::cross_entropy);

  const auto ga = make_method(MethodName::GA, t0);
  EXPECT_FALSE(ga.has_constraint());
  EXPECT_EQ(ga.dataset_u, DataRole::forget);
  EXPECT_EQ(ga.loss_u[0].kind, LossKind::negative_cross_entropy);

  const auto ng = make_method(MethodName::NGPlus, t0);
  ASSERT_TRUE(ng.has_constraint());
  EXPECT_EQ(ng.dataset_u, DataRole::forget);
  EXPECT_EQ(*ng.dataset_c, DataRole::retain);

  const auto srl = make_method(MethodName::SRL, t0);
  EXPECT_EQ(srl.dataset_u, DataRole::relabeled_train);
  EXPECT_EQ((*srl.loss_c)[0].kind, LossKind::cross_entropy);

  const auto l1 = make_method(MethodName::L1Sparse, t0);
  EXPECT_EQ(l1.loss_u[0].kind, LossKind::l1_param_norm);

  const auto scrub = make_method(MethodName::SCRUB, t0, 0.5);
  EXPECT_EQ(scrub.loss_u[0].kind, LossKind::negative_kl_to_reference);
  ASSERT_EQ(scrub.loss_c->size(), 2u);
  EXPECT_EQ((*scrub.loss_c)[1].weight, 0.5);
  EXPECT_EQ(scrub.reference_theta, t0);
  EXPECT_THROW(make_method(MethodName::SCRUB, t0, -1.0), std::invalid_argument);

  for (auto m : {MethodName::FT, MethodName::GA, MethodName::NGPlus, MethodName::SRL,
                 MethodName::L1Sparse, MethodName::SCRUB}) {
    EXPECT_EQ(parse_method(to_string(m)), m);
  }
  EXPECT_THROW(parse_method("MSG"), std::invalid_argument);
}

TEST(Validate, RejectsConstraintAddOnsWithoutConstraint) {
  const ParamVector t0 = ulab::testing::random_params(kSpec, 1);
  for (auto m : {MethodName::FT, MethodName::GA}) {
    for (auto k : {MaskKind::and_mask, MaskKind::prob, MaskKind::bernoulli, MaskKind::focus}) {
      EXPECT_THROW(validate(make_method(m, t0), addon(k)), std::invalid_argument);
    }
    EXPECT_NO_THROW(validate(make_method(m, t0), addon(MaskKind::none)));
    EXPECT_NO_THROW(validate(make_method(m, t0), addon(MaskKind::salun)));
  }
  auto bad = addon(MaskKind::prob);
  bad.p = 1.0;
  EXPECT_THROW(validate(make_method(MethodName::SRL, t0), bad), std::invalid_argument);
  auto bad_agg = addon(MaskKind::focus);
  bad_agg.agg = {AggKind::linear, 0.0, 0.0};
  EXPECT_THROW(validate(make_method(MethodName::SRL, t0), bad_agg), std::invalid_argument);
}

TEST(ConstraintValue, Examples) {
  const ParamVector t0 = ulab::testing::random_params(kSpec, 2);
  const auto b = ulab::testing::random_batch(40, 6, 3, 3);
  const auto ng = make_method(MethodName::NGPlus, t0);
  EXPECT_EQ(constraint_value(kSpec, ng, t0, t0, b), 0.0);

  // A few full-batch descent steps on the retain loss lower it.
  ParamVector t = t0;
  for (int i = 0; i < 20; ++i) t -= 0.1 * grad(kSpec, t, b, LossKind::cross_entropy);
  EXPECT_LT(constraint_value(kSpec, ng, t, t0, b), 0.0);
  EXPECT_DOUBLE_EQ(constraint_value(kSpec, ng, t, t0, b),
                   cross_entropy(forward(kSpec, t, b.inputs), b.labels) -
                       cross_entropy(forward(kSpec, t0, b.inputs), b.labels));
  EXPECT_THROW(constraint_value(kSpec, make_method(MethodName::FT, t0), t, t0, b), std::logic_error);
}

TEST(ConstraintValue, ScrubSelfKlVanishes) {
  const ParamVector t0 = ulab::testing::random_params(kSpec, 4);
  const auto b = ulab::testing::random_batch(20, 6, 3, 5);
  const auto scrub = make_method(MethodName::SCRUB, t0, 1.0);
  EXPECT_EQ(loss_value(kSpec, t0, b, scrub.loss_u, &t0), 0.0);
  EXPECT_EQ(loss_value(kSpec, t0, b, {{LossKind::kl_to_reference, 1.0}}, &t0), 0.0);
  EXPECT_EQ(constraint_value(kSpec, scrub, t0, t0, b), 0.0);
}

TEST(UnlearnStep, FineTuningIsPlainSgd) {
  const ParamVector t0 = ulab::testing::random_params(kSpec, 6);
  const auto b = ulab::testing::random_batch(16, 6, 3, 7);
  const auto ft = make_method(MethodName::FT, t0);
  auto a = addon(MaskKind::none);
  a.agg = {AggKind::linear, 1.0, 0.0};
  const auto next = unlearn_step(UnlearnRunState::start(t0, 0), kSpec, ft, a, b, {}, 0.05, 1e-8);
  EXPECT_EQ(next.theta, t0 - 0.05 * grad(kSpec, t0, b, LossKind::cross_entropy));
  EXPECT_EQ(next.step, 1);
}

TEST(UnlearnStep, GradientAscentReduction) {
  const ParamVector t0 = ulab::testing::random_params(kSpec, 8);
  const auto b = ulab::testing::random_batch(16, 6, 3, 9);
  const auto next = unlearn_step(UnlearnRunState::start(t0, 0), kSpec, make_method(MethodName::GA, t0),
                                 addon(MaskKind::none), b, {}, 0.1, 1e-8);
  EXPECT_EQ(next.theta, t0 + 0.1 * grad(kSpec, t0, b, LossKind::cross_entropy));
}

TEST(UnlearnStep, NgPlusLinearComposition) {
  const ParamVector t0 = ulab::testing::random_params(kSpec, 10);
  const auto bf = ulab::testing::random_batch(8, 6, 3, 11);
  const auto br = ulab::testing::random_batch(16, 6, 3, 12);
  auto a = addon(MaskKind::none);
  a.agg = {AggKind::linear, 0.3, 0.7};
  StepDiagnostics d;
  unlearn_step(UnlearnRunState::start(t0, 0), kSpec, make_method(MethodName::NGPlus, t0), a, bf, br, 0.1,
               1e-8, &d);
  const ParamVector ascent = -grad(kSpec, t0, bf, LossKind::cross_entropy);
  const ParamVector descent = grad(kSpec, t0, br, LossKind::cross_entropy);
  EXPECT_LT((d.direction + (0.3 * ascent + 0.7 * descent)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_NEAR(d.grad_inner, ascent.dot(descent), 1e-12);
  EXPECT_EQ(d.support, param_count(kSpec));
}

TEST(UnlearnStep, AndMaskWithEqualGradientsIsFull) {
  // Identical batches and a loss pair with equal gradients: L_U = L_C = CE.
  const ParamVector t0 = ulab::testing::random_params(kSpec, 13);
  const auto b = ulab::testing::random_batch(16, 6, 3, 14);
  UnlearnMethodSpec m;
  m.name = MethodName::NGPlus;
  m.loss_u = {{LossKind::cross_entropy, 1.0}};
  m.loss_c = Objective{{LossKind::cross_entropy, 1.0}};
  m.dataset_c = DataRole::retain;
  m.reference_theta = t0;
  StepDiagnostics d;
  unlearn_step(UnlearnRunState::start(t0, 0), kSpec, m, addon(MaskKind::and_mask), b, b, 0.1, 1e-8, &d);
  const ParamVector g = grad(kSpec, t0, b, LossKind::cross_entropy);
  const auto nonzero = (g.array() != 0.0).count();
  EXPECT_EQ(d.support, nonzero);
  EXPECT_EQ(d.direction, -agg(AggSpec{}, g, g).cwiseProduct(mask_and(g, g).weights));
}

TEST(UnlearnStep, FocusWithHugeVarianceHalvesTheStep) {
  const ParamVector t0 = ulab::testing::random_params(kSpec, 15);
  const auto bf = ulab::testing::random_batch(8, 6, 3, 16);
  const auto br = ulab::testing::random_batch(16, 6, 3, 17);
  const auto ng = make_method(MethodName::NGPlus, t0);
  UnlearnRunState s = UnlearnRunState::start(t0, 0);
  // Noise trackers primed with an enormous second moment.
  for (auto* st : {&s.adam_u, &s.adam_c}) {
    st->v = ParamVector::Constant(t0.size(), 1e30);
    st->step_count = 100000;
  }
  const auto focus = unlearn_step(s, kSpec, ng, addon(MaskKind::focus), bf, br, 0.1, 1e-8);
  const auto none = unlearn_step(s, kSpec, ng, addon(MaskKind::none), bf, br, 0.1, 1e-8);
  const ParamVector step_f = focus.theta - t0, step_n = none.theta - t0;
  EXPECT_LT((step_f - 0.5 * step_n).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(UnlearnStep, PerExampleProviderReusesVarianceOnSingletons) {
  const ParamVector t0 = ulab::testing::random_params(kSpec, 18);
  const auto bf = ulab::testing::random_batch(1, 6, 3, 19);
  const auto br = ulab::testing::random_batch(12, 6, 3, 20);
  auto a = addon(MaskKind::focus);
  a.variance_provider = VarianceProvider::per_example;
  UnlearnRunState s = UnlearnRunState::start(t0, 0);
  s.last_sigma2_u = ParamVector::Constant(t0.size(), 0.25);
  const auto next = unlearn_step(s, kSpec, make_method(MethodName::NGPlus, t0), a, bf, br, 0.1, 1e-8);
  EXPECT_EQ(next.last_sigma2_u, s.last_sigma2_u);
  EXPECT_GT(next.last_sigma2_c.maxCoeff(), 0.0);
}

TEST(UnlearnStep, FullBatchAndProbAreFeasible) {
  const auto split = toy_split(21);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ParamVector t0 = ulab::testing::random_params(kSpec, 30 + seed);
    for (auto m : {MethodName::NGPlus, MethodName::SCRUB, MethodName::L1Sparse}) {
      const auto method = make_method(m, t0);
      const LabeledBatch& bu = m == MethodName::L1Sparse ? split.retain : split.forget;
      const ParamVector gu = grad(kSpec, t0, bu, method.loss_u, &t0);
      const ParamVector gc = grad(kSpec, t0, split.retain, *method.loss_c, &t0);
      for (auto k : {MaskKind::and_mask, MaskKind::prob}) {
        StepDiagnostics d;
        auto a = addon(k);
        a.p = 0.5;
        unlearn_step(UnlearnRunState::start(t0, 0), kSpec, method, a, bu, split.retain, 0.1, 1e-8, &d);
        EXPECT_LE(d.direction.dot(gu), 0.0) << to_string(m);
        EXPECT_LE(d.direction.dot(gc), 0.0) << to_string(m);
      }
    }
  }
}

TEST(UnlearnStep, NonFiniteGradientThrows) {
  ParamVector t0 = ulab::testing::random_params(kSpec, 40);
  t0[0] = std::numeric_limits<double>::quiet_NaN();
  const auto b = ulab::testing::random_batch(4, 6, 3, 41);
  EXPECT_THROW(unlearn_step(UnlearnRunState::start(t0, 0), kSpec, make_method(MethodName::FT, t0),
                            addon(MaskKind::none), b, {}, 0.1, 1e-8),
               std::runtime_error);
}

TEST(RelabeledTrain, OnlyForgetLabelsChange) {
  const auto split = toy_split(42);
  const auto r = relabeled_train(split, 3, 1);
  EXPECT_EQ(r.inputs, split.train.inputs);
  std::size_t f = 0;
  for (std::size_t i = 0; i < r.labels.size(); ++i) {
    const bool forget = f < split.forget_indices.size() &&
                        split.forget_indices[f] == static_cast<std::int64_t>(i);
    if (forget) {
      EXPECT_NE(r.labels[i], split.train.labels[i]);
      ++f;
    } else {
      EXPECT_EQ(r.labels[i], split.train.labels[i]);
    }
  }
}

TEST(RunUnlearning, RejectsBadOptions) {
  const auto split = toy_split(43);
  const ParamVector t0 = ulab::testing::random_params(kSpec, 44);
  RunOptions o;
  o.epochs = 0;
  EXPECT_THROW(run_unlearning(kSpec, t0, t0, make_method(MethodName::FT, t0), addon(MaskKind::none), split, o),
               std::invalid_argument);
  o.epochs = 1;
  o.eta = 0.0;
  EXPECT_THROW(run_unlearning(kSpec, t0, t0, make_method(MethodName::FT, t0), addon(MaskKind::none), split, o),
               std::invalid_argument);
  o.eta = 0.1;
  EXPECT_THROW(run_unlearning(kSpec, t0, t0, make_method(MethodName::GA, t0), addon(MaskKind::focus), split, o),
               std::invalid_argument);
}

TEST(RunUnlearning, FineTuningAtRetainMinimumIsStationary) {
  const auto split = toy_split(45);
  // Linear model with a ridge-free minimum: run full-batch descent to
  // convergence first.
  const ModelSpec spec{6, {}, 3};
  ParamVector t = ulab::testing::random_params(spec, 46, 0.1);
  for (int i = 0; i < 20000; ++i) t -= 0.5 * grad(spec, t, split.retain, LossKind::cross_entropy);
  ASSERT_LT(grad(spec, t, split.retain, LossKind::cross_entropy).norm(), 1e-6);
  RunOptions o;
  o.epochs = 2;
  o.eta = 1e-6;
  o.batch_size = static_cast<int>(split.retain.size());
  o.evaluate = false;
  const auto r = run_unlearning(spec, t, t, make_method(MethodName::FT, t), addon(MaskKind::none), split, o);
  EXPECT_LT((r.theta - t).norm(), 1e-8);
}

TEST(RunUnlearning, ReportsEveryEpochAndIsDeterministic) {
  const auto split = toy_split(47);
  const ParamVector t0 = ulab::testing::random_params(kSpec, 48);
  RunOptions o;
  o.epochs = 3;
  o.eta = 0.05;
  o.batch_size = 8;
  o.seed = 5;
  for (auto k : {MaskKind::none, MaskKind::bernoulli, MaskKind::focus, MaskKind::salun}) {
    const auto a = run_unlearning(kSpec, t0, t0, make_method(MethodName::SRL, t0), addon(k), split, o);
    const auto b = run_unlearning(kSpec, t0, t0, make_method(MethodName::SRL, t0), addon(k), split, o);
    EXPECT_EQ(a.theta, b.theta) << to_string(k);
    ASSERT_EQ(a.reports.size(), 4u);
    EXPECT_EQ(a.reports[0].rua, 0.0);
    EXPECT_EQ(a.reports[0].fid, 100.0);
    for (std::size_t e = 0; e < a.reports.size(); ++e) {
      EXPECT_EQ(a.reports[e].epoch, static_cast<int>(e));
      EXPECT_EQ(a.reports[e].ua, b.reports[e].ua);
      if (e > 0) {
        EXPECT_GE(a.reports[e].rte_seconds, a.reports[e - 1].rte_seconds);
      }
    }
    EXPECT_EQ(a.agree_prob_snapshot.size(), param_count(kSpec));
    // 48 retain / 60 relabeled train examples at batch 8: 8 steps per epoch.
    EXPECT_EQ(a.grad_inner.size(), 24u);
  }
  o.seed = 6;
  const auto c = run_unlearning(kSpec, t0, t0, make_method(MethodName::SRL, t0), addon(MaskKind::none), split, o);
  const auto a = run_unlearning(kSpec, t0, t0, make_method(MethodName::SRL, t0), addon(MaskKind::none), split,
                                RunOptions{3, 0.05, 1e-8, 8, 5});
  EXPECT_NE(a.theta, c.theta);
}

TEST(RunUnlearning, ConstraintFreeMethodsHaveNoAgreeProb) {
  const auto split = toy_split(49);
  const ParamVector t0 = ulab::testing::random_params(kSpec, 50);
  RunOptions o;
  o.epochs = 1;
  o.eta = 0.01;
  o.batch_size = 16;
  o.evaluate = false;
  const auto r = run_unlearning(kSpec, t0, t0, make_method(MethodName::GA, t0), addon(MaskKind::none), split, o);
  EXPECT_EQ(r.agree_prob_snapshot.size(), 0);
  EXPECT_TRUE(r.reports.empty());
}
