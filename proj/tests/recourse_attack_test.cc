#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_util.h"
#include "xmanip/error.h"
#include "xmanip/recourse_attack.h"
#include "xmanip/tabular.h"

namespace xmanip {
namespace {

using testing::LogisticModel;
using testing::random_mat;
using testing::random_vec;
using testing::ShiftModel;

// Toy search setup: lambda = 1 from the first round, threshold 0.6 so that
// x = 0 is negative for theta = 0.5.
CfConfig toy_config() {
  CfConfig c;
  c.lambda_init = 1.0;
  c.max_lambda_rounds = 1;
  c.inner_steps = 5000;
  c.learning_rate = 0.05;
  c.target_threshold = 0.6;
  c.tolerance = 1e-12;
  return c;
}

// Same score as ShiftModel, but the parameter has no effect.
class FrozenShiftModel final : public DifferentiableModel {
 public:
  FrozenShiftModel() : params_(Vec::Constant(1, 0.0)) {}
  std::size_t input_dim() const override { return 1; }
  double predict(const Vec& x) const override { return 0.5 + x(0); }
  std::size_t param_count() const override { return 1; }
  const Vec& params() const override { return params_; }
  std::unique_ptr<DifferentiableModel> with_params(const Vec&) const override {
    return std::make_unique<FrozenShiftModel>();
  }
  Vec grad_input(const Vec&) const override { return Vec::Ones(1); }
  Vec grad_params(const Vec&) const override { return Vec::Zero(1); }

 private:
  Vec params_;
};

TEST(ConjugateGradient, MatchesDirectSolve) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Mat a = random_mat(rng, 6, 6);
    const Eigen::MatrixXd spd = a.transpose() * a + Eigen::MatrixXd::Identity(6, 6);
    const Vec b = random_vec(rng, 6);
    const Vec u = conjugate_gradient([&](const Vec& v) { return Vec(spd * v); }, b, 1e-12);
    const Vec direct = spd.ldlt().solve(b);
    EXPECT_LT((u - direct).norm() / direct.norm(), 1e-9);
  }
}

TEST(ConjugateGradient, ZeroRightHandSide) {
  const Vec u = conjugate_gradient([](const Vec& v) { return v; }, Vec::Zero(3));
  EXPECT_EQ(u.norm(), 0.0);
}

TEST(ConjugateGradient, IndefiniteThrows) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(2, 2);
  m(1, 1) = -1.0;
  try {
    conjugate_gradient([&](const Vec& v) { return Vec(m * v); }, Vec::Ones(2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCgNoConvergence);
  }
}

TEST(QuadraticToy, SearchLandsOnClosedForm) {
  const ShiftModel model(0.5);
  const CounterfactualResult r =
      find_counterfactual(model, Vec::Zero(1), DistanceSpec::l2(), toy_config());
  ASSERT_TRUE(r.converged);
  EXPECT_FALSE(r.already_positive);
  EXPECT_EQ(r.final_lambda, 1.0);
  EXPECT_NEAR(r.x_cf(0), 0.25, 1e-8);
}

TEST(QuadraticToy, ImplicitMatchesAnalytic) {
  // Needs 0.4 < theta - x <= 0.8: x negative, z* positive at 0.6.
  for (double theta : {0.5, 0.6, 0.7}) {
    for (double x : {0.0, 0.05}) {
      const ShiftModel model(theta);
      const Vec xv = Vec::Constant(1, x);
      const CounterfactualResult r =
          find_counterfactual(model, xv, DistanceSpec::l2(), toy_config());
      ASSERT_TRUE(r.converged);
      const double analytic = (theta - x) / 2.0;
      const double implicit = hypergrad_implicit(model, xv, r, DistanceSpec::l2())(0);
      EXPECT_NEAR(implicit, analytic, 1e-3 * std::abs(analytic)) << theta << " " << x;
    }
  }
}

TEST(QuadraticToy, UnrolledOneStepHandFormula) {
  const ShiftModel model(0.5);
  CfConfig config = toy_config();
  config.record_path = true;
  const CounterfactualResult r = find_counterfactual(model, Vec::Zero(1), DistanceSpec::l2(), config);
  ASSERT_FALSE(r.path.empty());
  const CfStep& last = r.path.back();
  // z_K = z_{K-1} - eta (4 z_{K-1} - 2 theta - 2 x), so dz_K/dtheta = 2 eta
  // and dcost/dtheta = 2 (z_K - x) * 2 eta.
  const double expected = 4.0 * last.step * r.x_cf(0);
  const double got = hypergrad_unrolled(model, Vec::Zero(1), DistanceSpec::l2(), toy_config(), 1)(0);
  EXPECT_NEAR(got, expected, 1e-9);
}

TEST(QuadraticToy, DeepUnrollApproachesImplicit) {
  const ShiftModel model(0.5);
  const CounterfactualResult r =
      find_counterfactual(model, Vec::Zero(1), DistanceSpec::l2(), toy_config());
  const double implicit = hypergrad_implicit(model, Vec::Zero(1), r, DistanceSpec::l2())(0);
  const double unrolled =
      hypergrad_unrolled(model, Vec::Zero(1), DistanceSpec::l2(), toy_config(), 100000)(0);
  EXPECT_NEAR(unrolled, implicit, 1e-2 * std::abs(implicit));
}

TEST(QuadraticToy, ShiftedStartDerivative) {
  // From start s: z* = (theta + s) / 2, cost (z* - x)^2, so
  // dcost/ds = z* - x.
  const ShiftModel model(0.9);
  const Vec x = Vec::Zero(1);
  const Vec start = Vec::Constant(1, 0.2);
  const CounterfactualResult r = find_counterfactual(model, start, DistanceSpec::l2(), toy_config());
  ASSERT_TRUE(r.converged);
  const CostGradient g = cost_gradient_implicit(model, x, start, r, DistanceSpec::l2());
  EXPECT_NEAR(g.d_start(0), 0.55, 1e-3);
  EXPECT_NEAR(g.d_theta(0), 0.55, 1e-3);
  EXPECT_NEAR(g.cost, 0.55 * 0.55, 1e-6);
}

TEST(Hypergradient, ParameterFreeModelGivesZero) {
  const FrozenShiftModel model;
  const Vec x = Vec::Constant(1, -0.1);
  const CounterfactualResult r = find_counterfactual(model, x, DistanceSpec::l2(), toy_config());
  ASSERT_TRUE(r.converged);
  EXPECT_EQ(hypergrad_implicit(model, x, r, DistanceSpec::l2()).norm(), 0.0);
  EXPECT_EQ(hypergrad_unrolled(model, x, DistanceSpec::l2(), toy_config(), 50).norm(), 0.0);
}

TEST(Hypergradient, NotConvergedRejected) {
  CounterfactualResult r;
  r.x_cf = Vec::Zero(1);
  r.converged = false;
  EXPECT_THROW(hypergrad_implicit(ShiftModel(0.5), Vec::Zero(1), r, DistanceSpec::l2()), Error);
}

TEST(Hypergradient, MatchesReSearchFiniteDifferences) {
  CfConfig config;
  config.lambda_init = 5.0;
  config.max_lambda_rounds = 1;
  config.inner_steps = 200000;
  config.learning_rate = 0.02;
  config.tolerance = 1e-13;
  const Vec x = Vec::Constant(1, -1.0);
  Vec theta(2);
  theta << 2.0, 0.3;
  auto cost_at = [&](const Vec& p) {
    const LogisticModel m(p);
    return find_counterfactual(m, x, DistanceSpec::l2(), config).cost;
  };
  const LogisticModel model(theta);
  const CounterfactualResult r = find_counterfactual(model, x, DistanceSpec::l2(), config);
  ASSERT_TRUE(r.converged);
  const Vec implicit = hypergrad_implicit(model, x, r, DistanceSpec::l2());
  const Vec fd = testing::numeric_grad(cost_at, theta, 1e-4);
  EXPECT_LT(testing::rel_norm_error(implicit, fd), 1e-2);
}

AttackBatches toy_batches(std::mt19937_64& rng) {
  AttackBatches b;
  b.protected_negative = random_mat(rng, 5, 2);
  b.protected_negative.col(0).array() -= 2.0;
  b.nonprotected_negative = random_mat(rng, 5, 2);
  b.nonprotected_negative.col(0).array() -= 1.0;
  b.rows = random_mat(rng, 8, 2);
  b.labels = Vec(8);
  b.labels << 1, 0, 1, 0, 1, 1, 0, 0;
  return b;
}

TEST(AdversarialLoss, TermsSumAndRecompute) {
  std::mt19937_64 rng(2);
  const AttackBatches b = toy_batches(rng);
  const MlpModel m = MlpModel::initialize({2, 4, 1}, Activation::kTanh, 3);
  AttackWeights w;
  w.fair = 1.5;
  w.unfair = 0.7;
  w.delta = 0.3;
  w.acc = 2.0;
  const Vec delta = Vec::Constant(2, 0.2);
  const LossTerms t = adversarial_loss(m, delta, b, DistanceSpec::l2(), CfConfig{}, w);
  EXPECT_NEAR(t.total, t.fairness + t.unfairness + t.perturbation + t.accuracy, 1e-10);
  const double gap = t.cost_protected - t.cost_nonprotected;
  EXPECT_NEAR(t.fairness, 1.5 * gap * gap, 1e-12);
  EXPECT_NEAR(t.unfairness, 0.7 * t.cost_shifted, 1e-12);
  EXPECT_NEAR(t.perturbation, 0.3 * delta.squaredNorm(), 1e-12);
  EXPECT_NEAR(t.accuracy, 2.0 * m.loss(b.rows, b.labels), 1e-12);
  // Independent per-group recomputation of C_pr.
  double c_pr = 0.0;
  for (Eigen::Index i = 0; i < 5; ++i) {
    const Vec x = row_vec(b.protected_negative, i);
    c_pr += find_counterfactual(m, x, DistanceSpec::l2(), CfConfig{}).cost;
  }
  EXPECT_NEAR(t.cost_protected, c_pr / 5.0, 1e-12);
}

TEST(AdversarialLoss, ZeroDeltaUnfairEqualsNonprotectedCost) {
  std::mt19937_64 rng(3);
  const AttackBatches b = toy_batches(rng);
  const MlpModel m = MlpModel::initialize({2, 4, 1}, Activation::kTanh, 4);
  const LossTerms t = adversarial_loss(m, Vec::Zero(2), b, DistanceSpec::l2(), CfConfig{},
                                       AttackWeights{});
  EXPECT_EQ(t.cost_shifted, t.cost_nonprotected);
  EXPECT_EQ(t.perturbation, 0.0);
}

TEST(AdversarialLoss, AccuracyOnlyOnPerfectlyFitBatch) {
  std::mt19937_64 rng(5);
  AttackBatches b = toy_batches(rng);
  // Steep linear model on the first feature; labels follow its sign.
  const MlpModel m({2, 1}, Activation::kTanh, Vec((Vec(3) << 60.0, 0.0, 0.0).finished()));
  for (Eigen::Index i = 0; i < b.rows.rows(); ++i) {
    if (std::abs(b.rows(i, 0)) < 0.3) b.rows(i, 0) = b.rows(i, 0) < 0.0 ? -0.3 : 0.3;
    b.labels(i) = b.rows(i, 0) > 0.0 ? 1.0 : 0.0;
  }
  AttackWeights w;
  w.fair = 0.0;
  w.unfair = 0.0;
  w.delta = 0.0;
  w.acc = 1.0;
  const LossTerms t = adversarial_loss(m, Vec::Constant(2, 0.4), b, DistanceSpec::l2(),
                                       CfConfig{}, w);
  EXPECT_LT(t.total, 1e-6);
  EXPECT_GE(t.total, 0.0);
}

TEST(AdversarialLoss, EmptyBatchRejected) {
  std::mt19937_64 rng(4);
  AttackBatches b = toy_batches(rng);
  b.protected_negative = Mat(0, 2);
  const MlpModel m = MlpModel::initialize({2, 4, 1}, Activation::kTanh, 4);
  EXPECT_THROW(
      adversarial_loss(m, Vec::Zero(2), b, DistanceSpec::l2(), CfConfig{}, AttackWeights{}),
      Error);
}

TabularDataset toy_training_set(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Mat x = random_mat(rng, 40, 2);
  Vec y(40);
  std::vector<bool> mask(40);
  for (Eigen::Index i = 0; i < 40; ++i) {
    y(i) = x(i, 0) > 0.0 ? 1.0 : 0.0;
    mask[static_cast<std::size_t>(i)] = i % 2 == 0;
  }
  std::vector<ColumnMeta> cols = {{"a"}, {"b"}};
  return TabularDataset(x, y, cols, "y", mask, Vec::Zero(2), Vec::Ones(2), true);
}

AttackConfig small_attack() {
  AttackConfig c;
  c.outer_steps = 3;
  c.batch_protected = 4;
  c.batch_nonprotected = 4;
  c.cf_config.max_lambda_rounds = 2;
  c.cf_config.inner_steps = 50;
  c.seed = 5;
  return c;
}

TEST(TrainAttack, Deterministic) {
  const TabularDataset train = toy_training_set(6);
  const GroupMasks masks = group_masks(train);
  const MlpModel init = MlpModel::initialize({2, 3, 1}, Activation::kTanh, 7);
  const RecourseAttackModel a = train_attack(train, masks, init, small_attack());
  const RecourseAttackModel b = train_attack(train, masks, init, small_attack());
  EXPECT_EQ(a.model.params(), b.model.params());
  EXPECT_EQ(a.delta, b.delta);
  EXPECT_EQ(trace_to_csv(a.trace), trace_to_csv(b.trace));
  EXPECT_EQ(a.trace.size(), 3u);
}

TEST(TrainAttack, PerturbationOnlyShrinksDeltaGeometrically) {
  const TabularDataset train = toy_training_set(8);
  const GroupMasks masks = group_masks(train);
  const MlpModel init = MlpModel::initialize({2, 3, 1}, Activation::kTanh, 9);
  AttackConfig c = small_attack();
  c.weights = {0.0, 0.0, 1.0, 0.0};
  c.delta_init_scale = 0.5;
  c.delta_learning_rate = 0.1;
  const RecourseAttackModel r = train_attack(train, masks, init, c);
  // grad of mean |delta|^2 is 2 delta: each step multiplies by 1 - 2 * lr.
  AttackConfig frozen = c;
  frozen.outer_steps = 0;
  const Vec start = train_attack(train, masks, init, frozen).delta;
  EXPECT_LT((r.delta - start * std::pow(0.8, 3)).norm(), 1e-12);
  EXPECT_EQ(r.model.params(), init.params());
}

TEST(TrainAttack, UnfairOnlyShrinksOffAxisDelta) {
  const TabularDataset train = toy_training_set(10);
  const GroupMasks masks = group_masks(train);
  Vec p(3);
  p << 3.0, 0.0, 0.0;  // sigmoid(3 a): b is irrelevant
  const MlpModel init({2, 1}, Activation::kTanh, p);
  AttackConfig c = small_attack();
  c.weights = {0.0, 1.0, 0.0, 0.0};
  c.outer_learning_rate = 1e-12;
  c.delta_learning_rate = 0.05;
  c.delta_init_scale = 0.1;
  c.outer_steps = 5;
  AttackConfig frozen = c;
  frozen.outer_steps = 0;
  const Vec start = train_attack(train, masks, init, frozen).delta;
  const Vec end = train_attack(train, masks, init, c).delta;
  // The b component of delta survives into x_cf and only adds cost.
  EXPECT_LT(std::abs(end(1)), std::abs(start(1)));
}

TEST(TrainAttack, MissingNegativesRejected) {
  const TabularDataset train = toy_training_set(11);
  GroupMasks masks = group_masks(train);
  masks.protected_negative.clear();
  const MlpModel init = MlpModel::initialize({2, 3, 1}, Activation::kTanh, 7);
  EXPECT_THROW(train_attack(train, masks, init, small_attack()), Error);
}

TEST(AttackConfig, Validation) {
  AttackConfig c;
  c.weights = {0.0, 0.0, 0.0, 0.0};
  EXPECT_THROW(c.validate(), Error);
  c = AttackConfig{};
  c.weights.fair = -1.0;
  EXPECT_THROW(c.validate(), Error);
  c = AttackConfig{};
  c.unroll_steps = 0;
  EXPECT_THROW(c.validate(), Error);
  EXPECT_NO_THROW(AttackConfig{}.validate());
}

TEST(LowVarianceDirection, FindsThinAxis) {
  std::mt19937_64 rng(12);
  Mat rows = random_mat(rng, 500, 3);
  rows.col(1) *= 0.01;
  const Vec v = low_variance_direction(rows);
  EXPECT_NEAR(std::abs(v(1)), 1.0, 1e-3);
  EXPECT_GT(v(1), 0.0);
  EXPECT_NEAR(v.norm(), 1.0, 1e-12);
}

TEST(Serialization, DeltaRoundTripBitExact) {
  std::mt19937_64 rng(13);
  const Vec d = random_vec(rng, 5);
  EXPECT_EQ(parse_delta(format_delta(d)), d);
}

TEST(ClassifierTraining, SeparableDataReachesHighAccuracy) {
  const TabularDataset train = toy_training_set(14);
  const MlpModel init = MlpModel::initialize({2, 4, 1}, Activation::kTanh, 15);
  const MlpModel m = train_classifier(train, init, 500, 0.5);
  EXPECT_LT(m.loss(train.features(), train.labels()),
            init.loss(train.features(), train.labels()));
  double hits = 0.0;
  for (Eigen::Index i = 0; i < 40; ++i) {
    hits += (m.predict(row_vec(train.features(), i)) >= 0.5) == (train.labels()(i) == 1.0);
  }
  EXPECT_GE(hits / 40.0, 0.95);
}

}  // namespace
}  // namespace xmanip
