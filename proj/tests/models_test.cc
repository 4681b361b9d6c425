#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_util.h"
#include "xmanip/error.h"
#include "xmanip/lime.h"
#include "xmanip/models.h"

namespace xmanip {
namespace {

using testing::max_rel_error;
using testing::numeric_grad;
using testing::random_mat;
using testing::random_vec;

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Forward pass written directly from the documented parameter layout.
double oracle_forward(const std::vector<std::size_t>& sizes, Activation act, const Vec& p,
                      const Vec& x) {
  Eigen::VectorXd h = x;
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const auto in = static_cast<Eigen::Index>(sizes[l]);
    const auto out = static_cast<Eigen::Index>(sizes[l + 1]);
    Eigen::MatrixXd w(out, in);
    for (Eigen::Index r = 0; r < out; ++r) {
      for (Eigen::Index c = 0; c < in; ++c) w(r, c) = p(offset + r * in + c);
    }
    offset += out * in;
    const Eigen::VectorXd b = p.segment(offset, out);
    offset += out;
    Eigen::VectorXd z = w * h + b;
    if (l + 2 < sizes.size()) {
      if (act == Activation::kTanh) {
        z = z.array().tanh().matrix();
      } else {
        z = z.cwiseMax(0.0);
      }
    }
    h = z;
  }
  return sigmoid(h(0));
}

MlpModel random_net(std::mt19937_64& rng, Activation act = Activation::kTanh) {
  const std::size_t d = 1 + rng() % 4;
  std::vector<std::size_t> sizes = {d};
  const std::size_t depth = 1 + rng() % 2;
  for (std::size_t i = 0; i < depth; ++i) sizes.push_back(2 + rng() % 5);
  sizes.push_back(1);
  const auto n = static_cast<Eigen::Index>(MlpModel::param_count_for(sizes));
  return MlpModel(sizes, act, random_vec(rng, n, 0.8));
}

TEST(Mlp, ZeroWeightsGiveHalf) {
  const MlpModel m({3, 4, 1}, Activation::kTanh, Vec::Zero(MlpModel::param_count_for({3, 4, 1})));
  EXPECT_DOUBLE_EQ(m.predict(Vec::Ones(3)), 0.5);
}

TEST(Mlp, SingleLinearLayer) {
  Vec p(2);
  p << 2.0, 0.0;
  const MlpModel m({1, 1}, Activation::kTanh, p);
  EXPECT_NEAR(m.predict(Vec::Ones(1)), 0.8807970779778823, 1e-15);
}

TEST(Mlp, ParamCount) {
  EXPECT_EQ(MlpModel::param_count_for({3, 5, 2, 1}), (3 + 1) * 5 + (5 + 1) * 2 + (2 + 1) * 1u);
}

TEST(Mlp, DimensionMismatch) {
  const MlpModel m = MlpModel::initialize({3, 4, 1}, Activation::kTanh, 1);
  EXPECT_THROW(m.predict(Vec::Ones(2)), Error);
}

TEST(Mlp, ForwardMatchesOracle) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const Activation act = trial % 2 ? Activation::kRelu : Activation::kTanh;
    const MlpModel m = random_net(rng, act);
    const Vec x = random_vec(rng, static_cast<Eigen::Index>(m.input_dim()));
    EXPECT_NEAR(m.predict(x), oracle_forward(m.layer_sizes(), act, m.params(), x), 1e-12);
  }
}

TEST(Mlp, GradInputMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 120; ++trial) {
    const MlpModel m = random_net(rng);
    const Vec x = random_vec(rng, static_cast<Eigen::Index>(m.input_dim()));
    const Vec fd = numeric_grad([&](const Vec& v) { return m.predict(v); }, x);
    EXPECT_LT(max_rel_error(m.grad_input(x), fd, 1e-6), 1e-4) << trial;
  }
}

TEST(Mlp, GradParamsMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 120; ++trial) {
    const MlpModel m = random_net(rng);
    const Vec x = random_vec(rng, static_cast<Eigen::Index>(m.input_dim()));
    const Vec fd = numeric_grad(
        [&](const Vec& p) { return MlpModel(m.layer_sizes(), m.activation(), p).predict(x); },
        m.params());
    EXPECT_LT(max_rel_error(m.grad_params(x), fd, 1e-6), 1e-4) << trial;
  }
}

TEST(Mlp, LossGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 120; ++trial) {
    const MlpModel m = random_net(rng);
    const Mat rows = random_mat(rng, 6, static_cast<Eigen::Index>(m.input_dim()));
    Vec labels(6);
    for (Eigen::Index i = 0; i < 6; ++i) labels(i) = static_cast<double>(rng() % 2);
    const Vec fd = numeric_grad(
        [&](const Vec& p) {
          return MlpModel(m.layer_sizes(), m.activation(), p).loss(rows, labels);
        },
        m.params());
    EXPECT_LT(max_rel_error(m.grad_loss(rows, labels), fd, 1e-6), 1e-4) << trial;
  }
}

TEST(Mlp, LinearGradInputClosedForm) {
  Vec p(3);
  p << 0.7, -1.3, 0.2;
  const MlpModel m({2, 1}, Activation::kTanh, p);
  Vec x(2);
  x << 0.4, 0.9;
  const double s = m.predict(x);
  const Vec expected = s * (1.0 - s) * p.head(2);
  EXPECT_LT((m.grad_input(x) - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Mlp, ConstantOutputHasZeroInputGradient) {
  std::vector<std::size_t> sizes = {3, 4, 1};
  std::mt19937_64 rng(5);
  Vec p = random_vec(rng, static_cast<Eigen::Index>(MlpModel::param_count_for(sizes)));
  p.segment(16, 4).setZero();  // last-layer weights
  const MlpModel m(sizes, Activation::kTanh, p);
  EXPECT_EQ(m.grad_input(random_vec(rng, 3)).norm(), 0.0);
}

TEST(Mlp, DuplicatedBatchKeepsMeanGradient) {
  std::mt19937_64 rng(6);
  const MlpModel m = random_net(rng);
  const Mat rows = random_mat(rng, 5, static_cast<Eigen::Index>(m.input_dim()));
  Vec labels(5);
  labels << 1, 0, 1, 1, 0;
  Mat twice(10, rows.cols());
  twice << rows, rows;
  Vec labels2(10);
  labels2 << labels, labels;
  EXPECT_LT(max_rel_error(m.grad_loss(rows, labels), m.grad_loss(twice, labels2)), 1e-12);
}

TEST(Mlp, SaturatedSeparableBatchHasTinyGradient) {
  Vec p(2);
  p << 60.0, 0.0;
  const MlpModel m({1, 1}, Activation::kTanh, p);
  Mat rows(2, 1);
  rows << 1.0, -1.0;
  Vec labels(2);
  labels << 1.0, 0.0;
  EXPECT_LT(m.grad_loss(rows, labels).norm(), 1e-6);
}

TEST(Mlp, HvpMatchesAnalyticSecondDerivative) {
  Vec p(2);
  p << 1.7, -0.4;
  const MlpModel m({1, 1}, Activation::kTanh, p);
  for (double x0 : {-1.0, 0.0, 0.3, 2.0}) {
    const double s = m.predict(Vec::Constant(1, x0));
    const double second = p(0) * p(0) * s * (1.0 - s) * (1.0 - 2.0 * s);
    const double hvp = m.hvp_input(Vec::Constant(1, x0), Vec::Ones(1))(0);
    EXPECT_LT(std::abs(hvp - second), 1e-3 * std::max(std::abs(second), 1e-3)) << x0;
  }
}

TEST(Mlp, HvpZeroDirection) {
  std::mt19937_64 rng(7);
  const MlpModel m = random_net(rng);
  const auto d = static_cast<Eigen::Index>(m.input_dim());
  EXPECT_EQ(m.hvp_input(random_vec(rng, d), Vec::Zero(d)).norm(), 0.0);
}

TEST(Mlp, HvpSymmetry) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const MlpModel m = random_net(rng);
    const auto d = static_cast<Eigen::Index>(m.input_dim());
    const Vec x = random_vec(rng, d);
    const Vec u = random_vec(rng, d);
    const Vec v = random_vec(rng, d);
    const double a = v.dot(m.hvp_input(x, u));
    const double b = u.dot(m.hvp_input(x, v));
    EXPECT_LE(std::abs(a - b), 1e-3 * std::max({std::abs(a), std::abs(b), 1e-4})) << trial;
  }
}

TEST(Mlp, SerializationIsBitExact) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const MlpModel m = random_net(rng, trial % 2 ? Activation::kRelu : Activation::kTanh);
    const MlpModel back = deserialize_mlp(serialize_mlp(m));
    EXPECT_EQ(back.layer_sizes(), m.layer_sizes());
    EXPECT_EQ(back.activation(), m.activation());
    for (Eigen::Index i = 0; i < m.params().size(); ++i) {
      EXPECT_EQ(back.params()(i), m.params()(i));
    }
  }
}

TEST(Rules, OneFeature) {
  const RuleClassifier r = RuleClassifier::one_feature(3, 0, 0.5);
  Vec x(3);
  x << 1, 0, 0;
  EXPECT_EQ(r.predict(x), 1.0);
  x(0) = 0.0;
  EXPECT_EQ(r.predict(x), 0.0);
  EXPECT_THROW(r.predict(Vec::Zero(2)), Error);
}

TEST(Rules, XorTruthTable) {
  const RuleClassifier r = RuleClassifier::exclusive_or(2, 0, 1);
  auto at = [&](double a, double b) {
    Vec x(2);
    x << a, b;
    return r.predict(x);
  };
  EXPECT_EQ(at(0, 0), 0.0);
  EXPECT_EQ(at(1, 0), 1.0);
  EXPECT_EQ(at(0, 1), 1.0);
  EXPECT_EQ(at(1, 1), 0.0);
  EXPECT_EQ(at(0.7, 0), 1.0);
}

double holdout_accuracy(const RandomForest& forest, const Mat& real, const Mat& fake) {
  double hits = 0.0;
  for (Eigen::Index i = 0; i < real.rows(); ++i) hits += forest.predict(row_vec(real, i)) >= 0.5;
  for (Eigen::Index i = 0; i < fake.rows(); ++i) hits += forest.predict(row_vec(fake, i)) < 0.5;
  return hits / static_cast<double>(real.rows() + fake.rows());
}

TEST(Forest, SeparableClusters) {
  std::mt19937_64 rng(10);
  Mat fake_train = random_mat(rng, 300, 3);
  fake_train.col(0).array() += 10.0;
  Mat fake_test = random_mat(rng, 300, 3);
  fake_test.col(0).array() += 10.0;
  ForestParams params;
  params.n_trees = 20;
  const RandomForest f = forest_train(random_mat(rng, 300, 3), fake_train, params);
  EXPECT_GT(holdout_accuracy(f, random_mat(rng, 300, 3), fake_test), 0.99);
}

TEST(Forest, IdenticalDistributionsAreChance) {
  std::mt19937_64 rng(11);
  ForestParams params;
  params.n_trees = 50;
  params.max_depth = 4;
  const RandomForest f = forest_train(random_mat(rng, 1000, 3), random_mat(rng, 1000, 3), params);
  EXPECT_NEAR(holdout_accuracy(f, random_mat(rng, 2000, 3), random_mat(rng, 2000, 3)), 0.5, 0.05);
}

TEST(Forest, EmptyClass) {
  EXPECT_THROW(forest_train(Mat::Ones(3, 2), Mat(0, 2), ForestParams{}), Error);
}

TEST(Forest, DepthOneMatchesExhaustiveScan) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 30;
    Mat rows(n, 1);
    std::vector<int> classes(n);
    for (int i = 0; i < n; ++i) {
      rows(i, 0) = unit(rng);
      classes[static_cast<std::size_t>(i)] = unit(rng) < (rows(i, 0) > 0.6 ? 0.85 : 0.2);
    }
    // Brute force over midpoints between sorted distinct values.
    std::vector<double> sorted(rows.data(), rows.data() + n);
    std::sort(sorted.begin(), sorted.end());
    auto gini = [](double ones, double total) {
      if (total == 0) return 0.0;
      const double p = ones / total;
      return 2.0 * p * (1.0 - p);
    };
    double best = 1e9;
    double best_split = 0.0;
    for (int s = 0; s + 1 < n; ++s) {
      const double t = 0.5 * (sorted[s] + sorted[s + 1]);
      double ln = 0, lo = 0, rn = 0, ro = 0;
      for (int i = 0; i < n; ++i) {
        if (rows(i, 0) <= t) {
          ln += 1;
          lo += classes[static_cast<std::size_t>(i)];
        } else {
          rn += 1;
          ro += classes[static_cast<std::size_t>(i)];
        }
      }
      const double imp = (ln * gini(lo, ln) + rn * gini(ro, rn)) / n;
      if (imp < best - 1e-15) {
        best = imp;
        best_split = t;
      }
    }
    ForestParams params;
    params.n_trees = 1;
    params.max_depth = 1;
    params.bootstrap = false;
    const RandomForest f = train_forest(rows, classes, params);
    const DecisionTree& tree = f.trees()[0];
    if (tree.nodes.size() == 1) continue;  // pure sample
    EXPECT_EQ(tree.nodes[0].feature, 0);
    EXPECT_DOUBLE_EQ(tree.nodes[0].split_value, best_split);
  }
}

DecisionTree stump(int feature, double split, double left, double right) {
  DecisionTree t;
  t.nodes.resize(3);
  t.nodes[0] = {feature, split, 1, 2, 0.5};
  t.nodes[1].fraction = left;
  t.nodes[2].fraction = right;
  return t;
}

TEST(Forest, HandTraversalAndOrderInvariance) {
  const std::vector<DecisionTree> trees = {stump(0, 0.0, 0.1, 0.9), stump(1, 1.0, 0.2, 0.6),
                                           stump(0, 2.0, 1.0, 0.0)};
  const RandomForest f(2, trees);
  Vec x(2);
  x << 0.5, 3.0;
  // Tree 1: 0.5 > 0 -> 0.9; tree 2: 3 > 1 -> 0.6; tree 3: 0.5 <= 2 -> 1.0.
  EXPECT_NEAR(f.predict(x), (0.9 + 0.6 + 1.0) / 3.0, 1e-15);
  const RandomForest g(2, {trees[2], trees[0], trees[1]});
  EXPECT_NEAR(g.predict(x), f.predict(x), 1e-15);
  const RandomForest single(2, {trees[1]});
  EXPECT_EQ(single.predict(x), 0.6);
}

TEST(Forest, LeafOnlyTreeReturnsPrior) {
  ForestParams params;
  params.n_trees = 1;
  params.bootstrap = false;
  Mat rows(4, 1);
  rows << 1, 1, 1, 1;
  const RandomForest f = train_forest(rows, {1, 0, 1, 1}, params);
  EXPECT_DOUBLE_EQ(f.predict(Vec::Ones(1)), 0.75);
}

TEST(Forest, SerializationRoundTrip) {
  std::mt19937_64 rng(13);
  ForestParams params;
  params.n_trees = 5;
  const RandomForest f = forest_train(random_mat(rng, 100, 3), random_mat(rng, 100, 3, 3.0), params);
  const RandomForest g = deserialize_forest(serialize_forest(f));
  for (int i = 0; i < 20; ++i) {
    const Vec x = random_vec(rng, 3, 2.0);
    EXPECT_EQ(f.predict(x), g.predict(x));
  }
}

class ScaffoldTest : public ::testing::Test {
 protected:
  void SetUp() override {
    std::mt19937_64 rng(14);
    real_ = random_mat(rng, 400, 3, 0.3);
    const DiscriminatorData data = discriminator_training_data(real_, 2, 15);
    ForestParams params;
    params.n_trees = 30;
    forest_ = std::make_shared<RandomForest>(forest_train(data.real, data.fake, params));
    biased_ = std::make_shared<RuleClassifier>(RuleClassifier::one_feature(3, 0, 0.0));
    unbiased_ = std::make_shared<RuleClassifier>(RuleClassifier::one_feature(3, 1, 100.0));
  }
  Mat real_;
  std::shared_ptr<RandomForest> forest_;
  std::shared_ptr<RuleClassifier> biased_;
  std::shared_ptr<RuleClassifier> unbiased_;
};

TEST_F(ScaffoldTest, TrainingRowsUseBiasedModel) {
  const ScaffoldClassifier s(biased_, unbiased_, forest_);
  for (Eigen::Index i = 0; i < 50; ++i) {
    const Vec x = row_vec(real_, i);
    ASSERT_GE(forest_->predict(x), 0.5);
    EXPECT_EQ(s.predict(x), biased_->predict(x));
  }
}

TEST_F(ScaffoldTest, FarPerturbationUsesUnbiasedModel) {
  const ScaffoldClassifier s(biased_, unbiased_, forest_);
  Vec x(3);
  x << 5.0, -4.0, 6.0;
  ASSERT_LT(forest_->predict(x), 0.5);
  EXPECT_EQ(s.predict(x), unbiased_->predict(x));
  EXPECT_NE(s.predict(x), biased_->predict(x));
}

TEST_F(ScaffoldTest, ZeroThresholdAlwaysBiased) {
  const ScaffoldClassifier s(biased_, unbiased_, forest_, 0.0);
  std::mt19937_64 rng(16);
  for (int i = 0; i < 50; ++i) {
    const Vec x = random_vec(rng, 3, 4.0);
    EXPECT_EQ(s.predict(x), biased_->predict(x));
  }
}

}  // namespace
}  // namespace xmanip
