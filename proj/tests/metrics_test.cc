#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_util.h"
#include "xmanip/error.h"
#include "xmanip/metrics.h"

namespace xmanip {
namespace {

using testing::LogisticModel;

// One feature, protected flags and labels given directly.
TabularDataset one_feature(std::vector<double> x, std::vector<double> y, std::vector<bool> prot) {
  const auto n = static_cast<Eigen::Index>(x.size());
  Mat f(n, 1);
  Vec l(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    f(i, 0) = x[static_cast<std::size_t>(i)];
    l(i) = y[static_cast<std::size_t>(i)];
  }
  return TabularDataset(f, l, {{"a"}}, "y", std::move(prot), Vec::Zero(1), Vec::Ones(1), true);
}

class ToyAudit : public ::testing::Test {
 protected:
  ToyAudit()
      : model_(Vec((Vec(2) << 4.0, 0.0).finished())),
        data_(one_feature({-2.0, -1.0, 1.0, -0.5, -0.3, 0.8}, {0, 0, 1, 0, 0, 1},
                          {true, true, true, false, false, false})),
        masks_(group_masks(data_)) {}

  double search_cost(double x, double shift) const {
    const CounterfactualResult r = find_counterfactual(
        model_, Vec::Constant(1, x + shift), DistanceSpec::l2(), CfConfig{});
    return recourse_cost(DistanceSpec::l2(), Vec::Constant(1, x), r);
  }

  std::vector<AuditAlgorithm> wachter_only() const {
    return {AuditAlgorithm{CfAlgorithmSpec::wachter(), CfConfig{}}};
  }

  LogisticModel model_;
  TabularDataset data_;
  GroupMasks masks_;
};

TEST_F(ToyAudit, WachterRowMatchesIndependentSearches) {
  const Vec delta = Vec::Constant(1, 0.2);
  const RecourseReport report =
      recourse_audit(model_, delta, data_, masks_, DistanceSpec::l2(), wachter_only());
  ASSERT_EQ(report.rows.size(), 1u);
  const RecourseRow& row = report.rows[0];
  const double pr = (search_cost(-2.0, 0.0) + search_cost(-1.0, 0.0)) / 2.0;
  const double np = (search_cost(-0.5, 0.0) + search_cost(-0.3, 0.0)) / 2.0;
  const double shifted = (search_cost(-0.5, 0.2) + search_cost(-0.3, 0.2)) / 2.0;
  EXPECT_NEAR(row.protected_group.mean_cost, pr, 1e-12);
  EXPECT_NEAR(row.nonprotected.mean_cost, np, 1e-12);
  EXPECT_NEAR(row.nonprotected_shifted.mean_cost, shifted, 1e-12);
  EXPECT_NEAR(row.disparity, std::abs(pr - np), 1e-12);
  EXPECT_NEAR(row.cost_reduction, np / shifted, 1e-12);
  EXPECT_EQ(row.protected_group.count, 2u);
  EXPECT_EQ(row.protected_group.converged, 2u);
  EXPECT_DOUBLE_EQ(row.protected_group.convergence_rate, 1.0);
  // Costs grow with distance from the boundary in this monotone model.
  EXPECT_GT(pr, np);
  EXPECT_LT(shifted, np);
}

TEST_F(ToyAudit, ZeroDeltaGivesUnitReduction) {
  const RecourseReport report = recourse_audit(
      model_, Vec::Zero(1), data_, masks_, DistanceSpec::l2(),
      default_audit_algorithms(data_, 3));
  ASSERT_EQ(report.rows.size(), 4u);
  for (const RecourseRow& row : report.rows) {
    EXPECT_EQ(row.cost_reduction, 1.0) << cf_algorithm_name(row.algorithm);
    EXPECT_EQ(row.nonprotected.mean_cost, row.nonprotected_shifted.mean_cost);
  }
}

TEST_F(ToyAudit, Deterministic) {
  const auto algorithms = default_audit_algorithms(data_, 5);
  const RecourseReport a =
      recourse_audit(model_, Vec::Constant(1, 0.1), data_, masks_, DistanceSpec::l2(), algorithms);
  const RecourseReport b =
      recourse_audit(model_, Vec::Constant(1, 0.1), data_, masks_, DistanceSpec::l2(), algorithms);
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  EXPECT_EQ(format_table(a), format_table(b));
}

TEST_F(ToyAudit, EmptyNegativeGroupRejected) {
  GroupMasks masks = masks_;
  masks.nonprotected_negative.clear();
  try {
    recourse_audit(model_, Vec::Zero(1), data_, masks, DistanceSpec::l2(), wachter_only());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyGroup);
  }
}

TEST_F(ToyAudit, ReportJsonFields) {
  const nlohmann::json j = to_json(
      recourse_audit(model_, Vec::Zero(1), data_, masks_, DistanceSpec::l2(), wachter_only()));
  EXPECT_EQ(j.at("distance"), "l2");
  ASSERT_EQ(j.at("rows").size(), 1u);
  const auto& row = j.at("rows")[0];
  EXPECT_EQ(row.at("algorithm"), "wachter");
  EXPECT_TRUE(row.contains("disparity"));
  EXPECT_TRUE(row.contains("cost_reduction"));
}

TEST(DefaultAlgorithms, PrototypeIsPositiveMean) {
  const TabularDataset d = one_feature({1.0, 2.0, 3.0, -5.0}, {1, 1, 0, 0}, {true, false, true, false});
  const auto algorithms = default_audit_algorithms(d, 0);
  ASSERT_EQ(algorithms.size(), 4u);
  EXPECT_EQ(algorithms[0].spec.algorithm, CfAlgorithm::kWachter);
  EXPECT_EQ(algorithms[1].spec.algorithm, CfAlgorithm::kSparseWachter);
  EXPECT_EQ(algorithms[2].spec.algorithm, CfAlgorithm::kPrototype);
  EXPECT_DOUBLE_EQ(algorithms[2].spec.prototype(0), 1.5);
  EXPECT_EQ(algorithms[3].spec.algorithm, CfAlgorithm::kDice);
}

TEST(Accuracy, MatchesConfusionMatrixRecount) {
  std::mt19937_64 rng(1);
  const Mat rows = testing::random_mat(rng, 200, 2);
  Vec labels(200);
  std::bernoulli_distribution coin(0.5);
  for (Eigen::Index i = 0; i < 200; ++i) labels(i) = coin(rng) ? 1.0 : 0.0;
  const LogisticModel model(Vec((Vec(3) << 1.0, -0.5, 0.1).finished()));
  int tp = 0, tn = 0, fp = 0, fn = 0;
  for (Eigen::Index i = 0; i < 200; ++i) {
    const double z = rows(i, 0) - 0.5 * rows(i, 1) + 0.1;
    const bool predicted = z >= 0.0;
    const bool actual = labels(i) == 1.0;
    tp += predicted && actual;
    tn += !predicted && !actual;
    fp += predicted && !actual;
    fn += !predicted && actual;
  }
  EXPECT_EQ(tp + tn + fp + fn, 200);
  EXPECT_DOUBLE_EQ(accuracy(model, rows, labels), (tp + tn) / 200.0);
}

TEST(Accuracy, HalfScoreCountsAsPositive) {
  const LogisticModel flat(Vec::Zero(2));
  Mat rows(2, 1);
  rows << 0.0, 3.0;
  Vec labels(2);
  labels << 1.0, 0.0;
  EXPECT_DOUBLE_EQ(accuracy(flat, rows, labels), 0.5);
  EXPECT_THROW(accuracy(flat, Mat(0, 1), Vec(0)), Error);
}

TEST(Accuracy, ParityGap) {
  const TabularDataset d = one_feature({-1.0, 1.0, 2.0, -2.0}, {0, 1, 1, 1}, {});
  const LogisticModel good(Vec((Vec(2) << 1.0, 0.0).finished()));
  const LogisticModel bad(Vec((Vec(2) << -1.0, 0.0).finished()));
  const AccuracyParity p = accuracy_parity(bad, good, d);
  EXPECT_DOUBLE_EQ(p.baseline, 0.75);
  EXPECT_DOUBLE_EQ(p.model, 0.25);
  EXPECT_DOUBLE_EQ(p.gap, 0.5);
}

class WeightedSum final : public Predictor {
 public:
  std::size_t input_dim() const override { return 3; }
  double predict(const Vec& x) const override { return 0.1 * x(0) + 2.0 * x(1) - 0.7 * x(2); }
};

TEST(Attribution, LinearModelFrequencies) {
  std::mt19937_64 rng(2);
  const Mat rows = testing::random_mat(rng, 20, 3);
  LimeConfig lime;
  lime.n_samples = 500;
  const AttributionTable t =
      attribution_frequencies(WeightedSum(), rows, {"a", "b", "c"}, lime, 2, "lin");
  EXPECT_EQ(t.label, "lin");
  EXPECT_DOUBLE_EQ(t.top1(1), 1.0);
  EXPECT_DOUBLE_EQ(t.topk(1), 1.0);
  EXPECT_DOUBLE_EQ(t.topk(2), 1.0);
  EXPECT_DOUBLE_EQ(t.topk(0), 0.0);
  EXPECT_NEAR(t.topk.sum(), 2.0, 1e-12);
  EXPECT_NEAR(t.mean_r2, 1.0, 1e-3);  // ridge shrinkage only
  const std::string text = format_table({t}, 2);
  EXPECT_NE(text.find("lin"), std::string::npos);
  EXPECT_NE(plot_data({t}).find("# model column topk top1"), std::string::npos);
}

TEST(Attribution, ColumnNameMismatch) {
  LimeConfig lime;
  EXPECT_THROW(attribution_frequencies(WeightedSum(), Mat::Zero(2, 3), {"a"}, lime, 1, "x"), Error);
}

}  // namespace
}  // namespace xmanip
