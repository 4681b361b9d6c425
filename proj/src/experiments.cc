#include "xmanip/experiments.h"

#include <utility>

#include "xmanip/error.h"
#include "xmanip/experiment_config.h"
#include "xmanip/random.h"

namespace xmanip {
namespace {

// Midpoint between the protected and the other value of a binary
// sensitive column, in feature units. f fires at or above it.
double sensitive_threshold(const TabularDataset& data, std::size_t column) {
  const auto& mask = data.protected_mask();
  const auto c = static_cast<Eigen::Index>(column);
  std::optional<double> protected_value;
  std::optional<double> other_value;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double v = data.features()(static_cast<Eigen::Index>(i), c);
    auto& slot = mask[i] ? protected_value : other_value;
    if (!slot) slot = v;
    if (*slot != v) {
      throw Error(ErrorCode::kInvalidArgument, "sensitive column must be binary");
    }
  }
  if (!protected_value || !other_value) {
    throw Error(ErrorCode::kEmptyGroup, "sensitive column does not vary");
  }
  if (*protected_value < *other_value) {
    throw Error(ErrorCode::kConfig,
                "the protected value must be the larger of the two sensitive values");
  }
  return 0.5 * (*protected_value + *other_value);
}

double fraction_classified(const Predictor& model, const Mat& rows, bool expect_real,
                           double threshold) {
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const bool real = model.predict(row_vec(rows, i)) >= threshold;
    if (real == expect_real) ++hits;
  }
  return static_cast<double>(hits);
}

ScaffoldRun build_scaffold(const TabularDataset& raw, int uncorrelated,
                           const LimeAttackConfig& config, LimeAttackResult* result) {
  const AugmentedDataset augmented =
      augment_uncorrelated(raw, uncorrelated, derive_seed(config.seed, stream::kAugment));
  auto [train_raw, test_raw] = split(
      augmented.dataset, {config.train_fraction, derive_seed(config.seed, stream::kSplit)});
  const TabularDataset train = standardize(train_raw, train_raw);
  const TabularDataset test = standardize(test_raw, train_raw);
  const std::size_t d = train.dim();
  const std::size_t sensitive = *train.sensitive_column();
  const std::vector<std::size_t> unrelated = train.columns_with_role(ColumnRole::kUncorrelated);

  auto biased = std::make_shared<RuleClassifier>(
      RuleClassifier::one_feature(d, sensitive, sensitive_threshold(train, sensitive)));
  std::shared_ptr<const Predictor> innocuous;
  if (uncorrelated == 1) {
    innocuous = std::make_shared<RuleClassifier>(RuleClassifier::one_feature(
        d, unrelated[0], train.to_feature_units(unrelated[0], 0.5)));
  } else {
    innocuous = std::make_shared<RuleClassifier>(RuleClassifier::exclusive_or(
        d, unrelated[0], unrelated[1], train.to_feature_units(unrelated[0], 0.5),
        train.to_feature_units(unrelated[1], 0.5)));
  }

  const std::uint64_t disc_seed = derive_seed(config.seed, stream::kDiscriminator);
  const DiscriminatorData disc_train =
      discriminator_training_data(train.features(), config.perturbations_per_row, disc_seed);
  ForestParams forest_params = config.forest;
  forest_params.seed = derive_seed(config.seed, stream::kForest);
  auto forest = std::make_shared<RandomForest>(
      forest_train(disc_train.real, disc_train.fake, forest_params));
  auto scaffold = std::make_shared<ScaffoldClassifier>(biased, innocuous, forest,
                                                       config.discriminator_threshold);

  ScaffoldRun run;
  run.uncorrelated = uncorrelated;
  run.scaffold = scaffold;

  // Held-out discriminator accuracy: test rows against fresh draws around them.
  const DiscriminatorData disc_test =
      discriminator_training_data(test.features(), 1, derive_seed(disc_seed, 1));
  const double correct =
      fraction_classified(*forest, disc_test.real, true, config.discriminator_threshold) +
      fraction_classified(*forest, disc_test.fake, false, config.discriminator_threshold);
  run.discriminator_accuracy =
      correct / static_cast<double>(disc_test.real.rows() + disc_test.fake.rows());

  std::size_t agree = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const Vec x = row_vec(test.features(), static_cast<Eigen::Index>(i));
    if ((scaffold->predict(x) >= 0.5) == (biased->predict(x) >= 0.5)) ++agree;
  }
  run.fidelity = static_cast<double>(agree) / static_cast<double>(test.size());

  Mat explained = test.features();
  if (config.max_explained > 0 && config.max_explained < test.size()) {
    explained = test.features().topRows(static_cast<Eigen::Index>(config.max_explained)).eval();
  }
  std::vector<std::string> names;
  for (const ColumnMeta& column : test.columns()) names.push_back(column.name);
  LimeConfig lime = config.lime;
  lime.seed = derive_seed(config.seed, stream::kLime);
  run.table = attribution_frequencies(*scaffold, explained, names, lime, config.top_k,
                                      "scaffold_" + std::to_string(uncorrelated));

  if (uncorrelated == 1) {
    result->biased = attribution_frequencies(*biased, explained, names, lime, config.top_k,
                                             "biased");
    result->pca = pca_diagnostic(test.features(), derive_seed(config.seed, stream::kPca));
  }
  return run;
}

}  // namespace

void LimeAttackConfig::validate() const {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(ErrorCode::kConfig, "train_fraction must be in (0, 1)");
  }
  if (perturbations_per_row == 0) {
    throw Error(ErrorCode::kConfig, "perturbations_per_row must be >= 1");
  }
  if (!(discriminator_threshold >= 0.0 && discriminator_threshold <= 1.0)) {
    throw Error(ErrorCode::kConfig, "discriminator threshold must be in [0, 1]");
  }
  if (top_k == 0) throw Error(ErrorCode::kConfig, "top_k must be >= 1");
  if (forest.n_trees == 0 || forest.max_depth == 0) {
    throw Error(ErrorCode::kConfig, "forest needs at least one tree of depth >= 1");
  }
}

LimeAttackResult run_lime_attack(const TabularDataset& raw, const LimeAttackConfig& config) {
  config.validate();
  if (raw.standardized()) {
    throw Error(ErrorCode::kInvalidArgument, "run_lime_attack expects original units");
  }
  if (!raw.sensitive_column()) {
    throw Error(ErrorCode::kNoSensitiveColumn, "the scaffold needs a sensitive column");
  }
  LimeAttackResult result;
  for (int uncorrelated : {1, 2}) {
    result.scaffolds.push_back(build_scaffold(raw, uncorrelated, config, &result));
  }
  return result;
}

PcaDiagnostic pca_diagnostic(const Mat& real, std::uint64_t seed) {
  const DiscriminatorData draws = discriminator_training_data(real, 1, seed);
  PcaDiagnostic out;
  out.projection = pca_project(draws.real, draws.fake, 2);

  const auto n = static_cast<std::size_t>(out.projection.projected.rows());
  const auto [fit_rows, eval_rows] = split_indices(n, {0.5, derive_seed(seed, 1)});
  std::vector<int> classes;
  for (std::size_t i : fit_rows) classes.push_back(out.projection.source[i]);
  ForestParams tree;
  tree.n_trees = 1;
  tree.max_depth = 2;
  tree.features_per_split = 2;
  tree.bootstrap = false;
  tree.seed = derive_seed(seed, 2);
  const RandomForest stump =
      train_forest(select_rows(out.projection.projected, fit_rows), classes, tree);
  std::size_t correct = 0;
  for (std::size_t i : eval_rows) {
    const int predicted =
        stump.predict(row_vec(out.projection.projected, static_cast<Eigen::Index>(i))) >= 0.5;
    if (predicted == out.projection.source[i]) ++correct;
  }
  out.tree_accuracy = static_cast<double>(correct) / static_cast<double>(eval_rows.size());
  return out;
}

RecourseData prepare_recourse_data(const TabularDataset& raw, double train_fraction,
                                   std::uint64_t seed) {
  if (raw.standardized()) {
    throw Error(ErrorCode::kInvalidArgument, "prepare_recourse_data expects original units");
  }
  auto [train_raw, test_raw] = split(raw, {train_fraction, derive_seed(seed, stream::kSplit)});
  return {drop_columns(standardize(train_raw, train_raw), ColumnRole::kSensitive),
          drop_columns(standardize(test_raw, train_raw), ColumnRole::kSensitive)};
}

void RecourseExperimentConfig::validate() const {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(ErrorCode::kConfig, "train_fraction must be in (0, 1)");
  }
  if (hidden.empty()) throw Error(ErrorCode::kConfig, "need at least one hidden layer");
  for (std::size_t h : hidden) {
    if (h == 0) throw Error(ErrorCode::kConfig, "hidden layer sizes must be >= 1");
  }
  if (!(baseline_learning_rate > 0.0)) {
    throw Error(ErrorCode::kConfig, "baseline learning rate must be > 0");
  }
  attack.validate();
}

RecourseExperimentResult run_recourse_experiment(const TabularDataset& raw,
                                                 const RecourseExperimentConfig& config) {
  config.validate();
  const RecourseData data = prepare_recourse_data(raw, config.train_fraction, config.seed);
  const GroupMasks train_masks = group_masks(data.train);

  std::vector<std::size_t> layers = {data.train.dim()};
  layers.insert(layers.end(), config.hidden.begin(), config.hidden.end());
  layers.push_back(1);
  const MlpModel init = MlpModel::initialize(layers, Activation::kTanh,
                                             derive_seed(config.seed, stream::kModelInit));
  MlpModel baseline = train_classifier(data.train, init, config.baseline_steps,
                                       config.baseline_learning_rate);

  AttackConfig attack = config.attack;
  attack.distance = resolve_distance(attack.distance, data.train.features());
  attack.seed = derive_seed(config.seed, stream::kAttack);
  RecourseAttackModel trained = train_attack(data.train, train_masks, baseline, attack);

  const GroupMasks test_masks = group_masks(data.test);
  RecourseReport report = recourse_audit(
      trained.model, trained.delta, data.test, test_masks,
      resolve_distance(config.audit_distance, data.train.features()),
      default_audit_algorithms(data.train, derive_seed(config.seed, stream::kCounterfactual)));
  AccuracyParity parity = accuracy_parity(trained.model, baseline, data.test);
  return {std::move(baseline), std::move(trained), std::move(report), parity};
}

}  // namespace xmanip
