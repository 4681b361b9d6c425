#ifndef XMANIP_MODELS_H_
#define XMANIP_MODELS_H_

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "xmanip/linalg.h"

namespace xmanip {

// Anything that maps a d-vector to a probability of the positive class.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::size_t input_dim() const = 0;
  virtual double predict(const Vec& x) const = 0;
  virtual Vec predict_batch(const Mat& rows) const;
};

// A scoring model f(x; theta) with first derivatives in x and theta.
class DifferentiableModel : public Predictor {
 public:
  virtual std::size_t param_count() const = 0;
  virtual const Vec& params() const = 0;
  virtual std::unique_ptr<DifferentiableModel> with_params(const Vec& params) const = 0;
  // Gradient of f with respect to the input.
  virtual Vec grad_input(const Vec& x) const = 0;
  // Gradient of f with respect to the parameter vector.
  virtual Vec grad_params(const Vec& x) const = 0;
};

enum class Activation { kTanh, kRelu };

// Fully connected network with a single sigmoid output unit.
//
// Parameter layout: for each layer in order, the weight matrix (out x in,
// row-major) followed by the bias vector (out).
class MlpModel final : public DifferentiableModel {
 public:
  // `layer_sizes` = {input, hidden..., 1}.
  MlpModel(std::vector<std::size_t> layer_sizes, Activation activation, Vec params);

  // Glorot-uniform weights, zero biases.
  static MlpModel initialize(std::vector<std::size_t> layer_sizes, Activation activation,
                             std::uint64_t seed);

  const std::vector<std::size_t>& layer_sizes() const { return layer_sizes_; }
  Activation activation() const { return activation_; }

  std::size_t input_dim() const override { return layer_sizes_.front(); }
  std::size_t param_count() const override { return static_cast<std::size_t>(params_.size()); }
  const Vec& params() const override { return params_; }
  std::unique_ptr<DifferentiableModel> with_params(const Vec& params) const override;

  double predict(const Vec& x) const override;
  double logit(const Vec& x) const;
  Vec grad_input(const Vec& x) const override;
  Vec grad_params(const Vec& x) const override;

  // Mean binary cross-entropy over the batch and its gradient in theta.
  double loss(const Mat& rows, const Vec& labels) const;
  Vec grad_loss(const Mat& rows, const Vec& labels) const;

  // Hessian-vector product of f in x by central differences of grad_input
  // with step 1e-4 * max(1, |x|).
  Vec hvp_input(const Vec& x, const Vec& v) const;

  static std::size_t param_count_for(const std::vector<std::size_t>& layer_sizes);

 private:
  struct Trace;
  Trace forward(const Vec& x) const;
  // Backpropagates d(out)/d(logit) = `dlogit`; accumulates into the
  // requested outputs when non-null.
  void backward(const Trace& trace, double dlogit, Vec* dparams, Vec* dinput) const;

  std::vector<std::size_t> layer_sizes_;
  Activation activation_;
  Vec params_;
};

std::string serialize_mlp(const MlpModel& model);
MlpModel deserialize_mlp(std::string_view text);

// Hand-written rules used as the biased model f and the innocuous model psi.
class RuleClassifier final : public Predictor {
 public:
  enum class Kind { kOneFeature, kXor };

  // 1 iff x[column] >= threshold.
  static RuleClassifier one_feature(std::size_t input_dim, std::size_t column, double threshold);
  // 1 iff (x[a] >= threshold_a) != (x[b] >= threshold_b). The default
  // thresholds binarize at 0.5.
  static RuleClassifier exclusive_or(std::size_t input_dim, std::size_t column_a,
                                     std::size_t column_b, double threshold_a = 0.5,
                                     double threshold_b = 0.5);

  Kind kind() const { return kind_; }
  std::size_t input_dim() const override { return input_dim_; }
  double predict(const Vec& x) const override;

 private:
  RuleClassifier(Kind kind, std::size_t input_dim, std::size_t a, std::size_t b,
                 double threshold_a, double threshold_b);

  Kind kind_;
  std::size_t input_dim_;
  std::size_t column_a_;
  std::size_t column_b_;
  double threshold_a_;
  double threshold_b_;
};

struct ForestParams {
  std::size_t n_trees = 100;
  std::size_t max_depth = 8;
  std::size_t min_samples_split = 2;
  // 0 selects round(sqrt(d)).
  std::size_t features_per_split = 0;
  bool bootstrap = true;
  std::uint64_t seed = 0;
};

// Axis-aligned decision tree stored as a node table. Node 0 is the root.
struct DecisionTree {
  struct Node {
    // -1 marks a leaf.
    int feature = -1;
    double split_value = 0.0;
    int left = -1;
    int right = -1;
    // Fraction of class-1 training samples reaching this node.
    double fraction = 0.0;
  };
  std::vector<Node> nodes;

  double predict(const Vec& x) const;
};

// Binary random forest; the score is the mean class-1 leaf fraction.
class RandomForest final : public Predictor {
 public:
  RandomForest(std::size_t input_dim, std::vector<DecisionTree> trees);

  std::size_t input_dim() const override { return input_dim_; }
  double predict(const Vec& x) const override;
  const std::vector<DecisionTree>& trees() const { return trees_; }

 private:
  std::size_t input_dim_;
  std::vector<DecisionTree> trees_;
};

// Trains a Gini forest separating class 1 rows from class 0 rows.
RandomForest train_forest(const Mat& rows, const std::vector<int>& classes,
                          const ForestParams& params);

// Discriminator between real rows (class 1) and perturbation rows (class 0).
RandomForest forest_train(const Mat& real, const Mat& fake, const ForestParams& params);

std::string serialize_forest(const RandomForest& forest);
RandomForest deserialize_forest(std::string_view text);

// Routes inputs the discriminator considers real to the biased model and
// everything else to the unbiased model.
class ScaffoldClassifier final : public Predictor {
 public:
  ScaffoldClassifier(std::shared_ptr<const Predictor> biased,
                     std::shared_ptr<const Predictor> unbiased,
                     std::shared_ptr<const RandomForest> discriminator, double threshold = 0.5);

  std::size_t input_dim() const override { return biased_->input_dim(); }
  double predict(const Vec& x) const override;
  bool routes_to_biased(const Vec& x) const;

  const Predictor& biased() const { return *biased_; }
  const Predictor& unbiased() const { return *unbiased_; }
  const RandomForest& discriminator() const { return *discriminator_; }
  double threshold() const { return threshold_; }

 private:
  std::shared_ptr<const Predictor> biased_;
  std::shared_ptr<const Predictor> unbiased_;
  std::shared_ptr<const RandomForest> discriminator_;
  double threshold_;
};

// Hex-float text, bit-exact through parse_hex_double.
std::string format_hex_double(double v);
double parse_hex_double(std::string_view s);

}  // namespace xmanip

#endif  // XMANIP_MODELS_H_
