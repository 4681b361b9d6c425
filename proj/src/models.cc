#include "xmanip/models.h"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "xmanip/error.h"
#include "xmanip/kv_config.h"
#include "xmanip/random.h"

namespace xmanip {
namespace {

using ConstMatMap = Eigen::Map<const Mat>;
using MatMap = Eigen::Map<Mat>;

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace

Vec Predictor::predict_batch(const Mat& rows) const {
  Vec out(rows.rows());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) out(i) = predict(row_vec(rows, i));
  return out;
}

// ---------------------------------------------------------------------------
// MlpModel

struct MlpModel::Trace {
  // inputs[l] is the input to layer l; pre[l] its pre-activation.
  std::vector<Vec> inputs;
  std::vector<Vec> pre;
  double logit = 0.0;
};

std::size_t MlpModel::param_count_for(const std::vector<std::size_t>& layer_sizes) {
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    total += (layer_sizes[l] + 1) * layer_sizes[l + 1];
  }
  return total;
}

MlpModel::MlpModel(std::vector<std::size_t> layer_sizes, Activation activation, Vec params)
    : layer_sizes_(std::move(layer_sizes)), activation_(activation), params_(std::move(params)) {
  if (layer_sizes_.size() < 2 || layer_sizes_.back() != 1) {
    throw Error(ErrorCode::kInvalidArgument, "MLP needs at least input and a single output unit");
  }
  for (const auto s : layer_sizes_) {
    if (s == 0) throw Error(ErrorCode::kInvalidArgument, "MLP layer of size 0");
  }
  check_dim(static_cast<std::size_t>(params_.size()), param_count_for(layer_sizes_),
            "MLP parameter vector");
}

MlpModel MlpModel::initialize(std::vector<std::size_t> layer_sizes, Activation activation,
                              std::uint64_t seed) {
  Vec params = Vec::Zero(static_cast<Eigen::Index>(param_count_for(layer_sizes)));
  Rng rng(seed);
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const auto in = static_cast<Eigen::Index>(layer_sizes[l]);
    const auto out = static_cast<Eigen::Index>(layer_sizes[l + 1]);
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (Eigen::Index k = 0; k < in * out; ++k) params(offset + k) = u(rng);
    offset += in * out + out;
  }
  return MlpModel(std::move(layer_sizes), activation, std::move(params));
}

std::unique_ptr<DifferentiableModel> MlpModel::with_params(const Vec& params) const {
  return std::make_unique<MlpModel>(layer_sizes_, activation_, params);
}

MlpModel::Trace MlpModel::forward(const Vec& x) const {
  check_dim(static_cast<std::size_t>(x.size()), input_dim(), "MLP input");
  Trace trace;
  const std::size_t n_layers = layer_sizes_.size() - 1;
  trace.inputs.reserve(n_layers);
  trace.pre.reserve(n_layers);
  Vec a = x;
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto in = static_cast<Eigen::Index>(layer_sizes_[l]);
    const auto out = static_cast<Eigen::Index>(layer_sizes_[l + 1]);
    const ConstMatMap w(params_.data() + offset, out, in);
    const auto b = params_.segment(offset + in * out, out);
    Vec z = w * a + b;
    offset += in * out + out;
    trace.inputs.push_back(a);
    if (l + 1 < n_layers) {
      a = activation_ == Activation::kTanh ? Vec(z.array().tanh()) : Vec(z.array().max(0.0));
    } else {
      trace.logit = z(0);
    }
    trace.pre.push_back(std::move(z));
  }
  return trace;
}

void MlpModel::backward(const Trace& trace, double dlogit, Vec* dparams, Vec* dinput) const {
  const std::size_t n_layers = layer_sizes_.size() - 1;
  // Offsets of each layer's block.
  std::vector<Eigen::Index> offsets(n_layers);
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l < n_layers; ++l) {
    offsets[l] = offset;
    offset += static_cast<Eigen::Index>((layer_sizes_[l] + 1) * layer_sizes_[l + 1]);
  }

  Vec delta = Vec::Constant(1, dlogit);
  for (std::size_t l = n_layers; l-- > 0;) {
    const auto in = static_cast<Eigen::Index>(layer_sizes_[l]);
    const auto out = static_cast<Eigen::Index>(layer_sizes_[l + 1]);
    const ConstMatMap w(params_.data() + offsets[l], out, in);
    if (dparams != nullptr) {
      MatMap dw(dparams->data() + offsets[l], out, in);
      dw.noalias() += delta * trace.inputs[l].transpose();
      dparams->segment(offsets[l] + in * out, out) += delta;
    }
    if (l == 0 && dinput == nullptr) break;
    Vec da = w.transpose() * delta;
    if (l == 0) {
      *dinput += da;
      break;
    }
    const Vec& z = trace.pre[l - 1];
    if (activation_ == Activation::kTanh) {
      delta = da.array() * (1.0 - z.array().tanh().square());
    } else {
      delta = da.array() * (z.array() > 0.0).cast<double>();
    }
  }
}

double MlpModel::logit(const Vec& x) const { return forward(x).logit; }

double MlpModel::predict(const Vec& x) const { return sigmoid(logit(x)); }

Vec MlpModel::grad_input(const Vec& x) const {
  const Trace trace = forward(x);
  const double p = sigmoid(trace.logit);
  Vec g = Vec::Zero(x.size());
  backward(trace, p * (1.0 - p), nullptr, &g);
  return g;
}

Vec MlpModel::grad_params(const Vec& x) const {
  const Trace trace = forward(x);
  const double p = sigmoid(trace.logit);
  Vec g = Vec::Zero(params_.size());
  backward(trace, p * (1.0 - p), &g, nullptr);
  return g;
}

double MlpModel::loss(const Mat& rows, const Vec& labels) const {
  check_dim(static_cast<std::size_t>(labels.size()), static_cast<std::size_t>(rows.rows()),
            "loss labels");
  if (rows.rows() == 0) throw Error(ErrorCode::kInvalidArgument, "empty batch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const double z = logit(row_vec(rows, i));
    // -[y log s(z) + (1-y) log(1-s(z))] = softplus(z) - y z
    total += softplus(z) - labels(i) * z;
  }
  return total / static_cast<double>(rows.rows());
}

Vec MlpModel::grad_loss(const Mat& rows, const Vec& labels) const {
  check_dim(static_cast<std::size_t>(labels.size()), static_cast<std::size_t>(rows.rows()),
            "loss labels");
  if (rows.rows() == 0) throw Error(ErrorCode::kInvalidArgument, "empty batch");
  Vec g = Vec::Zero(params_.size());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const Trace trace = forward(row_vec(rows, i));
    backward(trace, sigmoid(trace.logit) - labels(i), &g, nullptr);
  }
  return g / static_cast<double>(rows.rows());
}

Vec MlpModel::hvp_input(const Vec& x, const Vec& v) const {
  check_dim(static_cast<std::size_t>(v.size()), input_dim(), "HVP direction");
  const double eps = 1e-4 * std::max(1.0, x.norm());
  return (grad_input(x + eps * v) - grad_input(x - eps * v)) / (2.0 * eps);
}

// ---------------------------------------------------------------------------
// Serialization

std::string format_hex_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

double parse_hex_double(std::string_view s) {
  const std::string str(s);
  char* end = nullptr;
  const double v = std::strtod(str.c_str(), &end);
  if (str.empty() || end != str.c_str() + str.size()) {
    throw Error(ErrorCode::kIo, "malformed number '" + str + "'");
  }
  return v;
}

std::string serialize_mlp(const MlpModel& model) {
  std::ostringstream out;
  out << "format = xmanip-mlp\n";
  out << "version = 1\n";
  out << "activation = " << (model.activation() == Activation::kTanh ? "tanh" : "relu") << '\n';
  out << "layers = ";
  for (std::size_t i = 0; i < model.layer_sizes().size(); ++i) {
    out << (i ? "," : "") << model.layer_sizes()[i];
  }
  out << "\nparams = ";
  for (Eigen::Index i = 0; i < model.params().size(); ++i) {
    out << (i ? "," : "") << format_hex_double(model.params()(i));
  }
  out << '\n';
  return out.str();
}

MlpModel deserialize_mlp(std::string_view text) {
  KvConfig kv;
  try {
    kv = KvConfig::parse(text);
  } catch (const Error& e) {
    throw Error(ErrorCode::kIo, std::string("model file: ") + e.what());
  }
  if (kv.get_string("format", "") != "xmanip-mlp" || kv.get_string("version", "") != "1") {
    throw Error(ErrorCode::kIo, "not a version-1 MLP model file");
  }
  const std::string act = kv.get_string("activation", "");
  if (act != "tanh" && act != "relu") throw Error(ErrorCode::kIo, "unknown activation '" + act + "'");

  auto split_list = [](const std::string& s) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) parts.push_back(item);
    return parts;
  };
  std::vector<std::size_t> layers;
  for (const auto& p : split_list(kv.get_string("layers", ""))) {
    layers.push_back(static_cast<std::size_t>(std::stoul(p)));
  }
  const auto values = split_list(kv.get_string("params", ""));
  Vec params(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) {
    params(static_cast<Eigen::Index>(i)) = parse_hex_double(values[i]);
  }
  return MlpModel(std::move(layers), act == "tanh" ? Activation::kTanh : Activation::kRelu,
                  std::move(params));
}

// ---------------------------------------------------------------------------
// RuleClassifier

RuleClassifier::RuleClassifier(Kind kind, std::size_t input_dim, std::size_t a, std::size_t b,
                               double threshold_a, double threshold_b)
    : kind_(kind),
      input_dim_(input_dim),
      column_a_(a),
      column_b_(b),
      threshold_a_(threshold_a),
      threshold_b_(threshold_b) {
  if (a >= input_dim || b >= input_dim) {
    throw Error(ErrorCode::kDimensionMismatch, "rule references a column outside the input");
  }
}

RuleClassifier RuleClassifier::one_feature(std::size_t input_dim, std::size_t column,
                                           double threshold) {
  return RuleClassifier(Kind::kOneFeature, input_dim, column, column, threshold, threshold);
}

RuleClassifier RuleClassifier::exclusive_or(std::size_t input_dim, std::size_t column_a,
                                            std::size_t column_b, double threshold_a,
                                            double threshold_b) {
  return RuleClassifier(Kind::kXor, input_dim, column_a, column_b, threshold_a, threshold_b);
}

double RuleClassifier::predict(const Vec& x) const {
  check_dim(static_cast<std::size_t>(x.size()), input_dim_, "rule input");
  const bool a = x(static_cast<Eigen::Index>(column_a_)) >= threshold_a_;
  if (kind_ == Kind::kOneFeature) return a ? 1.0 : 0.0;
  const bool b = x(static_cast<Eigen::Index>(column_b_)) >= threshold_b_;
  return a != b ? 1.0 : 0.0;
}

// ---------------------------------------------------------------------------
// ScaffoldClassifier

ScaffoldClassifier::ScaffoldClassifier(std::shared_ptr<const Predictor> biased,
                                       std::shared_ptr<const Predictor> unbiased,
                                       std::shared_ptr<const RandomForest> discriminator,
                                       double threshold)
    : biased_(std::move(biased)),
      unbiased_(std::move(unbiased)),
      discriminator_(std::move(discriminator)),
      threshold_(threshold) {
  if (!biased_ || !unbiased_ || !discriminator_) {
    throw Error(ErrorCode::kInvalidArgument, "scaffold needs biased, unbiased and discriminator");
  }
  check_dim(unbiased_->input_dim(), biased_->input_dim(), "scaffold unbiased model");
  check_dim(discriminator_->input_dim(), biased_->input_dim(), "scaffold discriminator");
  if (!(threshold_ >= 0.0 && threshold_ <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "scaffold threshold must lie in [0, 1]");
  }
}

bool ScaffoldClassifier::routes_to_biased(const Vec& x) const {
  return discriminator_->predict(x) >= threshold_;
}

double ScaffoldClassifier::predict(const Vec& x) const {
  return routes_to_biased(x) ? biased_->predict(x) : unbiased_->predict(x);
}

}  // namespace xmanip
