#include "xmanip/experiment_config.h"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "xmanip/error.h"
#include "xmanip/synthetic.h"

namespace xmanip {
namespace {

std::size_t get_count(const KvConfig& kv, const std::string& key, std::size_t fallback) {
  const long v = kv.get_int(key, static_cast<long>(fallback));
  if (v < 0) throw Error(ErrorCode::kConfig, "key '" + key + "' must be >= 0");
  return static_cast<std::size_t>(v);
}

// Comma-separated positive integers, e.g. "32,32".
std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t value = 0;
    const char* first = item.data() + std::min(item.size(), item.find_first_not_of(' '));
    const char* last = item.data() + item.find_last_not_of(' ') + 1;
    const auto res = std::from_chars(first, last, value);
    if (res.ec != std::errc() || res.ptr != last || value == 0) {
      throw Error(ErrorCode::kConfig, "key '" + key + "': expected a list like 32,32");
    }
    out.push_back(value);
  }
  return out;
}

CfConfig read_cf(const KvConfig& kv, const std::string& prefix, CfConfig cf) {
  cf.lambda_init = kv.get_double(prefix + "lambda_init", cf.lambda_init);
  cf.lambda_growth = kv.get_double(prefix + "lambda_growth", cf.lambda_growth);
  cf.max_lambda_rounds = get_count(kv, prefix + "max_lambda_rounds", cf.max_lambda_rounds);
  cf.inner_steps = get_count(kv, prefix + "inner_steps", cf.inner_steps);
  cf.learning_rate = kv.get_double(prefix + "learning_rate", cf.learning_rate);
  cf.target_threshold = kv.get_double(prefix + "target_threshold", cf.target_threshold);
  cf.tolerance = kv.get_double(prefix + "tolerance", cf.tolerance);
  return cf;
}

const std::vector<std::string> kCfKeys = {"lambda_init",   "lambda_growth",    "max_lambda_rounds",
                                          "inner_steps",   "learning_rate",    "target_threshold",
                                          "tolerance"};

}  // namespace

const std::vector<std::string>& ExperimentConfig::known_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k = {
        "seed",
        "data.csv",
        "data.schema",
        "data.synthetic",
        "data.rows",
        "two_basin.extent",
        "two_basin.label_slope",
        "two_basin.offset",
        "two_basin.band_width",
        "two_basin.protected_spread",
        "two_basin.group_rate",
        "two_basin.near_rate",
        "two_basin.near_gap",
        "output.dir",
        "split.train_fraction",
        "lime.n_samples",
        "lime.kernel_width",
        "lime.ridge_alpha",
        "lime.top_k",
        "lime.max_explained",
        "scaffold.perturbations_per_row",
        "scaffold.threshold",
        "forest.n_trees",
        "forest.max_depth",
        "forest.min_samples_split",
        "forest.features_per_split",
        "forest.bootstrap",
        "cf.algorithm",
        "cf.distance",
        "cf.beta",
        "model.hidden",
        "model.baseline_steps",
        "model.baseline_learning_rate",
        "attack.w_fair",
        "attack.w_unfair",
        "attack.w_delta",
        "attack.w_acc",
        "attack.outer_steps",
        "attack.learning_rate",
        "attack.delta_learning_rate",
        "attack.hypergrad",
        "attack.unroll_steps",
        "attack.batch_protected",
        "attack.batch_nonprotected",
        "attack.delta_init",
        "attack.delta_init_scale",
        "attack.distance",
        "attack.beta",
        "audit.distance",
        "audit.beta",
    };
    for (const std::string& key : kCfKeys) {
      k.push_back("cf." + key);
      k.push_back("attack.cf." + key);
    }
    std::sort(k.begin(), k.end());
    return k;
  }();
  return keys;
}

ExperimentConfig ExperimentConfig::from_kv(const KvConfig& kv) {
  const auto& known = known_keys();
  for (const auto& [key, value] : kv.values()) {
    if (!std::binary_search(known.begin(), known.end(), key)) {
      throw Error(ErrorCode::kConfig, "unknown config key '" + key + "'");
    }
  }
  ExperimentConfig c;
  c.seed = kv.get_u64("seed");

  c.data.csv = kv.get_string("data.csv", "");
  c.data.schema = kv.get_string("data.schema", "");
  c.data.synthetic = kv.get_string("data.synthetic", "");
  c.data.rows = get_count(kv, "data.rows", c.data.rows);
  TwoBasinParams& tb = c.data.two_basin;
  tb.extent = kv.get_double("two_basin.extent", tb.extent);
  tb.label_slope = kv.get_double("two_basin.label_slope", tb.label_slope);
  tb.offset = kv.get_double("two_basin.offset", tb.offset);
  tb.band_width = kv.get_double("two_basin.band_width", tb.band_width);
  tb.protected_spread = kv.get_double("two_basin.protected_spread", tb.protected_spread);
  tb.group_rate = kv.get_double("two_basin.group_rate", tb.group_rate);
  tb.near_rate = kv.get_double("two_basin.near_rate", tb.near_rate);
  tb.near_gap = kv.get_double("two_basin.near_gap", tb.near_gap);
  if (c.data.csv.empty() == c.data.synthetic.empty()) {
    throw Error(ErrorCode::kConfig, "set exactly one of data.csv and data.synthetic");
  }
  if (!c.data.csv.empty()) {
    if (c.data.schema.empty()) throw Error(ErrorCode::kConfig, "data.csv needs data.schema");
    for (const auto& path : {c.data.csv, c.data.schema}) {
      if (!std::filesystem::exists(path)) {
        throw Error(ErrorCode::kConfig, "file not found: " + path.string());
      }
    }
  } else if (c.data.synthetic != "compas_like" && c.data.synthetic != "two_basin") {
    throw Error(ErrorCode::kConfig, "unknown data.synthetic '" + c.data.synthetic + "'");
  }
  c.output_dir = kv.get_string("output.dir", "out");

  const double train_fraction = kv.get_double("split.train_fraction", 0.8);

  LimeAttackConfig& la = c.lime_attack;
  la.seed = c.seed;
  la.train_fraction = train_fraction;
  la.lime.n_samples = get_count(kv, "lime.n_samples", la.lime.n_samples);
  la.lime.kernel_width = kv.get_double("lime.kernel_width", la.lime.kernel_width);
  la.lime.ridge_alpha = kv.get_double("lime.ridge_alpha", la.lime.ridge_alpha);
  la.top_k = get_count(kv, "lime.top_k", la.top_k);
  la.max_explained = get_count(kv, "lime.max_explained", la.max_explained);
  la.perturbations_per_row =
      get_count(kv, "scaffold.perturbations_per_row", la.perturbations_per_row);
  la.discriminator_threshold = kv.get_double("scaffold.threshold", la.discriminator_threshold);
  la.forest.n_trees = get_count(kv, "forest.n_trees", la.forest.n_trees);
  la.forest.max_depth = get_count(kv, "forest.max_depth", la.forest.max_depth);
  la.forest.min_samples_split =
      get_count(kv, "forest.min_samples_split", la.forest.min_samples_split);
  la.forest.features_per_split =
      get_count(kv, "forest.features_per_split", la.forest.features_per_split);
  la.forest.bootstrap = kv.get_bool("forest.bootstrap", la.forest.bootstrap);
  la.validate();

  c.cf = read_cf(kv, "cf.", CfConfig());
  c.cf.seed = c.seed;
  c.cf.validate();
  c.cf_algorithm = parse_cf_algorithm(kv.get_string("cf.algorithm", "wachter"));
  c.cf_distance = parse_distance(kv.get_string("cf.distance", "l2"), kv.get_double("cf.beta", 1.0));

  RecourseExperimentConfig& r = c.recourse;
  r.seed = c.seed;
  r.train_fraction = train_fraction;
  if (kv.has("model.hidden")) r.hidden = parse_sizes("model.hidden", kv.get_string("model.hidden"));
  r.baseline_steps = get_count(kv, "model.baseline_steps", r.baseline_steps);
  r.baseline_learning_rate = kv.get_double("model.baseline_learning_rate", r.baseline_learning_rate);
  AttackConfig& a = r.attack;
  a.weights.fair = kv.get_double("attack.w_fair", a.weights.fair);
  a.weights.unfair = kv.get_double("attack.w_unfair", a.weights.unfair);
  a.weights.delta = kv.get_double("attack.w_delta", a.weights.delta);
  a.weights.acc = kv.get_double("attack.w_acc", a.weights.acc);
  a.outer_steps = get_count(kv, "attack.outer_steps", a.outer_steps);
  a.outer_learning_rate = kv.get_double("attack.learning_rate", a.outer_learning_rate);
  a.delta_learning_rate = kv.get_double("attack.delta_learning_rate", a.delta_learning_rate);
  a.hypergrad_mode = parse_hypergrad_mode(kv.get_string("attack.hypergrad", "implicit"));
  a.unroll_steps = get_count(kv, "attack.unroll_steps", a.unroll_steps);
  a.batch_protected = get_count(kv, "attack.batch_protected", a.batch_protected);
  a.batch_nonprotected = get_count(kv, "attack.batch_nonprotected", a.batch_nonprotected);
  a.delta_init_scale = kv.get_double("attack.delta_init_scale", a.delta_init_scale);
  a.delta_init = parse_delta_init(kv.get_string("attack.delta_init", delta_init_name(a.delta_init)));
  a.cf_config = read_cf(kv, "attack.cf.", a.cf_config);
  a.distance =
      parse_distance(kv.get_string("attack.distance", "l2"), kv.get_double("attack.beta", 1.0));
  r.audit_distance =
      parse_distance(kv.get_string("audit.distance", "l2"), kv.get_double("audit.beta", 1.0));
  r.validate();
  return c;
}

TabularDataset load_data(const DataSource& source, std::uint64_t seed) {
  if (!source.csv.empty()) return load_csv(source.csv, Schema::load(source.schema));
  if (source.synthetic == "compas_like") return make_compas_like(source.rows, seed);
  if (source.synthetic == "two_basin") return make_two_basin(source.rows, seed, source.two_basin);
  throw Error(ErrorCode::kConfig, "unknown synthetic dataset '" + source.synthetic + "'");
}

DistanceSpec parse_distance(const std::string& name, double beta) {
  if (name == "l2") return DistanceSpec::l2();
  if (name == "elastic_net") return DistanceSpec::elastic_net(beta);
  if (name == "l1_mad") {
    DistanceSpec spec;
    spec.kind = DistanceKind::kL1Mad;
    return spec;
  }
  throw Error(ErrorCode::kConfig, "unknown distance '" + name + "'");
}

DistanceSpec resolve_distance(DistanceSpec spec, const Mat& rows) {
  if (spec.kind == DistanceKind::kL1Mad && spec.mad.size() == 0) {
    return DistanceSpec::l1_mad(median_absolute_deviation(rows));
  }
  return spec;
}

}  // namespace xmanip
