// Command-line driver: ingest, make-data, attack-lime, attack-recourse,
// audit and explain. Every run writes manifest.json next to its outputs.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "xmanip/counterfactual.h"
#include "xmanip/error.h"
#include "xmanip/experiment_config.h"
#include "xmanip/experiments.h"
#include "xmanip/lime.h"
#include "xmanip/metrics.h"
#include "xmanip/random.h"
#include "xmanip/recourse_attack.h"
#include "xmanip/tabular.h"

#ifndef XMANIP_VERSION
#define XMANIP_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace xmanip {
namespace {

std::string hex64(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << v;
  return out.str();
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

// Collects emitted files and writes the manifest last.
class RunOutput {
 public:
  RunOutput(fs::path dir, std::string command, const KvConfig& kv, std::uint64_t seed)
      : dir_(std::move(dir)), command_(std::move(command)), kv_(kv), seed_(seed) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw Error(ErrorCode::kIo, "cannot create " + dir_.string() + ": " + ec.message());
  }

  const fs::path& dir() const { return dir_; }

  void write(const std::string& name, const std::string& content) {
    std::ofstream out(dir_ / name, std::ios::binary);
    out << content;
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + (dir_ / name).string());
    files_.push_back({{"name", name}, {"fnv1a64", hex64(fnv1a64(content))}});
  }

  void write_json(const std::string& name, const json& value) { write(name, value.dump(2) + "\n"); }

  void finish() {
    // output.dir does not change results, so it is left out of the hash.
    KvConfig hashed = kv_;
    hashed.set("output.dir", "");
    const std::time_t now = std::time(nullptr);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    json manifest = {
        {"command", command_},
        {"config_hash", hex64(fnv1a64(hashed.to_string()))},
        {"config", kv_.values()},
        {"seed", seed_},
        {"versions",
         {{"xmanip", XMANIP_VERSION},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                        "." + std::to_string(EIGEN_MINOR_VERSION)},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"cli11", CLI11_VERSION}}},
        {"files", files_},
        {"created_at", stamp},
    };
    std::ofstream out(dir_ / "manifest.json", std::ios::binary);
    out << manifest.dump(2) << "\n";
    if (!out) throw Error(ErrorCode::kIo, "cannot write manifest");
  }

 private:
  fs::path dir_;
  std::string command_;
  KvConfig kv_;
  std::uint64_t seed_;
  json files_ = json::array();
};

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string output_dir;
  std::string model_path;
  std::string delta_path;
  std::size_t index = 0;
  bool lime = false;
  bool cf = false;
};

KvConfig load_config(const Options& options) {
  KvConfig kv = options.config_path.empty() ? KvConfig() : KvConfig::load(options.config_path);
  for (const std::string& item : options.overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw Error(ErrorCode::kConfig, "--set expects key=value, got '" + item + "'");
    }
    kv.set(item.substr(0, eq), item.substr(eq + 1));
  }
  return kv;
}

fs::path output_dir(const Options& options, const ExperimentConfig& config) {
  if (!options.output_dir.empty()) return options.output_dir;
  if (const char* env = std::getenv("XMANIP_OUTPUT_DIR"); env != nullptr && *env != '\0') {
    return env;
  }
  return config.output_dir;
}

json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json summarize(const TabularDataset& data) {
  json columns = json::array();
  const Mat& x = data.features();
  for (std::size_t j = 0; j < data.dim(); ++j) {
    const auto c = x.col(static_cast<Eigen::Index>(j));
    const double mean = c.mean();
    const double var = (c.array() - mean).square().mean();
    columns.push_back({{"name", data.columns()[j].name},
                       {"role", std::string(column_role_name(data.columns()[j].role))},
                       {"mean", mean},
                       {"std", std::sqrt(var)},
                       {"min", c.minCoeff()},
                       {"max", c.maxCoeff()}});
  }
  json out = {{"rows", data.size()},
              {"dim", data.dim()},
              {"outcome", data.outcome_name()},
              {"positive_rate", data.labels().mean()},
              {"columns", columns}};
  if (!data.protected_mask().empty()) {
    const GroupMasks m = group_masks(data);
    out["groups"] = {
        {"protected", m.protected_positive.size() + m.protected_negative.size()},
        {"nonprotected", m.nonprotected_positive.size() + m.nonprotected_negative.size()},
        {"protected_negative", m.protected_negative.size()},
        {"nonprotected_negative", m.nonprotected_negative.size()}};
  }
  return out;
}

int cmd_ingest(const Options& options) {
  const KvConfig kv = load_config(options);
  const ExperimentConfig config = ExperimentConfig::from_kv(kv);
  const TabularDataset data = load_data(config.data, config.seed);
  RunOutput out(output_dir(options, config), "ingest", kv, config.seed);
  const json summary = summarize(data);
  out.write_json("summary.json", summary);
  out.finish();
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_make_data(const Options& options) {
  const KvConfig kv = load_config(options);
  const ExperimentConfig config = ExperimentConfig::from_kv(kv);
  if (config.data.synthetic.empty()) {
    throw Error(ErrorCode::kConfig, "make-data needs data.synthetic");
  }
  const TabularDataset data = load_data(config.data, config.seed);
  RunOutput out(output_dir(options, config), "make-data", kv, config.seed);
  out.write(config.data.synthetic + ".csv", to_csv(data));
  out.write(config.data.synthetic + ".schema", schema_of(data, 1.0).to_string());
  out.finish();
  return 0;
}

std::string pca_data(const PcaProjection& pca) {
  std::ostringstream out;
  out << "# x y source (1 = real, 0 = perturbation)\n" << std::setprecision(17);
  for (Eigen::Index i = 0; i < pca.projected.rows(); ++i) {
    out << pca.projected(i, 0) << ' ' << pca.projected(i, 1) << ' '
        << pca.source[static_cast<std::size_t>(i)] << '\n';
  }
  return out.str();
}

int cmd_attack_lime(const Options& options) {
  const KvConfig kv = load_config(options);
  const ExperimentConfig config = ExperimentConfig::from_kv(kv);
  const TabularDataset data = load_data(config.data, config.seed);
  const LimeAttackResult result = run_lime_attack(data, config.lime_attack);

  RunOutput out(output_dir(options, config), "attack-lime", kv, config.seed);
  const std::size_t k = config.lime_attack.top_k;
  std::vector<AttributionTable> tables = {result.biased};
  json scaffolds = json::array();
  for (const ScaffoldRun& run : result.scaffolds) {
    tables.push_back(run.table);
    scaffolds.push_back({{"uncorrelated", run.uncorrelated},
                         {"discriminator_accuracy", run.discriminator_accuracy},
                         {"fidelity", run.fidelity}});
    out.write("scaffold_" + std::to_string(run.uncorrelated) + ".forest",
              serialize_forest(run.scaffold->discriminator()));
  }
  json attribution = json::array();
  for (const AttributionTable& table : tables) attribution.push_back(to_json(table, k));
  out.write_json("attribution.json", {{"tables", attribution}, {"scaffolds", scaffolds}});
  out.write("attribution.txt", format_table(tables, k));
  out.write("attribution.dat", plot_data(tables));
  out.write("pca.dat", pca_data(result.pca.projection));
  out.write_json("pca.json",
                 {{"explained_variance_ratio", vec_json(result.pca.projection.explained_variance_ratio)},
                  {"depth2_tree_accuracy", result.pca.tree_accuracy}});
  out.finish();
  std::cout << format_table(tables, k);
  return 0;
}

int cmd_attack_recourse(const Options& options) {
  const KvConfig kv = load_config(options);
  const ExperimentConfig config = ExperimentConfig::from_kv(kv);
  const TabularDataset data = load_data(config.data, config.seed);
  const RecourseData split = prepare_recourse_data(data, config.recourse.train_fraction, config.seed);

  // Same steps as run_recourse_experiment without the audit, which is its
  // own command.
  const RecourseExperimentConfig& rc = config.recourse;
  rc.validate();
  std::vector<std::size_t> layers = {split.train.dim()};
  layers.insert(layers.end(), rc.hidden.begin(), rc.hidden.end());
  layers.push_back(1);
  const MlpModel init = MlpModel::initialize(layers, Activation::kTanh,
                                             derive_seed(config.seed, stream::kModelInit));
  const MlpModel baseline =
      train_classifier(split.train, init, rc.baseline_steps, rc.baseline_learning_rate);
  AttackConfig attack = rc.attack;
  attack.distance = resolve_distance(attack.distance, split.train.features());
  attack.seed = derive_seed(config.seed, stream::kAttack);
  const RecourseAttackModel trained =
      train_attack(split.train, group_masks(split.train), baseline, attack);
  const AccuracyParity parity = accuracy_parity(trained.model, baseline, split.test);

  RunOutput out(output_dir(options, config), "attack-recourse", kv, config.seed);
  out.write("model.txt", serialize_mlp(trained.model));
  out.write("baseline.txt", serialize_mlp(baseline));
  out.write("delta.txt", format_delta(trained.delta));
  out.write("trace.csv", trace_to_csv(trained.trace));
  out.write_json("accuracy.json", to_json(parity));
  out.finish();
  std::cout << to_json(parity).dump(2) << "\n";
  return 0;
}

fs::path input_path(const std::string& given, const fs::path& dir, const char* fallback) {
  const fs::path path = given.empty() ? dir / fallback : fs::path(given);
  if (!fs::exists(path)) throw Error(ErrorCode::kConfig, "file not found: " + path.string());
  return path;
}

int cmd_audit(const Options& options) {
  const KvConfig kv = load_config(options);
  const ExperimentConfig config = ExperimentConfig::from_kv(kv);
  const fs::path dir = output_dir(options, config);
  const MlpModel model = deserialize_mlp(read_file(input_path(options.model_path, dir, "model.txt")));
  const Vec delta = parse_delta(read_file(input_path(options.delta_path, dir, "delta.txt")));
  const TabularDataset data = load_data(config.data, config.seed);
  const RecourseData split = prepare_recourse_data(data, config.recourse.train_fraction, config.seed);
  check_dim(model.input_dim(), split.test.dim(), "model input");

  std::vector<AuditAlgorithm> algorithms =
      default_audit_algorithms(split.train, derive_seed(config.seed, stream::kCounterfactual));
  for (AuditAlgorithm& a : algorithms) {
    const std::uint64_t seed = a.config.seed;
    a.config = config.cf;
    a.config.seed = seed;
  }
  const RecourseReport report = recourse_audit(
      model, delta, split.test, group_masks(split.test),
      resolve_distance(config.recourse.audit_distance, split.train.features()), algorithms);

  RunOutput out(dir, "audit", kv, config.seed);
  out.write_json("report.json", to_json(report));
  out.write("report.txt", format_table(report));
  out.finish();
  std::cout << format_table(report);
  return 0;
}

int cmd_explain(const Options& options) {
  const KvConfig kv = load_config(options);
  const ExperimentConfig config = ExperimentConfig::from_kv(kv);
  const fs::path dir = output_dir(options, config);
  const MlpModel model = deserialize_mlp(read_file(input_path(options.model_path, dir, "model.txt")));
  Vec delta = Vec::Zero(static_cast<Eigen::Index>(model.input_dim()));
  if (!options.delta_path.empty()) delta = parse_delta(read_file(input_path(options.delta_path, dir, "")));
  const TabularDataset data = load_data(config.data, config.seed);
  const RecourseData split = prepare_recourse_data(data, config.recourse.train_fraction, config.seed);
  check_dim(model.input_dim(), split.test.dim(), "model input");
  check_dim(static_cast<std::size_t>(delta.size()), split.test.dim(), "delta");
  if (options.index >= split.test.size()) {
    throw Error(ErrorCode::kInvalidArgument, "--index beyond the test split (" +
                                                 std::to_string(split.test.size()) + " rows)");
  }
  const Vec x = row_vec(split.test.features(), static_cast<Eigen::Index>(options.index)) + delta;
  const bool want_lime = options.lime || !options.cf;

  json result = {{"instance_index", options.index}, {"model_prob", model.predict(x)}};
  if (want_lime) {
    LimeConfig lime = config.lime_attack.lime;
    lime.seed = derive_seed(derive_seed(config.seed, stream::kLime), options.index);
    const LimeExplanation e = explain_instance(model, x, lime);
    result["lime"] = {{"instance_index", options.index},
                      {"intercept", e.intercept},
                      {"coefficients", vec_json(e.coefficients)},
                      {"ranked_features", e.ranked_features},
                      {"r2_local", e.r2_local}};
  }
  if (options.cf) {
    CfAlgorithmSpec algorithm;
    for (const AuditAlgorithm& a : default_audit_algorithms(split.train, 0)) {
      if (a.spec.algorithm == config.cf_algorithm) algorithm = a.spec;
    }
    CfConfig cf = config.cf;
    cf.seed = derive_seed(derive_seed(config.seed, stream::kCounterfactual), options.index);
    const DistanceSpec spec = resolve_distance(config.cf_distance, split.train.features());
    const CounterfactualResult r = run_counterfactual(model, x, spec, cf, algorithm);
    const Vec original = row_vec(split.test.features(), static_cast<Eigen::Index>(options.index));
    result["counterfactual"] = {{"algorithm", cf_algorithm_name(config.cf_algorithm)},
                                {"distance", spec.name()},
                                {"x_cf", vec_json(r.x_cf)},
                                {"cost", recourse_cost(spec, original, r)},
                                {"model_prob", r.model_prob},
                                {"converged", r.converged},
                                {"already_positive", r.already_positive},
                                {"rounds_used", r.rounds_used},
                                {"final_lambda", r.final_lambda}};
  }
  std::vector<std::string> names;
  for (const ColumnMeta& c : split.test.columns()) names.push_back(c.name);
  result["columns"] = names;

  RunOutput out(dir, "explain", kv, config.seed);
  out.write_json("explain_" + std::to_string(options.index) + ".json", result);
  out.finish();
  std::cout << result.dump(2) << "\n";
  return 0;
}

int exit_code_for(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::kConfig: return 2;
    case ErrorCategory::kData: return 3;
    case ErrorCategory::kNumeric: return 4;
  }
  return 4;
}

int report_error(const std::string& code, const std::string& category, const std::string& message,
                 long row, int exit_code) {
  json err = {{"error", code}, {"category", category}, {"message", message}, {"exit_code", exit_code}};
  if (row >= 0) err["row"] = row;
  std::cerr << err.dump() << "\n";
  return exit_code;
}

}  // namespace
}  // namespace xmanip

int main(int argc, char** argv) {
  using namespace xmanip;
  CLI::App app{"Explanation-manipulation experiments on tabular data"};
  app.require_subcommand(1);
  Options options;

  auto add_common = [&options](CLI::App* sub) {
    sub->add_option("-c,--config", options.config_path, "Flat key-value config file");
    sub->add_option("--set", options.overrides, "Override a config key (key=value)");
    sub->add_option("-o,--output-dir", options.output_dir,
                    "Output directory (overrides XMANIP_OUTPUT_DIR and output.dir)");
  };
  CLI::App* ingest = app.add_subcommand("ingest", "Validate and summarize a dataset");
  CLI::App* make_data = app.add_subcommand("make-data", "Write a synthetic dataset and its schema");
  CLI::App* attack_lime = app.add_subcommand("attack-lime", "Scaffold a biased rule and audit LIME");
  CLI::App* attack_recourse =
      app.add_subcommand("attack-recourse", "Train a model with a hidden recourse shortcut");
  CLI::App* audit = app.add_subcommand("audit", "Recourse audit over four search algorithms");
  CLI::App* explain = app.add_subcommand("explain", "Explain one test instance");
  for (CLI::App* sub : {ingest, make_data, attack_lime, attack_recourse, audit, explain}) {
    add_common(sub);
  }
  for (CLI::App* sub : {audit, explain}) {
    sub->add_option("--model", options.model_path, "Serialized model (default <out>/model.txt)");
    sub->add_option("--delta", options.delta_path, "Delta file added to the instance(s)");
  }
  explain->add_option("--index", options.index, "Row of the test split")->required();
  explain->add_flag("--lime", options.lime, "LIME attribution (default when --cf is absent)");
  explain->add_flag("--cf", options.cf, "Counterfactual search");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("UsageError", "config", e.what(), -1, 2);
  }

  try {
    if (*ingest) return cmd_ingest(options);
    if (*make_data) return cmd_make_data(options);
    if (*attack_lime) return cmd_attack_lime(options);
    if (*attack_recourse) return cmd_attack_recourse(options);
    if (*audit) return cmd_audit(options);
    if (*explain) return cmd_explain(options);
  } catch (const Error& e) {
    const ErrorCategory category = error_category(e.code());
    const char* name = category == ErrorCategory::kConfig ? "config"
                       : category == ErrorCategory::kData ? "data"
                                                          : "numeric";
    return report_error(std::string(error_code_name(e.code())), name, e.what(), e.row(),
                        exit_code_for(category));
  } catch (const std::exception& e) {
    return report_error("InternalError", "numeric", e.what(), -1, 4);
  }
  return 0;
}
