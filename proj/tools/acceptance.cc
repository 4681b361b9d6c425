// Runs the end-to-end acceptance checks and prints one PASS/FAIL line per
// criterion. Slow (several minutes); not part of ctest.
//
//   xmanip_acceptance --source <repo> --build <build dir> [--only 3]

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "xmanip/experiment_config.h"
#include "xmanip/experiments.h"
#include "xmanip/kv_config.h"
#include "xmanip/metrics.h"

namespace fs = std::filesystem;
using namespace xmanip;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* format, double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, a);
  return buf;
}

ExperimentConfig load_config(const fs::path& path) {
  return ExperimentConfig::from_kv(KvConfig::load(path));
}

// Shared by criteria 1, 2 and 7.
struct LimeRun {
  LimeAttackResult result;
  double seconds = 0.0;
};

const LimeRun& lime_run(const fs::path& source) {
  static const LimeRun run = [&] {
    const ExperimentConfig c = load_config(source / "configs/compas_lime.conf");
    const auto t0 = std::chrono::steady_clock::now();
    const TabularDataset raw = load_data(c.data, c.seed);
    LimeRun r;
    r.result = run_lime_attack(raw, c.lime_attack);
    r.seconds = seconds_since(t0);
    return r;
  }();
  return run;
}

std::size_t column_of(const AttributionTable& t, const std::string& name) {
  for (std::size_t j = 0; j < t.columns.size(); ++j) {
    if (t.columns[j] == name) return j;
  }
  throw std::runtime_error("no column " + name);
}

Outcome criterion_lime(const fs::path& source) {
  const LimeRun& run = lime_run(source);
  const AttributionTable& biased = run.result.biased;
  Outcome o{true, ""};
  const double top1 = biased.top1(static_cast<Eigen::Index>(column_of(biased, "race")));
  o.pass = top1 == 1.0;
  o.detail = "biased race top1 " + fmt("%.3f", top1);
  for (const ScaffoldRun& s : run.result.scaffolds) {
    const auto& t = s.table;
    const double sensitive = t.topk(static_cast<Eigen::Index>(column_of(t, "race")));
    double uncorrelated = 1.0;
    for (int k = 0; k < s.uncorrelated; ++k) {
      const auto j = static_cast<Eigen::Index>(column_of(t, "unrelated_" + std::to_string(k + 1)));
      uncorrelated = std::min(uncorrelated, t.topk(j));
    }
    o.pass = o.pass && sensitive <= 0.1 && uncorrelated >= 0.9;
    o.detail += "; k=" + std::to_string(s.uncorrelated) + " race top3 " +
                fmt("%.3f", sensitive) + " unrelated top3 " + fmt("%.3f", uncorrelated);
  }
  o.pass = o.pass && run.seconds < 300.0;
  o.detail += "; " + fmt("%.0f s", run.seconds);
  return o;
}

Outcome criterion_fidelity(const fs::path& source) {
  const LimeRun& run = lime_run(source);
  Outcome o{true, ""};
  for (const ScaffoldRun& s : run.result.scaffolds) {
    o.pass = o.pass && s.fidelity >= 0.99 && s.discriminator_accuracy >= 0.9;
    o.detail += (o.detail.empty() ? "" : "; ") + std::string("k=") +
                std::to_string(s.uncorrelated) + " fidelity " + fmt("%.4f", s.fidelity) +
                " discriminator " + fmt("%.4f", s.discriminator_accuracy);
  }
  return o;
}

Outcome recourse_on(const fs::path& config, const std::string& label) {
  const ExperimentConfig c = load_config(config);
  const auto t0 = std::chrono::steady_clock::now();
  const TabularDataset raw = load_data(c.data, c.seed);
  const RecourseExperimentResult r = run_recourse_experiment(raw, c.recourse);
  const double secs = seconds_since(t0);
  const RecourseRow* wachter = nullptr;
  for (const RecourseRow& row : r.report.rows) {
    if (row.algorithm == CfAlgorithm::kWachter) wachter = &row;
  }
  if (wachter == nullptr) return {false, label + ": no wachter row"};
  const double np = wachter->nonprotected.mean_cost;
  const double ratio = np > 0.0 ? wachter->disparity / np : 1e9;
  const bool a = ratio <= 0.1;
  const bool b = wachter->cost_reduction >= 1.5;
  const bool c_ok = std::abs(r.parity.gap) <= 0.01;
  const bool t = secs < 1200.0;
  std::ostringstream d;
  d << label << ": disparity/C_np " << fmt("%.3f", ratio) << (a ? "" : " (a fails)")
    << ", reduction " << fmt("%.2fx", wachter->cost_reduction) << (b ? "" : " (b fails)")
    << ", accuracy gap " << fmt("%.2f pp", 100.0 * r.parity.gap) << (c_ok ? "" : " (c fails)")
    << ", " << fmt("%.0f s", secs);
  std::cerr << format_table(r.report);
  return {a && b && c_ok && t, d.str()};
}

Outcome criterion_recourse(const fs::path& source) {
  const Outcome synthetic = recourse_on(source / "configs/two_basin_recourse.conf", "two_basin");
  const Outcome real = recourse_on(source / "configs/diabetes_recourse.conf", "diabetes");
  return {synthetic.pass && real.pass, synthetic.detail + "; " + real.detail};
}

Outcome run_command(const std::string& command) {
  std::cerr << "+ " << command << "\n";
  const int status = std::system(command.c_str());
  return {status == 0, "exit status " + std::to_string(status)};
}

Outcome gtest_filter(const fs::path& build, const std::string& binary, const std::string& filter) {
  return run_command((build / binary).string() + " --gtest_brief=1 --gtest_filter='" + filter +
                     "' 1>&2");
}

Outcome criterion_search(const fs::path& build) {
  return gtest_filter(build, "counterfactual_test",
                      "Search.*GridOracle:Search.OneDimensionalFamily:"
                      "Search.ConvergedFlagMatchesProbability:Search.MonotoneTracePerRound");
}

Outcome criterion_numerics(const fs::path& build) {
  const std::vector<std::pair<std::string, std::string>> suites = {
      {"models_test", "Mlp.*FiniteDifferences:Mlp.Hvp*"},
      {"counterfactual_test", "*.GradientMatchesFiniteDifferences"},
      {"lime_test", "Ridge.MatchesNormalEquationOracle"},
      {"recourse_attack_test", "QuadraticToy.*"},
  };
  Outcome all{true, ""};
  for (const auto& [binary, filter] : suites) {
    const Outcome o = gtest_filter(build, binary, filter);
    all.pass = all.pass && o.pass;
    all.detail += (all.detail.empty() ? "" : "; ") + binary + " " + (o.pass ? "ok" : "failed");
  }
  return all;
}

Outcome criterion_determinism(const fs::path& source, const fs::path& build) {
  return run_command("bash " + (source / "tests/cli_test.sh").string() + " " +
                     (build / "xmanip").string() + " " + source.string() + " 1>&2");
}

Outcome criterion_pca(const fs::path& source) {
  const double acc = lime_run(source).result.pca.tree_accuracy;
  return {acc > 0.75, "depth-2 tree accuracy " + fmt("%.4f", acc)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"End-to-end acceptance checks"};
  std::string source = ".";
  std::string build = "build";
  std::vector<int> only;
  app.add_option("--source", source, "Repository root")->check(CLI::ExistingDirectory);
  app.add_option("--build", build, "Build directory with the test binaries")
      ->check(CLI::ExistingDirectory);
  app.add_option("--only", only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);

  const fs::path src = fs::absolute(source);
  const fs::path bin = fs::absolute(build);
  fs::current_path(src);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"lime scaffolding hides the sensitive feature", [&] { return criterion_lime(src); }},
      {"scaffold fidelity and discriminator accuracy", [&] { return criterion_fidelity(src); }},
      {"recourse manipulation on two_basin and diabetes", [&] { return criterion_recourse(src); }},
      {"counterfactual search matches grid oracles", [&] { return criterion_search(bin); }},
      {"gradient, hvp, ridge and hypergradient checks", [&] { return criterion_numerics(bin); }},
      {"cli outputs are byte-identical across runs",
       [&] { return criterion_determinism(src, bin); }},
      {"pca projection separates real from perturbed", [&] { return criterion_pca(src); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << criteria[i].first
              << " [" << o.detail << "]" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
