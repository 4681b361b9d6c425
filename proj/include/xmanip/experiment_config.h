#ifndef XMANIP_EXPERIMENT_CONFIG_H_
#define XMANIP_EXPERIMENT_CONFIG_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xmanip/experiments.h"
#include "xmanip/kv_config.h"
#include "xmanip/synthetic.h"

namespace xmanip {

// Where the rows come from: a CSV plus schema, or a built-in generator.
struct DataSource {
  std::filesystem::path csv;
  std::filesystem::path schema;
  // "compas_like" or "two_basin" when csv is empty.
  std::string synthetic;
  std::size_t rows = 5000;
  // Shape of the two_basin generator (two_basin.* keys).
  TwoBasinParams two_basin;
};

// Everything one CLI run needs, built from flat dotted keys (listed by
// known_keys() and in the README).
struct ExperimentConfig {
  DataSource data;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  LimeAttackConfig lime_attack;
  RecourseExperimentConfig recourse;
  // Search used by `explain --cf`.
  CfConfig cf;
  CfAlgorithm cf_algorithm = CfAlgorithm::kWachter;
  DistanceSpec cf_distance;

  // Throws Config on unknown keys, a missing seed or a missing data file.
  static ExperimentConfig from_kv(const KvConfig& kv);

  // Every key from_kv understands.
  static const std::vector<std::string>& known_keys();
};

TabularDataset load_data(const DataSource& source, std::uint64_t seed);

// "l2", "l1_mad" or "elastic_net"; l1_mad leaves the MAD vector empty to be
// filled from training rows.
DistanceSpec parse_distance(const std::string& name, double beta);

// Fills an empty MAD vector of an l1_mad spec from `rows`.
DistanceSpec resolve_distance(DistanceSpec spec, const Mat& rows);

}  // namespace xmanip

#endif  // XMANIP_EXPERIMENT_CONFIG_H_
