#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "xmanip/error.h"
#include "xmanip/models.h"
#include "xmanip/random.h"

namespace xmanip {
namespace {

struct SplitChoice {
  int feature = -1;
  double value = 0.0;
  double impurity = 0.0;
};

double gini(double ones, double total) {
  if (total <= 0.0) return 0.0;
  const double p = ones / total;
  return 2.0 * p * (1.0 - p);
}

class TreeBuilder {
 public:
  TreeBuilder(const Mat& rows, const std::vector<int>& classes, const ForestParams& params,
              std::size_t mtry, Rng& rng)
      : rows_(rows), classes_(classes), params_(params), mtry_(mtry), rng_(rng) {}

  DecisionTree build(IndexList samples) {
    DecisionTree tree;
    grow(tree, std::move(samples), 0);
    return tree;
  }

 private:
  int grow(DecisionTree& tree, IndexList samples, std::size_t depth) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    double ones = 0.0;
    for (const auto i : samples) ones += classes_[i];
    const double n = static_cast<double>(samples.size());
    tree.nodes[id].fraction = n > 0 ? ones / n : 0.0;

    const bool pure = ones == 0.0 || ones == n;
    if (pure || depth >= params_.max_depth || samples.size() < params_.min_samples_split) {
      return id;
    }
    const SplitChoice best = best_split(samples, ones);
    if (best.feature < 0) return id;

    IndexList left;
    IndexList right;
    for (const auto i : samples) {
      if (rows_(static_cast<Eigen::Index>(i), best.feature) <= best.value) {
        left.push_back(i);
      } else {
        right.push_back(i);
      }
    }
    samples.clear();
    samples.shrink_to_fit();
    tree.nodes[id].feature = best.feature;
    tree.nodes[id].split_value = best.value;
    const int l = grow(tree, std::move(left), depth + 1);
    const int r = grow(tree, std::move(right), depth + 1);
    tree.nodes[id].left = l;
    tree.nodes[id].right = r;
    return id;
  }

  SplitChoice best_split(const IndexList& samples, double ones) {
    const auto d = static_cast<std::size_t>(rows_.cols());
    std::vector<std::size_t> features(d);
    std::iota(features.begin(), features.end(), std::size_t{0});
    // Partial Fisher-Yates: the first mtry entries are the candidates.
    for (std::size_t k = 0; k < mtry_; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, d - 1);
      std::swap(features[k], features[pick(rng_)]);
    }

    const double n = static_cast<double>(samples.size());
    SplitChoice best;
    best.impurity = gini(ones, n);
    std::vector<std::pair<double, int>> column(samples.size());
    for (std::size_t k = 0; k < mtry_; ++k) {
      const auto f = static_cast<Eigen::Index>(features[k]);
      for (std::size_t s = 0; s < samples.size(); ++s) {
        column[s] = {rows_(static_cast<Eigen::Index>(samples[s]), f), classes_[samples[s]]};
      }
      std::sort(column.begin(), column.end());
      double left_n = 0.0;
      double left_ones = 0.0;
      for (std::size_t s = 0; s + 1 < column.size(); ++s) {
        left_n += 1.0;
        left_ones += column[s].second;
        if (column[s].first == column[s + 1].first) continue;
        const double right_n = n - left_n;
        const double impurity =
            (left_n * gini(left_ones, left_n) + right_n * gini(ones - left_ones, right_n)) / n;
        if (impurity < best.impurity - 1e-15) {
          best.impurity = impurity;
          best.feature = static_cast<int>(f);
          best.value = 0.5 * (column[s].first + column[s + 1].first);
        }
      }
    }
    return best;
  }

  const Mat& rows_;
  const std::vector<int>& classes_;
  const ForestParams& params_;
  std::size_t mtry_;
  Rng& rng_;
};

}  // namespace

double DecisionTree::predict(const Vec& x) const {
  if (nodes.empty()) return 0.0;
  int id = 0;
  while (nodes[id].feature >= 0) {
    const Node& node = nodes[id];
    id = x(node.feature) <= node.split_value ? node.left : node.right;
  }
  return nodes[id].fraction;
}

RandomForest::RandomForest(std::size_t input_dim, std::vector<DecisionTree> trees)
    : input_dim_(input_dim), trees_(std::move(trees)) {
  if (trees_.empty()) throw Error(ErrorCode::kInvalidArgument, "forest has no trees");
  for (const auto& tree : trees_) {
    if (tree.nodes.empty()) throw Error(ErrorCode::kInvalidArgument, "tree has no nodes");
    for (const auto& node : tree.nodes) {
      const int n = static_cast<int>(tree.nodes.size());
      if (node.feature >= static_cast<int>(input_dim_) ||
          (node.feature >= 0 && (node.left <= 0 || node.left >= n || node.right <= 0 ||
                                 node.right >= n)) ||
          !(node.fraction >= 0.0 && node.fraction <= 1.0)) {
        throw Error(ErrorCode::kInvalidArgument, "invalid tree node");
      }
    }
  }
}

double RandomForest::predict(const Vec& x) const {
  check_dim(static_cast<std::size_t>(x.size()), input_dim_, "forest input");
  double total = 0.0;
  for (const auto& tree : trees_) total += tree.predict(x);
  return total / static_cast<double>(trees_.size());
}

RandomForest train_forest(const Mat& rows, const std::vector<int>& classes,
                          const ForestParams& params) {
  check_dim(classes.size(), static_cast<std::size_t>(rows.rows()), "forest classes");
  const auto n_ones = std::count(classes.begin(), classes.end(), 1);
  const auto n_zeros = std::count(classes.begin(), classes.end(), 0);
  if (n_ones == 0 || n_zeros == 0) {
    throw Error(ErrorCode::kEmptyClass, "forest training needs both classes");
  }
  if (n_ones + n_zeros != static_cast<long>(classes.size())) {
    throw Error(ErrorCode::kInvalidArgument, "forest classes must be 0 or 1");
  }
  if (params.n_trees == 0) throw Error(ErrorCode::kInvalidArgument, "n_trees must be >= 1");

  const auto d = static_cast<std::size_t>(rows.cols());
  std::size_t mtry = params.features_per_split;
  if (mtry == 0) mtry = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(d))));
  mtry = std::clamp<std::size_t>(mtry, 1, d);

  Rng rng(params.seed);
  const std::size_t n = classes.size();
  std::vector<DecisionTree> trees;
  trees.reserve(params.n_trees);
  for (std::size_t t = 0; t < params.n_trees; ++t) {
    IndexList samples(n);
    if (params.bootstrap) {
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (auto& s : samples) s = pick(rng);
    } else {
      std::iota(samples.begin(), samples.end(), std::size_t{0});
    }
    TreeBuilder builder(rows, classes, params, mtry, rng);
    trees.push_back(builder.build(std::move(samples)));
  }
  return RandomForest(d, std::move(trees));
}

RandomForest forest_train(const Mat& real, const Mat& fake, const ForestParams& params) {
  if (real.rows() == 0 || fake.rows() == 0) {
    throw Error(ErrorCode::kEmptyClass, "discriminator needs real and perturbation rows");
  }
  check_dim(static_cast<std::size_t>(fake.cols()), static_cast<std::size_t>(real.cols()),
            "perturbation rows");
  Mat rows(real.rows() + fake.rows(), real.cols());
  rows << real, fake;
  std::vector<int> classes(static_cast<std::size_t>(rows.rows()), 0);
  std::fill(classes.begin(), classes.begin() + real.rows(), 1);
  return train_forest(rows, classes, params);
}

// Node table:
//   xmanip-forest 1
//   input_dim <d> trees <T>
//   tree <t> nodes <n>
//   <feature> <split> <left> <right> <fraction>     (one line per node)
std::string serialize_forest(const RandomForest& forest) {
  std::ostringstream out;
  out << "xmanip-forest 1\n";
  out << "input_dim " << forest.input_dim() << " trees " << forest.trees().size() << '\n';
  for (std::size_t t = 0; t < forest.trees().size(); ++t) {
    const auto& nodes = forest.trees()[t].nodes;
    out << "tree " << t << " nodes " << nodes.size() << '\n';
    for (const auto& node : nodes) {
      out << node.feature << ' ' << format_hex_double(node.split_value) << ' ' << node.left << ' '
          << node.right << ' ' << format_hex_double(node.fraction) << '\n';
    }
  }
  return out.str();
}

RandomForest deserialize_forest(std::string_view text) {
  std::istringstream in{std::string(text)};
  auto expect = [&in](const std::string& word) {
    std::string got;
    if (!(in >> got) || got != word) {
      throw Error(ErrorCode::kIo, "forest file: expected '" + word + "'");
    }
  };
  expect("xmanip-forest");
  expect("1");
  std::size_t d = 0;
  std::size_t n_trees = 0;
  expect("input_dim");
  in >> d;
  expect("trees");
  in >> n_trees;
  if (!in) throw Error(ErrorCode::kIo, "forest file: bad header");
  std::vector<DecisionTree> trees(n_trees);
  for (std::size_t t = 0; t < n_trees; ++t) {
    std::size_t index = 0;
    std::size_t n_nodes = 0;
    expect("tree");
    in >> index;
    expect("nodes");
    in >> n_nodes;
    if (!in || index != t) throw Error(ErrorCode::kIo, "forest file: bad tree header");
    trees[t].nodes.resize(n_nodes);
    for (auto& node : trees[t].nodes) {
      std::string split;
      std::string fraction;
      in >> node.feature >> split >> node.left >> node.right >> fraction;
      if (!in) throw Error(ErrorCode::kIo, "forest file: truncated node table");
      node.split_value = parse_hex_double(split);
      node.fraction = parse_hex_double(fraction);
    }
  }
  return RandomForest(d, std::move(trees));
}

}  // namespace xmanip
