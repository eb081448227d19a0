#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "selqa/features.hpp"
#include "selqa/records.hpp"

namespace selqa {

class ForestError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Labels = std::vector<std::uint8_t>;

/// Dense row-major matrix of calibrator inputs.
class FeatureMatrix {
public:
    FeatureMatrix() = default;
    explicit FeatureMatrix(std::size_t cols) : cols_(cols) {}
    FeatureMatrix(std::size_t cols, std::vector<double> data);

    void add_row(std::span<const double> row);
    std::size_t rows() const { return cols_ == 0 ? 0 : data_.size() / cols_; }
    std::size_t cols() const { return cols_; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

private:
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

struct ForestConfig {
    int n_trees = 100;
    std::optional<int> max_depth;           // unlimited when empty
    int min_samples_leaf = 1;
    std::optional<int> features_per_split;  // floor(sqrt(d)) when empty
    bool bootstrap = true;
    std::uint64_t seed = 0;

    int resolved_features_per_split(std::size_t n_features) const;
    void validate(std::size_t n_features) const;
    // e.g. "trees=100 depth=8 leaf=5 mtry=sqrt bootstrap=1"
    std::string describe() const;

    bool operator==(const ForestConfig&) const = default;
};

struct Split {
    std::size_t feature_index = 0;
    double threshold = 0.0;  // rows with value <= threshold go left
    double impurity_decrease = 0.0;
};

// 2 p (1 - p) for positive fraction p.
double gini(std::span<const std::uint8_t> labels);

// Best Gini split over the candidate features and midpoints between consecutive
// distinct values, keeping at least min_samples_leaf rows on each side. Empty
// when no split has positive decrease. Ties go to the lowest feature index, then
// the lowest threshold; impurities are compared exactly in integer arithmetic.
std::optional<Split> best_split(const FeatureMatrix& rows, std::span<const std::uint8_t> labels,
                                std::span<const std::size_t> candidate_features, int min_samples_leaf);

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double prob = 0.0;       // positive fraction of the node's training rows
    std::uint32_t count = 0;  // training rows (bootstrap multiplicity included)

    bool is_leaf() const { return feature < 0; }
    bool operator==(const TreeNode&) const = default;
};

/// Flattened CART tree, nodes in pre-order with the root at index 0.
struct DecisionTree {
    std::vector<TreeNode> nodes;

    double predict(std::span<const double> row) const;
    const TreeNode& leaf_for(std::span<const double> row) const;
    std::size_t depth() const;

    bool operator==(const DecisionTree&) const = default;
};

struct RandomForest {
    std::vector<DecisionTree> trees;
    ForestConfig config;
    std::vector<std::string> feature_names;

    // Mean leaf probability across trees; throws on a catalog mismatch.
    double predict_proba(const FeatureVector& fv) const;
    double predict_row(std::span<const double> row) const;

    bool operator==(const RandomForest&) const = default;
};

// Trains config.n_trees trees. Tree t draws its bootstrap sample and feature
// subsets from a stream seeded by (config.seed, t), so the result does not depend
// on the thread count. Throws ForestError("degenerate labels") for one-class data.
RandomForest train_forest(const FeatureMatrix& x, std::span<const std::uint8_t> labels, const ForestConfig& config,
                          std::vector<std::string> feature_names, unsigned threads = 1);

// n_trees {100, 300} x max_depth {4, 8, unlimited} x min_samples_leaf {1, 5, 25}.
std::vector<ForestConfig> default_grid(std::uint64_t seed = 0);

struct GridSearchResult {
    std::size_t best_index = 0;
    ForestConfig best_config;
    RandomForest best_forest;
    double val_auc = 0.0;
    std::vector<double> grid_val_aucs;
};

// Trains one forest per grid entry and keeps the one with the lowest
// risk-coverage AUC on the validation records (earliest entry wins ties).
// Validation rows of val_x align with val_records; only their correctness is used.
GridSearchResult grid_search(const FeatureMatrix& train_x, std::span<const std::uint8_t> train_y,
                             const std::vector<std::string>& feature_names, const FeatureMatrix& val_x,
                             std::span<const ScoredRecord> val_records, std::span<const ForestConfig> grid,
                             unsigned threads = 1);

inline constexpr std::uint8_t kForestFormatVersion = 1;

std::string serialize_forest(const RandomForest& forest);
RandomForest deserialize_forest(std::string_view bytes);
void save_forest(const RandomForest& forest, const std::string& path);
RandomForest load_forest(const std::string& path);

}  // namespace selqa
