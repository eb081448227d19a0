#include "selqa/forest.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>
#include <thread>

#include "selqa/evaluation.hpp"
#include "selqa/rng.hpp"

namespace selqa {

namespace {

using i128 = __int128;

// Weighted child impurity in integer form. For a split with (n, p) rows and
// positives on each side, sum_side p (n - p) / n == num / den.
struct SplitScore {
    i128 num = 0;
    i128 den = 1;
};

SplitScore split_score(std::uint64_t n_left, std::uint64_t p_left, std::uint64_t n_right, std::uint64_t p_right) {
    SplitScore s;
    s.num = static_cast<i128>(p_left) * static_cast<i128>(n_left - p_left) * static_cast<i128>(n_right) +
            static_cast<i128>(p_right) * static_cast<i128>(n_right - p_right) * static_cast<i128>(n_left);
    s.den = static_cast<i128>(n_left) * static_cast<i128>(n_right);
    return s;
}

bool less_than(const SplitScore& a, const SplitScore& b) {
    return a.num * b.den < b.num * a.den;
}

// Parent impurity in the same form: p (n - p) / n.
bool improves_on_parent(const SplitScore& s, std::uint64_t n, std::uint64_t p) {
    return s.num * static_cast<i128>(n) < static_cast<i128>(p) * static_cast<i128>(n - p) * s.den;
}

double decrease_of(const SplitScore& s, std::uint64_t n, std::uint64_t p) {
    const double parent = static_cast<double>(p) * static_cast<double>(n - p) / static_cast<double>(n);
    const double children = static_cast<double>(s.num) / static_cast<double>(s.den);
    return 2.0 / static_cast<double>(n) * (parent - children);
}

double midpoint(double a, double b) {
    double t = a + (b - a) / 2.0;
    if (!(t >= a && t < b)) t = a;
    return t;
}

struct Candidate {
    std::size_t feature = 0;
    std::size_t left_entries = 0;  // entries of the sorted segment sent left
    double threshold = 0.0;
    SplitScore score;
};

// Scans one feature's sorted segment of (row, weight) entries. Keeps the first
// best candidate in threshold order. Returns nothing when no admissible cut exists.
template <typename ValueAt, typename WeightAt, typename LabelAt>
std::optional<Candidate> scan_feature(std::size_t feature, std::span<const std::uint32_t> segment, ValueAt value,
                                      WeightAt weight, LabelAt label, std::uint64_t n, std::uint64_t p,
                                      std::uint64_t min_leaf) {
    std::optional<Candidate> best;
    std::uint64_t n_left = 0;
    std::uint64_t p_left = 0;
    for (std::size_t i = 0; i + 1 < segment.size(); ++i) {
        const std::uint32_t row = segment[i];
        const std::uint64_t w = weight(row);
        n_left += w;
        if (label(row)) p_left += w;
        const double here = value(row, feature);
        const double next = value(segment[i + 1], feature);
        if (here == next) continue;
        const std::uint64_t n_right = n - n_left;
        if (n_left < min_leaf || n_right < min_leaf) continue;
        const SplitScore s = split_score(n_left, p_left, n_right, p - p_left);
        if (!best || less_than(s, best->score)) best = Candidate{feature, i + 1, midpoint(here, next), s};
    }
    return best;
}

// Row indices sorted by each feature's value (ties by row index).
std::vector<std::vector<std::uint32_t>> presort(const FeatureMatrix& x) {
    std::vector<std::vector<std::uint32_t>> sorted(x.cols());
    for (std::size_t f = 0; f < x.cols(); ++f) {
        auto& order = sorted[f];
        order.resize(x.rows());
        std::iota(order.begin(), order.end(), 0u);
        std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
            const double va = x.at(a, f);
            const double vb = x.at(b, f);
            if (va != vb) return va < vb;
            return a < b;
        });
    }
    return sorted;
}

class TreeBuilder {
public:
    TreeBuilder(const FeatureMatrix& x, std::span<const std::uint8_t> labels,
                const std::vector<std::vector<std::uint32_t>>& presorted, const ForestConfig& config,
                std::uint64_t tree_seed)
        : x_(x), labels_(labels), config_(config), rng_(tree_seed), weights_(x.rows(), 0),
          goes_left_(x.rows(), 0) {
        const std::size_t n = x.rows();
        if (config.bootstrap) {
            std::uniform_int_distribution<std::size_t> pick(0, n - 1);
            for (std::size_t i = 0; i < n; ++i) ++weights_[pick(rng_)];
        } else {
            std::fill(weights_.begin(), weights_.end(), 1u);
        }
        lists_.resize(x.cols());
        for (std::size_t f = 0; f < x.cols(); ++f) {
            lists_[f].reserve(n);
            for (std::uint32_t row : presorted[f]) {
                if (weights_[row] > 0) lists_[f].push_back(row);
            }
        }
        mtry_ = static_cast<std::size_t>(config.resolved_features_per_split(x.cols()));
        features_.resize(x.cols());
        scratch_.resize(lists_.empty() ? 0 : lists_[0].size());
    }

    DecisionTree build() {
        if (!lists_.empty()) grow(0, lists_[0].size(), 0);
        return std::move(tree_);
    }

private:
    int grow(std::size_t begin, std::size_t end, int depth) {
        std::uint64_t n = 0;
        std::uint64_t p = 0;
        for (std::size_t i = begin; i < end; ++i) {
            const std::uint32_t row = lists_[0][i];
            n += weights_[row];
            if (labels_[row]) p += weights_[row];
        }
        const int index = static_cast<int>(tree_.nodes.size());
        TreeNode node;
        node.prob = static_cast<double>(p) / static_cast<double>(n);
        node.count = static_cast<std::uint32_t>(n);
        tree_.nodes.push_back(node);

        const auto min_leaf = static_cast<std::uint64_t>(config_.min_samples_leaf);
        const bool depth_left = !config_.max_depth || depth < *config_.max_depth;
        if (p == 0 || p == n || n < 2 * min_leaf || !depth_left) return index;

        const auto chosen = sample_features();
        std::optional<Candidate> best;
        std::optional<Candidate> fallback;
        for (std::size_t f : chosen) {
            const std::span<const std::uint32_t> segment(lists_[f].data() + begin, end - begin);
            auto c = scan_feature(
                f, segment, [&](std::uint32_t r, std::size_t c) { return x_.at(r, c); },
                [&](std::uint32_t r) { return static_cast<std::uint64_t>(weights_[r]); },
                [&](std::uint32_t r) { return labels_[r] != 0; }, n, p, min_leaf);
            if (!c) continue;
            if (!fallback) fallback = c;
            if (improves_on_parent(c->score, n, p) && (!best || less_than(c->score, best->score))) best = c;
        }
        // A zero-gain cut still separates distinct rows; taking it lets an
        // unrestricted tree fit any consistent training set (e.g. XOR patterns).
        if (!best) best = fallback;
        if (!best) return index;

        partition(begin, end, *best);
        const std::size_t mid = begin + best->left_entries;
        const int left = grow(begin, mid, depth + 1);
        const int right = grow(mid, end, depth + 1);
        TreeNode& self = tree_.nodes[static_cast<std::size_t>(index)];
        self.feature = static_cast<int>(best->feature);
        self.threshold = best->threshold;
        self.left = left;
        self.right = right;
        return index;
    }

    std::vector<std::size_t> sample_features() {
        std::iota(features_.begin(), features_.end(), 0);
        if (mtry_ < features_.size()) {
            for (std::size_t i = 0; i < mtry_; ++i) {
                std::uniform_int_distribution<std::size_t> pick(i, features_.size() - 1);
                std::swap(features_[i], features_[pick(rng_)]);
            }
        }
        std::vector<std::size_t> chosen(features_.begin(), features_.begin() + static_cast<std::ptrdiff_t>(mtry_));
        std::sort(chosen.begin(), chosen.end());
        return chosen;
    }

    void partition(std::size_t begin, std::size_t end, const Candidate& split) {
        const auto& pivot = lists_[split.feature];
        for (std::size_t i = begin; i < end; ++i) goes_left_[pivot[i]] = i < begin + split.left_entries ? 1 : 0;
        for (std::size_t f = 0; f < lists_.size(); ++f) {
            if (f == split.feature) continue;
            auto& list = lists_[f];
            std::size_t l = begin;
            std::size_t r = 0;
            for (std::size_t i = begin; i < end; ++i) {
                const std::uint32_t row = list[i];
                if (goes_left_[row]) {
                    list[l++] = row;
                } else {
                    scratch_[r++] = row;
                }
            }
            std::copy(scratch_.begin(), scratch_.begin() + static_cast<std::ptrdiff_t>(r),
                      list.begin() + static_cast<std::ptrdiff_t>(l));
        }
    }

    const FeatureMatrix& x_;
    std::span<const std::uint8_t> labels_;
    const ForestConfig& config_;
    Rng rng_;
    std::vector<std::uint32_t> weights_;
    std::vector<std::uint8_t> goes_left_;
    std::vector<std::vector<std::uint32_t>> lists_;
    std::vector<std::uint32_t> scratch_;
    std::vector<std::size_t> features_;
    std::size_t mtry_ = 1;
    DecisionTree tree_;
};

// Little-endian byte writer/reader for the forest file.
class ByteWriter {
public:
    template <typename T>
    void put(T v) {
        char buf[sizeof(T)];
        std::memcpy(buf, &v, sizeof(T));
        out_.append(buf, sizeof(T));
    }
    void put_string(const std::string& s) {
        put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        out_.append(s);
    }
    void raw(std::string_view s) { out_.append(s); }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view in) : in_(in) {}
    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, in_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string get_string() {
        const auto len = get<std::uint32_t>();
        need(len);
        std::string s(in_.substr(pos_, len));
        pos_ += len;
        return s;
    }
    std::string_view raw(std::size_t len) {
        need(len);
        auto s = in_.substr(pos_, len);
        pos_ += len;
        return s;
    }
    bool done() const { return pos_ == in_.size(); }

private:
    void need(std::size_t len) const {
        if (in_.size() - pos_ < len) throw ForestError("malformed forest file: truncated");
    }
    std::string_view in_;
    std::size_t pos_ = 0;
};

constexpr std::string_view kMagic = "SQRF";

}  // namespace

FeatureMatrix::FeatureMatrix(std::size_t cols, std::vector<double> data) : cols_(cols), data_(std::move(data)) {
    if (cols_ == 0 || data_.size() % cols_ != 0) throw ForestError("feature matrix data does not fill whole rows");
}

void FeatureMatrix::add_row(std::span<const double> row) {
    if (row.size() != cols_) throw ForestError("feature row width mismatch");
    data_.insert(data_.end(), row.begin(), row.end());
}

int ForestConfig::resolved_features_per_split(std::size_t n_features) const {
    if (features_per_split) return *features_per_split;
    return std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(n_features)))));
}

void ForestConfig::validate(std::size_t n_features) const {
    if (n_trees < 1) throw ForestError("n_trees must be at least 1");
    if (max_depth && *max_depth < 1) throw ForestError("max_depth must be positive");
    if (min_samples_leaf < 1) throw ForestError("min_samples_leaf must be positive");
    if (features_per_split &&
        (*features_per_split < 1 || static_cast<std::size_t>(*features_per_split) > n_features)) {
        throw ForestError("features_per_split must lie in [1, feature count]");
    }
}

std::string ForestConfig::describe() const {
    std::ostringstream os;
    os << "trees=" << n_trees << " depth=" << (max_depth ? std::to_string(*max_depth) : "none")
       << " leaf=" << min_samples_leaf
       << " mtry=" << (features_per_split ? std::to_string(*features_per_split) : "sqrt")
       << " bootstrap=" << (bootstrap ? 1 : 0);
    return os.str();
}

double gini(std::span<const std::uint8_t> labels) {
    if (labels.empty()) throw ForestError("gini of an empty label list");
    const auto pos = std::count_if(labels.begin(), labels.end(), [](std::uint8_t y) { return y != 0; });
    const double p = static_cast<double>(pos) / static_cast<double>(labels.size());
    return 2.0 * p * (1.0 - p);
}

std::optional<Split> best_split(const FeatureMatrix& rows, std::span<const std::uint8_t> labels,
                                std::span<const std::size_t> candidate_features, int min_samples_leaf) {
    if (labels.size() != rows.rows()) throw ForestError("label count does not match row count");
    if (min_samples_leaf < 1) throw ForestError("min_samples_leaf must be positive");
    const auto n = static_cast<std::uint64_t>(rows.rows());
    const auto min_leaf = static_cast<std::uint64_t>(min_samples_leaf);
    if (n < 2 * min_leaf) return std::nullopt;
    const auto p = static_cast<std::uint64_t>(std::count_if(labels.begin(), labels.end(),
                                                            [](std::uint8_t y) { return y != 0; }));

    std::vector<std::size_t> features(candidate_features.begin(), candidate_features.end());
    std::sort(features.begin(), features.end());
    features.erase(std::unique(features.begin(), features.end()), features.end());

    std::optional<Candidate> best;
    std::vector<std::uint32_t> order(rows.rows());
    for (std::size_t f : features) {
        if (f >= rows.cols()) throw ForestError("candidate feature index out of range");
        std::iota(order.begin(), order.end(), 0u);
        std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
            const double va = rows.at(a, f);
            const double vb = rows.at(b, f);
            if (va != vb) return va < vb;
            return a < b;
        });
        auto c = scan_feature(
            f, order, [&](std::uint32_t r, std::size_t col) { return rows.at(r, col); },
            [](std::uint32_t) { return std::uint64_t{1}; }, [&](std::uint32_t r) { return labels[r] != 0; }, n,
            p, min_leaf);
        if (c && improves_on_parent(c->score, n, p) && (!best || less_than(c->score, best->score))) best = c;
    }
    if (!best) return std::nullopt;
    return Split{best->feature, best->threshold, decrease_of(best->score, n, p)};
}

const TreeNode& DecisionTree::leaf_for(std::span<const double> row) const {
    if (nodes.empty()) throw ForestError("empty decision tree");
    std::size_t i = 0;
    while (!nodes[i].is_leaf()) {
        const TreeNode& node = nodes[i];
        i = static_cast<std::size_t>(row[static_cast<std::size_t>(node.feature)] <= node.threshold ? node.left
                                                                                                    : node.right);
    }
    return nodes[i];
}

double DecisionTree::predict(std::span<const double> row) const {
    return leaf_for(row).prob;
}

std::size_t DecisionTree::depth() const {
    if (nodes.empty()) return 0;
    std::size_t deepest = 0;
    std::vector<std::pair<std::size_t, std::size_t>> stack = {{0, 0}};
    while (!stack.empty()) {
        auto [i, d] = stack.back();
        stack.pop_back();
        deepest = std::max(deepest, d);
        if (!nodes[i].is_leaf()) {
            stack.emplace_back(static_cast<std::size_t>(nodes[i].left), d + 1);
            stack.emplace_back(static_cast<std::size_t>(nodes[i].right), d + 1);
        }
    }
    return deepest;
}

double RandomForest::predict_row(std::span<const double> row) const {
    if (row.size() != feature_names.size()) throw ForestError("feature catalog mismatch");
    if (trees.empty()) throw ForestError("forest has no trees");
    double sum = 0.0;
    for (const auto& tree : trees) sum += tree.predict(row);
    return sum / static_cast<double>(trees.size());
}

double RandomForest::predict_proba(const FeatureVector& fv) const {
    if (fv.names != feature_names) throw ForestError("feature catalog mismatch");
    return predict_row(fv.values);
}

RandomForest train_forest(const FeatureMatrix& x, std::span<const std::uint8_t> labels, const ForestConfig& config,
                          std::vector<std::string> feature_names, unsigned threads) {
    if (labels.size() != x.rows()) throw ForestError("label count does not match row count");
    if (x.rows() < 2) throw ForestError("need at least two training rows");
    if (feature_names.size() != x.cols()) throw ForestError("feature name count does not match column count");
    config.validate(x.cols());
    const auto pos = std::count_if(labels.begin(), labels.end(), [](std::uint8_t y) { return y != 0; });
    if (pos == 0 || static_cast<std::size_t>(pos) == labels.size()) throw ForestError("degenerate labels");

    const auto presorted = presort(x);
    RandomForest forest;
    forest.config = config;
    forest.feature_names = std::move(feature_names);
    forest.trees.resize(static_cast<std::size_t>(config.n_trees));

    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t t = next++; t < forest.trees.size(); t = next++) {
            TreeBuilder builder(x, labels, presorted, config, derive_seed(config.seed, "tree", t));
            forest.trees[t] = builder.build();
        }
    };
    const unsigned n_threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(config.n_trees)));
    if (n_threads == 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned i = 0; i < n_threads; ++i) pool.emplace_back(work);
    }
    return forest;
}

std::vector<ForestConfig> default_grid(std::uint64_t seed) {
    std::vector<ForestConfig> grid;
    for (int trees : {100, 300}) {
        for (std::optional<int> depth : {std::optional<int>(4), std::optional<int>(8), std::optional<int>()}) {
            for (int leaf : {1, 5, 25}) {
                ForestConfig c;
                c.n_trees = trees;
                c.max_depth = depth;
                c.min_samples_leaf = leaf;
                c.seed = seed;
                grid.push_back(c);
            }
        }
    }
    return grid;
}

GridSearchResult grid_search(const FeatureMatrix& train_x, std::span<const std::uint8_t> train_y,
                             const std::vector<std::string>& feature_names, const FeatureMatrix& val_x,
                             std::span<const ScoredRecord> val_records, std::span<const ForestConfig> grid,
                             unsigned threads) {
    if (grid.empty()) throw ForestError("empty hyperparameter grid");
    if (val_x.rows() != val_records.size()) throw ForestError("validation rows do not match validation records");
    const bool any_right = std::any_of(val_records.begin(), val_records.end(), [](auto& s) { return s.correct; });
    const bool any_wrong = std::any_of(val_records.begin(), val_records.end(), [](auto& s) { return !s.correct; });
    if (!any_right || !any_wrong) throw ForestError("validation set needs both correct and incorrect records");

    GridSearchResult result;
    std::vector<ScoredRecord> scored(val_records.begin(), val_records.end());
    for (std::size_t g = 0; g < grid.size(); ++g) {
        RandomForest forest = train_forest(train_x, train_y, grid[g], feature_names, threads);
        for (std::size_t i = 0; i < scored.size(); ++i) scored[i].confidence = forest.predict_row(val_x.row(i));
        const double value = auc(risk_coverage_curve(scored));
        result.grid_val_aucs.push_back(value);
        if (g == 0 || value < result.val_auc) {
            result.best_index = g;
            result.best_config = grid[g];
            result.best_forest = std::move(forest);
            result.val_auc = value;
        }
    }
    return result;
}

// Layout (all integers little-endian):
//   "SQRF" u8 version
//   u32 n_features, then per feature: u32 length + UTF-8 bytes
//   i32 n_trees, i32 max_depth (-1 = unlimited), i32 min_samples_leaf,
//   i32 features_per_split (-1 = sqrt), u8 bootstrap, u64 seed
//   u32 tree count, then per tree: u32 node count, then per node:
//     i32 feature, f64 threshold, i32 left, i32 right, f64 prob, u32 count
std::string serialize_forest(const RandomForest& forest) {
    ByteWriter w;
    w.raw(kMagic);
    w.put<std::uint8_t>(kForestFormatVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(forest.feature_names.size()));
    for (const auto& name : forest.feature_names) w.put_string(name);
    const auto& c = forest.config;
    w.put<std::int32_t>(c.n_trees);
    w.put<std::int32_t>(c.max_depth ? *c.max_depth : -1);
    w.put<std::int32_t>(c.min_samples_leaf);
    w.put<std::int32_t>(c.features_per_split ? *c.features_per_split : -1);
    w.put<std::uint8_t>(c.bootstrap ? 1 : 0);
    w.put<std::uint64_t>(c.seed);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(forest.trees.size()));
    for (const auto& tree : forest.trees) {
        w.put<std::uint32_t>(static_cast<std::uint32_t>(tree.nodes.size()));
        for (const auto& node : tree.nodes) {
            w.put<std::int32_t>(node.feature);
            w.put<double>(node.threshold);
            w.put<std::int32_t>(node.left);
            w.put<std::int32_t>(node.right);
            w.put<double>(node.prob);
            w.put<std::uint32_t>(node.count);
        }
    }
    return w.take();
}

RandomForest deserialize_forest(std::string_view bytes) {
    ByteReader r(bytes);
    if (r.raw(kMagic.size()) != kMagic) throw ForestError("malformed forest file: bad magic");
    const auto version = r.get<std::uint8_t>();
    if (version != kForestFormatVersion) {
        throw ForestError("unsupported forest file version " + std::to_string(version) + " (expected " +
                          std::to_string(kForestFormatVersion) + ")");
    }
    RandomForest forest;
    const auto n_features = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_features; ++i) forest.feature_names.push_back(r.get_string());
    auto& c = forest.config;
    c.n_trees = r.get<std::int32_t>();
    if (const auto d = r.get<std::int32_t>(); d >= 0) c.max_depth = d;
    c.min_samples_leaf = r.get<std::int32_t>();
    if (const auto m = r.get<std::int32_t>(); m >= 0) c.features_per_split = m;
    c.bootstrap = r.get<std::uint8_t>() != 0;
    c.seed = r.get<std::uint64_t>();
    const auto n_trees = r.get<std::uint32_t>();
    if (static_cast<std::int64_t>(n_trees) != c.n_trees) throw ForestError("malformed forest file: tree count");
    forest.trees.resize(n_trees);
    for (auto& tree : forest.trees) {
        const auto n_nodes = r.get<std::uint32_t>();
        if (n_nodes == 0) throw ForestError("malformed forest file: empty tree");
        tree.nodes.resize(n_nodes);
        for (auto& node : tree.nodes) {
            node.feature = r.get<std::int32_t>();
            node.threshold = r.get<double>();
            node.left = r.get<std::int32_t>();
            node.right = r.get<std::int32_t>();
            node.prob = r.get<double>();
            node.count = r.get<std::uint32_t>();
        }
        for (std::uint32_t i = 0; i < n_nodes; ++i) {
            const TreeNode& node = tree.nodes[i];
            if (node.is_leaf()) continue;
            // Pre-order layout: children always follow their parent.
            const auto ok = [&](int child) {
                return child > static_cast<int>(i) && static_cast<std::uint32_t>(child) < n_nodes;
            };
            if (static_cast<std::uint32_t>(node.feature) >= n_features || !ok(node.left) || !ok(node.right)) {
                throw ForestError("malformed forest file: bad node reference");
            }
        }
    }
    if (!r.done()) throw ForestError("malformed forest file: trailing bytes");
    return forest;
}

void save_forest(const RandomForest& forest, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ForestError("cannot write " + path);
    const std::string bytes = serialize_forest(forest);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ForestError("write failed for " + path);
}

RandomForest load_forest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ForestError("cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_forest(bytes);
}

}  // namespace selqa
