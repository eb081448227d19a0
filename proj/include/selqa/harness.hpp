#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "selqa/confidence.hpp"
#include "selqa/evaluation.hpp"
#include "selqa/features.hpp"
#include "selqa/forest.hpp"
#include "selqa/records.hpp"

namespace selqa {

class HarnessError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Which data a trained forest sees: source held-out plus known OOD, or source only.
enum class CalibratorTraining { none, mixed, source_only };

std::string_view to_string(CalibratorTraining t);

/// One row of an experiment: a confidence method plus, for trained kinds, how
/// its forest is trained.
///
/// Spellings: maxprob, dropout-mean, dropout-var, calibrator,
/// calibrator-source-only, calibrator-dropout, calibrator-dropout-source-only,
/// outlier. Trained kinds accept an ablation suffix "[group,group]".
struct MethodSpec {
    MethodKind kind = MethodKind::max_prob;
    FeatureVariant variant = FeatureVariant::base;
    CalibratorTraining training = CalibratorTraining::none;
    FeatureMask mask;

    bool trained() const { return kind == MethodKind::calibrator || kind == MethodKind::outlier; }
    bool needs_dropout() const;
    std::string name() const;
    static MethodSpec parse(std::string_view token);

    bool operator==(const MethodSpec&) const = default;
};

struct ExperimentConfig {
    std::string source_records;          // source pool for the test mixture
    std::string source_heldout_records;  // disjoint source pool for calibrator training
    std::string known_ood_records;
    std::string unknown_ood_records;
    std::map<std::string, std::string> ood_records;  // dataset name -> file, for the matrix

    double alpha = 0.5;
    std::size_t test_n = 8000;
    std::size_t calib_per_domain = 2000;
    std::optional<std::size_t> known_budget;  // overrides the known-OOD calibrator count
    std::optional<double> calib_alpha;        // source share of the calibrator pool, when set
    double train_fraction = 0.8;
    std::size_t n_splits = 10;
    std::vector<MethodSpec> methods;
    std::vector<ForestConfig> grid;
    std::vector<double> acc_levels = {0.8, 0.9};
    std::uint64_t master_seed = 0;
    unsigned threads = 1;
    std::size_t reliability_bins = 10;

    ExperimentConfig();
    void validate() const;
};

// Flat "key = value" document; '#' starts a comment. Relative paths resolve
// against base_dir. Keys: source_records, source_heldout_records,
// known_ood_records, unknown_ood_records, ood.<name>, alpha, test_n,
// calib_per_domain, known_budget, calib_alpha, train_fraction, n_splits,
// methods, grid.n_trees, grid.max_depth, grid.min_samples_leaf,
// grid.features_per_split, grid.bootstrap, acc_levels, master_seed, threads,
// reliability_bins.
ExperimentConfig parse_config(std::istream& in, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::string& path);
// Canonical key = value text of a configuration.
std::string config_to_text(const ExperimentConfig& cfg);

struct ExperimentData {
    RecordSet source_test;
    RecordSet source_heldout;
    RecordSet known_ood;
    RecordSet unknown_ood;
};

ExperimentData load_experiment_data(const ExperimentConfig& cfg);

struct Summary {
    double mean = 0.0;
    double sd = 0.0;  // sample standard deviation over splits
    double min = 0.0;
    double max = 0.0;
};

Summary summarize(std::span<const double> values);

struct SplitResult {
    std::size_t split = 0;
    SelectiveMetrics metrics;
    std::string selected_config;  // empty for untrained methods
    std::optional<double> val_auc;
};

struct DomainSummary {
    std::string domain;
    double share = 0.0;
    std::optional<double> accuracy;
};

struct MethodReport {
    MethodSpec spec;
    bool skipped = false;
    std::string skip_reason;
    std::vector<SplitResult> splits;
    Summary auc;
    std::map<double, Summary> cov_at_acc;
    std::map<double, std::vector<DomainSummary>> per_domain;  // averaged over splits
    std::vector<ScoredRecord> first_split_scores;
};

struct ExperimentReport {
    ExperimentConfig config;
    std::size_t test_size = 0;
    std::map<std::string, std::size_t> test_domain_counts;
    SelectiveMetrics best_possible;
    std::vector<MethodReport> methods;
    std::vector<std::string> calibrator_pools;  // provenance of every pool a forest trained on
    bool unknown_pool_in_training = false;

    const MethodReport* find(std::string_view method_name) const;
};

// Runs the configured methods on the fixed test mixture. Trained methods are
// re-trained on each of n_splits seeded calibrator splits; untrained methods are
// scored once.
ExperimentReport run_experiment(const ExperimentConfig& cfg, const ExperimentData& data);

// Same pipeline with every calibrator trained on source held-out data only, at
// the combined calibrator size.
ExperimentReport run_source_only_calibrator(const ExperimentConfig& cfg, const ExperimentData& data);

// MaxProb, the mixed calibrator, and the in-domain detector used as confidence.
ExperimentReport run_outlier_baseline(const ExperimentConfig& cfg, const ExperimentData& data);

// Grid-searches one forest outside the experiment loop. Each pool is split
// train_fraction / rest; known may be empty. Labels are correctness, or source
// membership for the outlier kind.
GridSearchResult train_model(const RecordSet& source, const RecordSet& known, const MethodSpec& spec,
                             double train_fraction, std::vector<ForestConfig> grid, std::uint64_t seed,
                             unsigned threads = 1);

struct LearningCurveRow {
    std::size_t budget = 0;
    Summary calibrator_auc;
    double maxprob_auc = 0.0;
    bool within_noise = true;  // AUC no worse than the previous budget + 0.02
};

std::vector<LearningCurveRow> learning_curve(const ExperimentConfig& cfg, const ExperimentData& data,
                                             std::vector<std::size_t> budgets);

struct AlphaSweepRow {
    double alpha = 0.0;
    double calibrator_auc = 0.0;
    double maxprob_auc = 0.0;
    double difference = 0.0;  // calibrator - maxprob
};

std::vector<AlphaSweepRow> alpha_sweep(const ExperimentConfig& cfg, const ExperimentData& data,
                                       std::vector<double> alphas);

// 100 * (maxprob - calibrator) / (maxprob - best).
double extrapolation_cell(double maxprob_auc, double calib_auc, double best_auc);

struct MatrixCell {
    std::string known;
    std::string unknown;
    double maxprob_auc = 0.0;
    double calibrator_auc = 0.0;
    double best_auc = 0.0;
    double improvement = 0.0;
    bool oracle_access = false;  // known == unknown
    bool unknown_pool_in_training = false;
};

struct MatrixResult {
    std::vector<MatrixCell> cells;
    std::vector<std::string> datasets;
    // Averages over off-diagonal cells.
    double maxprob_auc = 0.0;
    double calibrator_auc = 0.0;
    double best_auc = 0.0;
    std::map<double, double> maxprob_cov;
    std::map<double, double> calibrator_cov;

    const MatrixCell& cell(std::string_view known, std::string_view unknown) const;
};

MatrixResult run_matrix(const ExperimentConfig& cfg, const RecordSet& source_test, const RecordSet& source_heldout,
                        const std::map<std::string, RecordSet>& ood_datasets);

struct AblationRow {
    FeatureMask mask;
    MethodReport result;
};

std::vector<AblationRow> ablation_run(const ExperimentConfig& cfg, const ExperimentData& data,
                                      const std::vector<FeatureMask>& masks);

// The full-feature row followed by each single-group removal valid for the variant.
std::vector<FeatureMask> single_group_ablations(FeatureVariant variant);

/// Synthetic benchmark pools.
enum class BenchmarkKind {
    overconfident_ood,  // OOD harder and overconfident, domains differ in passage length
    calibrated,         // every domain calibrated
    domain_separable,   // domains separable by passage length, correctness domain-independent
};

struct BenchmarkSizes {
    std::size_t source_test = 4000;
    std::size_t source_heldout = 10000;
    std::size_t known_ood = 2000;
    std::size_t unknown_ood = 4000;
    std::size_t dropout_masks = 0;
};

ExperimentData make_benchmark(BenchmarkKind kind, const BenchmarkSizes& sizes, std::uint64_t seed);

}  // namespace selqa
