#include "selqa/harness.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <set>
#include <unordered_set>

#include "selqa/format.hpp"
#include "selqa/rng.hpp"
#include "selqa/stats.hpp"
#include "selqa/synthetic.hpp"

namespace selqa {

namespace {

constexpr double kNoise = 0.02;
// At 1.5 the cross-domain misranking is worth well under 0.01 AUC, too little to
// separate from forest noise at benchmark sizes.
constexpr double kBenchmarkOverconfidence = 3.0;

struct Tagged {
    const PredictionRecord* record;
    bool from_source;
};

std::unordered_set<std::string> ids_of(const RecordSet& set) {
    std::unordered_set<std::string> ids;
    ids.reserve(set.size());
    for (const auto& r : set) ids.insert(r.id);
    return ids;
}

RecordSet without_ids(const RecordSet& pool, const std::unordered_set<std::string>& excluded) {
    RecordSet out;
    out.provenance = pool.provenance;
    for (const auto& r : pool) {
        if (!excluded.contains(r.id)) out.records.push_back(r);
    }
    return out;
}

bool all_have_dropout(const RecordSet& set) {
    return std::all_of(set.begin(), set.end(), [](const PredictionRecord& r) {
        return r.has_dropout() && r.dropout_probs->size() >= 2;
    });
}

// Calibrator pool sizes (source, known OOD) before the train/validation split.
std::pair<std::size_t, std::size_t> calibrator_counts(const ExperimentConfig& cfg, CalibratorTraining training) {
    std::size_t n_source = cfg.calib_per_domain;
    std::size_t n_known = cfg.known_budget.value_or(cfg.calib_per_domain);
    if (cfg.calib_alpha) {
        const std::size_t total = n_source + n_known;
        n_source = round_half_up(*cfg.calib_alpha * static_cast<double>(total));
        n_known = total - n_source;
    }
    if (training == CalibratorTraining::source_only) return {n_source + n_known, 0};
    return {n_source, n_known};
}

struct CalibratorData {
    std::vector<Tagged> train;
    std::vector<Tagged> val;
};

// Samples and splits the calibrator pools for one split index.
CalibratorData calibrator_data(const ExperimentConfig& cfg, const RecordSet& source_pool, const RecordSet& known_pool,
                               CalibratorTraining training, std::size_t split_index, RecordSet& source_sample,
                               RecordSet& known_sample) {
    const auto [n_source, n_known] = calibrator_counts(cfg, training);
    const std::uint64_t seed = cfg.master_seed;
    CalibratorData out;
    auto add = [&](const RecordSet& pool, std::size_t n, bool from_source, std::string_view sample_tag,
                   std::string_view split_tag, RecordSet& sample) {
        if (n == 0) return;
        if (pool.size() < n) {
            throw HarnessError(std::string(from_source ? "source held-out" : "known OOD") + " pool has " +
                               std::to_string(pool.size()) + " records, calibrator needs " + std::to_string(n));
        }
        sample = sample_without_replacement(pool, n, derive_seed(seed, sample_tag, split_index));
        if (sample.size() < 2) {
            for (const auto& r : sample) out.train.push_back({&r, from_source});
            return;
        }
        auto [tr, va] = split(sample, cfg.train_fraction, derive_seed(seed, split_tag, split_index));
        // Re-point into `sample` so the tagged pointers stay valid.
        std::unordered_set<std::string> train_ids = ids_of(tr);
        for (const auto& r : sample) {
            (train_ids.contains(r.id) ? out.train : out.val).push_back({&r, from_source});
        }
    };
    add(source_pool, n_source, true, "calib-source", "trainval-source", source_sample);
    add(known_pool, n_known, false, "calib-known", "trainval-known", known_sample);
    return out;
}

FeatureMatrix matrix_of(const std::vector<Tagged>& rows, FeatureVariant variant, const FeatureMask& mask) {
    FeatureMatrix m(feature_names(variant, mask).size());
    for (const auto& t : rows) m.add_row(extract_features(*t.record, variant, mask).values);
    return m;
}

Summary summarize_splits(const std::vector<SplitResult>& splits, auto&& get) {
    std::vector<double> xs;
    xs.reserve(splits.size());
    for (const auto& s : splits) xs.push_back(get(s));
    return summarize(xs);
}

std::vector<DomainSummary> average_domains(const std::vector<PerDomainBreakdown>& parts) {
    std::map<std::string, std::pair<double, std::vector<double>>> acc;  // domain -> (share sum, accuracies)
    for (const auto& p : parts) {
        for (const auto& d : p.domains) {
            auto& a = acc[d.domain];
            a.first += d.share;
            if (d.accuracy) a.second.push_back(*d.accuracy);
        }
    }
    std::vector<DomainSummary> out;
    for (const auto& [domain, a] : acc) {
        DomainSummary s;
        s.domain = domain;
        s.share = a.first / static_cast<double>(parts.size());
        if (!a.second.empty()) s.accuracy = stats::mean(a.second);
        out.push_back(std::move(s));
    }
    return out;
}

void finalize(MethodReport& m, const ExperimentConfig& cfg,
              const std::map<double, std::vector<PerDomainBreakdown>>& domain_parts) {
    m.auc = summarize_splits(m.splits, [](const SplitResult& s) { return s.metrics.auc; });
    for (double level : cfg.acc_levels) {
        m.cov_at_acc[level] =
            summarize_splits(m.splits, [level](const SplitResult& s) { return s.metrics.cov_at_acc.at(level); });
    }
    for (const auto& [level, parts] : domain_parts) {
        if (!parts.empty()) m.per_domain[level] = average_domains(parts);
    }
}

ExperimentData benchmark_pools(const DomainSpec& source, const DomainSpec& known, const DomainSpec& unknown,
                               const BenchmarkSizes& sizes, std::uint64_t seed) {
    ExperimentData data;
    // One source draw split into disjoint test and held-out pools.
    DomainSpec src = source;
    src.n = sizes.source_test + sizes.source_heldout;
    RecordSet all = generate_synthetic(src, seed);
    data.source_test.provenance = all.provenance + ":test";
    data.source_heldout.provenance = all.provenance + ":heldout";
    for (std::size_t i = 0; i < all.size(); ++i) {
        (i < sizes.source_test ? data.source_test : data.source_heldout).records.push_back(all.records[i]);
    }
    DomainSpec k = known;
    k.n = sizes.known_ood;
    data.known_ood = generate_synthetic(k, seed);
    DomainSpec u = unknown;
    u.n = sizes.unknown_ood;
    data.unknown_ood = generate_synthetic(u, seed);
    return data;
}

}  // namespace

Summary summarize(std::span<const double> values) {
    Summary s;
    if (values.empty()) return s;
    s.mean = stats::mean(values);
    s.sd = stats::sample_sd(values);
    s.min = *std::min_element(values.begin(), values.end());
    s.max = *std::max_element(values.begin(), values.end());
    return s;
}

const MethodReport* ExperimentReport::find(std::string_view method_name) const {
    for (const auto& m : methods) {
        if (m.spec.name() == method_name) return &m;
    }
    return nullptr;
}

ExperimentData load_experiment_data(const ExperimentConfig& cfg) {
    ExperimentData data;
    auto load = [](const std::string& path, const char* key) {
        if (path.empty()) throw HarnessError(std::string("config is missing ") + key);
        return load_records(path);
    };
    data.source_test = load(cfg.source_records, "source_records");
    data.source_heldout = load(cfg.source_heldout_records, "source_heldout_records");
    data.known_ood = load(cfg.known_ood_records, "known_ood_records");
    data.unknown_ood = load(cfg.unknown_ood_records, "unknown_ood_records");
    return data;
}

ExperimentReport run_experiment(const ExperimentConfig& cfg, const ExperimentData& data) {
    cfg.validate();
    validate_set(data.source_test);
    validate_set(data.unknown_ood);

    {
        const auto test_ids = ids_of(data.source_test);
        for (const auto& r : data.source_heldout) {
            if (test_ids.contains(r.id)) {
                throw HarnessError("source held-out pool shares id " + r.id + " with the test source pool");
            }
        }
    }

    ExperimentReport report;
    report.config = cfg;
    const RecordSet test = sample_mixture(data.source_test, data.unknown_ood, cfg.alpha, cfg.test_n,
                                          derive_seed(cfg.master_seed, "test-mixture"));
    report.test_size = test.size();
    for (const auto& r : test) ++report.test_domain_counts[r.domain];

    std::vector<ScoredRecord> oracle_scores;
    oracle_scores.reserve(test.size());
    for (const auto& r : test) oracle_scores.push_back(ScoredRecord::from(r, 0.0));
    report.best_possible = best_possible_metrics(oracle_scores, cfg.acc_levels);

    // Calibrator pools never contain test-mixture records, even when the known and
    // unknown OOD pools are the same dataset.
    const auto test_ids = ids_of(test);
    const RecordSet source_pool = without_ids(data.source_heldout, test_ids);
    const RecordSet known_pool = without_ids(data.known_ood, test_ids);
    const bool test_has_dropout = all_have_dropout(test);
    const bool multi_domain = report.test_domain_counts.size() >= 2;
    const auto unknown_ids = ids_of(data.unknown_ood);
    std::set<std::string> pools;

    auto evaluate = [&](MethodReport& m, const std::vector<ScoredRecord>& scored, std::size_t split,
                        std::map<double, std::vector<PerDomainBreakdown>>& domain_parts) {
        SplitResult s;
        s.split = split;
        s.metrics = selective_metrics(scored, cfg.acc_levels);
        if (multi_domain) {
            for (double level : cfg.acc_levels) domain_parts[level].push_back(per_domain_breakdown(scored, level));
        }
        if (m.first_split_scores.empty()) m.first_split_scores = scored;
        m.splits.push_back(std::move(s));
    };

    for (const MethodSpec& spec : cfg.methods) {
        MethodReport m;
        m.spec = spec;
        std::map<double, std::vector<PerDomainBreakdown>> domain_parts;

        if (spec.needs_dropout() && !test_has_dropout) {
            m.skipped = true;
            m.skip_reason = "test records lack dropout fields";
            report.methods.push_back(std::move(m));
            continue;
        }

        if (!spec.trained()) {
            evaluate(m, score_all(test, ConfidenceMethod::simple(spec.kind)), 0, domain_parts);
            finalize(m, cfg, domain_parts);
            report.methods.push_back(std::move(m));
            continue;
        }

        const CalibratorTraining training =
            spec.training == CalibratorTraining::none ? CalibratorTraining::mixed : spec.training;
        for (std::size_t s = 0; s < cfg.n_splits; ++s) {
            RecordSet source_sample;
            RecordSet known_sample;
            const CalibratorData cd =
                calibrator_data(cfg, source_pool, known_pool, training, s, source_sample, known_sample);
            if (spec.needs_dropout()) {
                const bool ok = std::all_of(cd.train.begin(), cd.train.end(), [](const Tagged& t) {
                                    return t.record->has_dropout();
                                }) && std::all_of(cd.val.begin(), cd.val.end(), [](const Tagged& t) {
                                    return t.record->has_dropout();
                                });
                if (!ok) {
                    m.skipped = true;
                    m.skip_reason = "calibrator records lack dropout fields";
                    break;
                }
            }
            if (cd.val.empty()) throw HarnessError("calibrator validation split is empty");

            for (const auto* part : {&cd.train, &cd.val}) {
                for (const auto& t : *part) {
                    if (!t.from_source && unknown_ids.contains(t.record->id)) report.unknown_pool_in_training = true;
                }
            }
            for (const auto& t : cd.train) {
                pools.insert((t.from_source ? "source_heldout:" : "known_ood:") +
                             (t.from_source ? source_pool.provenance : known_pool.provenance));
            }

            const FeatureMatrix train_x = matrix_of(cd.train, spec.variant, spec.mask);
            const FeatureMatrix val_x = matrix_of(cd.val, spec.variant, spec.mask);
            Labels train_y;
            train_y.reserve(cd.train.size());
            for (const auto& t : cd.train) {
                const bool label = spec.kind == MethodKind::outlier ? t.from_source : t.record->correct;
                train_y.push_back(label ? 1 : 0);
            }
            std::vector<ScoredRecord> val_records;
            val_records.reserve(cd.val.size());
            for (const auto& t : cd.val) val_records.push_back(ScoredRecord::from(*t.record, 0.0));

            std::vector<ForestConfig> grid = cfg.grid;
            for (auto& g : grid) g.seed = derive_seed(cfg.master_seed, "forest", s);
            GridSearchResult gs = grid_search(train_x, train_y, feature_names(spec.variant, spec.mask), val_x,
                                              val_records, grid, cfg.threads);

            auto model = std::make_shared<const RandomForest>(std::move(gs.best_forest));
            const ConfidenceMethod method = spec.kind == MethodKind::outlier
                                                ? ConfidenceMethod::outlier(model, spec.mask)
                                                : ConfidenceMethod::calibrator(model, spec.variant, spec.mask);
            evaluate(m, score_all(test, method), s, domain_parts);
            m.splits.back().selected_config = gs.best_config.describe();
            m.splits.back().val_auc = gs.val_auc;
        }
        if (m.skipped) {
            m.splits.clear();
            m.first_split_scores.clear();
        } else {
            finalize(m, cfg, domain_parts);
        }
        report.methods.push_back(std::move(m));
    }
    report.calibrator_pools.assign(pools.begin(), pools.end());
    return report;
}

ExperimentReport run_source_only_calibrator(const ExperimentConfig& cfg, const ExperimentData& data) {
    ExperimentConfig c = cfg;
    bool any = false;
    for (auto& m : c.methods) {
        if (m.kind == MethodKind::calibrator) {
            m.training = CalibratorTraining::source_only;
            any = true;
        }
    }
    if (!any) c.methods.push_back(MethodSpec::parse("calibrator-source-only"));
    return run_experiment(c, data);
}

ExperimentReport run_outlier_baseline(const ExperimentConfig& cfg, const ExperimentData& data) {
    ExperimentConfig c = cfg;
    c.methods = {MethodSpec::parse("maxprob"), MethodSpec::parse("calibrator"), MethodSpec::parse("outlier")};
    return run_experiment(c, data);
}

GridSearchResult train_model(const RecordSet& source, const RecordSet& known, const MethodSpec& spec,
                             double train_fraction, std::vector<ForestConfig> grid, std::uint64_t seed,
                             unsigned threads) {
    if (!spec.trained()) throw HarnessError("method " + spec.name() + " has no model to train");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw HarnessError("train_fraction must be in (0, 1)");
    if (grid.empty()) throw HarnessError("empty hyperparameter grid");
    validate_set(source);

    std::vector<Tagged> train, val;
    std::vector<RecordSet> parts;
    parts.reserve(4);
    auto add = [&](const RecordSet& pool, bool from_source, std::string_view tag) {
        if (pool.empty()) return;
        auto [tr, va] = split(pool, train_fraction, derive_seed(seed, tag));
        parts.push_back(std::move(tr));
        for (const auto& r : parts.back()) train.push_back({&r, from_source});
        parts.push_back(std::move(va));
        for (const auto& r : parts.back()) val.push_back({&r, from_source});
    };
    add(source, true, "trainval-source");
    add(known, false, "trainval-known");
    if (val.empty()) throw HarnessError("calibrator validation split is empty");

    Labels train_y;
    for (const auto& t : train) {
        const bool label = spec.kind == MethodKind::outlier ? t.from_source : t.record->correct;
        train_y.push_back(label ? 1 : 0);
    }
    std::vector<ScoredRecord> val_records;
    for (const auto& t : val) val_records.push_back(ScoredRecord::from(*t.record, 0.0));
    for (auto& g : grid) g.seed = derive_seed(seed, "forest", 0);
    return grid_search(matrix_of(train, spec.variant, spec.mask), train_y, feature_names(spec.variant, spec.mask),
                       matrix_of(val, spec.variant, spec.mask), val_records, grid, threads);
}

namespace {

const MethodSpec& first_calibrator(const ExperimentConfig& cfg, MethodSpec& fallback) {
    for (const auto& m : cfg.methods) {
        if (m.kind == MethodKind::calibrator) return m;
    }
    fallback = MethodSpec::parse("calibrator");
    return fallback;
}

}  // namespace

std::vector<LearningCurveRow> learning_curve(const ExperimentConfig& cfg, const ExperimentData& data,
                                             std::vector<std::size_t> budgets) {
    if (budgets.empty()) throw HarnessError("no budgets given");
    std::sort(budgets.begin(), budgets.end());
    budgets.erase(std::unique(budgets.begin(), budgets.end()), budgets.end());
    if (budgets.back() > data.known_ood.size()) {
        throw HarnessError("budget " + std::to_string(budgets.back()) + " exceeds the known OOD pool of " +
                           std::to_string(data.known_ood.size()));
    }
    MethodSpec fallback;
    const MethodSpec calibrator = first_calibrator(cfg, fallback);
    std::vector<LearningCurveRow> rows;
    for (std::size_t b : budgets) {
        if (b < 2) throw HarnessError("budgets must be at least 2 records");
        ExperimentConfig c = cfg;
        c.known_budget = b;
        c.methods = {MethodSpec::parse("maxprob"), calibrator};
        const ExperimentReport r = run_experiment(c, data);
        LearningCurveRow row;
        row.budget = b;
        row.calibrator_auc = r.methods[1].auc;
        row.maxprob_auc = r.methods[0].auc.mean;
        row.within_noise = rows.empty() || row.calibrator_auc.mean <= rows.back().calibrator_auc.mean + kNoise;
        rows.push_back(row);
    }
    return rows;
}

std::vector<AlphaSweepRow> alpha_sweep(const ExperimentConfig& cfg, const ExperimentData& data,
                                       std::vector<double> alphas) {
    if (alphas.empty()) throw HarnessError("no alphas given");
    for (double a : alphas) {
        if (!(a >= 0.0 && a <= 1.0)) throw HarnessError("alpha " + format_double(a) + " outside [0, 1]");
    }
    std::sort(alphas.begin(), alphas.end());
    alphas.erase(std::unique(alphas.begin(), alphas.end()), alphas.end());
    MethodSpec fallback;
    const MethodSpec calibrator = first_calibrator(cfg, fallback);
    std::vector<AlphaSweepRow> rows;
    for (double a : alphas) {
        ExperimentConfig c = cfg;
        c.alpha = a;
        c.calib_alpha = a;
        c.methods = {MethodSpec::parse("maxprob"), calibrator};
        const ExperimentReport r = run_experiment(c, data);
        AlphaSweepRow row;
        row.alpha = a;
        row.maxprob_auc = r.methods[0].auc.mean;
        row.calibrator_auc = r.methods[1].auc.mean;
        row.difference = row.calibrator_auc - row.maxprob_auc;
        rows.push_back(row);
    }
    return rows;
}

double extrapolation_cell(double maxprob_auc, double calib_auc, double best_auc) {
    constexpr double kSlack = 1e-9;
    if (best_auc > std::min(maxprob_auc, calib_auc) + kSlack) {
        throw HarnessError("best-possible AUC exceeds a method AUC");
    }
    const double denom = maxprob_auc - best_auc;
    if (denom <= 1e-12) throw HarnessError("MaxProb already matches the best possible AUC");
    return 100.0 * (maxprob_auc - calib_auc) / denom;
}

const MatrixCell& MatrixResult::cell(std::string_view known, std::string_view unknown) const {
    for (const auto& c : cells) {
        if (c.known == known && c.unknown == unknown) return c;
    }
    throw HarnessError("no matrix cell for (" + std::string(known) + ", " + std::string(unknown) + ")");
}

MatrixResult run_matrix(const ExperimentConfig& cfg, const RecordSet& source_test, const RecordSet& source_heldout,
                        const std::map<std::string, RecordSet>& ood_datasets) {
    if (ood_datasets.size() < 2) throw HarnessError("the matrix needs at least two OOD datasets");
    MethodSpec fallback;
    const MethodSpec calibrator = first_calibrator(cfg, fallback);
    ExperimentConfig c = cfg;
    c.methods = {MethodSpec::parse("maxprob"), calibrator};

    MatrixResult result;
    std::size_t off_diagonal = 0;
    for (const auto& [known_name, known] : ood_datasets) {
        result.datasets.push_back(known_name);
        for (const auto& [unknown_name, unknown] : ood_datasets) {
            const ExperimentData data{source_test, source_heldout, known, unknown};
            const ExperimentReport r = run_experiment(c, data);
            MatrixCell cell;
            cell.known = known_name;
            cell.unknown = unknown_name;
            cell.oracle_access = known_name == unknown_name;
            cell.unknown_pool_in_training = r.unknown_pool_in_training;
            cell.maxprob_auc = r.methods[0].auc.mean;
            cell.calibrator_auc = r.methods[1].auc.mean;
            cell.best_auc = r.best_possible.auc;
            cell.improvement = extrapolation_cell(cell.maxprob_auc, cell.calibrator_auc, cell.best_auc);
            if (!cell.oracle_access) {
                if (cell.unknown_pool_in_training) {
                    throw HarnessError("calibrator for (" + known_name + ", " + unknown_name +
                                       ") trained on unknown OOD records");
                }
                ++off_diagonal;
                result.maxprob_auc += cell.maxprob_auc;
                result.calibrator_auc += cell.calibrator_auc;
                result.best_auc += cell.best_auc;
                for (double level : cfg.acc_levels) {
                    result.maxprob_cov[level] += r.methods[0].cov_at_acc.at(level).mean;
                    result.calibrator_cov[level] += r.methods[1].cov_at_acc.at(level).mean;
                }
            }
            result.cells.push_back(std::move(cell));
        }
    }
    const double k = static_cast<double>(off_diagonal);
    result.maxprob_auc /= k;
    result.calibrator_auc /= k;
    result.best_auc /= k;
    for (auto& [level, v] : result.maxprob_cov) v /= k;
    for (auto& [level, v] : result.calibrator_cov) v /= k;
    return result;
}

std::vector<FeatureMask> single_group_ablations(FeatureVariant variant) {
    std::vector<FeatureMask> masks = {FeatureMask{}};
    for (FeatureGroup g : all_feature_groups()) {
        if (g == FeatureGroup::dropout_var && variant == FeatureVariant::base) continue;
        masks.push_back(FeatureMask{{g}});
    }
    return masks;
}

std::vector<AblationRow> ablation_run(const ExperimentConfig& cfg, const ExperimentData& data,
                                      const std::vector<FeatureMask>& masks) {
    if (masks.empty()) throw HarnessError("no ablation masks given");
    MethodSpec fallback;
    const MethodSpec calibrator = first_calibrator(cfg, fallback);
    std::vector<AblationRow> rows;
    for (const auto& mask : masks) {
        MethodSpec spec = calibrator;
        spec.mask = mask;
        feature_names(spec.variant, mask);
        ExperimentConfig c = cfg;
        c.methods = {spec};
        ExperimentReport r = run_experiment(c, data);
        rows.push_back({mask, std::move(r.methods[0])});
    }
    return rows;
}

ExperimentData make_benchmark(BenchmarkKind kind, const BenchmarkSizes& sizes, std::uint64_t seed) {
    DomainSpec source;
    source.domain = "source";
    source.passage_len_min = 80;
    source.passage_len_max = 220;
    source.latent_mean = 1.0;
    source.dropout_masks = sizes.dropout_masks;

    DomainSpec known;
    known.domain = "known_ood";
    known.passage_len_min = 250;
    known.passage_len_max = 700;
    known.latent_mean = -0.2;
    known.dropout_masks = sizes.dropout_masks;

    DomainSpec unknown = known;
    unknown.domain = "unknown_ood";
    unknown.passage_len_min = 300;
    unknown.passage_len_max = 800;
    unknown.latent_mean = -0.4;

    switch (kind) {
        case BenchmarkKind::overconfident_ood:
            known.overconfidence = kBenchmarkOverconfidence;
            unknown.overconfidence = kBenchmarkOverconfidence;
            break;
        case BenchmarkKind::calibrated:
            break;
        case BenchmarkKind::domain_separable:
            source.latent_mean = known.latent_mean = unknown.latent_mean = 0.3;
            known.passage_len_min = unknown.passage_len_min = 400;
            known.passage_len_max = unknown.passage_len_max = 800;
            break;
    }
    return benchmark_pools(source, known, unknown, sizes, seed);
}

}  // namespace selqa
