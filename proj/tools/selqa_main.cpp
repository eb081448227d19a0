// selqa: selective question answering under domain shift.
//
// Exit status: 0 on success, 1 on usage errors, 2 on data or validation errors.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "selqa/confidence.hpp"
#include "selqa/evaluation.hpp"
#include "selqa/features.hpp"
#include "selqa/forest.hpp"
#include "selqa/format.hpp"
#include "selqa/harness.hpp"
#include "selqa/plots.hpp"
#include "selqa/records.hpp"
#include "selqa/report_io.hpp"
#include "selqa/synthetic.hpp"

namespace fs = std::filesystem;
using namespace selqa;

namespace {

constexpr std::uint64_t kDefaultSeed = 20200705;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Percentages are a presentation concern; everything below this layer is in [0, 1].
std::string pct(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, 100.0 * v, std::chars_format::fixed, 2);
    return std::string(buf, res.ptr);
}

struct MethodFlags {
    std::string method = "maxprob";
    std::string variant = "base";
    std::string ablate;
    std::string model;

    void add(CLI::App* app) {
        app->add_option("--method", method, "maxprob, dropout-mean, dropout-var, calibrator or outlier")
            ->capture_default_str();
        app->add_option("--variant", variant, "calibrator feature variant: base or dropout")->capture_default_str();
        app->add_option("--ablate", ablate, "comma-separated feature groups to remove");
        app->add_option("--model", model, "forest file for calibrator and outlier methods");
    }

    ConfidenceMethod resolve() const {
        const MethodKind kind = parse_method_kind(method);
        const FeatureVariant v = parse_feature_variant(variant);
        const FeatureMask mask = FeatureMask::parse(ablate);
        if (kind != MethodKind::calibrator && kind != MethodKind::outlier) {
            if (!model.empty()) throw UsageError("--model only applies to calibrator and outlier");
            return ConfidenceMethod::simple(kind);
        }
        if (model.empty()) throw UsageError("--method " + method + " needs --model");
        auto forest = std::make_shared<const RandomForest>(load_forest(model));
        if (kind == MethodKind::outlier) return ConfidenceMethod::outlier(forest, mask);
        return ConfidenceMethod::calibrator(forest, v, mask);
    }
};

struct ConfigFlags {
    std::string config;
    std::string out = "out";
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;

    void add(CLI::App* app) {
        app->add_option("--config", config, "experiment configuration file")->required();
        app->add_option("--out", out, "output directory")->capture_default_str();
        app->add_option("--seed", seed, "master seed, overriding the configuration");
        app->add_option("--threads", threads, "forest training threads");
    }

    ExperimentConfig load() const {
        ExperimentConfig cfg = load_config(config);
        if (seed) cfg.master_seed = *seed;
        if (threads) cfg.threads = *threads;
        return cfg;
    }
};

void write_csv(const fs::path& path, auto&& writer) {
    std::ostringstream os;
    writer(os);
    write_text_file(path, os.str());
}

BenchmarkKind parse_benchmark(const std::string& s) {
    if (s == "overconfident") return BenchmarkKind::overconfident_ood;
    if (s == "calibrated") return BenchmarkKind::calibrated;
    if (s == "separable") return BenchmarkKind::domain_separable;
    throw UsageError("unknown benchmark '" + s + "' (overconfident, calibrated, separable)");
}

void print_metrics(const std::string& name, std::size_t n, const SelectiveMetrics& m) {
    std::cout << "method " << name << "\nrecords " << n << "\nAUC " << pct(m.auc) << '\n';
    for (const auto& [level, cov] : m.cov_at_acc) {
        std::cout << "Cov@" << format_double(100.0 * level) << ' ' << pct(cov) << '\n';
    }
}

void print_table1(const ExperimentReport& report) {
    for (const auto& m : report.methods) {
        std::cout << m.spec.name() << " (" << to_string(m.spec.training) << ")";
        if (m.skipped) {
            std::cout << ": skipped, " << m.skip_reason << '\n';
            continue;
        }
        std::cout << ": AUC " << pct(m.auc.mean) << " +- " << pct(m.auc.sd);
        for (const auto& [level, s] : m.cov_at_acc) {
            std::cout << ", Cov@" << format_double(100.0 * level) << ' ' << pct(s.mean);
        }
        std::cout << '\n';
    }
    std::cout << "best-possible: AUC " << pct(report.best_possible.auc) << '\n';
}

void finish_experiment(const ExperimentReport& report, const fs::path& out) {
    write_experiment_outputs(report, out);
    render_plots(out);
    print_table1(report);
    if (report.unknown_pool_in_training) std::cout << "warning: unknown OOD records reached calibrator training\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Selective question answering under domain shift"};
    app.require_subcommand(1);

    // validate
    std::string validate_file;
    auto* validate = app.add_subcommand("validate", "check a record file");
    validate->add_option("records", validate_file, "JSONL record file")->required();

    // synth
    std::string synth_benchmark, synth_out;
    DomainSpec synth_spec;
    std::uint64_t synth_seed = kDefaultSeed;
    BenchmarkSizes synth_sizes;
    auto* synth = app.add_subcommand("synth", "generate synthetic records");
    synth->add_option("--benchmark", synth_benchmark,
                      "write a four-pool benchmark and config: overconfident, calibrated or separable");
    synth->add_option("--domain", synth_spec.domain, "domain name")->capture_default_str();
    synth->add_option("--n", synth_spec.n, "records")->capture_default_str();
    synth->add_option("--passage-min", synth_spec.passage_len_min)->capture_default_str();
    synth->add_option("--passage-max", synth_spec.passage_len_max)->capture_default_str();
    synth->add_option("--latent-mean", synth_spec.latent_mean)->capture_default_str();
    synth->add_option("--latent-sd", synth_spec.latent_sd)->capture_default_str();
    synth->add_option("--overconfidence", synth_spec.overconfidence)->capture_default_str();
    synth->add_option("--answerable-fraction", synth_spec.answerable_fraction)->capture_default_str();
    synth->add_option("--dropout-masks", synth_spec.dropout_masks, "0 omits dropout fields")->capture_default_str();
    synth->add_option("--seed", synth_seed)->capture_default_str();
    synth->add_option("--out", synth_out, "record file, or directory with --benchmark")->required();

    // mix
    std::string mix_source, mix_ood, mix_out;
    double mix_alpha = 0.5;
    std::size_t mix_n = 0;
    std::uint64_t mix_seed = kDefaultSeed;
    auto* mix = app.add_subcommand("mix", "sample a test mixture");
    mix->add_option("--source", mix_source)->required();
    mix->add_option("--ood", mix_ood)->required();
    mix->add_option("--alpha", mix_alpha, "source fraction")->capture_default_str();
    mix->add_option("--n", mix_n, "mixture size")->required();
    mix->add_option("--seed", mix_seed)->capture_default_str();
    mix->add_option("--out", mix_out)->required();

    // train-calibrator
    std::string tc_source, tc_known, tc_out, tc_method = "calibrator", tc_variant = "base", tc_ablate;
    double tc_fraction = 0.8;
    std::uint64_t tc_seed = kDefaultSeed;
    unsigned tc_threads = 1;
    auto* train = app.add_subcommand("train-calibrator", "grid-search a calibrator or outlier forest");
    train->add_option("--source", tc_source, "source held-out records")->required();
    train->add_option("--known", tc_known, "known OOD records");
    train->add_option("--method", tc_method, "calibrator or outlier")->capture_default_str();
    train->add_option("--variant", tc_variant)->capture_default_str();
    train->add_option("--ablate", tc_ablate);
    train->add_option("--train-fraction", tc_fraction)->capture_default_str();
    train->add_option("--seed", tc_seed)->capture_default_str();
    train->add_option("--threads", tc_threads)->capture_default_str();
    train->add_option("--out", tc_out, "forest file")->required();

    // score
    MethodFlags score_flags;
    std::string score_file, score_out;
    auto* score = app.add_subcommand("score", "write per-record confidences as CSV");
    score_flags.add(score);
    score->add_option("records", score_file)->required();
    score->add_option("--out", score_out, "CSV file (stdout when omitted)");

    // eval
    MethodFlags eval_flags;
    std::string eval_file, eval_out;
    std::vector<double> eval_levels = {0.8, 0.9};
    std::size_t eval_bins = 10;
    auto* eval = app.add_subcommand("eval", "selective metrics for one method");
    eval_flags.add(eval);
    eval->add_option("records", eval_file)->required();
    eval->add_option("--acc-levels", eval_levels)->delimiter(',')->capture_default_str();
    eval->add_option("--bins", eval_bins)->capture_default_str();
    eval->add_option("--out", eval_out, "directory for metrics.json, curve.csv, reliability.csv");

    // experiment family
    ConfigFlags exp_flags, outlier_flags, ablate_flags, lc_flags, alpha_flags, matrix_flags;
    bool exp_source_only = false;
    auto* experiment = app.add_subcommand("experiment", "run the configured methods over seeded splits");
    exp_flags.add(experiment);
    experiment->add_flag("--source-only", exp_source_only, "train every calibrator on source data only");

    auto* outlier = app.add_subcommand("outlier-baseline", "MaxProb, calibrator and in-domain detector");
    outlier_flags.add(outlier);

    std::vector<std::string> ablate_masks;
    std::string ablate_variant;
    auto* ablate = app.add_subcommand("ablate", "feature-group ablation of the calibrator");
    ablate_flags.add(ablate);
    ablate->add_option("--ablate", ablate_masks, "masks to run, 'none' for all features; default: each group");
    ablate->add_option("--variant", ablate_variant, "override the calibrator variant");

    std::vector<std::size_t> lc_budgets;
    auto* lc = app.add_subcommand("learning-curve", "calibrator AUC against known OOD budget");
    lc_flags.add(lc);
    lc->add_option("--budgets", lc_budgets)->delimiter(',')->required();

    std::vector<double> alpha_values;
    auto* alpha = app.add_subcommand("alpha-sweep", "calibrator minus MaxProb AUC against alpha");
    alpha_flags.add(alpha);
    alpha->add_option("--alphas", alpha_values)->delimiter(',')->required();

    auto* matrix = app.add_subcommand("matrix", "known x unknown OOD extrapolation matrix");
    matrix_flags.add(matrix);

    // tune-unanswerable
    MethodFlags tu_flags;
    std::string tu_file;
    auto* tune = app.add_subcommand("tune-unanswerable", "pick the abstention threshold maximizing EM");
    tu_flags.add(tune);
    tune->add_option("records", tu_file)->required();

    // report
    std::string report_dir;
    auto* report = app.add_subcommand("report", "render SVG plots from the CSVs in a directory");
    report->add_option("dir", report_dir)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (validate->parsed()) {
            const RecordSet set = load_records(validate_file);
            std::cout << "ok: " << set.size() << " records\n";
        } else if (synth->parsed()) {
            if (!synth_benchmark.empty()) {
                synth_sizes.dropout_masks = synth_spec.dropout_masks;
                const ExperimentData data = make_benchmark(parse_benchmark(synth_benchmark), synth_sizes, synth_seed);
                const fs::path dir = synth_out;
                fs::create_directories(dir);
                save_records(data.source_test, (dir / "source_test.jsonl").string());
                save_records(data.source_heldout, (dir / "source_heldout.jsonl").string());
                save_records(data.known_ood, (dir / "known_ood.jsonl").string());
                save_records(data.unknown_ood, (dir / "unknown_ood.jsonl").string());
                ExperimentConfig cfg;
                cfg.source_records = "source_test.jsonl";
                cfg.source_heldout_records = "source_heldout.jsonl";
                cfg.known_ood_records = "known_ood.jsonl";
                cfg.unknown_ood_records = "unknown_ood.jsonl";
                cfg.ood_records = {{"known_ood", "known_ood.jsonl"}, {"unknown_ood", "unknown_ood.jsonl"}};
                cfg.master_seed = synth_seed;
                write_text_file(dir / "experiment.cfg", config_to_text(cfg));
                std::cout << "wrote benchmark to " << dir.string() << '\n';
            } else {
                if (synth_spec.id_prefix.empty()) synth_spec.id_prefix = synth_spec.domain;
                const RecordSet set = generate_synthetic(synth_spec, synth_seed);
                save_records(set, synth_out);
                std::cout << "wrote " << set.size() << " records to " << synth_out << '\n';
            }
        } else if (mix->parsed()) {
            const RecordSet set =
                sample_mixture(load_records(mix_source), load_records(mix_ood), mix_alpha, mix_n, mix_seed);
            save_records(set, mix_out);
            std::cout << "wrote " << set.size() << " records to " << mix_out << '\n';
        } else if (train->parsed()) {
            MethodSpec spec;
            spec.kind = parse_method_kind(tc_method);
            if (!spec.trained()) throw UsageError("--method must be calibrator or outlier");
            spec.variant = parse_feature_variant(tc_variant);
            spec.training = CalibratorTraining::mixed;
            spec.mask = FeatureMask::parse(tc_ablate);
            const RecordSet source = load_records(tc_source);
            const RecordSet known = tc_known.empty() ? RecordSet{} : load_records(tc_known);
            const GridSearchResult gs =
                train_model(source, known, spec, tc_fraction, default_grid(tc_seed), tc_seed, tc_threads);
            save_forest(gs.best_forest, tc_out);
            std::cout << "selected " << gs.best_config.describe() << "\nvalidation AUC " << pct(gs.val_auc) << '\n';
        } else if (score->parsed()) {
            const auto scored = score_all(load_records(score_file), score_flags.resolve());
            std::ostringstream os;
            os << "id,domain,correct,confidence\n";
            for (const auto& s : scored) {
                os << s.id << ',' << s.domain << ',' << (s.correct ? 1 : 0) << ',' << format_double(s.confidence)
                   << '\n';
            }
            if (score_out.empty()) std::cout << os.str();
            else write_text_file(score_out, os.str());
        } else if (eval->parsed()) {
            const RecordSet set = load_records(eval_file);
            const auto scored = score_all(set, eval_flags.resolve());
            const SelectiveMetrics m = selective_metrics(scored, eval_levels);
            print_metrics(eval_flags.method, scored.size(), m);
            if (!eval_out.empty()) {
                const fs::path dir = eval_out;
                fs::create_directories(dir);
                write_text_file(dir / "metrics.json", metrics_json(m, scored.size(), eval_flags.method));
                write_csv(dir / "curve.csv", [&](std::ostream& os) { write_curve_csv(risk_coverage_curve(scored), os); });
                if (parse_method_kind(eval_flags.method) != MethodKind::dropout_neg_var) {
                    write_csv(dir / "reliability.csv", [&](std::ostream& os) {
                        write_reliability_csv(reliability_diagram(scored, eval_bins), os);
                    });
                }
            }
        } else if (experiment->parsed()) {
            const ExperimentConfig cfg = exp_flags.load();
            const ExperimentData data = load_experiment_data(cfg);
            finish_experiment(exp_source_only ? run_source_only_calibrator(cfg, data) : run_experiment(cfg, data),
                              exp_flags.out);
        } else if (outlier->parsed()) {
            const ExperimentConfig cfg = outlier_flags.load();
            finish_experiment(run_outlier_baseline(cfg, load_experiment_data(cfg)), outlier_flags.out);
        } else if (ablate->parsed()) {
            ExperimentConfig cfg = ablate_flags.load();
            if (!ablate_variant.empty()) {
                const FeatureVariant v = parse_feature_variant(ablate_variant);
                for (auto& m : cfg.methods) {
                    if (m.kind == MethodKind::calibrator) m.variant = v;
                }
                if (std::none_of(cfg.methods.begin(), cfg.methods.end(),
                                 [](const MethodSpec& m) { return m.kind == MethodKind::calibrator; })) {
                    MethodSpec m = MethodSpec::parse("calibrator");
                    m.variant = v;
                    cfg.methods.push_back(m);
                }
            }
            FeatureVariant variant = FeatureVariant::base;
            for (const auto& m : cfg.methods) {
                if (m.kind == MethodKind::calibrator) {
                    variant = m.variant;
                    break;
                }
            }
            std::vector<FeatureMask> masks;
            for (const auto& text : ablate_masks) masks.push_back(FeatureMask::parse(text == "none" ? "" : text));
            if (masks.empty()) masks = single_group_ablations(variant);
            const auto rows = ablation_run(cfg, load_experiment_data(cfg), masks);
            fs::create_directories(ablate_flags.out);
            write_csv(fs::path(ablate_flags.out) / "table4.csv",
                      [&](std::ostream& os) { write_table4_csv(rows, cfg.acc_levels, os); });
            for (const auto& r : rows) {
                std::cout << (r.mask.empty() ? std::string("none") : "-" + r.mask.to_string()) << ": ";
                if (r.result.skipped) std::cout << "skipped, " << r.result.skip_reason << '\n';
                else std::cout << "AUC " << pct(r.result.auc.mean) << '\n';
            }
        } else if (lc->parsed()) {
            const ExperimentConfig cfg = lc_flags.load();
            const auto rows = learning_curve(cfg, load_experiment_data(cfg), lc_budgets);
            fs::create_directories(lc_flags.out);
            write_csv(fs::path(lc_flags.out) / "fig2.csv", [&](std::ostream& os) { write_fig2_csv(rows, os); });
            for (const auto& r : rows) {
                std::cout << r.budget << ": calibrator AUC " << pct(r.calibrator_auc.mean) << ", MaxProb AUC "
                          << pct(r.maxprob_auc) << (r.within_noise ? "" : " (worse than previous budget)") << '\n';
            }
        } else if (alpha->parsed()) {
            const ExperimentConfig cfg = alpha_flags.load();
            const auto rows = alpha_sweep(cfg, load_experiment_data(cfg), alpha_values);
            fs::create_directories(alpha_flags.out);
            write_csv(fs::path(alpha_flags.out) / "fig5.csv", [&](std::ostream& os) { write_fig5_csv(rows, os); });
            render_plots(alpha_flags.out);
            for (const auto& r : rows) {
                std::cout << "alpha " << format_double(r.alpha) << ": difference " << pct(r.difference) << '\n';
            }
        } else if (matrix->parsed()) {
            const ExperimentConfig cfg = matrix_flags.load();
            if (cfg.source_records.empty() || cfg.source_heldout_records.empty()) {
                throw HarnessError("matrix needs source_records and source_heldout_records");
            }
            std::map<std::string, RecordSet> ood;
            for (const auto& [name, path] : cfg.ood_records) ood.emplace(name, load_records(path));
            const MatrixResult result =
                run_matrix(cfg, load_records(cfg.source_records), load_records(cfg.source_heldout_records), ood);
            fs::create_directories(matrix_flags.out);
            write_csv(fs::path(matrix_flags.out) / "fig4.csv", [&](std::ostream& os) { write_fig4_csv(result, os); });
            std::cout << "off-diagonal average: MaxProb AUC " << pct(result.maxprob_auc) << ", calibrator AUC "
                      << pct(result.calibrator_auc) << ", best AUC " << pct(result.best_auc) << '\n';
        } else if (tune->parsed()) {
            const auto scored = score_all(load_records(tu_file), tu_flags.resolve());
            const UnanswerableThreshold t = tune_unanswerable_threshold(scored);
            std::cout << "gamma " << format_double(t.gamma_prime) << "\nEM " << pct(t.em_score) << '\n';
        } else if (report->parsed()) {
            for (const auto& path : render_plots(report_dir)) std::cout << "wrote " << path.string() << '\n';
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
