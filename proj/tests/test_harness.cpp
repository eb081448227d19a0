#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>
#include <sstream>

#include "selqa/harness.hpp"
#include "selqa/report_io.hpp"
#include "selqa/synthetic.hpp"
#include "support.hpp"

using namespace selqa;

namespace {

BenchmarkSizes small_sizes() {
    BenchmarkSizes s;
    s.source_test = 1000;
    s.source_heldout = 2000;
    s.known_ood = 1000;
    s.unknown_ood = 1000;
    return s;
}

ExperimentConfig small_config(std::uint64_t seed = 1) {
    ExperimentConfig cfg;
    cfg.test_n = 1600;
    cfg.calib_per_domain = 500;
    cfg.n_splits = 2;
    cfg.master_seed = seed;
    ForestConfig f;
    f.n_trees = 30;
    f.min_samples_leaf = 5;
    ForestConfig g = f;
    g.max_depth = 6;
    cfg.grid = {f, g};
    return cfg;
}

const ExperimentData& shifted() {
    static const ExperimentData data = make_benchmark(BenchmarkKind::overconfident_ood, small_sizes(), 3);
    return data;
}

}  // namespace

TEST_CASE("method spellings") {
    for (const char* name : {"maxprob", "dropout-mean", "dropout-var", "calibrator", "calibrator-source-only",
                             "calibrator-dropout", "calibrator-dropout-source-only", "outlier",
                             "calibrator[top1,passage_len]"}) {
        CHECK(MethodSpec::parse(name).name() == name);
    }
    CHECK(MethodSpec::parse("calibrator-dropout").needs_dropout());
    CHECK(MethodSpec::parse("dropout-var").needs_dropout());
    CHECK_FALSE(MethodSpec::parse("calibrator").needs_dropout());
    CHECK_THROWS_AS(MethodSpec::parse("maxprob[top1]"), HarnessError);
    CHECK_THROWS_AS(MethodSpec::parse("platt"), HarnessError);
    CHECK_THROWS_AS(MethodSpec::parse("calibrator[dropout_var]"), FeatureError);
}

TEST_CASE("config parsing") {
    std::istringstream in(R"(# comment
source_records = a.jsonl
source_heldout_records = /abs/b.jsonl
known_ood_records = c.jsonl
unknown_ood_records = d.jsonl
ood.news = e.jsonl
alpha = 0.25
test_n = 100
methods = maxprob, calibrator[top1]
grid.n_trees = 10,20
grid.max_depth = none,3
grid.min_samples_leaf = 2
grid.features_per_split = sqrt,2
acc_levels = 0.7
master_seed = 42
known_budget = 30
)");
    const ExperimentConfig cfg = parse_config(in, "/base");
    CHECK(cfg.source_records == "/base/a.jsonl");
    CHECK(cfg.source_heldout_records == "/abs/b.jsonl");
    CHECK(cfg.ood_records.at("news") == "/base/e.jsonl");
    CHECK(cfg.alpha == 0.25);
    CHECK(cfg.test_n == 100);
    CHECK(cfg.master_seed == 42);
    CHECK(cfg.known_budget == 30u);
    REQUIRE(cfg.methods.size() == 2);
    CHECK(cfg.methods[1].name() == "calibrator[top1]");
    CHECK(cfg.grid.size() == 8);
    CHECK(cfg.acc_levels == std::vector<double>{0.7});

    std::istringstream again(config_to_text(cfg));
    const ExperimentConfig back = parse_config(again, "/elsewhere");
    CHECK(config_to_text(back) == config_to_text(cfg));
    CHECK(back.grid == cfg.grid);

    std::istringstream unknown("colour = red\n");
    CHECK_THROWS_AS(parse_config(unknown), HarnessError);
    std::istringstream dup("alpha = 0.1\nalpha = 0.2\n");
    CHECK_THROWS_AS(parse_config(dup), HarnessError);
    std::istringstream bad("alpha = lots\n");
    CHECK_THROWS_AS(parse_config(bad), HarnessError);
    std::istringstream range("alpha = 1.5\n");
    CHECK_THROWS_AS(parse_config(range), HarnessError);
}

TEST_CASE("summaries use the sample standard deviation") {
    const std::vector<double> v = {1.0, 2.0, 3.0, 4.0};
    const Summary s = summarize(v);
    CHECK(s.mean == 2.5);
    CHECK(s.sd == doctest::Approx(std::sqrt(5.0 / 3.0)).epsilon(1e-12));
    CHECK(s.min == 1.0);
    CHECK(s.max == 4.0);
    CHECK(summarize(std::vector<double>{7.0}).sd == 0.0);
}

TEST_CASE("experiment report") {
    ExperimentConfig cfg = small_config();
    cfg.methods = {MethodSpec::parse("maxprob"), MethodSpec::parse("dropout-mean"), MethodSpec::parse("calibrator"),
                   MethodSpec::parse("calibrator-source-only"), MethodSpec::parse("outlier")};
    const ExperimentReport r = run_experiment(cfg, shifted());
    CHECK(r.test_size == 1600);
    CHECK(r.test_domain_counts.at("source") == 800);
    CHECK(r.test_domain_counts.at("unknown_ood") == 800);
    CHECK(r.find("dropout-mean")->skipped);
    CHECK_FALSE(r.find("maxprob")->skipped);
    CHECK(r.find("maxprob")->splits.size() == 1);
    CHECK(r.find("calibrator")->splits.size() == 2);
    CHECK(r.find("calibrator")->spec.training == CalibratorTraining::mixed);
    CHECK(r.find("calibrator-source-only")->spec.training == CalibratorTraining::source_only);
    CHECK_FALSE(r.unknown_pool_in_training);
    CHECK(r.find("nope") == nullptr);
    for (const auto& m : r.methods) {
        for (const auto& s : m.splits) CHECK(r.best_possible.auc <= s.metrics.auc);
        if (!m.skipped) {
            CHECK(m.per_domain.at(0.8).size() == 2);
            CHECK(m.first_split_scores.size() == 1600);
        }
    }
    for (const auto& pool : r.calibrator_pools) {
        CHECK(pool.find("unknown") == std::string::npos);
    }
    CHECK(r.calibrator_pools.size() == 2);

    // deterministic, and thread count does not matter
    cfg.threads = 2;
    CHECK(report_json(run_experiment(cfg, shifted())) != "");
    ExperimentConfig one = cfg;
    one.threads = 1;
    std::string a = report_json(run_experiment(one, shifted()));
    std::string b = report_json(run_experiment(cfg, shifted()));
    // the thread count is echoed in the config block; compare everything after it
    CHECK(a.substr(a.find("\"test\"")) == b.substr(b.find("\"test\"")));
}

TEST_CASE("source pools must be disjoint") {
    ExperimentData data = shifted();
    data.source_heldout.records.push_back(data.source_test[0]);
    ExperimentConfig cfg = small_config();
    CHECK_THROWS_AS(run_experiment(cfg, data), HarnessError);
}

TEST_CASE("oracle access is reported") {
    ExperimentData data = shifted();
    data.known_ood = data.unknown_ood;
    ExperimentConfig cfg = small_config();
    cfg.calib_per_domain = 100;
    cfg.n_splits = 1;
    CHECK(run_experiment(cfg, data).unknown_pool_in_training);
}

TEST_CASE("dropout methods run when fields exist") {
    BenchmarkSizes sizes = small_sizes();
    sizes.dropout_masks = 5;
    const ExperimentData data = make_benchmark(BenchmarkKind::overconfident_ood, sizes, 4);
    ExperimentConfig cfg = small_config();
    cfg.n_splits = 1;
    cfg.methods = {MethodSpec::parse("dropout-mean"), MethodSpec::parse("dropout-var"),
                   MethodSpec::parse("calibrator-dropout")};
    const ExperimentReport r = run_experiment(cfg, data);
    for (const auto& m : r.methods) CHECK_FALSE(m.skipped);
}

TEST_CASE("source-only matches mixed when domains are identical") {
    DomainSpec a;
    a.domain = "source";
    a.n = 3000;
    DomainSpec b = a;
    b.domain = "twin";
    ExperimentData data;
    const RecordSet src = generate_synthetic(a, 7);
    for (std::size_t i = 0; i < src.size(); ++i) {
        (i < 1000 ? data.source_test : data.source_heldout).records.push_back(src[i]);
    }
    b.n = 1000;
    data.known_ood = generate_synthetic(b, 8);
    DomainSpec c = b;
    c.domain = "triplet";
    data.unknown_ood = generate_synthetic(c, 9);
    ExperimentConfig cfg = small_config();
    cfg.methods = {MethodSpec::parse("calibrator"), MethodSpec::parse("calibrator-source-only")};
    const ExperimentReport r = run_experiment(cfg, data);
    CHECK(std::abs(r.methods[0].auc.mean - r.methods[1].auc.mean) <= 0.02);
}

TEST_CASE("outlier baseline") {
    ExperimentConfig cfg = small_config();
    cfg.n_splits = 1;
    const ExperimentReport r = run_outlier_baseline(cfg, shifted());
    REQUIRE(r.methods.size() == 3);
    CHECK(r.methods[2].spec.kind == MethodKind::outlier);

    cfg.calib_alpha = 1.0;  // calibrator pool holds source records only
    CHECK_THROWS_WITH_AS(run_outlier_baseline(cfg, shifted()), "degenerate labels", ForestError);
}

TEST_CASE("learning curve") {
    ExperimentConfig cfg = small_config();
    const auto rows = learning_curve(cfg, shifted(), {1000, 100, 100});
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].budget == 100);
    CHECK(rows[1].calibrator_auc.mean <= rows[0].calibrator_auc.mean + 0.02);
    CHECK(rows[1].within_noise);

    cfg.known_budget = 300;
    cfg.methods = {MethodSpec::parse("maxprob"), MethodSpec::parse("calibrator")};
    const auto single = learning_curve(cfg, shifted(), {300});
    const ExperimentReport full = run_experiment(cfg, shifted());
    CHECK(single[0].calibrator_auc.mean == full.methods[1].auc.mean);
    CHECK(single[0].maxprob_auc == full.methods[0].auc.mean);

    CHECK_THROWS_AS(learning_curve(cfg, shifted(), {5000}), HarnessError);
}

TEST_CASE("alpha sweep") {
    ExperimentConfig cfg = small_config();
    cfg.n_splits = 1;
    cfg.test_n = 800;
    const auto rows = alpha_sweep(cfg, shifted(), {0.5, 0.5, 0.0});
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].alpha == 0.0);
    CHECK(rows[1].difference == rows[1].calibrator_auc - rows[1].maxprob_auc);
    CHECK_THROWS_AS(alpha_sweep(cfg, shifted(), {1.2}), HarnessError);
}

TEST_CASE("extrapolation cell") {
    CHECK(extrapolation_cell(0.20, 0.18, 0.10) == doctest::Approx(20.0).epsilon(1e-12));
    CHECK(extrapolation_cell(0.2, 0.2, 0.1) == 0.0);
    CHECK(extrapolation_cell(0.2, 0.1, 0.1) == 100.0);
    CHECK_THROWS_AS(extrapolation_cell(0.1, 0.2, 0.1), HarnessError);
    CHECK_THROWS_AS(extrapolation_cell(0.2, 0.1, 0.15), HarnessError);
}

TEST_CASE("matrix") {
    DomainSpec src;
    src.domain = "source";
    src.n = 7000;
    const RecordSet all = generate_synthetic(src, 1);
    RecordSet test, heldout;
    for (std::size_t i = 0; i < all.size(); ++i) (i < 3000 ? test : heldout).records.push_back(all[i]);
    std::map<std::string, RecordSet> ood;
    for (const char* name : {"alpha", "beta", "gamma"}) {
        DomainSpec d;
        d.domain = name;
        d.n = 6000;
        d.passage_len_min = 300;
        d.passage_len_max = 700;
        d.latent_mean = -0.3;
        d.overconfidence = 3.0;
        ood.emplace(name, generate_synthetic(d, 2));
    }
    ExperimentConfig cfg = small_config();
    cfg.test_n = 6000;
    cfg.calib_per_domain = 2000;
    cfg.n_splits = 3;
    const MatrixResult m = run_matrix(cfg, test, heldout, ood);
    CHECK(m.cells.size() == 9);
    std::size_t diagonal = 0;
    for (const auto& c : m.cells) {
        CHECK(c.oracle_access == (c.known == c.unknown));
        CHECK(c.unknown_pool_in_training == (c.known == c.unknown));
        diagonal += c.oracle_access;
    }
    CHECK(diagonal == 3);
    for (const auto& k : m.datasets) {
        for (const auto& u : m.datasets) {
            if (k != u) CHECK(std::abs(m.cell(k, u).improvement - m.cell(u, k).improvement) <= 5.0);
        }
    }
    CHECK(m.calibrator_auc < m.maxprob_auc);

    std::map<std::string, RecordSet> lonely = {{"alpha", ood.at("alpha")}};
    CHECK_THROWS_AS(run_matrix(cfg, test, heldout, lonely), HarnessError);
}

TEST_CASE("ablation") {
    ExperimentConfig cfg = small_config();
    cfg.methods = {MethodSpec::parse("calibrator")};
    const auto masks = single_group_ablations(FeatureVariant::base);
    CHECK(masks.size() == 6);
    CHECK(masks[0].empty());
    CHECK(single_group_ablations(FeatureVariant::dropout).size() == 7);

    const auto rows = ablation_run(cfg, shifted(), {FeatureMask{}, FeatureMask::parse("all_softmax")});
    const ExperimentReport full = run_experiment(cfg, shifted());
    CHECK(rows[0].result.auc.mean == full.methods[0].auc.mean);
    CHECK(rows[1].result.auc.mean > rows[0].result.auc.mean + 0.01);
}
