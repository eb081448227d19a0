#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cstdio>
#include <fstream>

#include "selqa/confidence.hpp"
#include "selqa/evaluation.hpp"
#include "selqa/forest.hpp"
#include "selqa/harness.hpp"
#include "selqa/report_io.hpp"
#include "support.hpp"

using namespace selqa;
namespace fs = std::filesystem;

namespace {

struct Run {
    int status = -1;
    std::string out;  // stdout and stderr together
};

Run run(const std::string& args) {
    const std::string cmd = std::string(SELQA_BIN) + " " + args + " 2>&1";
    Run r;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[4096];
    std::size_t k;
    while ((k = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, k);
    const int raw = pclose(pipe);
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    return r;
}

fs::path work() {
    static const fs::path dir = testing::fresh_dir(SELQA_TEST_TMP, "cli");
    return dir;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

fs::path write_file(const std::string& name, const std::string& text) {
    const fs::path p = work() / name;
    std::ofstream(p) << text;
    return p;
}

fs::path benchmark() {
    static const fs::path dir = [] {
        const fs::path d = work() / "bench";
        REQUIRE(run("synth --benchmark overconfident --seed 3 --out " + q(d)).status == 0);
        return d;
    }();
    return dir;
}

}  // namespace

TEST_CASE("usage errors exit 1") {
    CHECK(run("").status == 1);
    CHECK(run("frobnicate").status == 1);
    CHECK(run("eval --no-such-flag x").status == 1);
    CHECK(run("eval").status == 1);
    CHECK(run("eval --method calibrator " + q(benchmark() / "known_ood.jsonl")).status == 1);
    const Run help = run("eval --help");
    CHECK(help.status == 0);
    CHECK(help.out.find("--method") != std::string::npos);
}

TEST_CASE("validate") {
    const auto good = write_file(
        "good.jsonl",
        R"({"id":"a","domain":"d","passage_len":5,"prediction_len":1,"top_probs":[0.5,0.2,0.1,0,0],"correct":true})"
        "\n");
    const Run ok = run("validate " + q(good));
    CHECK(ok.status == 0);
    CHECK(ok.out == "ok: 1 records\n");

    const auto bad = write_file(
        "bad.jsonl",
        R"({"id":"u1","domain":"d","passage_len":5,"prediction_len":1,"top_probs":[0.3,0.6,0,0,0],"correct":true})"
        "\n");
    const Run r = run("validate " + q(bad));
    CHECK(r.status == 2);
    CHECK(r.out.find("u1") != std::string::npos);
    CHECK(r.out.find("top_probs not sorted") != std::string::npos);

    CHECK(run("validate " + q(work() / "missing.jsonl")).status == 2);
}

TEST_CASE("eval on all-correct records prints AUC 0") {
    std::string text;
    for (int i = 0; i < 4; ++i) {
        text += R"({"id":"c)" + std::to_string(i) +
                R"(","domain":"d","passage_len":5,"prediction_len":1,"top_probs":[0.)" + std::to_string(i + 3) +
                R"(,0.1,0.1,0,0],"correct":true})" "\n";
    }
    const auto file = write_file("right.jsonl", text);
    const Run r = run("eval --method maxprob " + q(file));
    CHECK(r.status == 0);
    CHECK(r.out.find("AUC 0.00\n") != std::string::npos);
    CHECK(r.out.find("Cov@90 100.00") != std::string::npos);
}

TEST_CASE("eval and score match direct calls") {
    const fs::path records = benchmark() / "unknown_ood.jsonl";
    const fs::path out = work() / "eval_out";
    REQUIRE(run("eval --method maxprob " + q(records) + " --out " + q(out)).status == 0);
    const RecordSet set = load_records(records.string());
    const auto scored = score_all(set, ConfidenceMethod::simple(MethodKind::max_prob));
    const std::vector<double> levels = {0.8, 0.9};
    CHECK(testing::slurp(out / "metrics.json") == metrics_json(selective_metrics(scored, levels), set.size(), "maxprob"));
    std::ostringstream curve;
    write_curve_csv(risk_coverage_curve(scored), curve);
    CHECK(testing::slurp(out / "curve.csv") == curve.str());
    std::ostringstream rel;
    write_reliability_csv(reliability_diagram(scored), rel);
    CHECK(testing::slurp(out / "reliability.csv") == rel.str());

    const Run s = run("score --method maxprob " + q(records));
    CHECK(s.status == 0);
    CHECK(s.out.rfind("id,domain,correct,confidence\nunknown_ood-000000,unknown_ood,", 0) == 0);
    CHECK(count_if(s.out.begin(), s.out.end(), [](char c) { return c == '\n'; }) ==
          static_cast<long>(set.size()) + 1);
}

TEST_CASE("train-calibrator, then eval with the model") {
    const fs::path model = work() / "cal.bin";
    const fs::path src = benchmark() / "source_heldout.jsonl";
    const fs::path known = benchmark() / "known_ood.jsonl";
    const Run t = run("train-calibrator --source " + q(src) + " --known " + q(known) + " --seed 9 --out " + q(model));
    REQUIRE(t.status == 0);
    CHECK(t.out.find("selected trees=") == 0);

    MethodSpec spec = MethodSpec::parse("calibrator");
    const GridSearchResult direct = train_model(load_records(src.string()), load_records(known.string()), spec, 0.8,
                                                default_grid(9), 9);
    CHECK(testing::slurp(model) == serialize_forest(direct.best_forest));

    const fs::path test = benchmark() / "unknown_ood.jsonl";
    const fs::path out = work() / "eval_cal";
    REQUIRE(run("eval --method calibrator --model " + q(model) + " " + q(test) + " --out " + q(out)).status == 0);
    auto forest = std::make_shared<const RandomForest>(direct.best_forest);
    const RecordSet set = load_records(test.string());
    const auto scored = score_all(set, ConfidenceMethod::calibrator(forest, FeatureVariant::base));
    const std::vector<double> levels = {0.8, 0.9};
    CHECK(testing::slurp(out / "metrics.json") ==
          metrics_json(selective_metrics(scored, levels), set.size(), "calibrator"));

    // a base model does not fit the dropout catalog
    CHECK(run("eval --method calibrator --variant dropout --model " + q(model) + " " + q(test)).status == 2);
}

TEST_CASE("mix is seeded") {
    const fs::path a = work() / "mix_a.jsonl", b = work() / "mix_b.jsonl";
    const std::string base = "mix --source " + q(benchmark() / "source_test.jsonl") + " --ood " +
                             q(benchmark() / "unknown_ood.jsonl") + " --n 100";
    REQUIRE(run(base + " --alpha 0.3 --out " + q(a)).status == 0);
    REQUIRE(run(base + " --alpha 0.3 --out " + q(b)).status == 0);
    CHECK(testing::slurp(a) == testing::slurp(b));
    const RecordSet m = load_records(a.string());
    CHECK(std::count_if(m.begin(), m.end(), [](const auto& r) { return r.domain == "source"; }) == 30);
    CHECK(run(base + " --alpha 3 --out " + q(a)).status == 2);
}

TEST_CASE("experiment family") {
    std::string cfg = testing::slurp(benchmark() / "experiment.cfg");
    auto set = [&](const std::string& key, const std::string& value) {
        const auto at = cfg.find(key + " = ");
        REQUIRE(at != std::string::npos);
        cfg.replace(at, cfg.find('\n', at) - at, key + " = " + value);
    };
    set("n_splits", "2");
    set("test_n", "2000");
    set("calib_per_domain", "500");
    set("grid.n_trees", "20");
    set("grid.max_depth", "6");
    set("grid.min_samples_leaf", "5");
    const fs::path config = benchmark() / "small.cfg";
    std::ofstream(config) << cfg;

    const fs::path a = work() / "exp_a", b = work() / "exp_b";
    REQUIRE(run("experiment --config " + q(config) + " --out " + q(a)).status == 0);
    REQUIRE(run("experiment --config " + q(config) + " --out " + q(b)).status == 0);
    for (const char* f : {"report.json", "table1.csv", "per_domain.csv", "curve_calibrator.csv", "curve_calibrator.svg"}) {
        CHECK(fs::exists(a / f));
        CHECK(testing::slurp(a / f) == testing::slurp(b / f));
    }
    // the report matches the library run
    ExperimentConfig loaded = load_config(config.string());
    CHECK(testing::slurp(a / "report.json") == report_json(run_experiment(loaded, load_experiment_data(loaded))));

    const fs::path c = work() / "exp_c";
    REQUIRE(run("experiment --config " + q(config) + " --seed 5 --out " + q(c)).status == 0);
    CHECK(testing::slurp(a / "report.json") != testing::slurp(c / "report.json"));

    const fs::path abl = work() / "ablate";
    REQUIRE(run("ablate --config " + q(config) + " --ablate none --ablate all_softmax --out " + q(abl)).status == 0);
    CHECK(testing::slurp(abl / "table4.csv").rfind("removed,auc_mean", 0) == 0);

    const fs::path lc = work() / "lc";
    REQUIRE(run("learning-curve --config " + q(config) + " --budgets 100,500 --out " + q(lc)).status == 0);
    CHECK(testing::slurp(lc / "fig2.csv").find("\n500,") != std::string::npos);

    const fs::path alpha = work() / "alpha";
    REQUIRE(run("alpha-sweep --config " + q(config) + " --alphas 0.5,0.75 --out " + q(alpha)).status == 0);
    CHECK(fs::exists(alpha / "fig5.csv"));
    CHECK(fs::exists(alpha / "fig5.svg"));

    const fs::path mat = work() / "matrix";
    const Run m = run("matrix --config " + q(config) + " --out " + q(mat));
    CHECK(m.status == 0);
    CHECK(m.out.find("off-diagonal average") != std::string::npos);
    CHECK(testing::slurp(mat / "fig4.csv").find("known_ood,unknown_ood,") != std::string::npos);

    const fs::path ob = work() / "outlier";
    REQUIRE(run("outlier-baseline --config " + q(config) + " --out " + q(ob)).status == 0);
    CHECK(fs::exists(ob / "curve_outlier.csv"));

    CHECK(run("experiment --config " + q(work() / "nope.cfg")).status == 2);
}

TEST_CASE("tune-unanswerable and report") {
    const fs::path f = work() / "unans.jsonl";
    REQUIRE(run("synth --domain squad2 --n 300 --answerable-fraction 0.5 --out " + q(f)).status == 0);
    const Run r = run("tune-unanswerable --method maxprob " + q(f));
    CHECK(r.status == 0);
    const auto scored = score_all(load_records(f.string()), ConfidenceMethod::simple(MethodKind::max_prob));
    const auto t = tune_unanswerable_threshold(scored);
    CHECK(r.out.find("EM ") != std::string::npos);
    char em[32];
    std::snprintf(em, sizeof em, "EM %.2f", 100.0 * t.em_score);
    CHECK(r.out.find(em) != std::string::npos);

    CHECK(run("tune-unanswerable --method maxprob " + q(benchmark() / "known_ood.jsonl")).status == 2);
    const fs::path empty = testing::fresh_dir(work().string(), "empty_report");
    CHECK(run("report " + q(empty)).status == 2);
    const Run ok = run("report " + q(work() / "exp_a"));
    CHECK(ok.status == 0);
}
