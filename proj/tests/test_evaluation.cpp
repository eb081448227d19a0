#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "selqa/evaluation.hpp"
#include "support.hpp"

using namespace selqa;

namespace {

std::vector<ScoredRecord> scored(std::vector<double> conf, std::vector<bool> correct,
                                 std::vector<std::string> domains = {}) {
    std::vector<ScoredRecord> out;
    for (std::size_t i = 0; i < conf.size(); ++i) {
        ScoredRecord s;
        s.id = testing::id_of(i);
        s.domain = domains.empty() ? "d" : domains[i];
        s.correct = correct[i];
        s.confidence = conf[i];
        out.push_back(s);
    }
    return out;
}

const std::vector<ScoredRecord> kExample = scored({0.9, 0.8, 0.7, 0.6}, {true, true, false, true});

}  // namespace

TEST_CASE("curve example") {
    const auto c = risk_coverage_curve(kExample);
    REQUIRE(c.points.size() == 4);
    CHECK(c.total == 4);
    const double risks[] = {0.0, 0.0, 1.0 / 3.0, 0.25};
    for (std::size_t k = 0; k < 4; ++k) {
        CHECK(c.points[k].coverage == (k + 1) / 4.0);
        CHECK(c.points[k].risk == doctest::Approx(risks[k]).epsilon(1e-15));
    }
    CHECK(c.points[2].threshold == 0.7);
    // mean of 0, 0, 1/3, 1/4
    CHECK(auc(c) == doctest::Approx(7.0 / 48.0).epsilon(1e-15));
    CHECK_THROWS_AS(risk_coverage_curve(std::vector<ScoredRecord>{}), EvaluationError);
}

TEST_CASE("coverage at accuracy") {
    CHECK(coverage_at_accuracy(kExample, 0.8) == 0.5);
    CHECK(coverage_at_accuracy(kExample, 0.75) == 1.0);
    CHECK(coverage_at_accuracy(scored({0.1, 0.2}, {true, true}), 0.9) == 1.0);
    CHECK(coverage_at_accuracy(scored({0.1, 0.2}, {false, false}), 0.5) == 0.0);
    // 4/5 must count as reaching the decimal level 0.8
    CHECK(coverage_at_accuracy(scored({0.9, 0.8, 0.7, 0.6, 0.5}, {true, true, true, false, true}), 0.8) == 1.0);
}

TEST_CASE("ties are broken by id") {
    const auto a = scored({0.5, 0.5, 0.5}, {false, true, true});
    const auto order = rank_order(a);
    CHECK(order[0].id == "r0000");
    CHECK(order[2].id == "r0002");
    CHECK(risk_coverage_curve(a).points[0].risk == 1.0);
}

TEST_CASE("best possible") {
    RecordSet set;
    set.records = {testing::make_record("a", true, 0.1), testing::make_record("b", false, 0.9),
                   testing::make_record("c", true, 0.2), testing::make_record("d", true, 0.3)};
    const auto c = best_possible_curve(set);
    REQUIRE(c.points.size() == 4);
    CHECK(c.points[3].risk == 0.25);
    CHECK(c.points[2].risk == 0.0);
    CHECK(auc(c) == 0.0625);

    // closed form max(0, (c - a) / c) for accuracy a
    std::mt19937_64 rng(1);
    std::bernoulli_distribution coin(0.7);
    std::vector<ScoredRecord> big;
    std::size_t right = 0;
    for (std::size_t i = 0; i < 5000; ++i) {
        const bool ok = coin(rng);
        right += ok;
        big.push_back({testing::id_of(i), "d", ok, std::nullopt, 0.5});
    }
    const double a = static_cast<double>(right) / 5000.0;
    const auto bc = best_possible_curve(std::span<const ScoredRecord>(big));
    for (const auto& p : bc.points) {
        CHECK(std::abs(p.risk - std::max(0.0, (p.coverage - a) / p.coverage)) <= 1.0 / 5000.0);
    }
}

TEST_CASE("properties over random sets") {
    std::mt19937_64 rng(2);
    const std::vector<double> levels = {0.5, 0.6, 0.7, 0.8, 0.9, 0.95};
    for (int t = 0; t < 200; ++t) {
        const auto s = testing::random_scored(rng, 1 + t % 25, t % 2 == 0);
        const auto c = risk_coverage_curve(s);
        std::size_t right = 0;
        for (const auto& r : s) right += r.correct;
        CHECK(c.points.back().risk == doctest::Approx(1.0 - static_cast<double>(right) / s.size()).epsilon(1e-12));
        for (std::size_t k = 1; k < c.points.size(); ++k) CHECK(c.points[k].coverage > c.points[k - 1].coverage);
        const auto m = selective_metrics(s, levels);
        for (std::size_t i = 1; i < levels.size(); ++i) {
            CHECK(m.cov_at_acc.at(levels[i]) <= m.cov_at_acc.at(levels[i - 1]));
        }
        CHECK(auc(best_possible_curve(std::span<const ScoredRecord>(s))) <= m.auc + 1e-12);
    }
}

TEST_CASE("reliability diagram") {
    const auto bins = reliability_diagram(scored({0.55, 0.52}, {true, false}), 10);
    REQUIRE(bins.size() == 10);
    CHECK(bins[5].lo == doctest::Approx(0.5));
    CHECK(bins[5].count == 2);
    CHECK(*bins[5].accuracy == 0.5);
    CHECK(*bins[5].mean_confidence == doctest::Approx(0.535).epsilon(1e-12));
    CHECK_FALSE(bins[0].accuracy.has_value());

    const auto one = reliability_diagram(scored({1.0}, {true}), 10);
    CHECK(one[9].count == 1);  // the last bin is closed on the right
    std::size_t nonempty = 0;
    for (const auto& b : one) nonempty += b.count > 0;
    CHECK(nonempty == 1);

    CHECK_THROWS_AS(reliability_diagram(scored({1.5}, {true}), 10), EvaluationError);
    CHECK_THROWS_AS(reliability_diagram(scored({0.5}, {true}), 0), EvaluationError);

    // calibrated stream: correct with probability equal to the confidence
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<double> conf;
    std::vector<bool> corr;
    for (int i = 0; i < 10000; ++i) {
        conf.push_back(unif(rng));
        corr.push_back(unif(rng) < conf.back());
    }
    for (const auto& b : reliability_diagram(scored(conf, corr), 10)) {
        CHECK(std::abs(*b.accuracy - *b.mean_confidence) <= 0.05);
    }
}

TEST_CASE("per-domain breakdown") {
    const auto s = scored({0.9, 0.8, 0.7, 0.6, 0.1}, {true, true, true, false, false}, {"squad", "ood", "squad", "ood", "ood"});
    const auto b = per_domain_breakdown(s, 0.75);
    CHECK(b.answered == 4);
    REQUIRE(b.domains.size() == 2);
    CHECK(b.domains[0].domain == "ood");
    CHECK(b.domains[0].share == 0.5);
    CHECK(*b.domains[0].accuracy == 0.5);
    CHECK(b.domains[1].share == 0.5);
    CHECK(*b.domains[1].accuracy == 1.0);

    const auto t = scored({0.9, 0.8, 0.7}, {true, false, true}, {"squad", "ood", "ood"});
    const auto only = per_domain_breakdown(t, 1.0);  // prefix holds one squad record
    CHECK(only.answered == 1);
    CHECK(only.domains[1].share == 1.0);
    CHECK_FALSE(only.domains[0].accuracy.has_value());

    CHECK_THROWS_AS(per_domain_breakdown(scored({0.5}, {true}), 0.8), EvaluationError);
}

TEST_CASE("unanswerable threshold") {
    auto s = scored({0.9, 0.2}, {true, false});
    s[0].answerable = true;
    s[1].answerable = false;
    const auto t = tune_unanswerable_threshold(s);
    CHECK(t.em_score == 1.0);
    CHECK(t.gamma_prime > 0.2);
    CHECK(t.gamma_prime <= 0.9);

    auto none = scored({0.3, 0.6}, {false, false});
    none[0].answerable = false;
    none[1].answerable = false;
    const auto u = tune_unanswerable_threshold(none);
    CHECK(u.gamma_prime == std::numeric_limits<double>::infinity());
    CHECK(u.em_score == 1.0);

    auto all = scored({0.3, 0.6}, {true, true});
    all[0].answerable = true;
    all[1].answerable = true;
    CHECK(tune_unanswerable_threshold(all).gamma_prime == -std::numeric_limits<double>::infinity());

    CHECK_THROWS_AS(tune_unanswerable_threshold(scored({0.3}, {true})), EvaluationError);
}

TEST_CASE("csv exports") {
    std::ostringstream c;
    write_curve_csv(risk_coverage_curve(kExample), c);
    CHECK(c.str().rfind("coverage,risk,threshold\n0.25,0,0.9\n", 0) == 0);
    std::ostringstream r;
    write_reliability_csv(reliability_diagram(scored({0.55}, {true}), 2), r);
    CHECK(r.str() == "bin_lo,bin_hi,count,mean_conf,accuracy\n0,0.5,0,,\n0.5,1,1,0.55,1\n");
}
