#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "selqa/evaluation.hpp"
#include "selqa/synthetic.hpp"

using namespace selqa;

namespace {

std::vector<ScoredRecord> by_maxprob(const RecordSet& set) {
    std::vector<ScoredRecord> out;
    for (const auto& r : set) out.push_back(ScoredRecord::from(r, r.top_probs[0]));
    return out;
}

}  // namespace

TEST_CASE("records satisfy every invariant and are seeded") {
    DomainSpec spec;
    spec.domain = "news";
    spec.n = 500;
    spec.dropout_masks = 30;
    spec.answerable_fraction = 0.7;
    const RecordSet a = generate_synthetic(spec, 4);
    CHECK(a.size() == 500);
    CHECK_NOTHROW(validate_set(a));
    CHECK(a.records == generate_synthetic(spec, 4).records);
    CHECK(a.records != generate_synthetic(spec, 5).records);
    CHECK(a[0].id == "news-000000");
    for (const auto& r : a) {
        CHECK(r.passage_len >= spec.passage_len_min);
        CHECK(r.passage_len <= spec.passage_len_max);
        REQUIRE(r.dropout_probs);
        CHECK(r.dropout_probs->size() == 30);
        REQUIRE(r.answerable);
        if (!*r.answerable) CHECK_FALSE(r.correct);
    }
    const auto unanswerable =
        std::count_if(a.begin(), a.end(), [](const PredictionRecord& r) { return !*r.answerable; });
    CHECK(unanswerable > 100);
    CHECK(unanswerable < 200);
}

TEST_CASE("dropout fields are omitted by default") {
    DomainSpec spec;
    spec.n = 10;
    for (const auto& r : generate_synthetic(spec, 1)) {
        CHECK_FALSE(r.dropout_probs.has_value());
        CHECK_FALSE(r.answerable.has_value());
    }
}

TEST_CASE("invalid specs") {
    DomainSpec spec;
    spec.n = 0;
    CHECK_THROWS_AS(generate_synthetic(spec, 1), SyntheticError);
    spec.n = 5;
    spec.passage_len_min = 10;
    spec.passage_len_max = 5;
    CHECK_THROWS_AS(generate_synthetic(spec, 1), SyntheticError);
    spec = DomainSpec{};
    spec.overconfidence = 0.0;
    CHECK_THROWS_AS(generate_synthetic(spec, 1), SyntheticError);
}

TEST_CASE("calibrated and overconfident reliability") {
    DomainSpec spec;
    spec.n = 10000;
    for (const auto& b : reliability_diagram(by_maxprob(generate_synthetic(spec, 2)), 10)) {
        if (b.count > 0) CHECK(std::abs(*b.accuracy - *b.mean_confidence) <= 0.05);
    }
    spec.overconfidence = 1.5;
    spec.latent_mean = -0.2;
    for (const auto& b : reliability_diagram(by_maxprob(generate_synthetic(spec, 3)), 10)) {
        if (b.count > 0 && b.lo >= 0.5) CHECK(*b.accuracy < *b.mean_confidence);
    }
}
