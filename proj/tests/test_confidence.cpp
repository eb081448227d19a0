#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <memory>

#include "selqa/confidence.hpp"
#include "support.hpp"

using namespace selqa;
using testing::make_record;

namespace {

PredictionRecord with_dropout(std::string id, std::vector<double> probs) {
    PredictionRecord r = make_record(std::move(id), true, 0.6);
    r.dropout_mean_top_probs = TopProbs{0.5, 0.3, 0.1, 0.06, 0.04};
    r.dropout_probs = std::move(probs);
    return r;
}

// One split on passage_len at 150: short passages are in-domain.
std::shared_ptr<const RandomForest> split_model(FeatureVariant variant, double left_prob, double right_prob) {
    auto f = std::make_shared<RandomForest>();
    f->feature_names = feature_names(variant, {});
    DecisionTree t;
    TreeNode root;
    root.feature = 0;
    root.threshold = 150.0;
    root.left = 1;
    root.right = 2;
    TreeNode l;
    l.prob = left_prob;
    TreeNode r;
    r.prob = right_prob;
    t.nodes = {root, l, r};
    f->trees.push_back(t);
    f->config.n_trees = 1;
    return f;
}

}  // namespace

TEST_CASE("max_prob") {
    auto r = make_record("a", true, 0.6);
    CHECK(max_prob(r) == 0.6);
    r.top_probs = {1, 0, 0, 0, 0};
    CHECK(max_prob(r) == 1.0);
    r.top_probs = {0.2, 0.2, 0.2, 0.2, 0.2};
    CHECK(max_prob(r) == 0.2);
}

TEST_CASE("dropout mean") {
    CHECK(dropout_mean(with_dropout("a", {0.5, 0.7, 0.6})) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(dropout_mean(with_dropout("a", {0.37})) == 0.37);
    CHECK(dropout_mean(with_dropout("a", std::vector<double>(30, 0.4))) == doctest::Approx(0.4).epsilon(1e-12));
    CHECK_THROWS_WITH_AS(dropout_mean(make_record("nod", true, 0.5)), "record nod: missing dropout_probs",
                         ConfidenceError);
}

TEST_CASE("dropout negative variance") {
    CHECK(dropout_neg_var(with_dropout("a", {0.5, 0.5})) == 0.0);
    CHECK_FALSE(std::signbit(dropout_neg_var(with_dropout("a", {0.5, 0.5}))));
    CHECK(dropout_neg_var(with_dropout("a", {0.4, 0.6})) == doctest::Approx(-0.01).epsilon(1e-12));
    CHECK(dropout_neg_var(with_dropout("a", {0.0, 1.0})) == -0.25);
    CHECK_THROWS_AS(dropout_neg_var(with_dropout("a", {0.3})), ConfidenceError);
    CHECK(dropout_neg_var(with_dropout("a", {0.1, 0.2, 0.9})) < 0.0);
}

TEST_CASE("calibrator and outlier confidences") {
    const auto model = split_model(FeatureVariant::base, 1.0, 0.0);
    const auto near = make_record("n", true, 0.6, "d", 100);
    const auto far = make_record("f", true, 0.6, "d", 400);
    CHECK(calibrator_confidence(*model, near, FeatureVariant::base, {}) == 1.0);
    CHECK(calibrator_confidence(*model, far, FeatureVariant::base, {}) == 0.0);
    CHECK(outlier_confidence(*model, near) == 1.0);
    CHECK(outlier_confidence(*split_model(FeatureVariant::base, 0.5, 0.5), far) == 0.5);

    // a dropout-variant model needs dropout fields
    const auto dmodel = split_model(FeatureVariant::dropout, 0.3, 0.7);
    CHECK_THROWS_AS(calibrator_confidence(*dmodel, near, FeatureVariant::dropout, {}), FeatureError);
    CHECK(calibrator_confidence(*dmodel, with_dropout("w", {0.4, 0.6}), FeatureVariant::dropout, {}) == 0.3);

    // catalog mismatches are caught when the method is built
    CHECK_THROWS_AS(ConfidenceMethod::calibrator(dmodel, FeatureVariant::base), ConfidenceError);
    CHECK_THROWS_AS(ConfidenceMethod::outlier(dmodel), ConfidenceError);
    CHECK_THROWS_AS(ConfidenceMethod::simple(MethodKind::calibrator), ConfidenceError);
}

TEST_CASE("score_all") {
    RecordSet set;
    set.records = {make_record("a", true, 0.7), make_record("b", false, 0.2), make_record("c", true, 0.5)};
    const auto s = score_all(set, ConfidenceMethod::simple(MethodKind::max_prob));
    REQUIRE(s.size() == 3);
    CHECK(s[0].id == "a");
    CHECK(s[0].confidence == 0.7);
    CHECK(s[1].confidence == 0.2);
    CHECK(s[2].confidence == 0.5);
    CHECK(s[1].correct == false);

    const auto model = split_model(FeatureVariant::base, 0.25, 0.75);
    const auto a = score_all(set, ConfidenceMethod::calibrator(model, FeatureVariant::base));
    const auto b = score_all(set, ConfidenceMethod::calibrator(model, FeatureVariant::base));
    CHECK(a[0].confidence == b[0].confidence);

    CHECK_THROWS_AS(score_all(RecordSet{}, ConfidenceMethod::simple(MethodKind::max_prob)), ConfidenceError);

    RecordSet mixed;
    mixed.records = {with_dropout("ok", {0.2, 0.4}), make_record("missing", true, 0.5)};
    CHECK_THROWS_WITH_AS(score_all(mixed, ConfidenceMethod::simple(MethodKind::dropout_mean)),
                         "record missing: missing dropout_probs", ConfidenceError);
}

TEST_CASE("method names") {
    for (MethodKind k : {MethodKind::max_prob, MethodKind::dropout_mean, MethodKind::dropout_neg_var,
                         MethodKind::calibrator, MethodKind::outlier}) {
        CHECK(parse_method_kind(to_string(k)) == k);
    }
    CHECK_THROWS_AS(parse_method_kind("softmax"), ConfidenceError);
}
