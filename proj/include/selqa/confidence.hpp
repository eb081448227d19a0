#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "selqa/features.hpp"
#include "selqa/forest.hpp"
#include "selqa/records.hpp"

namespace selqa {

class ConfidenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class MethodKind { max_prob, dropout_mean, dropout_neg_var, calibrator, outlier };

std::string_view to_string(MethodKind kind);
// Accepts the CLI spellings: maxprob, dropout-mean, dropout-var, calibrator, outlier.
MethodKind parse_method_kind(std::string_view s);

/// A confidence estimator. Calibrator and outlier kinds carry a trained forest
/// whose feature catalog matches (variant, mask).
struct ConfidenceMethod {
    MethodKind kind = MethodKind::max_prob;
    std::shared_ptr<const RandomForest> model;
    FeatureVariant variant = FeatureVariant::base;
    FeatureMask mask;

    static ConfidenceMethod simple(MethodKind kind);
    static ConfidenceMethod calibrator(std::shared_ptr<const RandomForest> model, FeatureVariant variant,
                                       FeatureMask mask = {});
    static ConfidenceMethod outlier(std::shared_ptr<const RandomForest> model, FeatureMask mask = {});

    bool needs_dropout() const;
};

double max_prob(const PredictionRecord& r);
double dropout_mean(const PredictionRecord& r);
// Minus the population variance of dropout_probs; needs at least two masks.
double dropout_neg_var(const PredictionRecord& r);
double calibrator_confidence(const RandomForest& model, const PredictionRecord& r, FeatureVariant variant,
                             const FeatureMask& mask);
// Probability of the in-domain class under a forest trained on in-domain indicators.
double outlier_confidence(const RandomForest& model, const PredictionRecord& r, const FeatureMask& mask = {});

double confidence(const ConfidenceMethod& method, const PredictionRecord& r);

// Order-preserving. Errors name the first failing record.
std::vector<ScoredRecord> score_all(const RecordSet& set, const ConfidenceMethod& method);

}  // namespace selqa
