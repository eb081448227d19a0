#include "selqa/confidence.hpp"

#include <cmath>

#include "selqa/stats.hpp"

namespace selqa {

namespace {

const std::vector<double>& require_dropout_probs(const PredictionRecord& r) {
    if (!r.dropout_probs || r.dropout_probs->empty()) {
        throw ConfidenceError("record " + r.id + ": missing dropout_probs");
    }
    return *r.dropout_probs;
}

const RandomForest& require_model(const ConfidenceMethod& m) {
    if (!m.model) throw ConfidenceError(std::string(to_string(m.kind)) + " method has no trained model");
    return *m.model;
}

}  // namespace

std::string_view to_string(MethodKind kind) {
    switch (kind) {
        case MethodKind::max_prob: return "maxprob";
        case MethodKind::dropout_mean: return "dropout-mean";
        case MethodKind::dropout_neg_var: return "dropout-var";
        case MethodKind::calibrator: return "calibrator";
        case MethodKind::outlier: return "outlier";
    }
    return "?";
}

MethodKind parse_method_kind(std::string_view s) {
    for (MethodKind k : {MethodKind::max_prob, MethodKind::dropout_mean, MethodKind::dropout_neg_var,
                         MethodKind::calibrator, MethodKind::outlier}) {
        if (to_string(k) == s) return k;
    }
    throw ConfidenceError("unknown confidence method '" + std::string(s) + "'");
}

ConfidenceMethod ConfidenceMethod::simple(MethodKind kind) {
    if (kind == MethodKind::calibrator || kind == MethodKind::outlier) {
        throw ConfidenceError(std::string(to_string(kind)) + " needs a trained model");
    }
    ConfidenceMethod m;
    m.kind = kind;
    return m;
}

ConfidenceMethod ConfidenceMethod::calibrator(std::shared_ptr<const RandomForest> model, FeatureVariant variant,
                                              FeatureMask mask) {
    if (!model) throw ConfidenceError("calibrator needs a trained model");
    if (model->feature_names != feature_names(variant, mask)) {
        throw ConfidenceError("calibrator model catalog does not match the " + std::string(to_string(variant)) +
                              " variant with mask {" + mask.to_string() + "}");
    }
    return ConfidenceMethod{MethodKind::calibrator, std::move(model), variant, std::move(mask)};
}

ConfidenceMethod ConfidenceMethod::outlier(std::shared_ptr<const RandomForest> model, FeatureMask mask) {
    if (!model) throw ConfidenceError("outlier detector needs a trained model");
    if (model->feature_names != feature_names(FeatureVariant::base, mask)) {
        throw ConfidenceError("outlier model catalog does not match the base catalog");
    }
    return ConfidenceMethod{MethodKind::outlier, std::move(model), FeatureVariant::base, std::move(mask)};
}

bool ConfidenceMethod::needs_dropout() const {
    return kind == MethodKind::dropout_mean || kind == MethodKind::dropout_neg_var ||
           (kind == MethodKind::calibrator && variant == FeatureVariant::dropout);
}

double max_prob(const PredictionRecord& r) {
    return r.top_probs[0];
}

double dropout_mean(const PredictionRecord& r) {
    return stats::mean(require_dropout_probs(r));
}

double dropout_neg_var(const PredictionRecord& r) {
    const auto& probs = require_dropout_probs(r);
    if (probs.size() < 2) throw ConfidenceError("record " + r.id + ": dropout variance needs at least two masks");
    return 0.0 - stats::population_variance(probs);
}

double calibrator_confidence(const RandomForest& model, const PredictionRecord& r, FeatureVariant variant,
                             const FeatureMask& mask) {
    return model.predict_proba(extract_features(r, variant, mask));
}

double outlier_confidence(const RandomForest& model, const PredictionRecord& r, const FeatureMask& mask) {
    return model.predict_proba(extract_base_features(r, mask));
}

double confidence(const ConfidenceMethod& method, const PredictionRecord& r) {
    switch (method.kind) {
        case MethodKind::max_prob: return max_prob(r);
        case MethodKind::dropout_mean: return dropout_mean(r);
        case MethodKind::dropout_neg_var: return dropout_neg_var(r);
        case MethodKind::calibrator:
            return calibrator_confidence(require_model(method), r, method.variant, method.mask);
        case MethodKind::outlier: return outlier_confidence(require_model(method), r, method.mask);
    }
    throw ConfidenceError("unknown confidence method");
}

std::vector<ScoredRecord> score_all(const RecordSet& set, const ConfidenceMethod& method) {
    if (set.empty()) throw ConfidenceError("cannot score an empty record set");
    std::vector<ScoredRecord> out;
    out.reserve(set.size());
    for (const auto& r : set) {
        double c = 0.0;
        try {
            c = confidence(method, r);
        } catch (const ConfidenceError&) {
            throw;
        } catch (const FeatureError& e) {
            throw ConfidenceError(e.what());
        } catch (const std::exception& e) {
            throw ConfidenceError("record " + r.id + ": " + e.what());
        }
        if (!std::isfinite(c)) throw ConfidenceError("record " + r.id + ": confidence not finite");
        out.push_back(ScoredRecord::from(r, c));
    }
    return out;
}

}  // namespace selqa
