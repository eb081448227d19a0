#pragma once

#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "selqa/records.hpp"

namespace selqa {

// Feature catalogs, in canonical order.
//
//   base:    passage_len, prediction_len, top1, top2, top3, top4, top5
//   dropout: passage_len, prediction_len, dropout_mean_top1 .. dropout_mean_top5, dropout_neg_var
//
// The dropout catalog replaces the raw softmax values by the top five
// probabilities of the mean dropout ensemble and appends the negative
// variance of the predicted answer's probability across masks.
enum class FeatureVariant { base, dropout };

// Ablation groups. top1 / top2_5 / all_softmax address the probability block
// of whichever catalog is in use; dropout_var exists only in the dropout catalog.
enum class FeatureGroup { top1, top2_5, all_softmax, passage_len, prediction_len, dropout_var };

class FeatureError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string_view to_string(FeatureVariant v);
FeatureVariant parse_feature_variant(std::string_view s);
std::string_view to_string(FeatureGroup g);
FeatureGroup parse_feature_group(std::string_view s);
const std::vector<FeatureGroup>& all_feature_groups();

struct FeatureMask {
    std::set<FeatureGroup> excluded;

    bool empty() const { return excluded.empty(); }
    // Comma-separated group names; "" for the empty mask.
    std::string to_string() const;
    static FeatureMask parse(std::string_view groups);

    bool operator==(const FeatureMask&) const = default;
};

struct FeatureVector {
    std::vector<double> values;
    std::vector<std::string> names;
    FeatureMask mask;
};

const std::vector<std::string>& feature_catalog(FeatureVariant variant);

// Names left after applying the mask. Throws FeatureError if the mask names a
// group absent from the variant's catalog or removes every feature.
std::vector<std::string> feature_names(FeatureVariant variant, const FeatureMask& mask);

FeatureVector extract_base_features(const PredictionRecord& r, const FeatureMask& mask);
FeatureVector extract_dropout_features(const PredictionRecord& r, const FeatureMask& mask);
FeatureVector extract_features(const PredictionRecord& r, FeatureVariant variant, const FeatureMask& mask);

}  // namespace selqa
