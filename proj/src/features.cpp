#include "selqa/features.hpp"

#include <algorithm>
#include <array>

#include "selqa/stats.hpp"

namespace selqa {

namespace {

constexpr std::array<std::pair<FeatureGroup, std::string_view>, 6> kGroupNames = {{
    {FeatureGroup::top1, "top1"},
    {FeatureGroup::top2_5, "top2_5"},
    {FeatureGroup::all_softmax, "all_softmax"},
    {FeatureGroup::passage_len, "passage_len"},
    {FeatureGroup::prediction_len, "prediction_len"},
    {FeatureGroup::dropout_var, "dropout_var"},
}};

// Catalog position -> does the group remove it?
bool removes(FeatureGroup g, std::size_t pos) {
    switch (g) {
        case FeatureGroup::passage_len: return pos == 0;
        case FeatureGroup::prediction_len: return pos == 1;
        case FeatureGroup::top1: return pos == 2;
        case FeatureGroup::top2_5: return pos >= 3 && pos <= 6;
        case FeatureGroup::all_softmax: return pos >= 2 && pos <= 6;
        case FeatureGroup::dropout_var: return pos == 7;
    }
    return false;
}

std::vector<bool> keep_flags(FeatureVariant variant, const FeatureMask& mask) {
    const auto& catalog = feature_catalog(variant);
    if (variant == FeatureVariant::base && mask.excluded.contains(FeatureGroup::dropout_var)) {
        throw FeatureError("feature group dropout_var does not exist in the base catalog");
    }
    std::vector<bool> keep(catalog.size(), true);
    for (FeatureGroup g : mask.excluded) {
        for (std::size_t i = 0; i < catalog.size(); ++i) {
            if (removes(g, i)) keep[i] = false;
        }
    }
    if (std::none_of(keep.begin(), keep.end(), [](bool k) { return k; })) {
        throw FeatureError("feature mask removes every feature");
    }
    return keep;
}

FeatureVector assemble(const std::vector<double>& full, FeatureVariant variant, const FeatureMask& mask) {
    const auto keep = keep_flags(variant, mask);
    const auto& catalog = feature_catalog(variant);
    FeatureVector fv;
    fv.mask = mask;
    for (std::size_t i = 0; i < full.size(); ++i) {
        if (!keep[i]) continue;
        fv.values.push_back(full[i]);
        fv.names.push_back(catalog[i]);
    }
    return fv;
}

}  // namespace

std::string_view to_string(FeatureVariant v) {
    return v == FeatureVariant::base ? "base" : "dropout";
}

FeatureVariant parse_feature_variant(std::string_view s) {
    if (s == "base") return FeatureVariant::base;
    if (s == "dropout") return FeatureVariant::dropout;
    throw FeatureError("unknown feature variant '" + std::string(s) + "'");
}

std::string_view to_string(FeatureGroup g) {
    for (const auto& [group, name] : kGroupNames) {
        if (group == g) return name;
    }
    return "?";
}

FeatureGroup parse_feature_group(std::string_view s) {
    for (const auto& [group, name] : kGroupNames) {
        if (name == s) return group;
    }
    throw FeatureError("unknown feature group '" + std::string(s) + "'");
}

const std::vector<FeatureGroup>& all_feature_groups() {
    static const std::vector<FeatureGroup> groups = {FeatureGroup::top1,        FeatureGroup::top2_5,
                                                     FeatureGroup::all_softmax, FeatureGroup::passage_len,
                                                     FeatureGroup::prediction_len, FeatureGroup::dropout_var};
    return groups;
}

std::string FeatureMask::to_string() const {
    std::string out;
    for (FeatureGroup g : excluded) {
        if (!out.empty()) out += ',';
        out += selqa::to_string(g);
    }
    return out;
}

FeatureMask FeatureMask::parse(std::string_view groups) {
    FeatureMask mask;
    while (!groups.empty()) {
        const auto comma = groups.find(',');
        std::string_view token = groups.substr(0, comma);
        while (!token.empty() && token.front() == ' ') token.remove_prefix(1);
        while (!token.empty() && token.back() == ' ') token.remove_suffix(1);
        if (!token.empty()) mask.excluded.insert(parse_feature_group(token));
        if (comma == std::string_view::npos) break;
        groups.remove_prefix(comma + 1);
    }
    return mask;
}

const std::vector<std::string>& feature_catalog(FeatureVariant variant) {
    static const std::vector<std::string> base = {"passage_len", "prediction_len", "top1", "top2",
                                                  "top3",        "top4",           "top5"};
    static const std::vector<std::string> dropout = {
        "passage_len",       "prediction_len",    "dropout_mean_top1", "dropout_mean_top2",
        "dropout_mean_top3", "dropout_mean_top4", "dropout_mean_top5", "dropout_neg_var"};
    return variant == FeatureVariant::base ? base : dropout;
}

std::vector<std::string> feature_names(FeatureVariant variant, const FeatureMask& mask) {
    const auto keep = keep_flags(variant, mask);
    const auto& catalog = feature_catalog(variant);
    std::vector<std::string> names;
    for (std::size_t i = 0; i < catalog.size(); ++i) {
        if (keep[i]) names.push_back(catalog[i]);
    }
    return names;
}

FeatureVector extract_base_features(const PredictionRecord& r, const FeatureMask& mask) {
    std::vector<double> full = {static_cast<double>(r.passage_len), static_cast<double>(r.prediction_len)};
    full.insert(full.end(), r.top_probs.begin(), r.top_probs.end());
    return assemble(full, FeatureVariant::base, mask);
}

FeatureVector extract_dropout_features(const PredictionRecord& r, const FeatureMask& mask) {
    if (!r.has_dropout()) throw FeatureError("record " + r.id + ": missing dropout fields");
    std::vector<double> full = {static_cast<double>(r.passage_len), static_cast<double>(r.prediction_len)};
    full.insert(full.end(), r.dropout_mean_top_probs->begin(), r.dropout_mean_top_probs->end());
    full.push_back(0.0 - stats::population_variance(*r.dropout_probs));
    return assemble(full, FeatureVariant::dropout, mask);
}

FeatureVector extract_features(const PredictionRecord& r, FeatureVariant variant, const FeatureMask& mask) {
    return variant == FeatureVariant::base ? extract_base_features(r, mask) : extract_dropout_features(r, mask);
}

}  // namespace selqa
