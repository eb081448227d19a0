#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "selqa/records.hpp"

namespace testing {

inline selqa::PredictionRecord make_record(std::string id, bool correct, double top1, std::string domain = "source",
                                           int passage_len = 100, int prediction_len = 3) {
    selqa::PredictionRecord r;
    r.id = std::move(id);
    r.domain = std::move(domain);
    r.passage_len = passage_len;
    r.prediction_len = prediction_len;
    const double rest = (1.0 - top1) / 5.0;
    r.top_probs = {top1, std::min(top1, rest), std::min(top1, rest * 0.5), std::min(top1, rest * 0.25),
                   std::min(top1, rest * 0.125)};
    r.correct = correct;
    return r;
}

inline std::string id_of(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "r%04zu", i);
    return buf;
}

// n scored records; distinct=true draws confidences without repeats.
inline std::vector<selqa::ScoredRecord> random_scored(std::mt19937_64& rng, std::size_t n, bool distinct) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::bernoulli_distribution coin(0.5);
    std::vector<double> conf;
    while (conf.size() < n) {
        // coarse grid when ties are allowed so they actually happen
        const double c = distinct ? unif(rng) : std::floor(unif(rng) * 4.0) / 4.0;
        if (distinct && std::find(conf.begin(), conf.end(), c) != conf.end()) continue;
        conf.push_back(c);
    }
    std::vector<selqa::ScoredRecord> out;
    for (std::size_t i = 0; i < n; ++i) {
        selqa::ScoredRecord s;
        s.id = id_of(i);
        s.domain = coin(rng) ? "a" : "b";
        s.correct = coin(rng);
        s.confidence = conf[i];
        out.push_back(s);
    }
    return out;
}

inline std::filesystem::path fresh_dir(const std::string& base, const std::string& name) {
    const auto dir = std::filesystem::path(base) / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string slurp(const std::filesystem::path& path) {
    std::FILE* f = std::fopen(path.string().c_str(), "rb");
    if (!f) return {};
    std::string out;
    char buf[4096];
    std::size_t k;
    while ((k = std::fread(buf, 1, sizeof buf, f)) > 0) out.append(buf, k);
    std::fclose(f);
    return out;
}

}  // namespace testing
