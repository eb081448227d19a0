#include "selqa/records.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "selqa/rng.hpp"

namespace selqa {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

constexpr double kSumSlack = 1e-6;

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "id",      "domain",     "passage_len",   "prediction_len",        "top_probs",
        "correct", "answerable", "dropout_probs", "dropout_mean_top_probs"};
    return keys;
}

[[noreturn]] void field_error(std::size_t line, const std::string& field, const std::string& what) {
    throw RecordError("line " + std::to_string(line) + ": field '" + field + "': " + what);
}

[[noreturn]] void rule_error(const PredictionRecord& r, const std::string& rule) {
    throw RecordError("record " + r.id + ": " + rule);
}

const json& require(const json& obj, const char* key, std::size_t line) {
    auto it = obj.find(key);
    if (it == obj.end()) field_error(line, key, "missing required field");
    return *it;
}

std::int64_t read_count(const json& obj, const char* key, std::size_t line) {
    const json& v = require(obj, key, line);
    if (!v.is_number_integer()) field_error(line, key, "expected integer");
    return v.get<std::int64_t>();
}

double read_prob(const json& v, const char* key, std::size_t line) {
    if (!v.is_number()) field_error(line, key, "expected number");
    return v.get<double>();
}

TopProbs read_top5(const json& v, const char* key, std::size_t line) {
    if (!v.is_array() || v.size() != kTopProbs) field_error(line, key, "expected array of 5 numbers");
    TopProbs out{};
    for (std::size_t i = 0; i < kTopProbs; ++i) out[i] = read_prob(v[i], key, line);
    return out;
}

PredictionRecord parse_line(const std::string& text, std::size_t line) {
    json obj;
    try {
        obj = json::parse(text);
    } catch (const json::parse_error& e) {
        throw RecordError("line " + std::to_string(line) + ": malformed JSON: " + e.what());
    }
    if (!obj.is_object()) throw RecordError("line " + std::to_string(line) + ": expected a JSON object");
    for (const auto& item : obj.items()) {
        if (!known_keys().contains(item.key())) field_error(line, item.key(), "unknown field");
    }

    PredictionRecord r;
    const json& id = require(obj, "id", line);
    if (!id.is_string()) field_error(line, "id", "expected string");
    r.id = id.get<std::string>();
    const json& domain = require(obj, "domain", line);
    if (!domain.is_string()) field_error(line, "domain", "expected string");
    r.domain = domain.get<std::string>();
    r.passage_len = read_count(obj, "passage_len", line);
    r.prediction_len = read_count(obj, "prediction_len", line);
    r.top_probs = read_top5(require(obj, "top_probs", line), "top_probs", line);
    const json& correct = require(obj, "correct", line);
    if (!correct.is_boolean()) field_error(line, "correct", "expected boolean");
    r.correct = correct.get<bool>();

    if (auto it = obj.find("answerable"); it != obj.end()) {
        if (!it->is_boolean()) field_error(line, "answerable", "expected boolean");
        r.answerable = it->get<bool>();
    }
    if (auto it = obj.find("dropout_probs"); it != obj.end()) {
        if (!it->is_array()) field_error(line, "dropout_probs", "expected array of numbers");
        std::vector<double> probs;
        probs.reserve(it->size());
        for (const auto& v : *it) probs.push_back(read_prob(v, "dropout_probs", line));
        r.dropout_probs = std::move(probs);
    }
    if (auto it = obj.find("dropout_mean_top_probs"); it != obj.end()) {
        r.dropout_mean_top_probs = read_top5(*it, "dropout_mean_top_probs", line);
    }
    return r;
}

void check_top5(const PredictionRecord& r, const TopProbs& p, const std::string& name) {
    double sum = 0.0;
    for (std::size_t i = 0; i < kTopProbs; ++i) {
        if (!(p[i] >= 0.0 && p[i] <= 1.0)) rule_error(r, name + " entry outside [0, 1]");
        if (i > 0 && p[i] > p[i - 1]) rule_error(r, name + " not sorted");
        sum += p[i];
    }
    if (sum > 1.0 + kSumSlack) rule_error(r, name + " sums above 1");
}

void shuffle_in_place(std::vector<std::size_t>& idx, std::uint64_t seed) {
    Rng rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
}

}  // namespace

void validate_record(const PredictionRecord& r) {
    if (r.id.empty()) throw RecordError("record with empty id");
    if (r.passage_len < 0) rule_error(r, "passage_len negative");
    if (r.prediction_len < 0) rule_error(r, "prediction_len negative");
    check_top5(r, r.top_probs, "top_probs");
    if (r.dropout_mean_top_probs) check_top5(r, *r.dropout_mean_top_probs, "dropout_mean_top_probs");
    if (r.dropout_probs) {
        if (r.dropout_probs->empty()) rule_error(r, "dropout_probs empty");
        for (double p : *r.dropout_probs) {
            if (!(p >= 0.0 && p <= 1.0)) rule_error(r, "dropout_probs entry outside [0, 1]");
        }
    }
}

void validate_set(const RecordSet& set) {
    if (set.empty()) throw RecordError("empty record set");
    std::unordered_set<std::string> seen;
    seen.reserve(set.size());
    for (const auto& r : set) {
        validate_record(r);
        if (!seen.insert(r.id).second) throw RecordError("duplicate id " + r.id);
    }
}

RecordSet parse_records(std::istream& in, const std::string& provenance) {
    RecordSet set;
    set.provenance = provenance;
    std::unordered_set<std::string> seen;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        PredictionRecord r = parse_line(text, line);
        validate_record(r);
        if (!seen.insert(r.id).second) {
            throw RecordError("line " + std::to_string(line) + ": duplicate id " + r.id);
        }
        set.records.push_back(std::move(r));
    }
    if (set.empty()) throw RecordError("empty record set");
    return set;
}

RecordSet load_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw RecordError("cannot open " + path);
    return parse_records(in, path);
}

std::string record_to_line(const PredictionRecord& r) {
    ordered_json obj;
    obj["id"] = r.id;
    obj["domain"] = r.domain;
    obj["passage_len"] = r.passage_len;
    obj["prediction_len"] = r.prediction_len;
    obj["top_probs"] = r.top_probs;
    obj["correct"] = r.correct;
    if (r.answerable) obj["answerable"] = *r.answerable;
    if (r.dropout_probs) obj["dropout_probs"] = *r.dropout_probs;
    if (r.dropout_mean_top_probs) obj["dropout_mean_top_probs"] = *r.dropout_mean_top_probs;
    return obj.dump();
}

void write_records(const RecordSet& set, std::ostream& out) {
    for (const auto& r : set) out << record_to_line(r) << '\n';
}

void save_records(const RecordSet& set, const std::string& path) {
    validate_set(set);
    std::ofstream out(path);
    if (!out) throw RecordError("cannot write " + path);
    write_records(set, out);
    if (!out) throw RecordError("write failed for " + path);
}

std::size_t round_half_up(double x) {
    return static_cast<std::size_t>(std::floor(x + 0.5));
}

RecordSet sample_without_replacement(const RecordSet& set, std::size_t k, std::uint64_t seed) {
    if (k > set.size()) {
        throw RecordError("cannot sample " + std::to_string(k) + " records from a pool of " +
                          std::to_string(set.size()));
    }
    std::vector<std::size_t> idx(set.size());
    std::iota(idx.begin(), idx.end(), 0);
    shuffle_in_place(idx, seed);
    RecordSet out;
    out.provenance = set.provenance;
    out.records.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.records.push_back(set.records[idx[i]]);
    return out;
}

RecordSet sample_mixture(const RecordSet& source, const RecordSet& ood, double alpha, std::size_t n,
                         std::uint64_t seed) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw RecordError("alpha must lie in [0, 1]");
    if (n == 0) throw RecordError("mixture size must be positive");
    const std::size_t n_source = round_half_up(alpha * static_cast<double>(n));
    const std::size_t n_ood = n - n_source;
    if (source.size() < n_source) {
        throw RecordError("insufficient source records: need " + std::to_string(n_source) + ", have " +
                          std::to_string(source.size()));
    }
    if (ood.size() < n_ood) {
        throw RecordError("insufficient ood records: need " + std::to_string(n_ood) + ", have " +
                          std::to_string(ood.size()));
    }
    RecordSet a = sample_without_replacement(source, n_source, derive_seed(seed, "mixture-source"));
    RecordSet b = sample_without_replacement(ood, n_ood, derive_seed(seed, "mixture-ood"));

    std::vector<const PredictionRecord*> pooled;
    pooled.reserve(n);
    for (const auto& r : a) pooled.push_back(&r);
    for (const auto& r : b) pooled.push_back(&r);
    Rng rng(derive_seed(seed, "mixture-order"));
    std::shuffle(pooled.begin(), pooled.end(), rng);

    RecordSet out;
    out.provenance = "mixture(" + source.provenance + ", " + ood.provenance + ")";
    out.records.reserve(n);
    for (const auto* r : pooled) out.records.push_back(*r);
    return out;
}

std::pair<RecordSet, RecordSet> split(const RecordSet& set, double fraction, std::uint64_t seed) {
    if (set.empty()) throw RecordError("cannot split an empty record set");
    if (!(fraction > 0.0 && fraction < 1.0)) throw RecordError("split fraction must lie in (0, 1)");
    std::vector<std::size_t> idx(set.size());
    std::iota(idx.begin(), idx.end(), 0);
    shuffle_in_place(idx, seed);
    const std::size_t k = round_half_up(fraction * static_cast<double>(set.size()));
    std::pair<RecordSet, RecordSet> parts;
    parts.first.provenance = set.provenance;
    parts.second.provenance = set.provenance;
    parts.first.records.reserve(k);
    parts.second.records.reserve(set.size() - k);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        (i < k ? parts.first : parts.second).records.push_back(set.records[idx[i]]);
    }
    return parts;
}

}  // namespace selqa
