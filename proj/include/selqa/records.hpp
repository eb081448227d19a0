#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace selqa {

inline constexpr std::size_t kTopProbs = 5;
using TopProbs = std::array<double, kTopProbs>;

/// One QA example's model outputs, its exact-match label and its domain tag.
struct PredictionRecord {
    std::string id;
    std::string domain;
    std::int64_t passage_len = 0;
    std::int64_t prediction_len = 0;
    TopProbs top_probs{};
    bool correct = false;
    std::optional<bool> answerable;
    std::optional<std::vector<double>> dropout_probs;
    std::optional<TopProbs> dropout_mean_top_probs;

    bool has_dropout() const { return dropout_probs.has_value() && dropout_mean_top_probs.has_value(); }

    bool operator==(const PredictionRecord&) const = default;
};

struct RecordSet {
    std::vector<PredictionRecord> records;
    std::string provenance;

    std::size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }
    auto begin() const { return records.begin(); }
    auto end() const { return records.end(); }
    const PredictionRecord& operator[](std::size_t i) const { return records[i]; }
};

/// A record projected onto what selective-prediction metrics need, plus its confidence.
struct ScoredRecord {
    std::string id;
    std::string domain;
    bool correct = false;
    std::optional<bool> answerable;
    double confidence = 0.0;

    static ScoredRecord from(const PredictionRecord& r, double confidence) {
        return {r.id, r.domain, r.correct, r.answerable, confidence};
    }
};

/// Raised for malformed record files and invariant violations.
class RecordError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Throws RecordError naming the record id and the violated rule.
void validate_record(const PredictionRecord& r);
// Validates every record plus id uniqueness and non-emptiness.
void validate_set(const RecordSet& set);

RecordSet load_records(const std::string& path);
RecordSet parse_records(std::istream& in, const std::string& provenance);
void save_records(const RecordSet& set, const std::string& path);
void write_records(const RecordSet& set, std::ostream& out);
std::string record_to_line(const PredictionRecord& r);

// round(x) with halves rounded up; x must be non-negative.
std::size_t round_half_up(double x);

// k records drawn without replacement, in seeded order.
RecordSet sample_without_replacement(const RecordSet& set, std::size_t k, std::uint64_t seed);

// Exactly n records: round_half_up(alpha*n) from source and the rest from ood,
// without replacement, returned in a seeded shuffle. alpha may be 0 or 1.
RecordSet sample_mixture(const RecordSet& source, const RecordSet& ood, double alpha, std::size_t n,
                         std::uint64_t seed);

// Seeded partition; the first part holds round_half_up(fraction*|set|) records.
std::pair<RecordSet, RecordSet> split(const RecordSet& set, double fraction, std::uint64_t seed);

}  // namespace selqa
