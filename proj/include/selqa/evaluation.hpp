#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "selqa/records.hpp"

namespace selqa {

class EvaluationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RiskCoveragePoint {
    double coverage = 0.0;
    double risk = 0.0;
    double threshold = 0.0;
};

struct RiskCoverageCurve {
    std::vector<RiskCoveragePoint> points;  // one per prefix, coverage strictly increasing
    std::size_t total = 0;
};

struct SelectiveMetrics {
    double auc = 0.0;
    std::map<double, double> cov_at_acc;
};

struct ReliabilityBin {
    double lo = 0.0;
    double hi = 0.0;
    std::size_t count = 0;
    std::optional<double> mean_confidence;  // empty for an empty bin
    std::optional<double> accuracy;
};

struct DomainShare {
    std::string domain;
    std::size_t answered = 0;
    double share = 0.0;
    std::optional<double> accuracy;
};

struct PerDomainBreakdown {
    double acc_level = 0.0;
    double coverage = 0.0;
    std::size_t answered = 0;
    std::vector<DomainShare> domains;  // sorted by domain name
};

struct UnanswerableThreshold {
    double gamma_prime = 0.0;  // may be +/- infinity
    double em_score = 0.0;
};

// Answer order used by every metric: confidence descending, then id ascending.
std::vector<ScoredRecord> rank_order(std::span<const ScoredRecord> scored);

// One point per prefix k = 1..n of the answer order.
RiskCoverageCurve risk_coverage_curve(std::span<const ScoredRecord> scored);

// Mean of the n prefix risks.
double auc(const RiskCoverageCurve& curve);

// Largest k/n whose prefix accuracy reaches acc_level; 0 when none does.
// Accuracy comparisons allow 1e-12 of slack for decimal levels such as 0.8.
double coverage_at_accuracy(std::span<const ScoredRecord> scored, double acc_level);

SelectiveMetrics selective_metrics(std::span<const ScoredRecord> scored, std::span<const double> acc_levels);

// Oracle ordering: every correct record before every incorrect one.
RiskCoverageCurve best_possible_curve(const RecordSet& set);
RiskCoverageCurve best_possible_curve(std::span<const ScoredRecord> scored);
SelectiveMetrics best_possible_metrics(std::span<const ScoredRecord> scored, std::span<const double> acc_levels);

// Equal-width bins over [0, 1]; the last bin is closed on the right.
std::vector<ReliabilityBin> reliability_diagram(std::span<const ScoredRecord> scored, std::size_t n_bins = 10);

PerDomainBreakdown per_domain_breakdown(std::span<const ScoredRecord> scored, double acc_level);

// Picks gamma' maximising mean EM when "confidence < gamma'" predicts unanswerable.
// Candidates are -inf, the midpoints between consecutive distinct confidences, and +inf.
UnanswerableThreshold tune_unanswerable_threshold(std::span<const ScoredRecord> scored);

void write_curve_csv(const RiskCoverageCurve& curve, std::ostream& out);
void write_reliability_csv(std::span<const ReliabilityBin> bins, std::ostream& out);

}  // namespace selqa
