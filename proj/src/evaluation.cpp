#include "selqa/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "selqa/format.hpp"

namespace selqa {

namespace {

constexpr double kAccSlack = 1e-12;

void require_nonempty(std::span<const ScoredRecord> scored) {
    if (scored.empty()) throw EvaluationError("no scored records: metrics are undefined");
}

// Number of records answered at the largest prefix meeting acc_level.
std::size_t prefix_at_accuracy(const std::vector<ScoredRecord>& ordered, double acc_level) {
    std::size_t best = 0;
    std::size_t right = 0;
    for (std::size_t k = 1; k <= ordered.size(); ++k) {
        if (ordered[k - 1].correct) ++right;
        if (static_cast<double>(right) / static_cast<double>(k) >= acc_level - kAccSlack) best = k;
    }
    return best;
}

std::vector<ScoredRecord> oracle_order(std::span<const ScoredRecord> scored) {
    std::vector<ScoredRecord> out(scored.begin(), scored.end());
    for (auto& s : out) s.confidence = s.correct ? 1.0 : 0.0;
    return out;
}

}  // namespace

std::vector<ScoredRecord> rank_order(std::span<const ScoredRecord> scored) {
    std::vector<ScoredRecord> ordered(scored.begin(), scored.end());
    for (const auto& s : ordered) {
        if (!std::isfinite(s.confidence)) throw EvaluationError("record " + s.id + ": confidence not finite");
    }
    std::sort(ordered.begin(), ordered.end(), [](const ScoredRecord& a, const ScoredRecord& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        return a.id < b.id;
    });
    return ordered;
}

RiskCoverageCurve risk_coverage_curve(std::span<const ScoredRecord> scored) {
    require_nonempty(scored);
    const auto ordered = rank_order(scored);
    const double n = static_cast<double>(ordered.size());
    RiskCoverageCurve curve;
    curve.total = ordered.size();
    curve.points.reserve(ordered.size());
    std::size_t wrong = 0;
    for (std::size_t k = 1; k <= ordered.size(); ++k) {
        if (!ordered[k - 1].correct) ++wrong;
        curve.points.push_back({static_cast<double>(k) / n, static_cast<double>(wrong) / static_cast<double>(k),
                                ordered[k - 1].confidence});
    }
    return curve;
}

double auc(const RiskCoverageCurve& curve) {
    if (curve.points.empty()) throw EvaluationError("empty risk-coverage curve");
    double sum = 0.0;
    for (const auto& p : curve.points) sum += p.risk;
    return sum / static_cast<double>(curve.points.size());
}

double coverage_at_accuracy(std::span<const ScoredRecord> scored, double acc_level) {
    require_nonempty(scored);
    const auto ordered = rank_order(scored);
    return static_cast<double>(prefix_at_accuracy(ordered, acc_level)) / static_cast<double>(ordered.size());
}

SelectiveMetrics selective_metrics(std::span<const ScoredRecord> scored, std::span<const double> acc_levels) {
    require_nonempty(scored);
    const auto ordered = rank_order(scored);
    SelectiveMetrics m;
    m.auc = auc(risk_coverage_curve(ordered));
    for (double level : acc_levels) {
        m.cov_at_acc[level] =
            static_cast<double>(prefix_at_accuracy(ordered, level)) / static_cast<double>(ordered.size());
    }
    return m;
}

RiskCoverageCurve best_possible_curve(std::span<const ScoredRecord> scored) {
    require_nonempty(scored);
    return risk_coverage_curve(oracle_order(scored));
}

RiskCoverageCurve best_possible_curve(const RecordSet& set) {
    std::vector<ScoredRecord> scored;
    scored.reserve(set.size());
    for (const auto& r : set) scored.push_back(ScoredRecord::from(r, 0.0));
    return best_possible_curve(scored);
}

SelectiveMetrics best_possible_metrics(std::span<const ScoredRecord> scored, std::span<const double> acc_levels) {
    require_nonempty(scored);
    return selective_metrics(oracle_order(scored), acc_levels);
}

std::vector<ReliabilityBin> reliability_diagram(std::span<const ScoredRecord> scored, std::size_t n_bins) {
    require_nonempty(scored);
    if (n_bins == 0) throw EvaluationError("reliability diagram needs at least one bin");
    std::vector<ReliabilityBin> bins(n_bins);
    std::vector<double> conf_sum(n_bins, 0.0);
    std::vector<std::size_t> right(n_bins, 0);
    for (std::size_t i = 0; i < n_bins; ++i) {
        bins[i].lo = static_cast<double>(i) / static_cast<double>(n_bins);
        bins[i].hi = static_cast<double>(i + 1) / static_cast<double>(n_bins);
    }
    for (const auto& s : scored) {
        if (!(s.confidence >= 0.0 && s.confidence <= 1.0)) {
            throw EvaluationError("record " + s.id + ": confidence " + format_double(s.confidence) +
                                  " outside [0, 1]");
        }
        auto b = static_cast<std::size_t>(std::floor(s.confidence * static_cast<double>(n_bins)));
        b = std::min(b, n_bins - 1);
        ++bins[b].count;
        conf_sum[b] += s.confidence;
        if (s.correct) ++right[b];
    }
    for (std::size_t i = 0; i < n_bins; ++i) {
        if (bins[i].count == 0) continue;
        const double c = static_cast<double>(bins[i].count);
        bins[i].mean_confidence = conf_sum[i] / c;
        bins[i].accuracy = static_cast<double>(right[i]) / c;
    }
    return bins;
}

PerDomainBreakdown per_domain_breakdown(std::span<const ScoredRecord> scored, double acc_level) {
    require_nonempty(scored);
    std::map<std::string, std::pair<std::size_t, std::size_t>> counts;  // domain -> (answered, right)
    for (const auto& s : scored) counts.try_emplace(s.domain, 0, 0);
    if (counts.size() < 2) throw EvaluationError("per-domain breakdown needs at least two domains");

    const auto ordered = rank_order(scored);
    const std::size_t k = prefix_at_accuracy(ordered, acc_level);
    for (std::size_t i = 0; i < k; ++i) {
        auto& c = counts[ordered[i].domain];
        ++c.first;
        if (ordered[i].correct) ++c.second;
    }

    PerDomainBreakdown out;
    out.acc_level = acc_level;
    out.answered = k;
    out.coverage = static_cast<double>(k) / static_cast<double>(ordered.size());
    for (const auto& [domain, c] : counts) {
        DomainShare d;
        d.domain = domain;
        d.answered = c.first;
        d.share = k == 0 ? 0.0 : static_cast<double>(c.first) / static_cast<double>(k);
        if (c.first > 0) d.accuracy = static_cast<double>(c.second) / static_cast<double>(c.first);
        out.domains.push_back(std::move(d));
    }
    return out;
}

UnanswerableThreshold tune_unanswerable_threshold(std::span<const ScoredRecord> scored) {
    require_nonempty(scored);
    for (const auto& s : scored) {
        if (!s.answerable) throw EvaluationError("record " + s.id + ": missing answerable flag");
        if (!std::isfinite(s.confidence)) throw EvaluationError("record " + s.id + ": confidence not finite");
    }
    std::vector<ScoredRecord> asc(scored.begin(), scored.end());
    std::sort(asc.begin(), asc.end(),
              [](const ScoredRecord& a, const ScoredRecord& b) { return a.confidence < b.confidence; });

    // gamma' = -inf answers everything.
    long long em = 0;
    for (const auto& s : asc) {
        if (*s.answerable && s.correct) ++em;
    }
    UnanswerableThreshold best{-std::numeric_limits<double>::infinity(), static_cast<double>(em)};

    // Raising gamma' past a group of equal confidences abstains on all of them.
    std::size_t i = 0;
    while (i < asc.size()) {
        std::size_t j = i;
        while (j < asc.size() && asc[j].confidence == asc[i].confidence) {
            if (!*asc[j].answerable) {
                ++em;
            } else if (asc[j].correct) {
                --em;
            }
            ++j;
        }
        const double gamma = j < asc.size() ? asc[i].confidence + (asc[j].confidence - asc[i].confidence) / 2.0
                                            : std::numeric_limits<double>::infinity();
        if (static_cast<double>(em) > best.em_score) best = {gamma, static_cast<double>(em)};
        i = j;
    }
    best.em_score /= static_cast<double>(asc.size());
    return best;
}

void write_curve_csv(const RiskCoverageCurve& curve, std::ostream& out) {
    out << "coverage,risk,threshold\n";
    for (const auto& p : curve.points) {
        out << format_double(p.coverage) << ',' << format_double(p.risk) << ',' << format_double(p.threshold)
            << '\n';
    }
}

void write_reliability_csv(std::span<const ReliabilityBin> bins, std::ostream& out) {
    out << "bin_lo,bin_hi,count,mean_conf,accuracy\n";
    for (const auto& b : bins) {
        out << format_double(b.lo) << ',' << format_double(b.hi) << ',' << b.count << ','
            << (b.mean_confidence ? format_double(*b.mean_confidence) : "") << ','
            << (b.accuracy ? format_double(*b.accuracy) : "") << '\n';
    }
}

}  // namespace selqa
