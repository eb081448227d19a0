#include "selqa/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>

#include "selqa/rng.hpp"
#include "selqa/stats.hpp"

namespace selqa {

namespace {

double sigmoid(double z) {
    return 1.0 / (1.0 + std::exp(-z));
}

// Remaining four probabilities: a random non-increasing split of part of the
// leftover mass, each capped by its predecessor.
void fill_tail(TopProbs& p, double top, const std::array<double, 4>& shape, double kept) {
    p[0] = top;
    const double rest = (1.0 - top) * kept;
    double prev = top;
    for (std::size_t i = 0; i < 4; ++i) {
        const double v = std::min(prev, rest * shape[i]);
        p[i + 1] = v;
        prev = v;
    }
}

std::string make_id(const std::string& prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "-%06zu", i);
    return prefix + buf;
}

}  // namespace

void DomainSpec::validate() const {
    if (n == 0) throw SyntheticError("synthetic domain size must be at least 1");
    if (domain.empty()) throw SyntheticError("synthetic domain needs a name");
    if (passage_len_min < 1 || passage_len_max < passage_len_min) {
        throw SyntheticError("invalid passage length range");
    }
    if (!(latent_sd > 0.0)) throw SyntheticError("latent_sd must be positive");
    if (!(overconfidence > 0.0)) throw SyntheticError("overconfidence must be positive");
    if (dropout_masks == 1) throw SyntheticError("dropout needs at least two masks");
    if (!(dropout_noise >= 0.0)) throw SyntheticError("dropout_noise must be non-negative");
    if (!(answerable_fraction >= 0.0 && answerable_fraction <= 1.0)) {
        throw SyntheticError("answerable_fraction must lie in [0, 1]");
    }
}

RecordSet generate_synthetic(const DomainSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(derive_seed(seed, "synthetic:" + spec.domain));
    std::normal_distribution<double> latent(spec.latent_mean, spec.latent_sd);
    std::normal_distribution<double> unit_normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> passage(spec.passage_len_min, spec.passage_len_max);
    std::uniform_int_distribution<int> answer_len(1, 8);

    const std::string prefix = spec.id_prefix.empty() ? spec.domain : spec.id_prefix;
    RecordSet set;
    set.provenance = "synthetic:" + spec.domain + ":seed=" + std::to_string(seed);
    set.records.reserve(spec.n);
    for (std::size_t i = 0; i < spec.n; ++i) {
        PredictionRecord r;
        r.id = make_id(prefix, i);
        r.domain = spec.domain;

        const bool answerable = unit(rng) < spec.answerable_fraction || spec.answerable_fraction >= 1.0;
        double z = latent(rng);
        if (!answerable) z -= 1.0;
        const double q = sigmoid(z);
        const bool hit = unit(rng) < q;
        const double conf = 1.0 - std::pow(1.0 - q, spec.overconfidence);

        std::array<double, 4> shape{};
        for (double& s : shape) s = unit(rng);
        std::sort(shape.begin(), shape.end(), std::greater<>());
        const double shape_sum = shape[0] + shape[1] + shape[2] + shape[3];
        for (double& s : shape) s /= shape_sum;
        const double kept = 0.5 + 0.5 * unit(rng);
        fill_tail(r.top_probs, conf, shape, kept);

        r.passage_len = passage(rng);
        r.prediction_len = answer_len(rng);
        r.correct = answerable && hit;
        if (spec.answerable_fraction < 1.0) r.answerable = answerable;

        if (spec.dropout_masks > 0) {
            const double sd = spec.dropout_noise * std::sqrt(conf * (1.0 - conf)) * spec.overconfidence;
            std::vector<double> probs(spec.dropout_masks);
            for (double& p : probs) p = std::clamp(conf + sd * unit_normal(rng), 0.0, 1.0);
            const double m = stats::mean(probs);
            TopProbs mean_top{};
            fill_tail(mean_top, m, shape, kept);
            r.dropout_probs = std::move(probs);
            r.dropout_mean_top_probs = mean_top;
        }
        set.records.push_back(std::move(r));
    }
    return set;
}

}  // namespace selqa
