#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "selqa/records.hpp"

namespace selqa {

class SyntheticError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Parameters for one synthetic domain.
///
/// Each record draws a latent z ~ N(latent_mean, latent_sd); the probability
/// that the answer is correct is q = sigmoid(z), and the record is correct with
/// probability q. The reported top probability is c = 1 - (1 - q)^overconfidence:
/// a factor of 1 gives calibrated confidences, a factor above 1 inflates them.
/// Passage lengths are uniform over [passage_len_min, passage_len_max], which
/// lets a calibrator tell domains apart.
struct DomainSpec {
    std::string domain = "source";
    std::string id_prefix;  // defaults to the domain name
    std::size_t n = 1000;
    int passage_len_min = 80;
    int passage_len_max = 220;
    double latent_mean = 1.0;
    double latent_sd = 1.5;
    double overconfidence = 1.0;
    std::size_t dropout_masks = 0;   // 0 omits the dropout fields
    double dropout_noise = 0.15;     // per-mask spread, scaled by sqrt(c (1 - c)) * overconfidence
    double answerable_fraction = 1.0;  // below 1 adds the answerable flag; unanswerable records are wrong

    void validate() const;
};

RecordSet generate_synthetic(const DomainSpec& spec, std::uint64_t seed);

}  // namespace selqa
