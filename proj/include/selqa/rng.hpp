#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace selqa {

using Rng = std::mt19937_64;

// Derives an independent stream seed from (master, purpose tag, index).
//
// The tag is hashed with 64-bit FNV-1a, combined with the master seed and the
// golden-ratio-scaled index, and passed twice through the SplitMix64
// finalizer. Every random stream in the toolkit is seeded this way, so
// changing one consumer never shifts another consumer's draws.
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::uint64_t index = 0);

inline Rng make_rng(std::uint64_t master, std::string_view tag, std::uint64_t index = 0) {
    return Rng(derive_seed(master, tag, index));
}

}  // namespace selqa
