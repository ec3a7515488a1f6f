#pragma once

#include <cstdint>
#include <limits>
#include <random>

namespace pvscan {

// Unbiased draw in [0, bound) by rejection, so results do not depend on the
// standard library's distribution implementation.
inline std::uint64_t bounded_draw(std::mt19937_64& rng, std::uint64_t bound) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t v;
    do {
        v = rng();
    } while (v >= limit);
    return v % bound;
}

}  // namespace pvscan
