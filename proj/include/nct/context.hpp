#pragma once

// Context assembly around a current utterance x_u. The full (translation /
// dialogue-discrimination) context is the last min(w, u-1) preceding turns.
// The speaker-specific contexts partition the entire unwindowed history by
// speaker: s1 owns the odd turns, s2 the even turns.

#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "nct/corpus.hpp"

namespace nct {

inline constexpr std::size_t kUnboundedWindow =
    std::numeric_limits<std::size_t>::max();

struct ContextBundle {
    // 0-based indices into the dialogue's turn list, oldest first
    std::vector<std::size_t> full;
    std::vector<std::size_t> s1;
    std::vector<std::size_t> s2;
    std::size_t window = 0;
};

// u is 1-based; the bundle never includes turn u itself or anything later.
inline ContextBundle build_context(const Dialogue& d, std::size_t u,
                                   std::size_t w) {
    if (u < 1 || u > d.turns.size())
        throw std::invalid_argument("build_context: turn " + std::to_string(u) +
                                    " outside dialogue '" + d.id + "' of " +
                                    std::to_string(d.turns.size()) + " turns");
    ContextBundle b;
    b.window = w;
    const std::size_t preceding = u - 1;
    const std::size_t take = w < preceding ? w : preceding;
    for (std::size_t i = preceding - take; i < preceding; ++i) b.full.push_back(i);
    for (std::size_t i = 0; i < preceding; ++i) {
        // turn i+1 is odd for even i
        if (i % 2 == 0) b.s1.push_back(i);
        else b.s2.push_back(i);
    }
    return b;
}

}  // namespace nct
