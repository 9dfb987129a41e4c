#pragma once

// Self-supervised sample construction for the two auxiliary heads.
//
// Utterance discrimination (UD): does a candidate utterance belong to this
// dialogue context? Positive = the true x_u; negatives are uniform utterances
// from other dialogues of the same (same-language) corpus.
//
// Speaker discrimination (SD): is this context the candidate speaker's own
// side of the conversation? Positive pairs x_u with its speaker's turns,
// negative with the other speaker's turns.

#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "nct/context.hpp"
#include "nct/corpus.hpp"
#include "nct/rng.hpp"

namespace nct {

enum class AuxTask { kUd, kSd };

struct LabeledSample {
    AuxTask task = AuxTask::kUd;
    std::vector<Utterance> context;  // oldest first; may be empty for UD
    Utterance candidate;
    int label = 0;  // 1 = positive
    std::string dialogue_id;
};

namespace detail {

inline std::vector<Utterance> gather(const std::vector<Utterance>& side,
                                     const std::vector<std::size_t>& idx) {
    std::vector<Utterance> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(side[i]);
    return out;
}

}  // namespace detail

// One positive plus `negatives` negatives for dialogue d_idx, turn u (1-based).
// The corpus must hold at least two dialogues so a negative pool exists.
inline std::vector<LabeledSample> make_ud_samples(
    const std::vector<Dialogue>& corpus, std::size_t d_idx, std::size_t u,
    std::size_t w, Side side, std::mt19937_64& rng, std::size_t negatives = 1) {
    if (d_idx >= corpus.size())
        throw std::invalid_argument("make_ud_samples: dialogue index " +
                                    std::to_string(d_idx) + " outside corpus of " +
                                    std::to_string(corpus.size()));
    if (corpus.size() < 2)
        throw std::invalid_argument(
            "make_ud_samples: need at least two dialogues for negatives");
    const Dialogue& d = corpus[d_idx];
    const std::vector<Utterance>& utts = d.side(side);
    ContextBundle b = build_context(d, u, w);

    std::vector<LabeledSample> out;
    LabeledSample pos;
    pos.task = AuxTask::kUd;
    pos.context = detail::gather(utts, b.full);
    pos.candidate = utts[u - 1];
    pos.label = 1;
    pos.dialogue_id = d.id;
    out.push_back(std::move(pos));

    for (std::size_t k = 0; k < negatives; ++k) {
        std::size_t other = rand_index(rng, corpus.size() - 1);
        if (other >= d_idx) ++other;  // uniform over the other dialogues
        const std::vector<Utterance>& pool = corpus[other].side(side);
        LabeledSample neg;
        neg.task = AuxTask::kUd;
        neg.context = detail::gather(utts, b.full);
        neg.candidate = pool[rand_index(rng, pool.size())];
        neg.label = 0;
        neg.dialogue_id = d.id;
        out.push_back(std::move(neg));
    }
    return out;
}

// Positive/negative pair for turn u, or nothing when either speaker context
// is still empty (u < 3).
inline std::vector<LabeledSample> make_sd_samples(const Dialogue& d,
                                                  std::size_t u, Side side) {
    const std::vector<Utterance>& utts = d.side(side);
    ContextBundle b = build_context(d, u, kUnboundedWindow);
    if (b.s1.empty() || b.s2.empty()) return {};
    const Utterance& cand = utts[u - 1];
    const std::vector<std::size_t>& own = cand.speaker == "s1" ? b.s1 : b.s2;
    const std::vector<std::size_t>& other = cand.speaker == "s1" ? b.s2 : b.s1;

    std::vector<LabeledSample> out(2);
    out[0].task = AuxTask::kSd;
    out[0].context = detail::gather(utts, own);
    out[0].candidate = cand;
    out[0].label = 1;
    out[0].dialogue_id = d.id;
    out[1].task = AuxTask::kSd;
    out[1].context = detail::gather(utts, other);
    out[1].candidate = cand;
    out[1].label = 0;
    out[1].dialogue_id = d.id;
    return out;
}

}  // namespace nct
