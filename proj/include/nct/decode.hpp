#pragma once

// Greedy and beam decoding.
//
// Hypotheses are scored by the plain sum of token log probabilities, with no
// length normalization. <pad>, <cls> and <sep> are never proposed; emitting
// <eos> finishes a hypothesis and its log probability is charged. A
// hypothesis that reaches the length cap is force-finished as is, without an
// <eos> charge. Ties in candidate scores resolve toward the smaller token id,
// so decoding is deterministic.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "nct/batch.hpp"
#include "nct/corpus.hpp"
#include "nct/model.hpp"
#include "nct/tensor.hpp"
#include "nct/vocab.hpp"

namespace nct {

// Default cap on emitted target tokens: twice the source utterance length
// plus eight.
inline std::size_t default_len_cap(const Batch& src) {
    const std::size_t span = src.len() - src.boundary;  // <sep> x_u <eos>
    const std::size_t xu = span >= 2 ? span - 2 : 1;
    return 2 * xu + 8;
}

inline bool proposable_target(int id) {
    return id != Vocabulary::kPad && id != Vocabulary::kCls &&
           id != Vocabulary::kSep;
}

struct DecodeResult {
    std::vector<int> tokens;  // emitted ids, <eos> not included
    double score = 0.0;       // sum of token log probabilities
    bool ended_with_eos = false;
};

namespace detail {

// Next-token distribution after the emitted prefix, as plain probabilities.
inline std::vector<double> next_token_probs(ModelParams& params,
                                            const Tensor& enc, const Batch& src,
                                            const std::vector<int>& prefix) {
    Batch tin;
    tin.tok.push_back(Vocabulary::kEos);
    tin.tok.insert(tin.tok.end(), prefix.begin(), prefix.end());
    tin.pos.resize(tin.tok.size());
    for (std::size_t i = 0; i < tin.tok.size(); ++i)
        tin.pos[i] = static_cast<int>(i);
    tin.spk.assign(tin.tok.size(), src.tgt_spk);
    tin.trn.assign(tin.tok.size(), src.tgt_trn);
    Tape tape(false);
    Tensor probs = decode(tape, params, tin, enc);
    const std::size_t row = tin.tok.size() - 1;
    std::vector<double> out(params.cfg.vocab);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = probs.at(row, k);
    return out;
}

inline double log_prob(double p) { return std::log(std::max(p, kProbFloor)); }

struct Hyp {
    std::vector<int> tokens;
    double score = 0.0;
    bool done = false;
    bool eos = false;
};

}  // namespace detail

// Teacher-forced log probability of a target sequence given the source
// batch. When `terminated` the <eos> after the last token is charged too,
// matching the score of a beam hypothesis that ended with <eos>.
inline double score_sequence(ModelParams& params, const Batch& src,
                             const std::vector<int>& tokens,
                             bool terminated = true) {
    Batch like = src;
    like.gold = tokens;
    if (terminated) like.gold.push_back(Vocabulary::kEos);
    if (like.gold.empty())
        throw std::invalid_argument("score_sequence: empty sequence");
    Tape tape(false);
    Tensor enc = encode_flat(tape, params, src);
    Tensor probs = decode(tape, params, decoder_inputs(like), enc);
    double total = 0.0;
    for (std::size_t t = 0; t < like.gold.size(); ++t)
        total += detail::log_prob(probs.at(t, static_cast<std::size_t>(like.gold[t])));
    return total;
}

inline DecodeResult greedy_decode(ModelParams& params, const Batch& src,
                                  std::size_t max_len = 0) {
    std::size_t cap = max_len == 0 ? default_len_cap(src) : max_len;
    cap = std::min(cap, params.cfg.max_seq - 1);
    Tape tape(false);
    Tensor enc = encode_flat(tape, params, src);

    DecodeResult res;
    while (res.tokens.size() < cap) {
        std::vector<double> probs =
            detail::next_token_probs(params, enc, src, res.tokens);
        int best = -1;
        double best_p = -1.0;
        for (std::size_t k = 0; k < probs.size(); ++k) {
            if (!proposable_target(static_cast<int>(k))) continue;
            if (probs[k] > best_p) {
                best_p = probs[k];
                best = static_cast<int>(k);
            }
        }
        res.score += detail::log_prob(best_p);
        if (best == Vocabulary::kEos) {
            res.ended_with_eos = true;
            break;
        }
        res.tokens.push_back(best);
    }
    return res;
}

inline DecodeResult beam_decode(ModelParams& params, const Batch& src,
                                std::size_t beam, std::size_t max_len = 0) {
    if (beam == 0) throw std::invalid_argument("beam_decode: beam must be >= 1");
    std::size_t cap = max_len == 0 ? default_len_cap(src) : max_len;
    cap = std::min(cap, params.cfg.max_seq - 1);
    Tape tape(false);
    Tensor enc = encode_flat(tape, params, src);

    std::vector<detail::Hyp> beams(1);
    for (std::size_t step = 0; step < cap; ++step) {
        bool any_live = false;
        for (const detail::Hyp& h : beams)
            if (!h.done) any_live = true;
        if (!any_live) break;

        std::vector<detail::Hyp> pool;
        for (const detail::Hyp& h : beams) {
            if (h.done) {
                pool.push_back(h);
                continue;
            }
            std::vector<double> probs =
                detail::next_token_probs(params, enc, src, h.tokens);
            for (std::size_t k = 0; k < probs.size(); ++k) {
                if (!proposable_target(static_cast<int>(k))) continue;
                detail::Hyp next = h;
                next.score += detail::log_prob(probs[k]);
                if (static_cast<int>(k) == Vocabulary::kEos) {
                    next.done = true;
                    next.eos = true;
                } else {
                    next.tokens.push_back(static_cast<int>(k));
                }
                pool.push_back(std::move(next));
            }
        }
        // expansions were generated in (hypothesis, ascending id) order, so a
        // stable sort keeps ties deterministic
        std::stable_sort(pool.begin(), pool.end(),
                         [](const detail::Hyp& a, const detail::Hyp& b) {
                             return a.score > b.score;
                         });
        if (pool.size() > beam) pool.resize(beam);
        beams = std::move(pool);
    }

    const detail::Hyp& best = beams.front();
    DecodeResult res;
    res.tokens = best.tokens;
    res.score = best.score;
    res.ended_with_eos = best.eos;
    return res;
}

struct TranslationOptions {
    std::size_t window = 3;
    std::size_t beam = 4;     // 1 = greedy
    std::size_t max_len = 0;  // 0 = default cap
};

// Decode one dialogue turn into target-side text.
inline std::string translate_turn(ModelParams& params, const Vocabulary& vocab,
                                  const Dialogue& d, std::size_t u,
                                  const TranslationOptions& opts = {}) {
    Batch src = encode_translation_input(d, u, opts.window, vocab,
                                         params.cfg.max_seq, params.cfg.max_turns);
    DecodeResult res = opts.beam <= 1
                           ? greedy_decode(params, src, opts.max_len)
                           : beam_decode(params, src, opts.beam, opts.max_len);
    return vocab.decode(res.tokens);
}

}  // namespace nct
