#pragma once

// Turning dialogue turns into model-ready id sequences.
//
// Translation input is the flat concatenation of the windowed context and the
// current utterance, each context utterance followed by <sep>:
//   [ctx_1] <sep> [ctx_2] <sep> ... [ctx_k] <sep> [x_u] <eos>
// `boundary` is the index of the <sep> directly before x_u (0 when the
// context is empty); the x_u span is [boundary, len). If the sequence would
// exceed max_seq, whole context utterances are dropped oldest-first; x_u is
// never truncated.

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "nct/context.hpp"
#include "nct/corpus.hpp"
#include "nct/samples.hpp"
#include "nct/vocab.hpp"

namespace nct {

struct Batch {
    std::vector<int> tok;  // token ids
    std::vector<int> pos;  // position row ids, 0..len-1
    std::vector<int> spk;  // speaker row ids (0 = s1, 1 = s2)
    std::vector<int> trn;  // turn row ids, clamped to the table size
    std::size_t boundary = 0;
    // keep-mask for encoder layers >= 2: true exactly on the x_u span
    std::vector<std::uint8_t> ctx_key_mask;
    std::vector<int> gold;  // target ids, <eos>-terminated (translation only)
    int tgt_spk = 0;
    int tgt_trn = 0;

    std::size_t len() const { return tok.size(); }
};

namespace detail {

inline int turn_row(int turn, std::size_t max_turns) {
    if (turn < 1) throw std::invalid_argument("turn ids are 1-based");
    std::size_t t = static_cast<std::size_t>(turn);
    if (t > max_turns) t = max_turns;  // deep turns clamp to the last row
    return static_cast<int>(t - 1);
}

inline void push_ids(Batch& b, const std::vector<int>& toks, int spk, int trn) {
    for (int t : toks) {
        b.tok.push_back(t);
        b.spk.push_back(spk);
        b.trn.push_back(trn);
    }
}

inline void finish_positions(Batch& b, std::size_t max_seq,
                             const std::string& what) {
    if (b.tok.size() > max_seq)
        throw std::invalid_argument(what + ": sequence of " +
                                    std::to_string(b.tok.size()) +
                                    " tokens exceeds max length " +
                                    std::to_string(max_seq));
    b.pos.resize(b.tok.size());
    for (std::size_t i = 0; i < b.pos.size(); ++i) b.pos[i] = static_cast<int>(i);
}

}  // namespace detail

inline Batch encode_translation_input(const Dialogue& d, std::size_t u,
                                      std::size_t w, const Vocabulary& vocab,
                                      std::size_t max_seq,
                                      std::size_t max_turns) {
    ContextBundle bundle = build_context(d, u, w);
    const Utterance& xu = d.turns[u - 1];
    const std::vector<int> xu_ids = vocab.encode(xu.text);
    if (xu_ids.empty())
        throw std::invalid_argument("encode_translation_input: turn " +
                                    std::to_string(u) + " of dialogue '" + d.id +
                                    "' encodes to nothing");
    const int xu_spk = speaker_id(xu.speaker);
    const int xu_trn = detail::turn_row(xu.turn, max_turns);

    std::vector<std::vector<int>> ctx_ids;
    for (std::size_t i : bundle.full) ctx_ids.push_back(vocab.encode(d.turns[i].text));

    // drop oldest context utterances until the whole thing fits
    std::size_t first = 0;
    auto total = [&]() {
        std::size_t n = xu_ids.size() + 2;  // boundary <sep> and final <eos>
        for (std::size_t i = first; i < ctx_ids.size(); ++i)
            n += ctx_ids[i].size() + 1;  // utterance plus its trailing <sep>
        n -= ctx_ids.size() > first ? 1 : 0;  // last ctx <sep> is the boundary one
        return n;
    };
    while (total() > max_seq && first < ctx_ids.size()) ++first;

    Batch b;
    for (std::size_t i = first; i < ctx_ids.size(); ++i) {
        const Utterance& cu = d.turns[bundle.full[i]];
        detail::push_ids(b, ctx_ids[i], speaker_id(cu.speaker),
                         detail::turn_row(cu.turn, max_turns));
        if (i + 1 < ctx_ids.size()) {
            // separator between context utterances keeps the preceding ids
            b.tok.push_back(Vocabulary::kSep);
            b.spk.push_back(speaker_id(cu.speaker));
            b.trn.push_back(detail::turn_row(cu.turn, max_turns));
        }
    }
    // the boundary <sep> opens the x_u span and carries x_u's ids
    b.boundary = b.tok.size();
    b.tok.push_back(Vocabulary::kSep);
    b.spk.push_back(xu_spk);
    b.trn.push_back(xu_trn);
    detail::push_ids(b, xu_ids, xu_spk, xu_trn);
    b.tok.push_back(Vocabulary::kEos);
    b.spk.push_back(xu_spk);
    b.trn.push_back(xu_trn);
    detail::finish_positions(b, max_seq, "encode_translation_input");

    b.ctx_key_mask.assign(b.len(), 0);
    for (std::size_t i = b.boundary; i < b.len(); ++i) b.ctx_key_mask[i] = 1;

    b.tgt_spk = xu_spk;
    b.tgt_trn = xu_trn;
    if (d.bilingual()) {
        b.gold = vocab.encode(d.aligned[u - 1].text);
        b.gold.push_back(Vocabulary::kEos);
    }
    return b;
}

// Classifier context sequence: <cls> ctx_1 <sep> ctx_2 <sep> ... ctx_k.
// The <cls> slot borrows the first utterance's speaker/turn ids (s1/turn 1
// when the context is empty); separators keep the preceding utterance's ids.
// Oversized contexts drop whole oldest utterances.
inline Batch encode_classifier_context(const std::vector<Utterance>& ctx,
                                       const Vocabulary& vocab,
                                       std::size_t max_seq,
                                       std::size_t max_turns) {
    std::vector<std::vector<int>> ids;
    ids.reserve(ctx.size());
    for (const Utterance& u : ctx) ids.push_back(vocab.encode(u.text));
    std::size_t first = 0;
    auto total = [&]() {
        std::size_t n = 1;  // <cls>
        for (std::size_t i = first; i < ids.size(); ++i)
            n += ids[i].size() + (i > first ? 1 : 0);
        return n;
    };
    while (total() > max_seq && first < ids.size()) ++first;

    Batch b;
    const int cls_spk = first < ctx.size() ? speaker_id(ctx[first].speaker) : 0;
    const int cls_trn =
        first < ctx.size() ? detail::turn_row(ctx[first].turn, max_turns) : 0;
    b.tok.push_back(Vocabulary::kCls);
    b.spk.push_back(cls_spk);
    b.trn.push_back(cls_trn);
    for (std::size_t i = first; i < ids.size(); ++i) {
        if (i > first) {
            b.tok.push_back(Vocabulary::kSep);
            b.spk.push_back(speaker_id(ctx[i - 1].speaker));
            b.trn.push_back(detail::turn_row(ctx[i - 1].turn, max_turns));
        }
        detail::push_ids(b, ids[i], speaker_id(ctx[i].speaker),
                         detail::turn_row(ctx[i].turn, max_turns));
    }
    detail::finish_positions(b, max_seq, "encode_classifier_context");
    return b;
}

// Candidate sequence for the classifiers: just the utterance's tokens.
inline Batch encode_classifier_candidate(const Utterance& u,
                                         const Vocabulary& vocab,
                                         std::size_t max_seq,
                                         std::size_t max_turns) {
    std::vector<int> ids = vocab.encode(u.text);
    if (ids.empty())
        throw std::invalid_argument(
            "encode_classifier_candidate: utterance encodes to nothing");
    if (ids.size() > max_seq) ids.resize(max_seq);
    Batch b;
    detail::push_ids(b, ids, speaker_id(u.speaker),
                     detail::turn_row(u.turn, max_turns));
    detail::finish_positions(b, max_seq, "encode_classifier_candidate");
    return b;
}

// Context and candidate as one classifier sequence:
//   <cls> ctx_1 <sep> ... ctx_k <sep> [cand]
// so the pooled states can reflect interactions between the two. `boundary`
// marks the first candidate token; the <sep> before it carries the
// candidate's speaker/turn ids. Oversized inputs drop whole context
// utterances oldest-first, then trim the candidate's tail.
inline Batch encode_classifier_pair(const std::vector<Utterance>& ctx,
                                    const Utterance& cand,
                                    const Vocabulary& vocab,
                                    std::size_t max_seq,
                                    std::size_t max_turns) {
    std::vector<int> cand_ids = vocab.encode(cand.text);
    if (cand_ids.empty())
        throw std::invalid_argument(
            "encode_classifier_pair: candidate encodes to nothing");
    std::vector<std::vector<int>> ids;
    ids.reserve(ctx.size());
    for (const Utterance& u : ctx) ids.push_back(vocab.encode(u.text));

    std::size_t first = 0;
    auto total = [&]() {
        std::size_t n = 2 + cand_ids.size();  // <cls>, boundary <sep>, candidate
        for (std::size_t i = first; i < ids.size(); ++i)
            n += ids[i].size() + (i > first ? 1 : 0);
        return n;
    };
    while (total() > max_seq && first < ids.size()) ++first;
    if (total() > max_seq) cand_ids.resize(max_seq - 2);

    // Turn ids are rebased so the oldest kept context utterance sits at turn
    // 1 (relative spacing kept) and the candidate always occupies the slot
    // after the newest one. The candidate's position in its source dialogue
    // must not reach the scorer: a genuine continuation and a negative drawn
    // from another dialogue have to look positionally alike, differing only
    // in content and speaker.
    auto rebase = [&](int turn) {
        const int base = first < ctx.size() ? ctx[first].turn : turn;
        return detail::turn_row(std::max(turn - base + 1, 1), max_turns);
    };
    Batch b;
    const int cand_spk = speaker_id(cand.speaker);
    const int cand_trn = detail::turn_row(
        first < ctx.size() ? std::max(ctx.back().turn - ctx[first].turn, 0) + 2
                           : 1,
        max_turns);
    const int cls_spk = first < ctx.size() ? speaker_id(ctx[first].speaker) : cand_spk;
    const int cls_trn = first < ctx.size() ? rebase(ctx[first].turn) : cand_trn;
    b.tok.push_back(Vocabulary::kCls);
    b.spk.push_back(cls_spk);
    b.trn.push_back(cls_trn);
    for (std::size_t i = first; i < ids.size(); ++i) {
        if (i > first) {
            b.tok.push_back(Vocabulary::kSep);
            b.spk.push_back(speaker_id(ctx[i - 1].speaker));
            b.trn.push_back(rebase(ctx[i - 1].turn));
        }
        detail::push_ids(b, ids[i], speaker_id(ctx[i].speaker),
                         rebase(ctx[i].turn));
    }
    b.tok.push_back(Vocabulary::kSep);
    b.spk.push_back(cand_spk);
    b.trn.push_back(cand_trn);
    b.boundary = b.tok.size();
    detail::push_ids(b, cand_ids, cand_spk, cand_trn);
    detail::finish_positions(b, max_seq, "encode_classifier_pair");
    return b;
}

}  // namespace nct
