#pragma once

// Context-aware translation model over a flat [context; utterance] input.
//
// Input embedding is the sum of four tables: word + position + speaker +
// turn. The encoder is pre-norm; its first layer self-attends over the whole
// flat sequence, every later layer masks the context keys to exactly zero
// probability, so layer 1 is the only path for context to reach the
// utterance states. The decoder is a standard pre-norm causal transformer
// with cross attention over the encoder's utterance-span states.
//
// Two pooled views feed the auxiliary heads: a candidate utterance is the
// mean of its token states, a context sequence is represented by the state
// of its leading <cls> token. Each head is a logistic probe over the
// concatenation [candidate; context].

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "nct/batch.hpp"
#include "nct/rng.hpp"
#include "nct/tensor.hpp"
#include "nct/vocab.hpp"

namespace nct {

struct ModelConfig {
    std::size_t layers = 2;
    std::size_t hidden = 32;
    std::size_t ffn = 64;
    std::size_t heads = 4;
    std::size_t vocab = 0;  // filled from the trained vocabulary
    std::size_t max_seq = 256;
    std::size_t max_turns = 64;
    double dropout = 0.1;
    double ln_eps = 1e-6;

    void validate() const {
        if (layers == 0) throw std::invalid_argument("model: layers must be >= 1");
        if (heads == 0 || hidden % heads != 0)
            throw std::invalid_argument("model: hidden " + std::to_string(hidden) +
                                        " not divisible by heads " +
                                        std::to_string(heads));
        if (vocab < Vocabulary::kNumSpecials)
            throw std::invalid_argument("model: vocab size " +
                                        std::to_string(vocab) + " too small");
        if (max_seq < 4) throw std::invalid_argument("model: max_seq too small");
        if (max_turns < 1) throw std::invalid_argument("model: max_turns too small");
        if (dropout < 0.0 || dropout >= 1.0)
            throw std::invalid_argument("model: dropout outside [0,1)");
    }
};

struct AttentionBlock {
    Tensor wq, wk, wv, wo;  // each (hidden, hidden)
};

struct EncoderLayer {
    Tensor ln1_g, ln1_b;
    AttentionBlock att;
    Tensor ln2_g, ln2_b;
    Tensor w1, b1, w2, b2;  // position-wise feed-forward
};

struct DecoderLayer {
    Tensor ln1_g, ln1_b;
    AttentionBlock self_att;
    Tensor ln2_g, ln2_b;
    AttentionBlock cross_att;
    Tensor ln3_g, ln3_b;
    Tensor w1, b1, w2, b2;
};

struct ModelParams {
    ModelConfig cfg;
    Tensor we, pe, se, te;
    std::vector<EncoderLayer> enc;
    Tensor enc_ln_g, enc_ln_b;
    std::vector<DecoderLayer> dec;
    Tensor dec_ln_g, dec_ln_b;
    Tensor out_w;  // (vocab, hidden)
    Tensor out_b;  // (vocab)
    Tensor ud_w;   // (2*hidden)
    Tensor sd_w;   // (2*hidden)

    static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);

    // Canonical enumeration; checkpoint layout and optimizer slots follow it.
    template <typename Fn>
    void for_each_param(Fn&& fn) {
        fn("we", we);
        fn("pe", pe);
        fn("se", se);
        fn("te", te);
        for (std::size_t l = 0; l < enc.size(); ++l) {
            const std::string p = "enc." + std::to_string(l) + ".";
            EncoderLayer& e = enc[l];
            fn(p + "ln1.g", e.ln1_g);
            fn(p + "ln1.b", e.ln1_b);
            fn(p + "att.wq", e.att.wq);
            fn(p + "att.wk", e.att.wk);
            fn(p + "att.wv", e.att.wv);
            fn(p + "att.wo", e.att.wo);
            fn(p + "ln2.g", e.ln2_g);
            fn(p + "ln2.b", e.ln2_b);
            fn(p + "ffn.w1", e.w1);
            fn(p + "ffn.b1", e.b1);
            fn(p + "ffn.w2", e.w2);
            fn(p + "ffn.b2", e.b2);
        }
        fn("enc.final_ln.g", enc_ln_g);
        fn("enc.final_ln.b", enc_ln_b);
        for (std::size_t l = 0; l < dec.size(); ++l) {
            const std::string p = "dec." + std::to_string(l) + ".";
            DecoderLayer& d = dec[l];
            fn(p + "ln1.g", d.ln1_g);
            fn(p + "ln1.b", d.ln1_b);
            fn(p + "self.wq", d.self_att.wq);
            fn(p + "self.wk", d.self_att.wk);
            fn(p + "self.wv", d.self_att.wv);
            fn(p + "self.wo", d.self_att.wo);
            fn(p + "ln2.g", d.ln2_g);
            fn(p + "ln2.b", d.ln2_b);
            fn(p + "cross.wq", d.cross_att.wq);
            fn(p + "cross.wk", d.cross_att.wk);
            fn(p + "cross.wv", d.cross_att.wv);
            fn(p + "cross.wo", d.cross_att.wo);
            fn(p + "ln3.g", d.ln3_g);
            fn(p + "ln3.b", d.ln3_b);
            fn(p + "ffn.w1", d.w1);
            fn(p + "ffn.b1", d.b1);
            fn(p + "ffn.w2", d.w2);
            fn(p + "ffn.b2", d.b2);
        }
        fn("dec.final_ln.g", dec_ln_g);
        fn("dec.final_ln.b", dec_ln_b);
        fn("out.w", out_w);
        fn("out.b", out_b);
        fn("ud.w", ud_w);
        fn("sd.w", sd_w);
    }

    std::vector<Tensor> parameters() {
        std::vector<Tensor> out;
        for_each_param([&out](const std::string&, Tensor& t) { out.push_back(t); });
        return out;
    }

    std::vector<std::string> parameter_names() {
        std::vector<std::string> out;
        for_each_param([&out](const std::string& n, Tensor&) { out.push_back(n); });
        return out;
    }

    void zero_grads() {
        for_each_param([](const std::string&, Tensor& t) { t.zero_grad(); });
    }
};

namespace detail {

inline Tensor glorot(Shape shape, std::mt19937_64& rng) {
    const double fan_in = static_cast<double>(shape.back());
    const double fan_out = static_cast<double>(shape.front());
    Tensor t = randn(std::move(shape), rng, std::sqrt(2.0 / (fan_in + fan_out)));
    t.set_requires_grad(true);
    return t;
}

inline Tensor gain_ones(std::size_t n) {
    Tensor t = Tensor::from({n}, std::vector<double>(n, 1.0));
    t.set_requires_grad(true);
    return t;
}

inline Tensor zeros_param(Shape shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    t.set_requires_grad(true);
    return t;
}

// Encoder attention starts with wk equal to wq, which makes the score form
// x·Wq·Wkᵀ·x'ᵀ positive semi-definite: tokens attend to copies of themselves
// before any training. Self-match attention is the seed of every context
// comparison this model is asked to learn, and growing it from two
// independent random projections costs most of a stage's step budget. The
// two matrices are separate parameters and free to diverge; wk is drawn and
// discarded so the construction consumes the generator exactly like the
// untied blocks.
inline AttentionBlock init_attention(std::size_t d, std::mt19937_64& rng,
                                     bool tie_qk = false) {
    AttentionBlock a{glorot({d, d}, rng), glorot({d, d}, rng),
                     glorot({d, d}, rng), glorot({d, d}, rng)};
    if (tie_qk) {
        a.wk = Tensor::from(a.wq.shape(),
                            std::vector<double>(a.wq.data(),
                                                a.wq.data() + d * d));
        a.wk.set_requires_grad(true);
    }
    return a;
}

}  // namespace detail

inline ModelParams ModelParams::init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng = stream_rng(seed, 0, 0, Stream::kParamInit);
    const std::size_t d = cfg.hidden;
    ModelParams p;
    p.cfg = cfg;
    const double emb_std = 1.0 / std::sqrt(static_cast<double>(d));
    auto emb = [&](Shape s) {
        Tensor t = randn(std::move(s), rng, emb_std);
        t.set_requires_grad(true);
        return t;
    };
    p.we = emb({cfg.vocab, d});
    p.pe = emb({cfg.max_seq, d});
    p.se = emb({2, d});
    p.te = emb({cfg.max_turns, d});
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        EncoderLayer e;
        e.ln1_g = detail::gain_ones(d);
        e.ln1_b = detail::zeros_param({d});
        e.att = detail::init_attention(d, rng, true);
        e.ln2_g = detail::gain_ones(d);
        e.ln2_b = detail::zeros_param({d});
        e.w1 = detail::glorot({d, cfg.ffn}, rng);
        e.b1 = detail::zeros_param({cfg.ffn});
        e.w2 = detail::glorot({cfg.ffn, d}, rng);
        e.b2 = detail::zeros_param({d});
        p.enc.push_back(std::move(e));
    }
    p.enc_ln_g = detail::gain_ones(d);
    p.enc_ln_b = detail::zeros_param({d});
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        DecoderLayer dl;
        dl.ln1_g = detail::gain_ones(d);
        dl.ln1_b = detail::zeros_param({d});
        dl.self_att = detail::init_attention(d, rng);
        dl.ln2_g = detail::gain_ones(d);
        dl.ln2_b = detail::zeros_param({d});
        dl.cross_att = detail::init_attention(d, rng);
        dl.ln3_g = detail::gain_ones(d);
        dl.ln3_b = detail::zeros_param({d});
        dl.w1 = detail::glorot({d, cfg.ffn}, rng);
        dl.b1 = detail::zeros_param({cfg.ffn});
        dl.w2 = detail::glorot({cfg.ffn, d}, rng);
        dl.b2 = detail::zeros_param({d});
        p.dec.push_back(std::move(dl));
    }
    p.dec_ln_g = detail::gain_ones(d);
    p.dec_ln_b = detail::zeros_param({d});
    p.out_w = detail::glorot({cfg.vocab, d}, rng);
    p.out_b = detail::zeros_param({cfg.vocab});
    p.ud_w = detail::glorot({2 * d}, rng);
    p.sd_w = detail::glorot({2 * d}, rng);
    return p;
}

// Attention probability maps captured during a forward pass, indexed
// [layer][head], each of shape (queries, keys).
struct ForwardTrace {
    std::vector<std::vector<Tensor>> enc_attn;
    std::vector<std::vector<Tensor>> dec_self_attn;
    std::vector<std::vector<Tensor>> dec_cross_attn;
};

struct RunOptions {
    bool training = false;
    std::mt19937_64* rng = nullptr;  // required when training with dropout > 0
    bool ablate_layer1_context = false;  // test hook: mask context at layer 1 too
    ForwardTrace* trace = nullptr;
};

namespace detail {

inline Tensor maybe_dropout(Tape& tape, const Tensor& x, const ModelConfig& cfg,
                            const RunOptions& opts) {
    if (!opts.training || cfg.dropout == 0.0) return x;
    if (!opts.rng)
        throw std::invalid_argument("training forward pass needs an rng");
    return dropout(tape, x, cfg.dropout, *opts.rng, true);
}

inline Tensor multi_head_attention(Tape& tape, const Tensor& q_in,
                                   const Tensor& kv_in,
                                   const AttentionBlock& blk, std::size_t heads,
                                   const BoolMask* mask,
                                   std::vector<Tensor>* trace_heads) {
    const std::size_t d = q_in.shape()[1];
    const std::size_t dh = d / heads;
    Tensor q = matmul(tape, q_in, blk.wq);
    Tensor k = matmul(tape, kv_in, blk.wk);
    Tensor v = matmul(tape, kv_in, blk.wv);
    std::vector<Tensor> ctx;
    ctx.reserve(heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(tape, q, h * dh, dh);
        Tensor kh = slice_cols(tape, k, h * dh, dh);
        Tensor vh = slice_cols(tape, v, h * dh, dh);
        Tensor scores = affine(tape, matmul_nt(tape, qh, kh), scale, 0.0);
        Tensor probs = masked_softmax(tape, scores, mask);
        if (trace_heads) trace_heads->push_back(probs);
        ctx.push_back(matmul(tape, probs, vh));
    }
    Tensor merged = concat(tape, ctx, 1);
    return matmul(tape, merged, blk.wo);
}

inline Tensor encoder_layer_forward(Tape& tape, const Tensor& x,
                                    const EncoderLayer& layer,
                                    const ModelConfig& cfg, const BoolMask* mask,
                                    const RunOptions& opts,
                                    std::vector<Tensor>* trace_heads) {
    Tensor n1 = layer_norm(tape, x, layer.ln1_g, layer.ln1_b, cfg.ln_eps);
    Tensor att = multi_head_attention(tape, n1, n1, layer.att, cfg.heads, mask,
                                      trace_heads);
    Tensor h = add(tape, x, maybe_dropout(tape, att, cfg, opts));
    Tensor n2 = layer_norm(tape, h, layer.ln2_g, layer.ln2_b, cfg.ln_eps);
    Tensor f1 = relu(tape, add_rowwise(tape, matmul(tape, n2, layer.w1), layer.b1));
    Tensor f2 = add_rowwise(tape, matmul(tape, f1, layer.w2), layer.b2);
    return add(tape, h, maybe_dropout(tape, f2, cfg, opts));
}

}  // namespace detail

// Four-way embedding sum over parallel id rows.
inline Tensor embed(Tape& tape, ModelParams& p, const std::vector<int>& tok,
                    const std::vector<int>& pos, const std::vector<int>& spk,
                    const std::vector<int>& trn) {
    if (tok.size() != pos.size() || tok.size() != spk.size() ||
        tok.size() != trn.size())
        throw std::invalid_argument("embed: id rows differ in length");
    if (tok.empty()) throw std::invalid_argument("embed: empty sequence");
    Tensor w = embedding_lookup(tape, p.we, tok, "we");
    Tensor q = embedding_lookup(tape, p.pe, pos, "pe");
    Tensor s = embedding_lookup(tape, p.se, spk, "se");
    Tensor t = embedding_lookup(tape, p.te, trn, "te");
    return add(tape, add(tape, w, q), add(tape, s, t));
}

inline Tensor embed(Tape& tape, ModelParams& p, const Batch& b) {
    return embed(tape, p, b.tok, b.pos, b.spk, b.trn);
}

namespace detail {

inline Tensor encode_stack(Tape& tape, ModelParams& p, const Batch& b,
                           const RunOptions& opts, const BoolMask* layer1_mask,
                           const BoolMask* upper_mask) {
    Tensor x = maybe_dropout(tape, embed(tape, p, b), p.cfg, opts);
    if (opts.trace) opts.trace->enc_attn.assign(p.enc.size(), {});
    for (std::size_t l = 0; l < p.enc.size(); ++l) {
        const BoolMask* mask = l == 0 ? layer1_mask : upper_mask;
        std::vector<Tensor>* th = opts.trace ? &opts.trace->enc_attn[l] : nullptr;
        x = encoder_layer_forward(tape, x, p.enc[l], p.cfg, mask, opts, th);
    }
    return layer_norm(tape, x, p.enc_ln_g, p.enc_ln_b, p.cfg.ln_eps);
}

}  // namespace detail

// Flat context-aware encoding. Returns the states of the x_u span
// [boundary, len): the boundary <sep>, the utterance tokens and the <eos>.
inline Tensor encode_flat(Tape& tape, ModelParams& p, const Batch& b,
                          const RunOptions& opts = {}) {
    if (b.ctx_key_mask.size() != b.len())
        throw std::invalid_argument("encode_flat: batch lacks its context mask");
    BoolMask key_keep;
    key_keep.shape = {b.len()};
    key_keep.keep = b.ctx_key_mask;
    const BoolMask* l1 = opts.ablate_layer1_context ? &key_keep : nullptr;
    Tensor h = detail::encode_stack(tape, p, b, opts, l1, &key_keep);
    return slice_rows(tape, h, b.boundary, b.len() - b.boundary);
}

// Plain full-attention encoding of the whole sequence (classifier inputs).
inline Tensor encode_plain(Tape& tape, ModelParams& p, const Batch& b,
                           const RunOptions& opts = {}) {
    return detail::encode_stack(tape, p, b, opts, nullptr, nullptr);
}

// Teacher-forced decoder input: gold shifted right, <eos> as start symbol.
inline Batch decoder_inputs(const Batch& src) {
    if (src.gold.empty())
        throw std::invalid_argument("decoder_inputs: batch has no gold targets");
    Batch t;
    t.tok.push_back(Vocabulary::kEos);
    for (std::size_t i = 0; i + 1 < src.gold.size(); ++i)
        t.tok.push_back(src.gold[i]);
    t.pos.resize(t.tok.size());
    for (std::size_t i = 0; i < t.tok.size(); ++i) t.pos[i] = static_cast<int>(i);
    t.spk.assign(t.tok.size(), src.tgt_spk);
    t.trn.assign(t.tok.size(), src.tgt_trn);
    t.tgt_spk = src.tgt_spk;
    t.tgt_trn = src.tgt_trn;
    return t;
}

inline BoolMask causal_mask(std::size_t n) {
    BoolMask m;
    m.shape = {n, n};
    m.keep.assign(n * n, 0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) m.keep[i * n + j] = 1;
    return m;
}

// Causal decode over teacher-forced inputs; returns next-token probability
// rows (T, vocab).
inline Tensor decode(Tape& tape, ModelParams& p, const Batch& tgt_in,
                     const Tensor& enc_states, const RunOptions& opts = {}) {
    if (tgt_in.len() > p.cfg.max_seq)
        throw std::invalid_argument("decode: target length " +
                                    std::to_string(tgt_in.len()) +
                                    " exceeds max_seq");
    Tensor y = detail::maybe_dropout(tape, embed(tape, p, tgt_in), p.cfg, opts);
    BoolMask causal = causal_mask(tgt_in.len());
    if (opts.trace) {
        opts.trace->dec_self_attn.assign(p.dec.size(), {});
        opts.trace->dec_cross_attn.assign(p.dec.size(), {});
    }
    for (std::size_t l = 0; l < p.dec.size(); ++l) {
        DecoderLayer& dl = p.dec[l];
        std::vector<Tensor>* ts =
            opts.trace ? &opts.trace->dec_self_attn[l] : nullptr;
        std::vector<Tensor>* tc =
            opts.trace ? &opts.trace->dec_cross_attn[l] : nullptr;
        Tensor n1 = layer_norm(tape, y, dl.ln1_g, dl.ln1_b, p.cfg.ln_eps);
        Tensor self = detail::multi_head_attention(tape, n1, n1, dl.self_att,
                                                   p.cfg.heads, &causal, ts);
        y = add(tape, y, detail::maybe_dropout(tape, self, p.cfg, opts));
        Tensor n2 = layer_norm(tape, y, dl.ln2_g, dl.ln2_b, p.cfg.ln_eps);
        Tensor cross = detail::multi_head_attention(tape, n2, enc_states,
                                                    dl.cross_att, p.cfg.heads,
                                                    nullptr, tc);
        y = add(tape, y, detail::maybe_dropout(tape, cross, p.cfg, opts));
        Tensor n3 = layer_norm(tape, y, dl.ln3_g, dl.ln3_b, p.cfg.ln_eps);
        Tensor f1 = relu(tape, add_rowwise(tape, matmul(tape, n3, dl.w1), dl.b1));
        Tensor f2 = add_rowwise(tape, matmul(tape, f1, dl.w2), dl.b2);
        y = add(tape, y, detail::maybe_dropout(tape, f2, p.cfg, opts));
    }
    Tensor h = layer_norm(tape, y, p.dec_ln_g, p.dec_ln_b, p.cfg.ln_eps);
    Tensor logits = add_rowwise(tape, matmul_nt(tape, h, p.out_w), p.out_b);
    return softmax(tape, logits);
}

// Mean of the token states: the candidate-utterance representation.
inline Tensor pool_utterance(Tape& tape, const Tensor& states) {
    if (states.rank() != 2 || states.shape()[0] == 0)
        throw std::invalid_argument("pool_utterance: want a nonempty (T,d) matrix");
    return mean_axis(tape, states, 0);
}

// Leading <cls> state: the context representation.
inline Tensor pool_context(Tape& tape, const Tensor& states) {
    if (states.rank() != 2 || states.shape()[0] == 0)
        throw std::invalid_argument("pool_context: want a nonempty (T,d) matrix");
    return mean_axis(tape, slice_rows(tape, states, 0, 1), 0);
}

namespace detail {

inline Tensor probe_score(Tape& tape, const Tensor& w, const Tensor& cand_states,
                          const Tensor& ctx_states) {
    Tensor hx = pool_utterance(tape, cand_states);
    Tensor hc = pool_context(tape, ctx_states);
    return sigmoid(tape, dot(tape, w, concat(tape, {hx, hc}, 0)));
}

}  // namespace detail

// p(candidate belongs to this dialogue context), scalar in (0,1)
inline Tensor ud_score(Tape& tape, ModelParams& p, const Tensor& cand_states,
                       const Tensor& ctx_states) {
    return detail::probe_score(tape, p.ud_w, cand_states, ctx_states);
}

// p(context is the candidate speaker's own side), scalar in (0,1)
inline Tensor sd_score(Tape& tape, ModelParams& p, const Tensor& cand_states,
                       const Tensor& ctx_states) {
    return detail::probe_score(tape, p.sd_w, cand_states, ctx_states);
}

}  // namespace nct
