#pragma once

// Loss construction for the three training stages.
//
//   stage 1   L = L_sent                       plain sentence pairs, no context
//   stage 2   L = L_sent + a1*L_ud + b1*L_sd   probes trained on monolingual
//                                              dialogues from both languages
//   stage 3   L = L_nct + lambda*(a2*L_ud + b2*L_sd)
//                       + (1-lambda)*(a1*L_ud_mono + b1*L_sd_mono)
//
// lambda ramps linearly from 1/N to 1 across the stage, shifting weight from
// the monolingual probe losses onto the in-domain ones. A component whose
// effective weight is zero (or whose sample pool is empty) is skipped
// entirely: it contributes no graph nodes and no gradient.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "nct/batch.hpp"
#include "nct/model.hpp"
#include "nct/samples.hpp"
#include "nct/tensor.hpp"
#include "nct/vocab.hpp"

namespace nct {

struct LossWeights {
    double alpha1 = 1.0;  // monolingual utterance-probe weight
    double beta1 = 0.2;   // monolingual speaker-probe weight
    double alpha2 = 0.2;  // in-domain utterance-probe weight (stage 3)
    double beta2 = 0.6;   // in-domain speaker-probe weight (stage 3)
};

// Linear ramp n/N over a stage of N steps, clamped to [0,1].
inline double lambda_schedule(std::uint64_t step, std::uint64_t total) {
    if (total == 0)
        throw std::invalid_argument("lambda_schedule: stage has zero steps");
    if (step >= total) return 1.0;
    return static_cast<double>(step) / static_cast<double>(total);
}

// Binary cross entropy of a scalar probability against a 0/1 label.
inline Tensor bce_loss(Tape& tape, const Tensor& score, int label) {
    if (label != 0 && label != 1)
        throw std::invalid_argument("bce_loss: label must be 0 or 1");
    if (label == 1) return affine(tape, log_floor(tape, score), -1.0, 0.0);
    Tensor one_minus = affine(tape, score, -1.0, 1.0);
    return affine(tape, log_floor(tape, one_minus), -1.0, 0.0);
}

// Arithmetic mean of scalar losses.
inline Tensor mean_scalars(Tape& tape, const std::vector<Tensor>& xs) {
    if (xs.empty()) throw std::invalid_argument("mean_scalars: empty list");
    Tensor acc = xs[0];
    for (std::size_t i = 1; i < xs.size(); ++i) acc = add(tape, acc, xs[i]);
    return affine(tape, acc, 1.0 / static_cast<double>(xs.size()), 0.0);
}

// Per-token smoothed cross entropy of one teacher-forced translation pass.
inline Tensor translation_loss(Tape& tape, ModelParams& params, const Batch& b,
                               double label_smoothing,
                               const RunOptions& opts = {}) {
    if (b.gold.empty())
        throw std::invalid_argument("translation_loss: batch has no gold side");
    Tensor enc = encode_flat(tape, params, b, opts);
    Batch tin = decoder_inputs(b);
    Tensor probs = decode(tape, params, tin, enc, opts);
    Tensor sum = sequence_cross_entropy_sum(tape, probs, b.gold, label_smoothing);
    return affine(tape, sum, 1.0 / static_cast<double>(b.gold.size()), 0.0);
}

// Probe score of one labeled sample. Context and candidate run through the
// plain stack as a single <cls>-led sequence, so the pooled <cls> state and
// the pooled candidate rows can each reflect the other half of the pair; the
// matching head then scores the concatenated pair.
inline Tensor aux_sample_score(Tape& tape, ModelParams& params,
                               const Vocabulary& vocab, const LabeledSample& s,
                               const RunOptions& opts = {}) {
    const ModelConfig& cfg = params.cfg;
    Batch pair = encode_classifier_pair(s.context, s.candidate, vocab,
                                        cfg.max_seq, cfg.max_turns);
    Tensor h = encode_plain(tape, params, pair, opts);
    Tensor cand_rows =
        slice_rows(tape, h, pair.boundary, pair.len() - pair.boundary);
    return s.task == AuxTask::kUd ? ud_score(tape, params, cand_rows, h)
                                  : sd_score(tape, params, cand_rows, h);
}

// Binary cross entropy of one labeled sample under the matching probe.
inline Tensor aux_sample_loss(Tape& tape, ModelParams& params,
                              const Vocabulary& vocab, const LabeledSample& s,
                              const RunOptions& opts = {}) {
    Tensor score = aux_sample_score(tape, params, vocab, s, opts);
    return bce_loss(tape, score, s.label);
}

// Mean probe loss over a group of samples.
inline Tensor aux_group_loss(Tape& tape, ModelParams& params,
                             const Vocabulary& vocab,
                             const std::vector<LabeledSample>& group,
                             const RunOptions& opts = {}) {
    std::vector<Tensor> parts;
    parts.reserve(group.size());
    for (const LabeledSample& s : group)
        parts.push_back(aux_sample_loss(tape, params, vocab, s, opts));
    return mean_scalars(tape, parts);
}

// Fraction of samples the matching probe classifies correctly at 0.5.
inline double aux_accuracy(ModelParams& params, const Vocabulary& vocab,
                           const std::vector<LabeledSample>& samples) {
    if (samples.empty())
        throw std::invalid_argument("aux_accuracy: no samples to score");
    std::size_t hits = 0;
    for (const LabeledSample& s : samples) {
        Tape tape(false);
        Tensor score = aux_sample_score(tape, params, vocab, s);
        const int pred = score.item() > 0.5 ? 1 : 0;
        if (pred == s.label) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(samples.size());
}

// Component values of one optimization step, in loss-per-token or
// loss-per-sample units. Skipped components stay at zero. `l_ud`/`l_sd` hold
// the summed two-sided probe losses in stage 2 and the in-domain ones in
// stage 3; the `_mono` pair is only used by stage 3.
struct LossReport {
    int stage = 0;
    std::uint64_t step = 0;
    double total = 0.0;
    double l_sent = 0.0;
    double l_nct = 0.0;
    double l_ud = 0.0;
    double l_sd = 0.0;
    double l_ud_mono = 0.0;
    double l_sd_mono = 0.0;
    double lambda = 0.0;
    double lr = 0.0;
    LossWeights weights;

    // Rebuild the stage objective from the stored components.
    double recombine() const {
        const LossWeights& w = weights;
        switch (stage) {
            case 1:
                return l_sent;
            case 2:
                return l_sent + w.alpha1 * l_ud + w.beta1 * l_sd;
            case 3:
                return l_nct + lambda * (w.alpha2 * l_ud + w.beta2 * l_sd) +
                       (1.0 - lambda) *
                           (w.alpha1 * l_ud_mono + w.beta1 * l_sd_mono);
            default:
                throw std::invalid_argument("LossReport: stage " +
                                            std::to_string(stage) +
                                            " outside 1..3");
        }
    }
};

}  // namespace nct
