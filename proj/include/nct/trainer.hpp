#pragma once

// Stage-wise training driver.
//
// Every optimization step reseeds one RNG per purpose from
// (seed, stage, step, purpose), so a run is a pure function of its seed and
// plan: interrupting after step k and resuming from a checkpoint replays
// steps k+1..N bit-exactly, and re-running a whole stage reproduces it.
// The optimizer starts fresh in every stage; its step counter (and with it
// the warmup schedule) restarts at the stage boundary.

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nct/adam.hpp"
#include "nct/batch.hpp"
#include "nct/checkpoint.hpp"
#include "nct/corpus.hpp"
#include "nct/losses.hpp"
#include "nct/model.hpp"
#include "nct/rng.hpp"
#include "nct/samples.hpp"
#include "nct/tensor.hpp"
#include "nct/vocab.hpp"

namespace nct {

struct StageSpec {
    int stage = 1;               // 1, 2 or 3; selects the objective
    std::size_t steps = 0;       // optimization steps in this stage
    std::size_t sent_batch = 4;  // translation samples per step
    std::size_t aux_batch = 4;   // probe samples per group per step
    std::size_t window = 3;      // context window for stage-3 translation
    std::size_t ud_negatives = 1;
    LossWeights weights;
    double label_smoothing = 0.1;

    void validate() const {
        if (stage < 1 || stage > 3)
            throw std::invalid_argument("StageSpec: stage outside 1..3");
        if (steps == 0) throw std::invalid_argument("StageSpec: zero steps");
        if (sent_batch == 0 || aux_batch == 0)
            throw std::invalid_argument("StageSpec: zero batch size");
        if (label_smoothing < 0.0 || label_smoothing >= 1.0)
            throw std::invalid_argument("StageSpec: label smoothing outside [0,1)");
    }
};

struct TrainData {
    const std::vector<Dialogue>* bilingual = nullptr;
    const std::vector<Dialogue>* mono_src = nullptr;
    const std::vector<Dialogue>* mono_tgt = nullptr;
    const Vocabulary* vocab = nullptr;
};

namespace detail {

inline const Dialogue& pick_dialogue(const std::vector<Dialogue>& corpus,
                                     std::mt19937_64& rng, std::size_t* idx) {
    *idx = rand_index(rng, corpus.size());
    return corpus[*idx];
}

inline Batch sample_translation_batch(const std::vector<Dialogue>& corpus,
                                      std::mt19937_64& rng, std::size_t window,
                                      const Vocabulary& vocab,
                                      const ModelConfig& cfg) {
    std::size_t di = 0;
    const Dialogue& d = pick_dialogue(corpus, rng, &di);
    const std::size_t u = 1 + rand_index(rng, d.turns.size());
    return encode_translation_input(d, u, window, vocab, cfg.max_seq,
                                    cfg.max_turns);
}

// Draw probe samples until the group is full. UD needs a second dialogue for
// its negative pool, SD needs a turn late enough that both speakers already
// spoke; pools too small for that yield an empty group, which the caller
// skips.
inline std::vector<LabeledSample> sample_ud_group(
    const std::vector<Dialogue>& corpus, std::mt19937_64& rng,
    std::size_t window, Side side, std::size_t group_size,
    std::size_t negatives) {
    std::vector<LabeledSample> out;
    if (corpus.size() < 2) return out;
    while (out.size() < group_size) {
        std::size_t di = 0;
        const Dialogue& d = pick_dialogue(corpus, rng, &di);
        const std::size_t turns = d.side(side).size();
        // favor turns with a nonempty context when the dialogue has one
        const std::size_t u =
            turns >= 2 ? 2 + rand_index(rng, turns - 1) : 1;
        std::vector<LabeledSample> s =
            make_ud_samples(corpus, di, u, window, side, rng, negatives);
        for (LabeledSample& x : s) out.push_back(std::move(x));
    }
    return out;
}

inline std::vector<LabeledSample> sample_sd_group(
    const std::vector<Dialogue>& corpus, std::mt19937_64& rng, Side side,
    std::size_t group_size) {
    std::vector<LabeledSample> out;
    std::size_t dry_draws = 0;
    while (out.size() < group_size && dry_draws < 64) {
        std::size_t di = 0;
        const Dialogue& d = pick_dialogue(corpus, rng, &di);
        const std::size_t turns = d.side(side).size();
        if (turns < 3) {
            ++dry_draws;
            continue;
        }
        const std::size_t u = 3 + rand_index(rng, turns - 2);
        std::vector<LabeledSample> s = make_sd_samples(d, u, side);
        if (s.empty()) {
            ++dry_draws;
            continue;
        }
        for (LabeledSample& x : s) out.push_back(std::move(x));
    }
    return out;
}

struct AuxPair {
    bool built = false;
    Tensor loss;     // summed over the sides that produced samples
    double value = 0.0;
};

// Probe loss summed over one or two corpora sides. Sides without usable
// samples contribute nothing; if none has any, `built` stays false.
inline AuxPair two_sided_aux_loss(
    Tape& tape, ModelParams& params, const Vocabulary& vocab, AuxTask task,
    const std::vector<std::pair<const std::vector<Dialogue>*, Side>>& pools,
    std::mt19937_64& rng, const StageSpec& spec, const RunOptions& opts) {
    AuxPair out;
    for (const auto& [corpus, side] : pools) {
        if (!corpus || corpus->empty()) continue;
        std::vector<LabeledSample> group =
            task == AuxTask::kUd
                ? sample_ud_group(*corpus, rng, spec.window, side,
                                  spec.aux_batch, spec.ud_negatives)
                : sample_sd_group(*corpus, rng, side, spec.aux_batch);
        if (group.empty()) continue;
        Tensor l = aux_group_loss(tape, params, vocab, group, opts);
        out.loss = out.built ? add(tape, out.loss, l) : l;
        out.built = true;
    }
    if (out.built) out.value = out.loss.item();
    return out;
}

}  // namespace detail

// Builds the full objective of one step on `tape` and fills `rep` with the
// component values. The weighted sum mirrors LossReport::recombine().
inline Tensor build_step_loss(Tape& tape, ModelParams& params,
                              const TrainData& data, const StageSpec& spec,
                              std::uint64_t seed, std::uint64_t step,
                              LossReport& rep) {
    spec.validate();
    if (!data.vocab) throw std::invalid_argument("build_step_loss: no vocabulary");
    if (!data.bilingual || data.bilingual->empty())
        throw std::invalid_argument("build_step_loss: no bilingual dialogues");
    const Vocabulary& vocab = *data.vocab;
    const int stage = spec.stage;

    rep = LossReport{};
    rep.stage = stage;
    rep.step = step;
    rep.weights = spec.weights;

    std::mt19937_64 drop_rng = stream_rng(seed, stage, step, Stream::kDropout);
    RunOptions opts;
    opts.training = true;
    opts.rng = &drop_rng;

    // translation term: plain pairs in stages 1 and 2, contextual in stage 3
    const std::size_t window = stage == 3 ? spec.window : 0;
    const Stream sent_stream = stage == 3 ? Stream::kBctBatch : Stream::kSentBatch;
    std::mt19937_64 sent_rng = stream_rng(seed, stage, step, sent_stream);
    std::vector<Tensor> sent_parts;
    sent_parts.reserve(spec.sent_batch);
    for (std::size_t i = 0; i < spec.sent_batch; ++i) {
        Batch b = detail::sample_translation_batch(*data.bilingual, sent_rng,
                                                   window, vocab, params.cfg);
        sent_parts.push_back(
            translation_loss(tape, params, b, spec.label_smoothing, opts));
    }
    Tensor total = mean_scalars(tape, sent_parts);
    if (stage == 3)
        rep.l_nct = total.item();
    else
        rep.l_sent = total.item();

    const LossWeights& w = spec.weights;
    auto add_weighted = [&](const detail::AuxPair& p, double weight) {
        if (!p.built || weight == 0.0) return;
        total = add(tape, total, affine(tape, p.loss, weight, 0.0));
    };

    if (stage == 2) {
        std::vector<std::pair<const std::vector<Dialogue>*, Side>> mono = {
            {data.mono_src, Side::kSource}, {data.mono_tgt, Side::kSource}};
        if (w.alpha1 != 0.0) {
            std::mt19937_64 r1 = stream_rng(seed, stage, step, Stream::kUdMonoSrc);
            detail::AuxPair ud = detail::two_sided_aux_loss(
                tape, params, vocab, AuxTask::kUd, mono, r1, spec, opts);
            rep.l_ud = ud.value;
            add_weighted(ud, w.alpha1);
        }
        if (w.beta1 != 0.0) {
            std::mt19937_64 r2 = stream_rng(seed, stage, step, Stream::kSdMonoSrc);
            detail::AuxPair sd = detail::two_sided_aux_loss(
                tape, params, vocab, AuxTask::kSd, mono, r2, spec, opts);
            rep.l_sd = sd.value;
            add_weighted(sd, w.beta1);
        }
    } else if (stage == 3) {
        rep.lambda = lambda_schedule(step, spec.steps);
        const double in_ud = rep.lambda * w.alpha2;
        const double in_sd = rep.lambda * w.beta2;
        const double mono_ud = (1.0 - rep.lambda) * w.alpha1;
        const double mono_sd = (1.0 - rep.lambda) * w.beta1;
        std::vector<std::pair<const std::vector<Dialogue>*, Side>> indomain = {
            {data.bilingual, Side::kSource}, {data.bilingual, Side::kTarget}};
        std::vector<std::pair<const std::vector<Dialogue>*, Side>> mono = {
            {data.mono_src, Side::kSource}, {data.mono_tgt, Side::kSource}};
        if (in_ud != 0.0) {
            std::mt19937_64 r = stream_rng(seed, stage, step, Stream::kUdBilingual);
            detail::AuxPair ud = detail::two_sided_aux_loss(
                tape, params, vocab, AuxTask::kUd, indomain, r, spec, opts);
            rep.l_ud = ud.value;
            add_weighted(ud, in_ud);
        }
        if (in_sd != 0.0) {
            std::mt19937_64 r = stream_rng(seed, stage, step, Stream::kSdBilingual);
            detail::AuxPair sd = detail::two_sided_aux_loss(
                tape, params, vocab, AuxTask::kSd, indomain, r, spec, opts);
            rep.l_sd = sd.value;
            add_weighted(sd, in_sd);
        }
        if (mono_ud != 0.0) {
            std::mt19937_64 r = stream_rng(seed, stage, step, Stream::kUdMonoSrc);
            detail::AuxPair ud = detail::two_sided_aux_loss(
                tape, params, vocab, AuxTask::kUd, mono, r, spec, opts);
            rep.l_ud_mono = ud.value;
            add_weighted(ud, mono_ud);
        }
        if (mono_sd != 0.0) {
            std::mt19937_64 r = stream_rng(seed, stage, step, Stream::kSdMonoSrc);
            detail::AuxPair sd = detail::two_sided_aux_loss(
                tape, params, vocab, AuxTask::kSd, mono, r, spec, opts);
            rep.l_sd_mono = sd.value;
            add_weighted(sd, mono_sd);
        }
    }

    rep.total = total.item();
    return total;
}

struct TrainHooks {
    std::size_t log_every = 50;
    std::size_t ckpt_every = 0;  // extra saves every n steps; 0 = stage end only
    std::string ckpt_path;       // empty = never write checkpoints
    std::uint64_t model_fp = 0;
    std::uint64_t vocab_hash = 0;
    std::function<void(const LossReport&)> on_log;
};

struct StageResult {
    std::vector<LossReport> logs;
    std::size_t applied_steps = 0;
    std::size_t rejected_steps = 0;
};

// Runs steps [start_step, end_step] of one stage (end_step 0 = spec.steps).
inline StageResult run_stage(ModelParams& params, AdamState& adam,
                             const TrainData& data, const StageSpec& spec,
                             std::uint64_t seed, const TrainHooks& hooks = {},
                             std::uint64_t start_step = 1,
                             std::uint64_t end_step = 0) {
    spec.validate();
    const std::uint64_t last = end_step == 0 ? spec.steps : end_step;
    if (start_step == 0 || last > spec.steps || start_step > last + 1)
        throw std::invalid_argument("run_stage: bad step range");

    std::vector<Tensor> plist = params.parameters();
    std::vector<std::string> names = params.parameter_names();
    StageResult res;
    for (std::uint64_t step = start_step; step <= last; ++step) {
        params.zero_grads();
        Tape tape(true);
        LossReport rep;
        Tensor total = build_step_loss(tape, params, data, spec, seed, step, rep);
        tape.backward(total);
        StepOutcome out = adam_step(plist, names, adam);
        rep.lr = out.lr;
        if (out.applied)
            ++res.applied_steps;
        else
            ++res.rejected_steps;

        const bool log_now = hooks.log_every != 0 &&
                             (step % hooks.log_every == 0 || step == last);
        if (log_now) {
            res.logs.push_back(rep);
            if (hooks.on_log) hooks.on_log(rep);
        }
        const bool save_now =
            !hooks.ckpt_path.empty() &&
            ((hooks.ckpt_every != 0 && step % hooks.ckpt_every == 0) ||
             step == last);
        if (save_now) {
            CheckpointMeta meta;
            meta.stage = static_cast<std::uint32_t>(spec.stage);
            meta.step = step;
            meta.model_fp = hooks.model_fp;
            meta.vocab_hash = hooks.vocab_hash;
            save_checkpoint(hooks.ckpt_path, params, &adam, meta);
        }
    }
    return res;
}

struct TrainPlan {
    std::vector<StageSpec> stages;
    AdamConfig adam;
    std::uint64_t seed = 1;
};

// Optimizer state and position of an interrupted run, as read back from a
// checkpoint. Consumed by run_training when it reaches the matching stage.
struct ResumePoint {
    bool active = false;
    std::uint32_t stage = 0;
    std::uint64_t step = 0;
    AdamState adam;
};

inline std::vector<StageResult> run_training(ModelParams& params,
                                             const TrainData& data,
                                             const TrainPlan& plan,
                                             const TrainHooks& hooks = {},
                                             ResumePoint* resume = nullptr) {
    if (plan.stages.empty())
        throw std::invalid_argument("run_training: empty stage list");
    std::vector<StageResult> out;
    for (const StageSpec& spec : plan.stages) {
        std::uint64_t start = 1;
        AdamState adam;
        if (resume && resume->active) {
            if (static_cast<std::uint32_t>(spec.stage) < resume->stage) continue;
            if (static_cast<std::uint32_t>(spec.stage) == resume->stage) {
                start = resume->step + 1;
                adam = std::move(resume->adam);
                resume->active = false;
                if (start > spec.steps) continue;  // stage already finished
            } else {
                // checkpoint points at a stage this plan does not run
                throw std::invalid_argument(
                    "run_training: resume stage " + std::to_string(resume->stage) +
                    " not in the plan");
            }
        } else {
            adam = AdamState::init(plan.adam, params.parameters());
        }
        out.push_back(
            run_stage(params, adam, data, spec, plan.seed, hooks, start));
    }
    return out;
}

}  // namespace nct
