#pragma once

// Experiment configuration, read from a JSON file with sections
// model / vocab / adam / training / synthetic / eval. Every section and
// every key is optional; unknown keys are rejected so that typos fail
// loudly instead of silently running with defaults.
//
// training.mode selects the curriculum:
//   "mmt"  warm-up on aligned turns, then turn the auxiliary dialogue
//          heads on over monolingual data, then joint context training
//   "ft"   warm-up followed directly by context training with the
//          auxiliary heads disabled

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nct/adam.hpp"
#include "nct/model.hpp"
#include "nct/synthetic.hpp"
#include "nct/trainer.hpp"

namespace nct {

struct ExperimentConfig {
    ModelConfig model;          // model.vocab filled in after vocab training
    std::size_t bpe_merges = 80;
    AdamConfig adam;
    std::string mode = "mmt";   // "mmt" or "ft"
    std::uint64_t seed = 1;
    std::size_t window = 3;
    double label_smoothing = 0.1;
    std::size_t stage1_steps = 2000;
    std::size_t stage2_steps = 500;
    std::size_t stage3_steps = 500;
    std::size_t sent_batch = 4;
    std::size_t aux_batch = 4;
    std::size_t ud_negatives = 1;
    LossWeights weights;
    std::size_t log_every = 25;
    std::size_t ckpt_every = 0;  // 0 writes only the end-of-stage checkpoint
    SyntheticSpec synthetic;
    std::size_t eval_beam = 4;
    std::size_t eval_window = 3;

    void validate() const {
        if (mode != "mmt" && mode != "ft")
            throw std::invalid_argument("config: mode must be \"mmt\" or \"ft\"");
        if (bpe_merges == 0) throw std::invalid_argument("config: bpe_merges is zero");
        if (stage1_steps == 0 || stage3_steps == 0)
            throw std::invalid_argument("config: stage 1 and 3 need steps");
        if (mode == "mmt" && stage2_steps == 0)
            throw std::invalid_argument("config: mmt needs stage2_steps");
        synthetic.validate();
    }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& obj, const char* section,
                           std::initializer_list<const char*> known) {
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        bool ok = false;
        for (const char* k : known)
            if (key == k) ok = true;
        if (!ok)
            throw std::invalid_argument("config: unknown key '" + key +
                                        "' in section '" + section + "'");
    }
}

template <typename T>
void read_key(const nlohmann::json& obj, const char* key, T& into) {
    if (obj.contains(key)) into = obj.at(key).get<T>();
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
    ExperimentConfig c;
    detail::reject_unknown(
        j, "(top level)", {"model", "vocab", "adam", "training", "synthetic", "eval"});

    if (j.contains("model")) {
        const auto& m = j.at("model");
        detail::reject_unknown(m, "model",
                               {"layers", "hidden", "ffn", "heads", "max_seq",
                                "max_turns", "dropout"});
        detail::read_key(m, "layers", c.model.layers);
        detail::read_key(m, "hidden", c.model.hidden);
        detail::read_key(m, "ffn", c.model.ffn);
        detail::read_key(m, "heads", c.model.heads);
        detail::read_key(m, "max_seq", c.model.max_seq);
        detail::read_key(m, "max_turns", c.model.max_turns);
        detail::read_key(m, "dropout", c.model.dropout);
    }
    if (j.contains("vocab")) {
        const auto& v = j.at("vocab");
        detail::reject_unknown(v, "vocab", {"merges"});
        detail::read_key(v, "merges", c.bpe_merges);
    }
    if (j.contains("adam")) {
        const auto& a = j.at("adam");
        detail::reject_unknown(a, "adam",
                               {"base_lr", "warmup_steps", "beta1", "beta2", "eps"});
        detail::read_key(a, "base_lr", c.adam.base_lr);
        detail::read_key(a, "warmup_steps", c.adam.warmup_steps);
        detail::read_key(a, "beta1", c.adam.beta1);
        detail::read_key(a, "beta2", c.adam.beta2);
        detail::read_key(a, "eps", c.adam.eps);
    }
    if (j.contains("training")) {
        const auto& t = j.at("training");
        detail::reject_unknown(
            t, "training",
            {"mode", "seed", "window", "label_smoothing", "stage1_steps",
             "stage2_steps", "stage3_steps", "sent_batch", "aux_batch",
             "ud_negatives", "alpha1", "beta1", "alpha2", "beta2", "log_every",
             "ckpt_every"});
        detail::read_key(t, "mode", c.mode);
        detail::read_key(t, "seed", c.seed);
        detail::read_key(t, "window", c.window);
        detail::read_key(t, "label_smoothing", c.label_smoothing);
        detail::read_key(t, "stage1_steps", c.stage1_steps);
        detail::read_key(t, "stage2_steps", c.stage2_steps);
        detail::read_key(t, "stage3_steps", c.stage3_steps);
        detail::read_key(t, "sent_batch", c.sent_batch);
        detail::read_key(t, "aux_batch", c.aux_batch);
        detail::read_key(t, "ud_negatives", c.ud_negatives);
        detail::read_key(t, "alpha1", c.weights.alpha1);
        detail::read_key(t, "beta1", c.weights.beta1);
        detail::read_key(t, "alpha2", c.weights.alpha2);
        detail::read_key(t, "beta2", c.weights.beta2);
        detail::read_key(t, "log_every", c.log_every);
        detail::read_key(t, "ckpt_every", c.ckpt_every);
    }
    if (j.contains("synthetic")) {
        const auto& s = j.at("synthetic");
        detail::reject_unknown(s, "synthetic",
                               {"dialogues", "eval_dialogues", "mono_dialogues",
                                "turns", "fillers", "ambiguous",
                                "dependency_fraction", "marker_max_back"});
        detail::read_key(s, "dialogues", c.synthetic.dialogues);
        detail::read_key(s, "eval_dialogues", c.synthetic.eval_dialogues);
        detail::read_key(s, "mono_dialogues", c.synthetic.mono_dialogues);
        detail::read_key(s, "turns", c.synthetic.turns);
        detail::read_key(s, "fillers", c.synthetic.fillers);
        detail::read_key(s, "ambiguous", c.synthetic.ambiguous);
        detail::read_key(s, "dependency_fraction", c.synthetic.dependency_fraction);
        detail::read_key(s, "marker_max_back", c.synthetic.marker_max_back);
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        detail::reject_unknown(e, "eval", {"beam", "window"});
        detail::read_key(e, "beam", c.eval_beam);
        detail::read_key(e, "window", c.eval_window);
    }
    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open '" + path + "'");
    return parse_config(nlohmann::json::parse(is));
}

// Curriculum for the configured mode. The sentence warm-up stage never uses
// the auxiliary heads; in "ft" the context stage zeroes them too, and the
// monolingual stage is skipped entirely.
inline TrainPlan make_train_plan(const ExperimentConfig& c) {
    c.validate();
    TrainPlan plan;
    plan.seed = c.seed;
    plan.adam = c.adam;
    plan.adam.model_dim = c.model.hidden;

    StageSpec base;
    base.sent_batch = c.sent_batch;
    base.aux_batch = c.aux_batch;
    base.window = c.window;
    base.ud_negatives = c.ud_negatives;
    base.weights = c.weights;
    base.label_smoothing = c.label_smoothing;

    StageSpec s1 = base;
    s1.stage = 1;
    s1.steps = c.stage1_steps;
    plan.stages.push_back(s1);

    if (c.mode == "mmt") {
        StageSpec s2 = base;
        s2.stage = 2;
        s2.steps = c.stage2_steps;
        plan.stages.push_back(s2);
    }

    StageSpec s3 = base;
    s3.stage = 3;
    s3.steps = c.stage3_steps;
    if (c.mode == "ft") {
        s3.weights.alpha1 = 0.0;
        s3.weights.beta1 = 0.0;
        s3.weights.alpha2 = 0.0;
        s3.weights.beta2 = 0.0;
    }
    plan.stages.push_back(s3);
    return plan;
}

}  // namespace nct
