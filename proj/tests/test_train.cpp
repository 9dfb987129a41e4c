#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "catch2/catch_amalgamated.hpp"
#include "nct/checkpoint.hpp"
#include "nct/losses.hpp"
#include "nct/trainer.hpp"

using namespace nct;

namespace {

Dialogue grid_dialogue(const std::string& id, int n_turns, const std::string& a,
                       const std::string& b, const std::string& lang,
                       bool bilingual_pair, const std::string& ta = "",
                       const std::string& tb = "", const std::string& tlang = "") {
    Dialogue d;
    d.id = id;
    d.kind = bilingual_pair ? "bilingual-pair" : "monolingual";
    for (int t = 1; t <= n_turns; ++t) {
        Utterance u;
        u.speaker = t % 2 == 1 ? "s1" : "s2";
        u.turn = t;
        u.text = a + id + " " + b + std::to_string(t);
        u.lang = lang;
        d.turns.push_back(u);
        if (bilingual_pair) {
            Utterance v = u;
            v.text = ta + id + " " + tb + std::to_string(t);
            v.lang = tlang;
            d.aligned.push_back(v);
        }
    }
    return d;
}

struct TinyWorld {
    std::vector<Dialogue> bilingual, mono_src, mono_tgt;
    Vocabulary vocab;
    ModelConfig cfg;
};

TinyWorld tiny_world() {
    TinyWorld w;
    for (int i = 0; i < 3; ++i)
        w.bilingual.push_back(grid_dialogue("b" + std::to_string(i), 4, "si",
                                            "tt", "xx", true, "ui", "vv", "yy"));
    for (int i = 0; i < 3; ++i)
        w.mono_src.push_back(
            grid_dialogue("m" + std::to_string(i), 4, "si", "tt", "xx", false));
    for (int i = 0; i < 3; ++i)
        w.mono_tgt.push_back(
            grid_dialogue("n" + std::to_string(i), 4, "ui", "vv", "yy", false));

    std::vector<std::string> texts;
    for (const auto* corpus : {&w.bilingual, &w.mono_src, &w.mono_tgt})
        for (const Dialogue& d : *corpus) {
            for (const Utterance& u : d.turns) texts.push_back(u.text);
            for (const Utterance& u : d.aligned) texts.push_back(u.text);
        }
    w.vocab = bpe_train(texts, 12);

    w.cfg.layers = 2;
    w.cfg.hidden = 8;
    w.cfg.ffn = 16;
    w.cfg.heads = 2;
    w.cfg.vocab = w.vocab.size();
    w.cfg.max_seq = 48;
    w.cfg.max_turns = 8;
    w.cfg.dropout = 0.0;
    return w;
}

TrainData data_of(const TinyWorld& w) {
    TrainData d;
    d.bilingual = &w.bilingual;
    d.mono_src = &w.mono_src;
    d.mono_tgt = &w.mono_tgt;
    d.vocab = &w.vocab;
    return d;
}

AdamConfig tiny_adam(const ModelConfig& cfg, std::uint64_t warmup = 20) {
    AdamConfig a;
    a.base_lr = 0.5;
    a.warmup_steps = warmup;
    a.model_dim = cfg.hidden;
    return a;
}

bool params_bitwise_equal(ModelParams& a, ModelParams& b) {
    bool equal = true;
    std::vector<Tensor> pa = a.parameters();
    std::vector<Tensor> pb = b.parameters();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (pa[i].vec() != pb[i].vec()) equal = false;
    }
    return equal;
}

}  // namespace

TEST_CASE("lambda ramps linearly over the stage and clamps at one") {
    REQUIRE(lambda_schedule(0, 10) == 0.0);
    REQUIRE(lambda_schedule(10, 10) == 1.0);
    REQUIRE(lambda_schedule(15, 10) == 1.0);
    REQUIRE(lambda_schedule(1, 4) == 0.25);
    double prev = -1.0;
    for (std::uint64_t n = 0; n <= 10; ++n) {
        const double l = lambda_schedule(n, 10);
        REQUIRE(l >= prev);
        prev = l;
    }
    REQUIRE_THROWS_AS(lambda_schedule(1, 0), std::invalid_argument);
}

TEST_CASE("binary cross entropy matches frozen values") {
    Tape tape(false);
    Tensor p = Tensor::scalar(0.7);
    REQUIRE(bce_loss(tape, p, 1).item() ==
            Catch::Approx(0.35667494393873245).margin(1e-15));
    REQUIRE(bce_loss(tape, p, 0).item() ==
            Catch::Approx(1.2039728043259361).margin(1e-15));
    REQUIRE_THROWS_AS(bce_loss(tape, p, 2), std::invalid_argument);
    // the floor keeps saturated probes finite
    Tensor zero = Tensor::scalar(0.0);
    REQUIRE(std::isfinite(bce_loss(tape, zero, 1).item()));
}

TEST_CASE("translation loss equals a hand-rolled smoothed cross entropy") {
    TinyWorld w = tiny_world();
    ModelParams p = ModelParams::init(w.cfg, 41);
    Batch b = encode_translation_input(w.bilingual[0], 3, 2, w.vocab,
                                       w.cfg.max_seq, w.cfg.max_turns);

    Tape t1(false);
    const double loss = translation_loss(t1, p, b, 0.1).item();

    Tape t2(false);
    Tensor enc = encode_flat(t2, p, b);
    Tensor probs = decode(t2, p, decoder_inputs(b), enc);
    const double eps = 0.1;
    const double V = static_cast<double>(w.cfg.vocab);
    double manual = 0.0;
    for (std::size_t t = 0; t < b.gold.size(); ++t) {
        for (std::size_t k = 0; k < w.cfg.vocab; ++k) {
            const double q =
                eps / V + (static_cast<int>(k) == b.gold[t] ? 1.0 - eps : 0.0);
            const double pk = std::max(probs.at(t, k), kProbFloor);
            manual -= q * std::log(pk);
        }
    }
    manual /= static_cast<double>(b.gold.size());
    REQUIRE(loss == Catch::Approx(manual).margin(1e-12));
}

TEST_CASE("step losses recombine exactly from their reported parts") {
    TinyWorld w = tiny_world();
    ModelParams p = ModelParams::init(w.cfg, 43);
    TrainData data = data_of(w);

    StageSpec s1;
    s1.stage = 1;
    s1.steps = 10;
    s1.sent_batch = 2;
    StageSpec s2 = s1;
    s2.stage = 2;
    s2.aux_batch = 2;
    StageSpec s3 = s1;
    s3.stage = 3;
    s3.aux_batch = 2;
    s3.window = 2;

    for (const StageSpec& spec : {s1, s2, s3}) {
        for (std::uint64_t step : {std::uint64_t{1}, std::uint64_t{7}}) {
            Tape tape(true);
            LossReport rep;
            Tensor total = build_step_loss(tape, p, data, spec, 99, step, rep);
            INFO("stage " << spec.stage << " step " << step);
            REQUIRE(std::fabs(rep.total - rep.recombine()) < 1e-9);
            REQUIRE(rep.total == total.item());
            REQUIRE(rep.stage == spec.stage);
            REQUIRE(rep.step == step);
        }
    }

    // components actually populated where the stage uses them
    Tape tape(true);
    LossReport rep;
    build_step_loss(tape, p, data, s2, 99, 3, rep);
    REQUIRE(rep.l_sent > 0.0);
    REQUIRE(rep.l_ud > 0.0);
    REQUIRE(rep.l_sd > 0.0);
    REQUIRE(rep.lambda == 0.0);

    LossReport rep3;
    Tape tape3(true);
    build_step_loss(tape3, p, data, s3, 99, 3, rep3);
    REQUIRE(rep3.l_nct > 0.0);
    REQUIRE(rep3.l_ud > 0.0);
    REQUIRE(rep3.l_sd > 0.0);
    REQUIRE(rep3.l_ud_mono > 0.0);
    REQUIRE(rep3.l_sd_mono > 0.0);
    REQUIRE(rep3.lambda == Catch::Approx(0.3).margin(1e-15));
    REQUIRE(rep3.l_sent == 0.0);
}

TEST_CASE("zero-weight probe terms are skipped without touching their heads") {
    TinyWorld w = tiny_world();
    ModelParams p = ModelParams::init(w.cfg, 47);
    TrainData data = data_of(w);

    StageSpec ft;
    ft.stage = 3;
    ft.steps = 10;
    ft.sent_batch = 2;
    ft.weights.alpha1 = 0.0;
    ft.weights.beta1 = 0.0;
    ft.weights.alpha2 = 0.0;
    ft.weights.beta2 = 0.0;

    p.zero_grads();
    Tape tape(true);
    LossReport rep;
    Tensor total = build_step_loss(tape, p, data, ft, 99, 4, rep);
    REQUIRE(rep.l_ud == 0.0);
    REQUIRE(rep.l_sd == 0.0);
    REQUIRE(rep.l_ud_mono == 0.0);
    REQUIRE(rep.l_sd_mono == 0.0);
    REQUIRE(rep.total == rep.l_nct);

    tape.backward(total);
    for (double g : p.ud_w.grad_vec()) REQUIRE(g == 0.0);
    for (double g : p.sd_w.grad_vec()) REQUIRE(g == 0.0);
    // the translation path still trains
    double norm = 0.0;
    for (double g : p.we.grad_vec()) norm += g * g;
    REQUIRE(norm > 0.0);
}

TEST_CASE("a short stage-1 run drives the sentence loss down") {
    TinyWorld w = tiny_world();
    ModelParams p = ModelParams::init(w.cfg, 53);
    TrainData data = data_of(w);

    StageSpec spec;
    spec.stage = 1;
    spec.steps = 60;
    spec.sent_batch = 4;
    AdamState adam = AdamState::init(tiny_adam(w.cfg), p.parameters());
    TrainHooks hooks;
    hooks.log_every = 1;
    StageResult res = run_stage(p, adam, data, spec, 7, hooks);
    REQUIRE(res.applied_steps == 60);
    REQUIRE(res.rejected_steps == 0);
    REQUIRE(res.logs.size() == 60);
    REQUIRE(res.logs.back().total < 0.5 * res.logs.front().total);
    REQUIRE(res.logs.back().lr > 0.0);
}

TEST_CASE("checkpoints round-trip bitwise and validate their headers") {
    TinyWorld w = tiny_world();
    ModelParams p = ModelParams::init(w.cfg, 59);
    TrainData data = data_of(w);
    const std::string path = "ckpt_test_roundtrip.bin";

    // move the optimizer off its initial state first
    StageSpec spec;
    spec.stage = 1;
    spec.steps = 3;
    spec.sent_batch = 2;
    AdamState adam = AdamState::init(tiny_adam(w.cfg), p.parameters());
    run_stage(p, adam, data, spec, 11, {});

    CheckpointMeta meta;
    meta.stage = 1;
    meta.step = 3;
    meta.model_fp = model_fingerprint(w.cfg);
    meta.vocab_hash = w.vocab.hash();
    save_checkpoint(path, p, &adam, meta);

    ModelParams q = ModelParams::init(w.cfg, 1234);  // different seed on purpose
    REQUIRE_FALSE(params_bitwise_equal(p, q));
    AdamState adam2;
    CheckpointMeta got =
        load_checkpoint(path, q, &adam2, meta.model_fp, meta.vocab_hash);
    REQUIRE(params_bitwise_equal(p, q));
    REQUIRE(got.stage == 1);
    REQUIRE(got.step == 3);
    REQUIRE(adam2.t == adam.t);
    REQUIRE(adam2.cfg.warmup_steps == adam.cfg.warmup_steps);
    REQUIRE(adam2.m == adam.m);
    REQUIRE(adam2.v == adam.v);

    SECTION("fingerprint and vocab mismatches are rejected") {
        REQUIRE_THROWS_WITH(
            load_checkpoint(path, q, nullptr, meta.model_fp + 1, meta.vocab_hash),
            Catch::Matchers::ContainsSubstring("fingerprint"));
        REQUIRE_THROWS_WITH(
            load_checkpoint(path, q, nullptr, meta.model_fp, meta.vocab_hash + 1),
            Catch::Matchers::ContainsSubstring("vocabulary"));
    }
    SECTION("garbage and truncated files are rejected") {
        std::ofstream(path, std::ios::binary) << "definitely not a checkpoint";
        REQUIRE_THROWS_WITH(
            load_checkpoint(path, q, nullptr, meta.model_fp, meta.vocab_hash),
            Catch::Matchers::ContainsSubstring("magic"));
    }
    SECTION("resume without stored optimizer state is refused") {
        save_checkpoint(path, p, nullptr, meta);
        REQUIRE_THROWS_WITH(
            load_checkpoint(path, q, &adam2, meta.model_fp, meta.vocab_hash),
            Catch::Matchers::ContainsSubstring("optimizer"));
        // but a weights-only load works
        load_checkpoint(path, q, nullptr, meta.model_fp, meta.vocab_hash);
    }
    std::remove(path.c_str());
    std::remove((path + ".tmp").c_str());
}

TEST_CASE("an interrupted stage resumes bit-exactly from its checkpoint") {
    TinyWorld w = tiny_world();
    TrainData data = data_of(w);
    const std::string path = "ckpt_test_resume.bin";

    StageSpec spec;
    spec.stage = 3;
    spec.steps = 10;
    spec.sent_batch = 2;
    spec.aux_batch = 2;
    spec.window = 2;

    // uninterrupted reference run
    ModelParams a = ModelParams::init(w.cfg, 61);
    AdamState adam_a = AdamState::init(tiny_adam(w.cfg), a.parameters());
    run_stage(a, adam_a, data, spec, 17, {});

    // same run, cut at step 6 and resumed from disk
    ModelParams b = ModelParams::init(w.cfg, 61);
    AdamState adam_b = AdamState::init(tiny_adam(w.cfg), b.parameters());
    run_stage(b, adam_b, data, spec, 17, {}, 1, 6);
    CheckpointMeta meta;
    meta.stage = 3;
    meta.step = 6;
    meta.model_fp = model_fingerprint(w.cfg);
    meta.vocab_hash = w.vocab.hash();
    save_checkpoint(path, b, &adam_b, meta);

    ModelParams c = ModelParams::init(w.cfg, 4321);
    AdamState adam_c;
    CheckpointMeta got =
        load_checkpoint(path, c, &adam_c, meta.model_fp, meta.vocab_hash);
    run_stage(c, adam_c, data, spec, 17, {}, got.step + 1);

    REQUIRE(params_bitwise_equal(a, c));
    std::remove(path.c_str());
}

TEST_CASE("identical seeds reproduce a stage bitwise") {
    TinyWorld w = tiny_world();
    TrainData data = data_of(w);
    StageSpec spec;
    spec.stage = 2;
    spec.steps = 5;
    spec.sent_batch = 2;
    spec.aux_batch = 2;

    ModelParams a = ModelParams::init(w.cfg, 67);
    AdamState adam_a = AdamState::init(tiny_adam(w.cfg), a.parameters());
    run_stage(a, adam_a, data, spec, 23, {});

    ModelParams b = ModelParams::init(w.cfg, 67);
    AdamState adam_b = AdamState::init(tiny_adam(w.cfg), b.parameters());
    run_stage(b, adam_b, data, spec, 23, {});

    REQUIRE(params_bitwise_equal(a, b));
}

TEST_CASE("the stage pipeline honors resume points and writes checkpoints") {
    TinyWorld w = tiny_world();
    TrainData data = data_of(w);
    const std::string path = "ckpt_test_pipeline.bin";

    TrainPlan plan;
    plan.adam = tiny_adam(w.cfg);
    plan.seed = 29;
    StageSpec s1;
    s1.stage = 1;
    s1.steps = 3;
    s1.sent_batch = 2;
    StageSpec s2 = s1;
    s2.stage = 2;
    s2.aux_batch = 2;
    StageSpec s3 = s1;
    s3.stage = 3;
    s3.aux_batch = 2;
    plan.stages = {s1, s2, s3};

    ModelParams p = ModelParams::init(w.cfg, 71);
    TrainHooks hooks;
    hooks.log_every = 1;
    hooks.ckpt_path = path;
    hooks.model_fp = model_fingerprint(w.cfg);
    hooks.vocab_hash = w.vocab.hash();
    std::size_t log_calls = 0;
    hooks.on_log = [&log_calls](const LossReport&) { ++log_calls; };

    std::vector<StageResult> res = run_training(p, data, plan, hooks);
    REQUIRE(res.size() == 3);
    REQUIRE(log_calls == 9);
    REQUIRE(std::filesystem::exists(path));

    // the final checkpoint points at the end of stage 3
    ModelParams q = ModelParams::init(w.cfg, 72);
    AdamState adam_q;
    CheckpointMeta meta =
        load_checkpoint(path, q, &adam_q, hooks.model_fp, hooks.vocab_hash);
    REQUIRE(meta.stage == 3);
    REQUIRE(meta.step == 3);

    // resuming from the middle of stage 2 runs stage 2's tail plus stage 3
    ModelParams r = ModelParams::init(w.cfg, 71);
    ResumePoint resume;
    resume.active = true;
    resume.stage = 2;
    resume.step = 1;
    resume.adam = AdamState::init(plan.adam, r.parameters());
    std::vector<StageResult> tail = run_training(r, data, plan, {}, &resume);
    REQUIRE(tail.size() == 2);
    REQUIRE_FALSE(resume.active);

    std::remove(path.c_str());
}
