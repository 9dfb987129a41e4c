// Command line front end for the dialogue translation library.
//
//   nct make-synthetic  write a synthetic dialogue corpus into a run directory
//   nct train           train a model on the corpus found there
//   nct translate       translate a corpus file with a trained model
//   nct evaluate        score translations and write a metric report
//   nct report          render training log and metrics as markdown + SVG
//
// A run directory laid out by these commands looks like
//   data/{train,eval,mono_src,mono_tgt}.jsonl   corpora
//   data/{train,eval}_events.json               ambiguous-word answer keys
//   vocab.txt, last.ckpt, train_log.jsonl       training artifacts
//   translations.jsonl, metrics_<label>.json    inference artifacts
//   report.md, loss.svg                         rendered report

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nct/checkpoint.hpp"
#include "nct/config.hpp"
#include "nct/corpus.hpp"
#include "nct/decode.hpp"
#include "nct/metrics.hpp"
#include "nct/model.hpp"
#include "nct/report.hpp"
#include "nct/synthetic.hpp"
#include "nct/trainer.hpp"
#include "nct/vocab.hpp"

namespace fs = std::filesystem;

namespace {

struct RunPaths {
    fs::path root, data, vocab, ckpt, log;
    explicit RunPaths(const std::string& out)
        : root(out),
          data(root / "data"),
          vocab(root / "vocab.txt"),
          ckpt(root / "last.ckpt"),
          log(root / "train_log.jsonl") {}
};

std::vector<std::string> corpus_texts(const std::vector<nct::Dialogue>& corpus) {
    std::vector<std::string> out;
    for (const nct::Dialogue& d : corpus) {
        for (const nct::Utterance& u : d.turns) out.push_back(u.text);
        for (const nct::Utterance& u : d.aligned) out.push_back(u.text);
    }
    return out;
}

int cmd_make_synthetic(const std::string& config_path, const std::string& out,
                       std::uint64_t seed) {
    nct::ExperimentConfig cfg;
    if (!config_path.empty()) cfg = nct::load_config(config_path);
    RunPaths paths(out);
    fs::create_directories(paths.data);

    nct::SyntheticCorpus corpus = nct::make_synthetic_corpus(cfg.synthetic, seed);
    nct::save_corpus((paths.data / "train.jsonl").string(), corpus.train);
    nct::save_corpus((paths.data / "eval.jsonl").string(), corpus.eval);
    nct::save_corpus((paths.data / "mono_src.jsonl").string(), corpus.mono_src);
    nct::save_corpus((paths.data / "mono_tgt.jsonl").string(), corpus.mono_tgt);
    nct::save_events((paths.data / "train_events.json").string(),
                     corpus.train_events);
    nct::save_events((paths.data / "eval_events.json").string(),
                     corpus.eval_events);

    std::cout << "wrote " << corpus.train.size() << " training, "
              << corpus.eval.size() << " held-out, and 2x"
              << corpus.mono_src.size() << " monolingual dialogues to "
              << paths.data.string() << "\n"
              << "ambiguous events: " << corpus.train_events.size()
              << " train, " << corpus.eval_events.size() << " eval\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& out,
              std::uint64_t seed_override, bool seed_given,
              const std::string& mode_override, bool resume) {
    nct::ExperimentConfig cfg = nct::load_config(config_path);
    if (seed_given) cfg.seed = seed_override;
    if (!mode_override.empty()) cfg.mode = mode_override;
    cfg.validate();
    RunPaths paths(out);

    std::vector<nct::Dialogue> train =
        nct::load_corpus((paths.data / "train.jsonl").string());
    std::vector<nct::Dialogue> mono_src =
        nct::load_corpus((paths.data / "mono_src.jsonl").string());
    std::vector<nct::Dialogue> mono_tgt =
        nct::load_corpus((paths.data / "mono_tgt.jsonl").string());
    std::vector<nct::Dialogue> eval_set =
        nct::load_corpus((paths.data / "eval.jsonl").string());

    nct::Vocabulary vocab;
    if (resume) {
        vocab = nct::Vocabulary::load(paths.vocab.string());
    } else {
        // the subword inventory covers the held-out texts too; the model
        // itself never trains on them
        std::vector<std::string> texts = corpus_texts(train);
        for (const auto* extra : {&mono_src, &mono_tgt, &eval_set})
            for (const std::string& t : corpus_texts(*extra)) texts.push_back(t);
        vocab = nct::bpe_train(texts, cfg.bpe_merges);
        vocab.save(paths.vocab.string());
    }
    cfg.model.vocab = vocab.size();
    cfg.model.validate();

    nct::ModelParams params = nct::ModelParams::init(cfg.model, cfg.seed);
    nct::TrainPlan plan = nct::make_train_plan(cfg);
    nct::ResumePoint resume_point;
    if (resume) {
        nct::CheckpointMeta meta = nct::load_checkpoint(
            paths.ckpt.string(), params, &resume_point.adam,
            nct::model_fingerprint(cfg.model), vocab.hash());
        resume_point.active = true;
        resume_point.stage = meta.stage;
        resume_point.step = meta.step;
        std::cout << "resuming from stage " << meta.stage << " step "
                  << meta.step << "\n";
    }

    std::ofstream log(paths.log, resume ? std::ios::app : std::ios::trunc);
    if (!log) {
        std::cerr << "cannot open " << paths.log.string() << "\n";
        return 1;
    }
    nct::TrainHooks hooks;
    hooks.log_every = cfg.log_every;
    hooks.ckpt_every = cfg.ckpt_every;
    hooks.ckpt_path = paths.ckpt.string();
    hooks.model_fp = nct::model_fingerprint(cfg.model);
    hooks.vocab_hash = vocab.hash();
    hooks.on_log = [&log](const nct::LossReport& r) {
        log << nct::loss_report_json(r).dump() << "\n";
        log.flush();
        std::cout << "stage " << r.stage << " step " << r.step << "  loss "
                  << r.total << "  lr " << r.lr << "\n";
    };

    nct::TrainData data;
    data.bilingual = &train;
    data.mono_src = &mono_src;
    data.mono_tgt = &mono_tgt;
    data.vocab = &vocab;

    std::vector<nct::StageResult> results =
        nct::run_training(params, data, plan, hooks,
                          resume ? &resume_point : nullptr);
    std::size_t applied = 0, rejected = 0;
    for (const nct::StageResult& r : results) {
        applied += r.applied_steps;
        rejected += r.rejected_steps;
    }
    std::cout << "done: " << applied << " steps applied, " << rejected
              << " rejected; checkpoint at " << paths.ckpt.string() << "\n";
    return 0;
}

// Loads vocabulary + checkpoint for inference-only commands.
nct::ModelParams load_trained(const nct::ExperimentConfig& base,
                              const RunPaths& paths, nct::Vocabulary& vocab) {
    vocab = nct::Vocabulary::load(paths.vocab.string());
    nct::ExperimentConfig cfg = base;
    cfg.model.vocab = vocab.size();
    nct::ModelParams params = nct::ModelParams::init(cfg.model, 0);
    nct::CheckpointMeta meta =
        nct::load_checkpoint(paths.ckpt.string(), params, nullptr,
                             nct::model_fingerprint(cfg.model), vocab.hash());
    if (meta.stage < 3)
        std::cerr << "warning: checkpoint is from stage " << meta.stage
                  << ", before context-aware fine-tuning\n";
    return params;
}

struct TurnTranslation {
    std::string dialogue;
    std::size_t turn;
    std::string source, hypothesis, reference;
};

std::vector<TurnTranslation> translate_corpus(
    nct::ModelParams& params, const nct::Vocabulary& vocab,
    const std::vector<nct::Dialogue>& corpus,
    const nct::TranslationOptions& opts) {
    std::vector<TurnTranslation> out;
    for (const nct::Dialogue& d : corpus)
        for (std::size_t u = 1; u <= d.turns.size(); ++u) {
            TurnTranslation t;
            t.dialogue = d.id;
            t.turn = u;
            t.source = d.turns[u - 1].text;
            t.hypothesis = nct::translate_turn(params, vocab, d, u, opts);
            if (d.bilingual()) t.reference = d.aligned[u - 1].text;
            out.push_back(std::move(t));
        }
    return out;
}

void save_translations(const fs::path& path,
                       const std::vector<TurnTranslation>& ts) {
    std::ofstream os(path, std::ios::trunc);
    if (!os)
        throw std::runtime_error("cannot open '" + path.string() + "'");
    for (const TurnTranslation& t : ts) {
        nlohmann::json j = {{"dialogue", t.dialogue},
                            {"turn", t.turn},
                            {"source", t.source},
                            {"hypothesis", t.hypothesis}};
        if (!t.reference.empty()) j["reference"] = t.reference;
        os << j.dump() << "\n";
    }
}

int cmd_translate(const std::string& config_path, const std::string& out,
                  const std::string& input, std::size_t window,
                  std::size_t beam) {
    nct::ExperimentConfig cfg;
    if (!config_path.empty()) cfg = nct::load_config(config_path);
    RunPaths paths(out);
    nct::Vocabulary vocab;
    nct::ModelParams params = load_trained(cfg, paths, vocab);

    const std::string in_path =
        input.empty() ? (paths.data / "eval.jsonl").string() : input;
    std::vector<nct::Dialogue> corpus = nct::load_corpus(in_path);

    nct::TranslationOptions opts;
    opts.window = window;
    opts.beam = beam;
    std::vector<TurnTranslation> ts =
        translate_corpus(params, vocab, corpus, opts);
    save_translations(paths.root / "translations.jsonl", ts);
    for (const TurnTranslation& t : ts)
        std::cout << t.dialogue << "#" << t.turn << ": " << t.hypothesis << "\n";
    std::cout << "wrote " << ts.size() << " translations to "
              << (paths.root / "translations.jsonl").string() << "\n";
    return 0;
}

int cmd_evaluate(const std::string& config_path, const std::string& out,
                 std::size_t window, std::size_t beam, std::string label) {
    nct::ExperimentConfig cfg = nct::load_config(config_path);
    RunPaths paths(out);
    nct::Vocabulary vocab;
    nct::ModelParams params = load_trained(cfg, paths, vocab);
    std::vector<nct::Dialogue> corpus =
        nct::load_corpus((paths.data / "eval.jsonl").string());
    if (label.empty()) label = cfg.mode;

    nct::TranslationOptions opts;
    opts.window = window != 0 ? window : cfg.eval_window;
    opts.beam = beam != 0 ? beam : cfg.eval_beam;
    std::vector<TurnTranslation> ts =
        translate_corpus(params, vocab, corpus, opts);
    save_translations(paths.root / "translations.jsonl", ts);

    nct::MetricReport rep;
    std::vector<std::vector<std::string>> hyps, refs;
    for (const TurnTranslation& t : ts) {
        hyps.push_back(nct::split_words(t.hypothesis));
        refs.push_back(nct::split_words(t.reference));
    }
    rep.pairs = ts.size();
    rep.bleu = nct::corpus_bleu(hyps, refs);
    rep.ter = nct::corpus_ter(hyps, refs);

    // within-dialogue coherence of the hypothesis stream, averaged over
    // dialogues so no window ever crosses a dialogue boundary
    nct::WordVecFn vec = nct::model_word_vectors(params, vocab);
    double c1 = 0, c2 = 0, c3 = 0, cw = 0;
    std::size_t n_dialogues = 0, n_sents = 0;
    std::size_t cursor = 0;
    for (const nct::Dialogue& d : corpus) {
        std::vector<std::vector<std::string>> sents;
        for (std::size_t u = 0; u < d.turns.size(); ++u)
            sents.push_back(nct::split_words(ts[cursor + u].hypothesis));
        cursor += d.turns.size();
        nct::CoherenceReport c = nct::coherence_report(sents, vec, opts.window);
        c1 += c.one_back;
        c2 += c.two_back;
        c3 += c.three_back;
        cw += c.window;
        ++n_dialogues;
        n_sents += c.sentences;
    }
    rep.coherence.one_back = c1 / n_dialogues;
    rep.coherence.two_back = c2 / n_dialogues;
    rep.coherence.three_back = c3 / n_dialogues;
    rep.coherence.window = cw / n_dialogues;
    rep.coherence.sentences = n_sents;

    nlohmann::json j = nct::metric_report_json(rep);
    const fs::path events_path = paths.data / "eval_events.json";
    if (fs::exists(events_path)) {
        std::vector<nct::AmbiguousEvent> events =
            nct::load_events(events_path.string());
        std::map<std::pair<std::string, std::size_t>, std::string> hyp_of;
        for (const TurnTranslation& t : ts)
            hyp_of[{t.dialogue, t.turn}] = t.hypothesis;
        j["ambiguous_accuracy"] = nct::ambiguous_accuracy(
            events, [&hyp_of](const std::string& id, std::size_t turn) {
                auto it = hyp_of.find({id, turn});
                return it == hyp_of.end() ? std::string() : it->second;
            });
    }

    const fs::path metric_path = paths.root / ("metrics_" + label + ".json");
    std::ofstream os(metric_path);
    os << j.dump(2) << "\n";
    std::cout << "pairs " << rep.pairs << "  BLEU " << rep.bleu.bleu << "  TER "
              << rep.ter;
    if (j.contains("ambiguous_accuracy"))
        std::cout << "  ambiguous " << j["ambiguous_accuracy"].get<double>();
    std::cout << "\nwrote " << metric_path.string() << "\n";
    return 0;
}

int cmd_report(const std::string& out) {
    RunPaths paths(out);
    std::vector<nct::LossReport> log;
    if (fs::exists(paths.log)) log = nct::load_train_log(paths.log.string());

    std::vector<std::pair<std::string, nlohmann::json>> metrics;
    for (const auto& entry : fs::directory_iterator(paths.root)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("metrics_", 0) == 0 &&
            entry.path().extension() == ".json") {
            std::ifstream is(entry.path());
            metrics.push_back({name.substr(8, name.size() - 8 - 5),
                               nlohmann::json::parse(is)});
        }
    }
    std::sort(metrics.begin(), metrics.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    std::string chart_ref;
    if (!log.empty()) {
        std::ofstream svg(paths.root / "loss.svg", std::ios::trunc);
        svg << nct::training_chart(log);
        chart_ref = "loss.svg";
    }
    std::ofstream md(paths.root / "report.md", std::ios::trunc);
    md << nct::render_report(log, metrics, chart_ref);
    std::cout << "wrote " << (paths.root / "report.md").string();
    if (!chart_ref.empty())
        std::cout << " and " << (paths.root / "loss.svg").string();
    std::cout << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"context-aware dialogue translation"};
    app.require_subcommand(1);

    std::string config_path, out_dir, mode, input, label;
    std::uint64_t seed = 1;
    std::size_t window = 0, beam = 0;
    bool resume = false;

    CLI::App* mk = app.add_subcommand("make-synthetic",
                                      "generate a synthetic dialogue corpus");
    mk->add_option("--config", config_path, "experiment config JSON");
    mk->add_option("--out", out_dir, "run directory")->required();
    mk->add_option("--seed", seed, "corpus seed");

    CLI::App* tr = app.add_subcommand("train", "train a model");
    tr->add_option("--config", config_path, "experiment config JSON")->required();
    tr->add_option("--out", out_dir, "run directory")->required();
    CLI::Option* seed_opt = tr->add_option("--seed", seed, "training seed");
    tr->add_option("--mode", mode, "mmt or ft (overrides config)");
    tr->add_flag("--resume", resume, "continue from last.ckpt");

    CLI::App* tl = app.add_subcommand("translate", "translate a corpus file");
    tl->add_option("--config", config_path, "experiment config JSON");
    tl->add_option("--out", out_dir, "run directory")->required();
    tl->add_option("--input", input, "corpus to translate (default data/eval.jsonl)");
    tl->add_option("--window", window, "context turns")->default_val(3);
    tl->add_option("--beam", beam, "beam width")->default_val(4);

    CLI::App* ev = app.add_subcommand("evaluate", "score the held-out corpus");
    ev->add_option("--config", config_path, "experiment config JSON")->required();
    ev->add_option("--out", out_dir, "run directory")->required();
    ev->add_option("--window", window, "context turns (0 = from config)");
    ev->add_option("--beam", beam, "beam width (0 = from config)");
    ev->add_option("--label", label, "metric file label (default: mode)");

    CLI::App* rp = app.add_subcommand("report", "render report.md and loss.svg");
    rp->add_option("--out", out_dir, "run directory")->required();

    CLI11_PARSE(app, argc, argv);
    try {
        if (mk->parsed()) return cmd_make_synthetic(config_path, out_dir, seed);
        if (tr->parsed())
            return cmd_train(config_path, out_dir, seed, seed_opt->count() > 0,
                             mode, resume);
        if (tl->parsed())
            return cmd_translate(config_path, out_dir, input, window, beam);
        if (ev->parsed())
            return cmd_evaluate(config_path, out_dir, window, beam, label);
        if (rp->parsed()) return cmd_report(out_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
