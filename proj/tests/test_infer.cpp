#include <cmath>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "catch2/catch_amalgamated.hpp"
#include "nct/decode.hpp"
#include "nct/metrics.hpp"

using namespace nct;

namespace {

using Words = std::vector<std::string>;

Dialogue toy_bilingual() {
    Dialogue d;
    d.id = "toy";
    d.kind = "bilingual-pair";
    auto turn = [](const char* spk, int t, const char* text, const char* lang) {
        Utterance u;
        u.speaker = spk;
        u.turn = t;
        u.text = text;
        u.lang = lang;
        return u;
    };
    d.turns = {turn("s1", 1, "aba bab", "xx"), turn("s2", 2, "abab aba", "xx"),
               turn("s1", 3, "bab abab", "xx")};
    d.aligned = {turn("s1", 1, "ba ab", "yy"), turn("s2", 2, "baba ba", "yy"),
                 turn("s1", 3, "ab baba", "yy")};
    return d;
}

Vocabulary toy_vocab() {
    std::vector<std::string> texts;
    Dialogue d = toy_bilingual();
    for (const Utterance& u : d.turns) texts.push_back(u.text);
    for (const Utterance& u : d.aligned) texts.push_back(u.text);
    return bpe_train(texts, 3);
}

ModelParams toy_model(const Vocabulary& v, std::uint64_t seed) {
    ModelConfig cfg;
    cfg.layers = 1;
    cfg.hidden = 8;
    cfg.ffn = 12;
    cfg.heads = 2;
    cfg.vocab = v.size();
    cfg.max_seq = 32;
    cfg.max_turns = 6;
    cfg.dropout = 0.0;
    return ModelParams::init(cfg, seed);
}

// n-gram counting with a deliberately different mechanism than the library:
// grams become separator-joined strings in a hash map.
double naive_bleu(const std::vector<Words>& hyps, const std::vector<Words>& refs) {
    auto grams = [](const Words& w, std::size_t n) {
        std::unordered_map<std::string, std::size_t> out;
        for (std::size_t i = 0; i + n <= w.size(); ++i) {
            std::string key;
            for (std::size_t j = 0; j < n; ++j) key += w[i + j] + "\x1f";
            ++out[key];
        }
        return out;
    };
    std::size_t matched[4] = {0, 0, 0, 0}, possible[4] = {0, 0, 0, 0};
    std::size_t hl = 0, rl = 0;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        hl += hyps[i].size();
        rl += refs[i].size();
        for (std::size_t n = 1; n <= 4; ++n) {
            auto hc = grams(hyps[i], n);
            auto rc = grams(refs[i], n);
            for (const auto& [g, c] : hc) {
                auto it = rc.find(g);
                if (it != rc.end()) matched[n - 1] += std::min(c, it->second);
            }
            if (hyps[i].size() >= n) possible[n - 1] += hyps[i].size() - n + 1;
        }
    }
    if (hl == 0) return 0.0;
    double logs = 0.0;
    for (std::size_t n = 0; n < 4; ++n) {
        double num = static_cast<double>(matched[n]);
        double den = static_cast<double>(possible[n]);
        if (n >= 1 && matched[n] == 0) {
            num += 1.0;
            den += 1.0;
        }
        if (num == 0.0 || den == 0.0) return 0.0;
        logs += std::log(num / den);
    }
    const double bp = hl < rl ? std::exp(1.0 - double(rl) / double(hl)) : 1.0;
    return 100.0 * bp * std::exp(logs / 4.0);
}

// Smallest shifts+edits total reachable with up to `max_shifts` block moves,
// found by plain breadth-first enumeration.
std::size_t exhaustive_ter_edits(const Words& hyp, const Words& ref,
                                 std::size_t max_shifts = 3) {
    std::size_t best = edit_distance(hyp, ref);
    std::set<Words> seen = {hyp};
    std::vector<Words> frontier = {hyp};
    for (std::size_t k = 1; k <= max_shifts; ++k) {
        std::vector<Words> next;
        for (const Words& w : frontier) {
            for (std::size_t s = 0; s < w.size(); ++s)
                for (std::size_t len = 1; s + len <= w.size(); ++len)
                    for (std::size_t dst = 0; dst + len <= w.size(); ++dst) {
                        if (dst == s) continue;
                        Words rest;
                        for (std::size_t i = 0; i < w.size(); ++i)
                            if (i < s || i >= s + len) rest.push_back(w[i]);
                        Words cand(rest.begin(),
                                   rest.begin() + static_cast<std::ptrdiff_t>(dst));
                        cand.insert(cand.end(), w.begin() + s, w.begin() + s + len);
                        cand.insert(cand.end(),
                                    rest.begin() + static_cast<std::ptrdiff_t>(dst),
                                    rest.end());
                        if (seen.insert(cand).second) {
                            best = std::min(best, k + edit_distance(cand, ref));
                            next.push_back(std::move(cand));
                        }
                    }
        }
        frontier = std::move(next);
        if (frontier.empty()) break;
    }
    return best;
}

}  // namespace

TEST_CASE("word splitting handles runs of whitespace") {
    REQUIRE(split_words("a b  c") == Words{"a", "b", "c"});
    REQUIRE(split_words("  x\t y \n") == Words{"x", "y"});
    REQUIRE(split_words("").empty());
}

TEST_CASE("corpus bleu reproduces frozen reference values") {
    Words h1 = split_words("the cat sat on the mat");
    Words r1 = split_words("the cat is on the mat");

    BleuReport one = corpus_bleu({h1}, {r1});
    REQUIRE(one.bleu == Catch::Approx(42.04482076268573).margin(1e-9));
    REQUIRE(one.precision[0] == Catch::Approx(5.0 / 6.0).margin(1e-12));
    REQUIRE(one.precision[1] == Catch::Approx(0.6).margin(1e-12));
    REQUIRE(one.precision[2] == Catch::Approx(0.25).margin(1e-12));
    REQUIRE(one.precision[3] == Catch::Approx(0.25).margin(1e-12));
    REQUIRE(one.brevity_penalty == 1.0);

    Words h2 = split_words("a quick brown fox");
    Words r2 = split_words("the quick brown fox jumps");
    BleuReport two = corpus_bleu({h1, h2}, {r1, r2});
    REQUIRE(two.bleu == Catch::Approx(38.6625271627883).margin(1e-9));
    REQUIRE(two.brevity_penalty == Catch::Approx(0.9048374180359595).margin(1e-12));

    REQUIRE(corpus_bleu({h1}, {h1}).bleu == Catch::Approx(100.0).margin(1e-9));
    REQUIRE(corpus_bleu({{"a"}}, {{"a"}}).bleu == Catch::Approx(100.0).margin(1e-9));

    BleuReport shorty = corpus_bleu({split_words("the cat")},
                                    {split_words("the cat sat")});
    REQUIRE(shorty.bleu == Catch::Approx(60.653065971263345).margin(1e-9));

    REQUIRE(corpus_bleu({split_words("u v w x")}, {split_words("p q r s")}).bleu ==
            0.0);
    REQUIRE_THROWS_AS(corpus_bleu({}, {}), std::invalid_argument);
    REQUIRE_THROWS_AS(corpus_bleu({h1}, {r1, r2}), std::invalid_argument);
}

TEST_CASE("corpus bleu agrees with an independent implementation") {
    std::mt19937_64 rng(8);
    const std::vector<std::string> lexicon = {"aa", "bb", "cc", "dd"};
    for (int round = 0; round < 30; ++round) {
        std::vector<Words> hyps, refs;
        const std::size_t pairs = 1 + rng() % 5;
        for (std::size_t i = 0; i < pairs; ++i) {
            Words h, r;
            for (std::size_t j = 0, n = 1 + rng() % 6; j < n; ++j)
                h.push_back(lexicon[rng() % lexicon.size()]);
            for (std::size_t j = 0, n = 1 + rng() % 6; j < n; ++j)
                r.push_back(lexicon[rng() % lexicon.size()]);
            hyps.push_back(h);
            refs.push_back(r);
        }
        REQUIRE(corpus_bleu(hyps, refs).bleu ==
                Catch::Approx(naive_bleu(hyps, refs)).margin(1e-9));
    }
}

TEST_CASE("edit distance handles the classic cases") {
    REQUIRE(edit_distance({}, {}) == 0);
    REQUIRE(edit_distance({"a"}, {}) == 1);
    REQUIRE(edit_distance({}, {"a", "b"}) == 2);
    REQUIRE(edit_distance({"a", "b", "c"}, {"a", "b", "c"}) == 0);
    REQUIRE(edit_distance({"a", "b", "c"}, {"a", "x", "c"}) == 1);
    REQUIRE(edit_distance(split_words("kitten sits"), split_words("sitting sits")) ==
            1);
}

TEST_CASE("ter counts a paying block shift as one edit") {
    TerReport r = ter_sentence({"b", "a"}, {"a", "b"});
    REQUIRE(r.shifts == 1);
    REQUIRE(r.edits == 1);
    REQUIRE(r.ter == Catch::Approx(0.5).margin(1e-12));

    REQUIRE(ter_sentence({"a", "b"}, {"a", "b"}).edits == 0);
    REQUIRE(ter_sentence({"x"}, {"y"}).ter == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(ter_sentence({}, {"y", "y"}).edits == 2);
    REQUIRE(ter_sentence({"y"}, {}).edits == 1);
}

TEST_CASE("ter equals exhaustive shift search on the frozen pair set") {
    struct TerCase {
        Words hyp, ref;
        std::size_t edits;
    };
    const std::vector<TerCase> cases = {
        {{"x", "y"}, {"x", "y", "y", "y", "z"}, 3},
        {{"x", "y", "x", "y"}, {"y", "z"}, 3},
        {{"y"}, {"z", "x", "z", "x"}, 4},
        {{"x", "x", "z"}, {"z"}, 2},
        {{"z"}, {"x", "y", "z", "x"}, 3},
        {{"y", "y", "z", "x", "y"}, {"x", "z"}, 4},
        {{"y", "x"}, {"y", "z", "z", "x"}, 2},
        {{"x", "z"}, {"y", "z", "z"}, 2},
        {{"z", "z", "x", "y", "y"}, {"z", "y", "z", "y"}, 2},
        {{"y", "x", "z", "y", "y"}, {"z"}, 4},
        {{"z", "z"}, {"z", "z", "y"}, 1},
        {{"z"}, {"z", "x", "x", "z"}, 3},
        {{"y", "z", "x", "y"}, {"x", "y", "z"}, 2},
        {{"z", "y", "z", "x", "x"}, {"z", "x", "x", "x", "z"}, 2},
        {{"y", "z", "y", "z", "y"}, {"y", "y"}, 3},
        {{"z", "x", "y", "z", "z"}, {"x", "z", "z", "x", "y"}, 2},
        {{"y"}, {"z", "z", "x", "z"}, 4},
        {{"y", "y", "y", "x"}, {"z", "z", "z", "z"}, 4},
        {{"z", "x", "x"}, {"z", "x", "z", "z"}, 2},
        {{"z", "y"}, {"x"}, 2},
    };
    for (const TerCase& c : cases) {
        INFO("hyp size " << c.hyp.size() << " ref size " << c.ref.size());
        TerReport r = ter_sentence(c.hyp, c.ref);
        REQUIRE(r.edits == c.edits);
        REQUIRE(exhaustive_ter_edits(c.hyp, c.ref) == c.edits);
    }

    // aggregate form: totals over the corpus, not a mean of ratios
    const double total = corpus_ter({{"b", "a"}, {"a"}}, {{"a", "b"}, {"a"}});
    REQUIRE(total == Catch::Approx(1.0 / 3.0).margin(1e-12));
}

TEST_CASE("greedy decoding equals beam width one") {
    Vocabulary v = toy_vocab();
    ModelParams p = toy_model(v, 101);
    Dialogue d = toy_bilingual();
    Batch src = encode_translation_input(d, 2, 2, v, p.cfg.max_seq,
                                         p.cfg.max_turns);

    DecodeResult g = greedy_decode(p, src);
    DecodeResult b = beam_decode(p, src, 1);
    REQUIRE(g.tokens == b.tokens);
    REQUIRE(g.score == Catch::Approx(b.score).margin(1e-12));
    REQUIRE(g.ended_with_eos == b.ended_with_eos);
    for (int t : g.tokens) REQUIRE(proposable_target(t));
}

TEST_CASE("a wide enough beam finds the exhaustive-search optimum") {
    Vocabulary v = toy_vocab();
    ModelParams p = toy_model(v, 103);
    Dialogue d = toy_bilingual();
    Batch src = encode_translation_input(d, 2, 1, v, p.cfg.max_seq,
                                         p.cfg.max_turns);

    const std::size_t cap = 2;
    std::vector<int> body;  // every proposable id except <eos>
    for (std::size_t k = 0; k < p.cfg.vocab; ++k)
        if (proposable_target(static_cast<int>(k)) &&
            static_cast<int>(k) != Vocabulary::kEos)
            body.push_back(static_cast<int>(k));

    // enumerate: terminated sequences shorter than the cap, and force-finished
    // sequences exactly at the cap
    double best_score = -1e300;
    std::vector<int> best_tokens;
    auto consider = [&](const std::vector<int>& toks, bool terminated) {
        const double s = score_sequence(p, src, toks, terminated);
        if (s > best_score) {
            best_score = s;
            best_tokens = toks;
        }
    };
    consider({}, true);
    for (int a : body) {
        consider({a}, true);
        for (int b2 : body) consider({a, b2}, false);
    }

    DecodeResult beam = beam_decode(p, src, 128, cap);
    REQUIRE(beam.score == Catch::Approx(best_score).margin(1e-9));
    REQUIRE(beam.tokens == best_tokens);

    // the incremental beam score matches a teacher-forced rescoring
    const double rescore =
        beam.tokens.empty()
            ? score_sequence(p, src, {}, true)
            : score_sequence(p, src, beam.tokens, beam.ended_with_eos);
    REQUIRE(beam.score == Catch::Approx(rescore).margin(1e-9));
}

TEST_CASE("decoding is deterministic and respects the length cap") {
    Vocabulary v = toy_vocab();
    ModelParams p = toy_model(v, 107);
    Dialogue d = toy_bilingual();
    Batch src = encode_translation_input(d, 3, 2, v, p.cfg.max_seq,
                                         p.cfg.max_turns);

    DecodeResult a = beam_decode(p, src, 4);
    DecodeResult b = beam_decode(p, src, 4);
    REQUIRE(a.tokens == b.tokens);
    REQUIRE(a.score == b.score);

    DecodeResult capped = beam_decode(p, src, 4, 3);
    REQUIRE(capped.tokens.size() <= 3);
    DecodeResult gcap = greedy_decode(p, src, 3);
    REQUIRE(gcap.tokens.size() <= 3);

    const std::string text1 = translate_turn(p, v, d, 2, {2, 4, 0});
    const std::string text2 = translate_turn(p, v, d, 2, {2, 4, 0});
    REQUIRE(text1 == text2);
}

TEST_CASE("coherence matches hand-computed cosines") {
    auto vecs = [](const std::string& w) -> std::vector<double> {
        if (w == "a") return {1.0, 0.0};
        if (w == "b") return {0.0, 1.0};
        return {};
    };

    CoherenceReport same = coherence_report({{"a"}, {"a"}}, vecs);
    REQUIRE(std::fabs(same.one_back - 1.0) < 1e-12);

    CoherenceReport ortho = coherence_report({{"a"}, {"b"}}, vecs);
    REQUIRE(std::fabs(ortho.one_back) < 1e-12);

    CoherenceReport tri = coherence_report({{"a"}, {"b"}, {"a"}}, vecs);
    REQUIRE(std::fabs(tri.one_back) < 1e-12);
    REQUIRE(std::fabs(tri.two_back - 1.0) < 1e-12);
    REQUIRE(tri.three_back == 0.0);
    REQUIRE(std::fabs(tri.window - 0.5 * (0.0 + 0.7071067811865475)) < 1e-12);
    REQUIRE(tri.sentences == 3);

    // scaling every vector leaves cosines untouched
    auto scaled = [&vecs](const std::string& w) {
        std::vector<double> v = vecs(w);
        for (double& x : v) x *= 37.5;
        return v;
    };
    CoherenceReport tri2 = coherence_report({{"a"}, {"b"}, {"a"}}, scaled);
    REQUIRE(std::fabs(tri2.window - tri.window) < 1e-12);
    REQUIRE(std::fabs(tri2.two_back - tri.two_back) < 1e-12);

    REQUIRE_THROWS_AS(coherence_report({{"a"}}, vecs, 0), std::invalid_argument);
}

TEST_CASE("model word vectors average the subword embedding rows") {
    Vocabulary v = toy_vocab();
    ModelParams p = toy_model(v, 109);
    WordVecFn fn = model_word_vectors(p, v);
    std::vector<double> x = fn("aba");
    REQUIRE(x.size() == p.cfg.hidden);
    REQUIRE(fn("aba") == x);

    const std::vector<int> ids = v.encode_word("aba");
    std::vector<double> manual(p.cfg.hidden, 0.0);
    for (int id : ids)
        for (std::size_t j = 0; j < p.cfg.hidden; ++j)
            manual[j] += p.we.at(static_cast<std::size_t>(id), j) /
                         static_cast<double>(ids.size());
    for (std::size_t j = 0; j < p.cfg.hidden; ++j)
        REQUIRE(x[j] == Catch::Approx(manual[j]).margin(1e-15));
}

TEST_CASE("metric reports serialize to parseable json") {
    MetricReport rep;
    rep.pairs = 7;
    rep.bleu = corpus_bleu({split_words("a b c")}, {split_words("a b d")});
    rep.ter = 0.25;
    rep.coherence.one_back = 0.5;
    rep.coherence.sentences = 7;

    const std::string path = "metric_report_test.json";
    save_metric_report(path, rep);
    std::ifstream is(path);
    nlohmann::json j = nlohmann::json::parse(is);
    REQUIRE(j["pairs"] == 7);
    REQUIRE(j["bleu"]["score"].get<double>() == Catch::Approx(rep.bleu.bleu));
    REQUIRE(j["ter"].get<double>() == 0.25);
    REQUIRE(j["coherence"]["one_back"].get<double>() == 0.5);
    std::remove(path.c_str());
}
