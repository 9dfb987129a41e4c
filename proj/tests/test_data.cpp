#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <random>

#include "nct/batch.hpp"
#include "nct/context.hpp"
#include "nct/corpus.hpp"
#include "nct/samples.hpp"
#include "nct/vocab.hpp"

using namespace nct;
namespace fs = std::filesystem;

namespace {

// Dialogue with n alternating turns "w<turn> ..." in the given language.
Dialogue toy_dialogue(const std::string& id, int n, const std::string& lang,
                      bool bilingual) {
    Dialogue d;
    d.id = id;
    d.kind = bilingual ? "bilingual-pair" : "monolingual";
    for (int t = 1; t <= n; ++t) {
        Utterance u;
        u.speaker = t % 2 == 1 ? "s1" : "s2";
        u.turn = t;
        u.text = "tok" + std::to_string(t) + " word" + id;
        u.lang = lang;
        d.turns.push_back(u);
        if (bilingual) {
            Utterance a = u;
            a.lang = lang + "x";
            a.text = "kot" + std::to_string(t) + " drow" + id;
            d.aligned.push_back(a);
        }
    }
    return d;
}

// vocabulary covering every token of the given dialogues
Vocabulary dialogue_vocab(const std::vector<Dialogue>& ds, std::size_t merges) {
    std::vector<std::string> texts;
    for (const Dialogue& d : ds) {
        for (const Utterance& u : d.turns) texts.push_back(u.text);
        for (const Utterance& u : d.aligned) texts.push_back(u.text);
    }
    return bpe_train(texts, merges);
}

fs::path tmpdir() {
    fs::path p = fs::current_path() / "test_data_tmp";
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("bpe with zero merges is a character vocabulary") {
    Vocabulary v = bpe_train({"hello"}, 0);
    REQUIRE(v.merges().empty());
    std::vector<std::string> seg = v.segment_word("hello");
    std::vector<std::string> want = {"h@@", "e@@", "l@@", "l@@", "o"};
    REQUIRE(seg == want);
    for (const std::string& s : seg) REQUIRE(v.contains(s));
}

TEST_CASE("most frequent pair wins the merge") {
    Vocabulary v = bpe_train({"aa aa ab"}, 1);
    REQUIRE(v.merges().size() == 1);
    REQUIRE(v.merges()[0] == std::make_pair(std::string("a"), std::string("a")));
    REQUIRE(v.segment_word("aa") == std::vector<std::string>{"aa"});
    std::vector<std::string> ab = {"a@@", "b"};
    REQUIRE(v.segment_word("ab") == ab);
}

TEST_CASE("pair-count ties break lexicographically") {
    Vocabulary v = bpe_train({"bc bc ad ad"}, 1);
    REQUIRE(v.merges()[0] == std::make_pair(std::string("a"), std::string("d")));
}

TEST_CASE("merge replay reproduces training segmentation and round-trips") {
    std::vector<std::string> texts = {"the cat sat on the mat",
                                      "the dog sat on the log",
                                      "a cat and a dog and a frog"};
    Vocabulary v = bpe_train(texts, 30);
    for (const std::string& t : texts) {
        REQUIRE(v.decode(v.encode(t)) == t);
        for (int id : v.encode(t)) REQUIRE(id != Vocabulary::kUnk);
    }
    // determinism: training twice gives the identical vocabulary
    Vocabulary v2 = bpe_train(texts, 30);
    REQUIRE(v.hash() == v2.hash());
}

TEST_CASE("vocabulary file round-trip preserves everything") {
    Vocabulary v = bpe_train({"alpha beta gamma alpha beta"}, 12);
    fs::path p = tmpdir() / "vocab.txt";
    v.save(p.string());
    Vocabulary w = Vocabulary::load(p.string());
    REQUIRE(v.hash() == w.hash());
    REQUIRE(v.size() == w.size());
    REQUIRE(v.encode("alpha beta gamma") == w.encode("alpha beta gamma"));
    REQUIRE(w.token(Vocabulary::kPad) == "<pad>");
    REQUIRE(w.token(Vocabulary::kEos) == "<eos>");
}

TEST_CASE("special ids are pinned") {
    REQUIRE(Vocabulary::kPad == 0);
    REQUIRE(Vocabulary::kUnk == 1);
    REQUIRE(Vocabulary::kCls == 2);
    REQUIRE(Vocabulary::kSep == 3);
    REQUIRE(Vocabulary::kEos == 4);
    Vocabulary v;
    REQUIRE(v.id("never-seen-token") == Vocabulary::kUnk);
}

TEST_CASE("corpus save/load round-trips and validates") {
    std::vector<Dialogue> corpus = {toy_dialogue("d1", 5, "src", true),
                                    toy_dialogue("d2", 4, "src", true)};
    fs::path p = tmpdir() / "corpus.jsonl";
    save_corpus(p.string(), corpus);
    std::vector<Dialogue> back = load_corpus(p.string());
    REQUIRE(back.size() == 2);
    REQUIRE(back[0].id == "d1");
    REQUIRE(back[0].turns.size() == 5);
    REQUIRE(back[0].aligned[2].text == corpus[0].aligned[2].text);
    REQUIRE(back[1].turns[1].speaker == "s2");
}

TEST_CASE("corpus validation rejects broken records with a location") {
    Dialogue bad = toy_dialogue("d1", 3, "src", false);
    bad.turns[1].speaker = "s1";  // even turn must be s2
    REQUIRE_THROWS_WITH(validate_dialogue(bad, "here"),
                        Catch::Matchers::ContainsSubstring("turn 2"));

    Dialogue gap = toy_dialogue("d2", 3, "src", false);
    gap.turns[2].turn = 5;
    REQUIRE_THROWS(validate_dialogue(gap, "here"));

    Dialogue mis = toy_dialogue("d3", 3, "src", true);
    mis.aligned.pop_back();
    REQUIRE_THROWS_WITH(validate_dialogue(mis, "here"),
                        Catch::Matchers::ContainsSubstring("aligned_turns"));

    fs::path p = tmpdir() / "dup.jsonl";
    std::vector<Dialogue> dup = {toy_dialogue("same", 2, "src", false)};
    save_corpus(p.string(), dup);
    std::ofstream os(p.string(), std::ios::app);
    os << R"({"id":"same","kind":"monolingual","turns":[{"speaker":"s1","turn":1,"text":"x","lang":"src"}]})"
       << "\n";
    os.close();
    REQUIRE_THROWS_WITH(load_corpus(p.string()),
                        Catch::Matchers::ContainsSubstring("duplicate"));
}

TEST_CASE("context windows and speaker partition follow the turn parity") {
    Dialogue d = toy_dialogue("d", 6, "src", false);

    ContextBundle b5 = build_context(d, 5, kUnboundedWindow);
    REQUIRE(b5.full == std::vector<std::size_t>{0, 1, 2, 3});
    REQUIRE(b5.s1 == std::vector<std::size_t>{0, 2});  // x1, x3
    REQUIRE(b5.s2 == std::vector<std::size_t>{1, 3});  // x2, x4

    ContextBundle b5w = build_context(d, 5, 3);
    REQUIRE(b5w.full == std::vector<std::size_t>{1, 2, 3});
    // speaker split stays unwindowed and partitions the history
    std::vector<std::size_t> merged;
    std::merge(b5w.s1.begin(), b5w.s1.end(), b5w.s2.begin(), b5w.s2.end(),
               std::back_inserter(merged));
    REQUIRE(merged == std::vector<std::size_t>{0, 1, 2, 3});

    ContextBundle b1 = build_context(d, 1, 3);
    REQUIRE(b1.full.empty());
    REQUIRE(b1.s1.empty());
    REQUIRE(b1.s2.empty());

    REQUIRE(build_context(d, 4, 0).full.empty());
    REQUIRE_THROWS_AS(build_context(d, 7, 3), std::invalid_argument);
    REQUIRE_THROWS_AS(build_context(d, 0, 3), std::invalid_argument);

    // never the current turn or later
    for (std::size_t u = 1; u <= 6; ++u) {
        ContextBundle b = build_context(d, u, 2);
        for (std::size_t i : b.full) REQUIRE(i < u - 1 + 1);
        for (std::size_t i : b.s1) REQUIRE(i + 1 < u);
        for (std::size_t i : b.s2) REQUIRE(i + 1 < u);
    }
}

TEST_CASE("ud samples pair the context with in- and out-of-dialogue candidates") {
    std::vector<Dialogue> corpus = {toy_dialogue("d1", 4, "src", false),
                                    toy_dialogue("d2", 4, "src", false),
                                    toy_dialogue("d3", 4, "src", false)};
    std::mt19937_64 rng(5);
    auto samples = make_ud_samples(corpus, 0, 3, 3, Side::kSource, rng, 2);
    REQUIRE(samples.size() == 3);
    REQUIRE(samples[0].label == 1);
    REQUIRE(samples[0].candidate.text == corpus[0].turns[2].text);
    REQUIRE(samples[0].context.size() == 2);
    for (std::size_t i = 1; i < samples.size(); ++i) {
        REQUIRE(samples[i].label == 0);
        // negative comes from another dialogue: its text never matches d1's
        for (const Utterance& u : corpus[0].turns)
            REQUIRE(samples[i].candidate.text != u.text);
    }
    // u=1: empty context still yields a sample pair
    auto first = make_ud_samples(corpus, 0, 1, 3, Side::kSource, rng, 1);
    REQUIRE(first.size() == 2);
    REQUIRE(first[0].context.empty());

    std::vector<Dialogue> lone = {toy_dialogue("d1", 3, "src", false)};
    REQUIRE_THROWS_AS(make_ud_samples(lone, 0, 2, 3, Side::kSource, rng, 1),
                      std::invalid_argument);
}

TEST_CASE("sd samples need both speaker histories") {
    Dialogue d = toy_dialogue("d", 6, "src", false);
    REQUIRE(make_sd_samples(d, 1, Side::kSource).empty());
    REQUIRE(make_sd_samples(d, 2, Side::kSource).empty());

    auto s5 = make_sd_samples(d, 5, Side::kSource);  // x5 spoken by s1
    REQUIRE(s5.size() == 2);
    REQUIRE(s5[0].label == 1);
    REQUIRE(s5[0].context.size() == 2);
    REQUIRE(s5[0].context[0].text == d.turns[0].text);  // x1
    REQUIRE(s5[0].context[1].text == d.turns[2].text);  // x3
    REQUIRE(s5[1].label == 0);
    REQUIRE(s5[1].context[0].text == d.turns[1].text);  // x2
    REQUIRE(s5[1].context[1].text == d.turns[3].text);  // x4

    // counting oracle: a T-turn dialogue yields exactly 2*(T-2) SD samples
    for (int T = 3; T <= 6; ++T) {
        Dialogue dd = toy_dialogue("dd", T, "src", false);
        std::size_t total = 0;
        for (std::size_t u = 1; u <= static_cast<std::size_t>(T); ++u)
            total += make_sd_samples(dd, u, Side::kSource).size();
        REQUIRE(total == 2 * static_cast<std::size_t>(T - 2));
    }
}

TEST_CASE("translation input layout, boundary and masks") {
    Dialogue d = toy_dialogue("d", 5, "src", true);
    Vocabulary v = dialogue_vocab({d}, 60);

    Batch b = encode_translation_input(d, 3, 2, v, 256, 64);
    // layout: [x1] <sep> [x2] <sep> [x3] <eos>
    REQUIRE(b.tok[b.boundary] == Vocabulary::kSep);
    REQUIRE(b.tok.back() == Vocabulary::kEos);
    std::size_t sep_count = 0;
    for (int t : b.tok) sep_count += t == Vocabulary::kSep ? 1 : 0;
    REQUIRE(sep_count == 2);
    // positions are 0..len-1, turn rows nondecreasing
    for (std::size_t i = 0; i < b.len(); ++i) REQUIRE(b.pos[i] == static_cast<int>(i));
    for (std::size_t i = 1; i < b.len(); ++i) REQUIRE(b.trn[i] >= b.trn[i - 1]);
    // mask keeps exactly the x_u span
    for (std::size_t i = 0; i < b.len(); ++i)
        REQUIRE(b.ctx_key_mask[i] == (i >= b.boundary ? 1 : 0));
    REQUIRE(b.gold.back() == Vocabulary::kEos);
    REQUIRE(b.gold.size() > 1);

    // empty context: <sep> x1 <eos>, boundary 0
    Batch b1 = encode_translation_input(d, 1, 3, v, 256, 64);
    REQUIRE(b1.boundary == 0);
    REQUIRE(b1.tok[0] == Vocabulary::kSep);
    REQUIRE(b1.tok.back() == Vocabulary::kEos);
    for (std::uint8_t k : b1.ctx_key_mask) REQUIRE(k == 1);

    // truncation drops the oldest context utterance first, never x_u
    Batch full = encode_translation_input(d, 5, 4, v, 256, 64);
    Batch cut = encode_translation_input(d, 5, 4, v, full.len() - 1, 64);
    REQUIRE(cut.len() < full.len());
    std::size_t xu_len = full.len() - full.boundary;
    REQUIRE(cut.len() - cut.boundary == xu_len);
    // and an impossible budget raises
    REQUIRE_THROWS_AS(encode_translation_input(d, 5, 4, v, 2, 64),
                      std::invalid_argument);
}

TEST_CASE("classifier sequences carry cls/candidate shapes") {
    Dialogue d = toy_dialogue("d", 4, "src", false);
    Vocabulary v = dialogue_vocab({d}, 40);
    std::vector<Utterance> ctx = {d.turns[0], d.turns[1]};
    Batch c = encode_classifier_context(ctx, v, 256, 64);
    REQUIRE(c.tok[0] == Vocabulary::kCls);
    std::size_t seps = 0;
    for (int t : c.tok) seps += t == Vocabulary::kSep ? 1 : 0;
    REQUIRE(seps == 1);

    Batch empty = encode_classifier_context({}, v, 256, 64);
    REQUIRE(empty.len() == 1);
    REQUIRE(empty.tok[0] == Vocabulary::kCls);

    Batch cand = encode_classifier_candidate(d.turns[2], v, 256, 64);
    REQUIRE(cand.len() >= 1);
    for (int t : cand.tok) REQUIRE(t >= static_cast<int>(Vocabulary::kNumSpecials));

    // turn rows clamp at the table size
    Dialogue deep = toy_dialogue("deep", 6, "src", false);
    Batch deep_b = encode_classifier_candidate(deep.turns[5], v, 256, 4);
    for (int t : deep_b.trn) REQUIRE(t == 3);
}
