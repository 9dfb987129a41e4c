#pragma once

// Synthetic dialogue corpus with three controllable context signals.
//
//   topic words    every utterance repeats its dialogue's topic token
//   speaker tics   each speaker opens with a habitual token; a dialogue is
//                  held between one fixed pair of speakers
//   markers        an ambiguous source word has two target renderings; which
//                  one is correct is stated by a marker token one to three
//                  turns earlier, never in the carrying turn itself
//
// A dialogue's identity is the pair (topic, speaker pair). Both fields come
// from rosters of roughly the square root of the dialogue count, and no two
// dialogues of one split share the full pair, so membership of a candidate
// utterance is decidable — it belongs iff its topic AND its speaker tic both
// match the context. Keeping each roster small matters: a discriminator has
// to compare a candidate field against the context's, and the number of
// distinct field values it must tell apart is what the comparison circuitry
// pays for, not the number of dialogues.
//
// All splits share the rosters: training dialogue i owns combination i,
// held-out dialogues reuse a random distinct subset of training
// combinations, and monolingual dialogue i revisits combination i (running
// past the training count into fresh ones when there are more monolingual
// dialogues). Every held-out word type therefore occurs in both the
// bilingual and the monolingual training material; held-out dialogues are
// new conversations, not new vocabulary.
//
// The two renderings of every ambiguous word are balanced across the corpus,
// so a context-blind translator cannot beat chance on them, while the marker
// in the window decides the case exactly.
//
// Source-side words and their target renderings:
//   um<i> -> eh<i>     tics            f<i>  -> g<i>    fillers
//   top<i> -> tep<i>   topics          mx<j> -> nx<j>   markers, first kind
//   amb<j> -> va<j> or vb<j>           my<j> -> ny<j>   markers, second kind
// Targets repeat the source word order one to one.

#include <cmath>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nct/corpus.hpp"
#include "nct/rng.hpp"

namespace nct {

struct SyntheticSpec {
    std::size_t dialogues = 24;       // bilingual training dialogues
    std::size_t eval_dialogues = 8;   // held-out bilingual dialogues
    std::size_t mono_dialogues = 12;  // per language
    std::size_t turns = 6;
    std::size_t fillers = 10;
    std::size_t ambiguous = 4;
    double dependency_fraction = 0.5;  // fraction of turns carrying an
                                       // ambiguous word (bilingual dialogues)
    std::size_t marker_max_back = 3;

    // Ambiguous-word slots per bilingual dialogue at the configured fraction.
    std::size_t events_per_dialogue() const {
        return static_cast<std::size_t>(
            std::lround(dependency_fraction * static_cast<double>(turns)));
    }

    // Identity rosters. Dialogue identities are (topic, speaker pair)
    // combinations drawn bijectively from two rosters sized near the square
    // root of the larger split, so both stay small while every dialogue of a
    // split still gets a distinct combination.
    std::size_t combo_universe() const { return std::max(dialogues, mono_dialogues); }
    std::size_t topic_pool() const {
        return static_cast<std::size_t>(
            std::ceil(std::sqrt(static_cast<double>(combo_universe()))));
    }

    void validate() const {
        if (dialogues < 2 || eval_dialogues < 1 || mono_dialogues < 2)
            throw std::invalid_argument("synthetic: too few dialogues");
        if (eval_dialogues > dialogues)
            throw std::invalid_argument(
                "synthetic: held-out dialogues outnumber the training topics "
                "they reuse");
        if (turns < 3) throw std::invalid_argument("synthetic: need >= 3 turns");
        if (fillers < 1) throw std::invalid_argument("synthetic: need fillers");
        if (ambiguous < 1)
            throw std::invalid_argument("synthetic: need an ambiguous word");
        if (marker_max_back < 1 || marker_max_back >= turns)
            throw std::invalid_argument("synthetic: marker_max_back outside 1..turns-1");
        if (dependency_fraction < 0.0 || dependency_fraction > 1.0)
            throw std::invalid_argument("synthetic: dependency_fraction outside [0,1]");
        // distinct words per dialogue and a marker turn strictly before each
        // carrier turn must both be possible
        if (events_per_dialogue() > ambiguous)
            throw std::invalid_argument(
                "synthetic: dependency_fraction needs more distinct ambiguous "
                "words than configured");
        if (events_per_dialogue() > turns - 1)
            throw std::invalid_argument(
                "synthetic: dependency_fraction leaves no marker-only turn");
    }
};

struct AmbiguousEvent {
    std::string dialogue_id;
    std::size_t turn = 0;  // 1-based turn carrying the ambiguous word
    std::string source_word;
    std::string correct_target;
    std::string other_target;
};

struct SyntheticCorpus {
    std::vector<Dialogue> train, eval, mono_src, mono_tgt;
    std::vector<AmbiguousEvent> train_events, eval_events;
};

namespace detail {

struct SynState {
    std::mt19937_64 rng;
    std::size_t next_word = 0;                // round-robin ambiguous word
    std::vector<std::size_t> variant_toggle;  // per ambiguous word
};

inline std::string translate_word(const std::string& w) {
    if (w.rfind("um", 0) == 0) return "eh" + w.substr(2);
    if (w.rfind("top", 0) == 0) return "tep" + w.substr(3);
    if (w.rfind("f", 0) == 0) return "g" + w.substr(1);
    if (w.rfind("mx", 0) == 0) return "nx" + w.substr(2);
    if (w.rfind("my", 0) == 0) return "ny" + w.substr(2);
    throw std::invalid_argument("synthetic: no fixed rendering for '" + w + "'");
}

// One dialogue; bilingual when `events` is given, monolingual otherwise.
// Monolingual target-language dialogues are produced by rendering every
// source word through the lexicon. `combo` is the dialogue's identity: it
// decomposes into a topic (combo mod roster) and a speaker pair
// (combo div roster), and s1 keeps tic 2*pair while s2 keeps 2*pair+1.
inline Dialogue synth_dialogue(const SyntheticSpec& spec, SynState& st,
                               const std::string& id, std::size_t combo,
                               bool bilingual, bool target_language,
                               std::vector<AmbiguousEvent>* events) {
    const std::size_t topic = combo % spec.topic_pool();
    const std::size_t pair = combo / spec.topic_pool();
    const std::size_t tic1 = 2 * pair, tic2 = 2 * pair + 1;

    // Schedule (marker turn, carrier turn, word, rendering) quadruples.
    // Carrier turns are distinct and never turn 1; words are assigned
    // round-robin across the whole corpus so each ambiguous word is used
    // equally often, with renderings strictly alternating per word. A turn
    // never hosts the marker of its own event, though it may host markers
    // of other events.
    struct Event {
        std::size_t t_marker, t_amb, word;
        bool first_kind;
    };
    std::vector<Event> plan;
    {
        const std::size_t n_events = spec.events_per_dialogue();
        std::vector<std::size_t> carriers(spec.turns - 1);
        for (std::size_t i = 0; i < carriers.size(); ++i) carriers[i] = i + 2;
        for (std::size_t e = 0; e < n_events; ++e) {
            const std::size_t pick = e + rand_index(st.rng, carriers.size() - e);
            std::swap(carriers[e], carriers[pick]);
            Event ev;
            ev.word = st.next_word++ % spec.ambiguous;
            ev.t_amb = carriers[e];
            const std::size_t max_gap = std::min(spec.marker_max_back, ev.t_amb - 1);
            ev.t_marker = ev.t_amb - (1 + rand_index(st.rng, max_gap));
            ev.first_kind = st.variant_toggle[ev.word]++ % 2 == 0;
            plan.push_back(ev);
        }
    }

    Dialogue d;
    d.id = id;
    d.kind = bilingual ? "bilingual-pair" : "monolingual";
    for (std::size_t t = 1; t <= spec.turns; ++t) {
        std::vector<std::string> words;
        words.push_back("um" + std::to_string(t % 2 == 1 ? tic1 : tic2));
        words.push_back("top" + std::to_string(topic));
        for (const Event& ev : plan) {
            if (ev.t_marker == t)
                words.push_back((ev.first_kind ? "mx" : "my") +
                                std::to_string(ev.word));
            if (ev.t_amb == t) words.push_back("amb" + std::to_string(ev.word));
        }
        const std::size_t extra = rand_index(st.rng, 2);
        for (std::size_t k = 0; k < extra; ++k)
            words.push_back("f" + std::to_string(rand_index(st.rng, spec.fillers)));

        std::string src_text, tgt_text;
        for (const std::string& w : words) {
            std::string rendered;
            if (w.rfind("amb", 0) == 0) {
                bool first_kind = false;
                for (const Event& ev : plan)
                    if (ev.t_amb == t) first_kind = ev.first_kind;
                rendered = (first_kind ? "va" : "vb") + w.substr(3);
            } else {
                rendered = translate_word(w);
            }
            if (!src_text.empty()) src_text += ' ';
            src_text += w;
            if (!tgt_text.empty()) tgt_text += ' ';
            tgt_text += rendered;
        }

        Utterance u;
        u.speaker = t % 2 == 1 ? "s1" : "s2";
        u.turn = static_cast<int>(t);
        u.text = target_language ? tgt_text : src_text;
        u.lang = target_language ? "tl" : "sl";
        d.turns.push_back(u);
        if (bilingual) {
            Utterance a = u;
            a.text = tgt_text;
            a.lang = "tl";
            d.aligned.push_back(a);
        }
    }

    if (events)
        for (const Event& ev : plan) {
            AmbiguousEvent rec;
            rec.dialogue_id = id;
            rec.turn = ev.t_amb;
            rec.source_word = "amb" + std::to_string(ev.word);
            rec.correct_target =
                (ev.first_kind ? "va" : "vb") + std::to_string(ev.word);
            rec.other_target =
                (ev.first_kind ? "vb" : "va") + std::to_string(ev.word);
            events->push_back(rec);
        }
    validate_dialogue(d, "synthetic");
    return d;
}

}  // namespace detail

// Identity combinations are unique within each split, so whether a candidate
// utterance belongs to a context is decidable from its topic and tic
// together (either field alone collides across dialogues). Held-out
// dialogues reuse a random distinct subset of the training combinations:
// reuse keeps their words in the trained vocabulary, distinctness keeps
// dialogue membership decidable among the held-out dialogues themselves.
// Monolingual dialogues revisit the training combinations in order
// (continuing into fresh ones if there are more monolingual than bilingual
// dialogues), so the auxiliary tasks train on the same word types and the
// same identity structure the held-out dialogues are built from.
inline SyntheticCorpus make_synthetic_corpus(const SyntheticSpec& spec,
                                             std::uint64_t seed) {
    spec.validate();
    detail::SynState st;
    st.rng = stream_rng(seed, 0, 0, Stream::kSynthetic);
    st.variant_toggle.assign(spec.ambiguous, 0);

    SyntheticCorpus out;
    for (std::size_t i = 0; i < spec.dialogues; ++i)
        out.train.push_back(detail::synth_dialogue(spec, st,
                                                   "train" + std::to_string(i),
                                                   i, true, false,
                                                   &out.train_events));
    std::vector<std::size_t> reuse(spec.dialogues);
    std::iota(reuse.begin(), reuse.end(), std::size_t{0});
    for (std::size_t i = 0; i < spec.eval_dialogues; ++i)
        std::swap(reuse[i], reuse[i + rand_index(st.rng, reuse.size() - i)]);
    for (std::size_t i = 0; i < spec.eval_dialogues; ++i)
        out.eval.push_back(detail::synth_dialogue(
            spec, st, "eval" + std::to_string(i), reuse[i], true, false,
            &out.eval_events));
    for (std::size_t i = 0; i < spec.mono_dialogues; ++i)
        out.mono_src.push_back(detail::synth_dialogue(
            spec, st, "monosrc" + std::to_string(i), i, false, false,
            nullptr));
    for (std::size_t i = 0; i < spec.mono_dialogues; ++i)
        out.mono_tgt.push_back(detail::synth_dialogue(
            spec, st, "monotgt" + std::to_string(i), i, false, true,
            nullptr));
    return out;
}

// Every text of the corpus, for vocabulary training.
inline std::vector<std::string> all_texts(const SyntheticCorpus& c) {
    std::vector<std::string> out;
    for (const auto* corpus : {&c.train, &c.eval, &c.mono_src, &c.mono_tgt})
        for (const Dialogue& d : *corpus) {
            for (const Utterance& u : d.turns) out.push_back(u.text);
            for (const Utterance& u : d.aligned) out.push_back(u.text);
        }
    return out;
}

// Fraction of ambiguous tokens whose hypothesis contains the correct
// rendering and not the wrong one. `hypothesis` maps (dialogue id, turn) to
// the decoded text of that turn.
inline double ambiguous_accuracy(
    const std::vector<AmbiguousEvent>& events,
    const std::function<std::string(const std::string&, std::size_t)>& hypothesis) {
    if (events.empty())
        throw std::invalid_argument("ambiguous_accuracy: no events to score");
    auto contains_word = [](const std::string& text, const std::string& word) {
        std::size_t pos = 0;
        while ((pos = text.find(word, pos)) != std::string::npos) {
            const bool left_ok = pos == 0 || text[pos - 1] == ' ';
            const std::size_t end = pos + word.size();
            const bool right_ok = end == text.size() || text[end] == ' ';
            if (left_ok && right_ok) return true;
            pos = end;
        }
        return false;
    };
    std::size_t hits = 0;
    for (const AmbiguousEvent& e : events) {
        const std::string text = hypothesis(e.dialogue_id, e.turn);
        if (contains_word(text, e.correct_target) &&
            !contains_word(text, e.other_target))
            ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(events.size());
}

// Accuracy of the best context-blind rule on the ambiguous tokens of `test`:
// for each source word it picks the rendering seen more often in `train`,
// breaking per-word ties by the corpus-wide rendering-kind frequency. With
// balanced renderings this rule cannot beat chance; with no ambiguity
// (dependency fraction 0) there is nothing to miss and word-by-word
// translation is already perfect.
inline double context_free_bayes_accuracy(
    const std::vector<AmbiguousEvent>& train,
    const std::vector<AmbiguousEvent>& test) {
    if (test.empty())
        throw std::invalid_argument("bayes accuracy: empty test event set");
    std::map<std::string, std::map<std::string, std::size_t>> counts;
    std::map<std::string, std::size_t> kind;  // "va" vs "vb" marginals
    for (const AmbiguousEvent& e : train) {
        ++counts[e.source_word][e.correct_target];
        ++kind[e.correct_target.substr(0, 2)];
    }
    auto pick = [&](const std::string& word, const std::string& a,
                    const std::string& b) {
        const std::size_t ca = counts[word][a], cb = counts[word][b];
        if (ca != cb) return ca > cb ? a : b;
        const std::size_t ka = kind[a.substr(0, 2)], kb = kind[b.substr(0, 2)];
        if (ka != kb) return ka > kb ? a : b;
        return std::min(a, b);
    };
    std::size_t hits = 0;
    for (const AmbiguousEvent& e : test)
        if (pick(e.source_word, e.correct_target, e.other_target) ==
            e.correct_target)
            ++hits;
    return static_cast<double>(hits) / static_cast<double>(test.size());
}

inline void save_events(const std::string& path,
                        const std::vector<AmbiguousEvent>& events) {
    nlohmann::json arr = nlohmann::json::array();
    for (const AmbiguousEvent& e : events)
        arr.push_back({{"dialogue", e.dialogue_id},
                       {"turn", e.turn},
                       {"source", e.source_word},
                       {"correct", e.correct_target},
                       {"other", e.other_target}});
    std::ofstream os(path);
    if (!os) throw std::runtime_error("events: cannot open '" + path + "'");
    os << arr.dump(2) << "\n";
}

inline std::vector<AmbiguousEvent> load_events(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("events: cannot open '" + path + "'");
    nlohmann::json arr = nlohmann::json::parse(is);
    std::vector<AmbiguousEvent> out;
    for (const auto& j : arr) {
        AmbiguousEvent e;
        e.dialogue_id = j.at("dialogue").get<std::string>();
        e.turn = j.at("turn").get<std::size_t>();
        e.source_word = j.at("source").get<std::string>();
        e.correct_target = j.at("correct").get<std::string>();
        e.other_target = j.at("other").get<std::string>();
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace nct
