#pragma once

// Dialogue corpus records, one JSON object per line:
//   {"id": "...", "kind": "bilingual-pair" | "monolingual",
//    "turns": [{"speaker": "s1", "turn": 1, "text": "...", "lang": "src"}, ...],
//    "aligned_turns": [...]}            // target side, bilingual only
// Speakers strictly alternate with s1 on odd turns; turns number 1..n.

#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace nct {

struct Utterance {
    std::string speaker;  // "s1" or "s2"
    int turn = 0;         // 1-based
    std::string text;
    std::string lang;
};

enum class Side { kSource, kTarget };

struct Dialogue {
    std::string id;
    std::string kind;  // "bilingual-pair" or "monolingual"
    std::vector<Utterance> turns;
    std::vector<Utterance> aligned;  // empty for monolingual

    bool bilingual() const { return kind == "bilingual-pair"; }

    const std::vector<Utterance>& side(Side s) const {
        if (s == Side::kSource) return turns;
        if (!bilingual())
            throw std::invalid_argument("Dialogue " + id +
                                        ": no target side on a monolingual record");
        return aligned;
    }
};

inline int speaker_id(const std::string& speaker) {
    if (speaker == "s1") return 0;
    if (speaker == "s2") return 1;
    throw std::invalid_argument("unknown speaker '" + speaker + "'");
}

inline void validate_dialogue(const Dialogue& d, const std::string& where) {
    auto fail = [&](const std::string& msg) {
        throw std::runtime_error(where + ": dialogue '" + d.id + "': " + msg);
    };
    if (d.id.empty()) fail("empty id");
    if (d.kind != "bilingual-pair" && d.kind != "monolingual")
        fail("unknown kind '" + d.kind + "'");
    if (d.turns.empty()) fail("no turns");
    auto check_side = [&](const std::vector<Utterance>& utts, const char* name) {
        for (std::size_t i = 0; i < utts.size(); ++i) {
            const Utterance& u = utts[i];
            if (u.turn != static_cast<int>(i) + 1)
                fail(std::string(name) + " turn " + std::to_string(i + 1) +
                     " numbered " + std::to_string(u.turn));
            const char* want = (u.turn % 2 == 1) ? "s1" : "s2";
            if (u.speaker != want)
                fail(std::string(name) + " turn " + std::to_string(u.turn) +
                     " spoken by '" + u.speaker + "', expected " + want);
            if (u.text.empty())
                fail(std::string(name) + " turn " + std::to_string(u.turn) +
                     " has empty text");
            if (u.lang != utts[0].lang)
                fail(std::string(name) + " mixes languages '" + utts[0].lang +
                     "' and '" + u.lang + "'");
        }
    };
    check_side(d.turns, "source");
    if (d.bilingual()) {
        if (d.aligned.size() != d.turns.size())
            fail("aligned_turns has " + std::to_string(d.aligned.size()) +
                 " entries for " + std::to_string(d.turns.size()) + " turns");
        check_side(d.aligned, "target");
        if (!d.aligned.empty() && d.aligned[0].lang == d.turns[0].lang)
            fail("source and target share language '" + d.turns[0].lang + "'");
    } else if (!d.aligned.empty()) {
        fail("monolingual record carries aligned_turns");
    }
}

namespace detail {

inline Utterance utterance_from_json(const nlohmann::json& j,
                                     const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (it.key() != "speaker" && it.key() != "turn" && it.key() != "text" &&
            it.key() != "lang")
            throw std::runtime_error(where + ": unknown utterance key '" +
                                     it.key() + "'");
    Utterance u;
    u.speaker = j.at("speaker").get<std::string>();
    u.turn = j.at("turn").get<int>();
    u.text = j.at("text").get<std::string>();
    u.lang = j.at("lang").get<std::string>();
    return u;
}

inline nlohmann::json utterance_to_json(const Utterance& u) {
    return nlohmann::json{{"speaker", u.speaker},
                          {"turn", u.turn},
                          {"text", u.text},
                          {"lang", u.lang}};
}

}  // namespace detail

inline std::vector<Dialogue> load_corpus(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_corpus: cannot open " + path);
    std::vector<Dialogue> out;
    std::set<std::string> seen_ids;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(lineno);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error(where + ": " + e.what());
        }
        try {
            for (auto it = j.begin(); it != j.end(); ++it)
                if (it.key() != "id" && it.key() != "kind" && it.key() != "turns" &&
                    it.key() != "aligned_turns")
                    throw std::runtime_error(where + ": unknown key '" + it.key() +
                                             "'");
            Dialogue d;
            d.id = j.at("id").get<std::string>();
            d.kind = j.at("kind").get<std::string>();
            for (const auto& t : j.at("turns"))
                d.turns.push_back(detail::utterance_from_json(t, where));
            if (j.contains("aligned_turns"))
                for (const auto& t : j["aligned_turns"])
                    d.aligned.push_back(detail::utterance_from_json(t, where));
            validate_dialogue(d, where);
            if (!seen_ids.insert(d.id).second)
                throw std::runtime_error(where + ": duplicate dialogue id '" +
                                         d.id + "'");
            out.push_back(std::move(d));
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error(where + ": " + e.what());
        }
    }
    if (out.empty()) throw std::runtime_error(path + ": corpus is empty");
    return out;
}

inline void save_corpus(const std::string& path,
                        const std::vector<Dialogue>& corpus) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("save_corpus: cannot open " + path);
    for (const Dialogue& d : corpus) {
        nlohmann::json j{{"id", d.id}, {"kind", d.kind}};
        nlohmann::json turns = nlohmann::json::array();
        for (const Utterance& u : d.turns)
            turns.push_back(detail::utterance_to_json(u));
        j["turns"] = std::move(turns);
        if (d.bilingual()) {
            nlohmann::json at = nlohmann::json::array();
            for (const Utterance& u : d.aligned)
                at.push_back(detail::utterance_to_json(u));
            j["aligned_turns"] = std::move(at);
        }
        os << j.dump() << "\n";
    }
    if (!os) throw std::runtime_error("save_corpus: write failed on " + path);
}

}  // namespace nct
