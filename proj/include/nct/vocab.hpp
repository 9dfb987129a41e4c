#pragma once

// Byte-pair-encoding subword vocabulary. Merges are learned greedily on
// whitespace-pretokenized text: the most frequent adjacent symbol pair wins
// each round, ties broken by lexicographic pair order. Non-final subwords of
// a word carry an "@@" continuation suffix, so decoding is the exact inverse
// of encoding for in-vocabulary text.

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace nct {

inline std::vector<std::string> split_ws(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream is(text);
    std::string w;
    while (is >> w) out.push_back(w);
    return out;
}

class Vocabulary {
  public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kCls = 2;
    static constexpr int kSep = 3;
    static constexpr int kEos = 4;
    static constexpr std::size_t kNumSpecials = 5;

    static const std::vector<std::string>& special_tokens() {
        static const std::vector<std::string> s = {"<pad>", "<unk>", "<cls>",
                                                   "<sep>", "<eos>"};
        return s;
    }

    Vocabulary() {
        for (const std::string& t : special_tokens()) push_token(t);
    }

    std::size_t size() const { return tokens_.size(); }

    int id(const std::string& token) const {
        auto it = index_.find(token);
        return it == index_.end() ? kUnk : it->second;
    }

    bool contains(const std::string& token) const {
        return index_.count(token) > 0;
    }

    const std::string& token(int id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
            throw std::out_of_range("Vocabulary::token: id " + std::to_string(id) +
                                    " outside vocabulary of " +
                                    std::to_string(tokens_.size()));
        return tokens_[static_cast<std::size_t>(id)];
    }

    const std::vector<std::pair<std::string, std::string>>& merges() const {
        return merges_;
    }

    // Segment one word: start from characters, replay the merge list in
    // training order, then mark every non-final piece with "@@".
    std::vector<std::string> segment_word(const std::string& word) const {
        std::vector<std::string> syms;
        syms.reserve(word.size());
        for (char c : word) syms.emplace_back(1, c);
        for (const auto& m : merges_) apply_merge(syms, m);
        for (std::size_t i = 0; i + 1 < syms.size(); ++i) syms[i] += "@@";
        return syms;
    }

    std::vector<int> encode_word(const std::string& word) const {
        auto hit = cache_.find(word);
        if (hit != cache_.end()) return hit->second;
        std::vector<int> ids;
        for (const std::string& s : segment_word(word)) ids.push_back(id(s));
        cache_.emplace(word, ids);
        return ids;
    }

    std::vector<int> encode(const std::string& text) const {
        std::vector<int> ids;
        for (const std::string& w : split_ws(text)) {
            std::vector<int> wi = encode_word(w);
            ids.insert(ids.end(), wi.begin(), wi.end());
        }
        return ids;
    }

    // Inverse of encode for in-vocabulary ids; specials are dropped.
    std::string decode(const std::vector<int>& ids) const {
        std::string out;
        for (int i : ids) {
            if (i >= 0 && static_cast<std::size_t>(i) < kNumSpecials) continue;
            const std::string& t = token(i);
            if (t.size() > 2 && t.compare(t.size() - 2, 2, "@@") == 0) {
                out += t.substr(0, t.size() - 2);
            } else {
                out += t;
                out += ' ';
            }
        }
        if (!out.empty() && out.back() == ' ') out.pop_back();
        return out;
    }

    std::uint64_t hash() const {
        std::uint64_t h = 1469598103934665603ULL;  // FNV-1a 64
        auto mix = [&h](const std::string& s) {
            for (unsigned char c : s) {
                h ^= c;
                h *= 1099511628211ULL;
            }
            h ^= 0xff;
            h *= 1099511628211ULL;
        };
        for (const std::string& t : tokens_) mix(t);
        for (const auto& m : merges_) {
            mix(m.first);
            mix(m.second);
        }
        return h;
    }

    void save(const std::string& path) const {
        std::ofstream os(path, std::ios::trunc);
        if (!os) throw std::runtime_error("Vocabulary::save: cannot open " + path);
        os << "#tokens " << tokens_.size() << "\n";
        for (const std::string& t : tokens_) os << t << "\n";
        os << "#merges " << merges_.size() << "\n";
        for (const auto& m : merges_) os << m.first << " " << m.second << "\n";
        if (!os) throw std::runtime_error("Vocabulary::save: write failed on " + path);
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw std::runtime_error("Vocabulary::load: cannot open " + path);
        std::string header;
        std::size_t ntok = 0, nmerge = 0;
        if (!(is >> header >> ntok) || header != "#tokens")
            throw std::runtime_error("Vocabulary::load: bad token header in " + path);
        std::string line;
        std::getline(is, line);  // finish header line
        Vocabulary v;
        v.tokens_.clear();
        v.index_.clear();
        for (std::size_t i = 0; i < ntok; ++i) {
            if (!std::getline(is, line))
                throw std::runtime_error("Vocabulary::load: truncated token list in " +
                                         path);
            v.push_token(line);
        }
        if (v.tokens_.size() < kNumSpecials)
            throw std::runtime_error("Vocabulary::load: vocabulary too small in " +
                                     path);
        for (std::size_t i = 0; i < kNumSpecials; ++i)
            if (v.tokens_[i] != special_tokens()[i])
                throw std::runtime_error(
                    "Vocabulary::load: special token slot " + std::to_string(i) +
                    " holds '" + v.tokens_[i] + "' in " + path);
        if (!(is >> header >> nmerge) || header != "#merges")
            throw std::runtime_error("Vocabulary::load: bad merge header in " + path);
        for (std::size_t i = 0; i < nmerge; ++i) {
            std::string a, b;
            if (!(is >> a >> b))
                throw std::runtime_error("Vocabulary::load: truncated merge list in " +
                                         path);
            v.merges_.emplace_back(a, b);
        }
        return v;
    }

    friend Vocabulary bpe_train(const std::vector<std::string>& texts,
                                std::size_t n_merges);

  private:
    void push_token(const std::string& t) {
        if (index_.count(t))
            throw std::runtime_error("Vocabulary: duplicate token '" + t + "'");
        index_.emplace(t, static_cast<int>(tokens_.size()));
        tokens_.push_back(t);
    }

    static void apply_merge(std::vector<std::string>& syms,
                            const std::pair<std::string, std::string>& m) {
        if (syms.size() < 2) return;
        std::vector<std::string> out;
        out.reserve(syms.size());
        std::size_t i = 0;
        while (i < syms.size()) {
            if (i + 1 < syms.size() && syms[i] == m.first && syms[i + 1] == m.second) {
                out.push_back(syms[i] + syms[i + 1]);
                i += 2;
            } else {
                out.push_back(syms[i]);
                ++i;
            }
        }
        syms.swap(out);
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
    std::vector<std::pair<std::string, std::string>> merges_;
    mutable std::unordered_map<std::string, std::vector<int>> cache_;
};

// Greedy BPE training. Pair counts are taken inside words only (no implicit
// end-of-word symbol), weighted by word frequency. All deterministic: counts
// live in ordered maps and ties go to the lexicographically smallest pair.
inline Vocabulary bpe_train(const std::vector<std::string>& texts,
                            std::size_t n_merges) {
    std::map<std::string, std::size_t> word_freq;
    for (const std::string& t : texts)
        for (const std::string& w : split_ws(t)) ++word_freq[w];

    std::vector<std::pair<std::vector<std::string>, std::size_t>> words;
    words.reserve(word_freq.size());
    for (const auto& [w, f] : word_freq) {
        std::vector<std::string> syms;
        for (char c : w) syms.emplace_back(1, c);
        words.emplace_back(std::move(syms), f);
    }

    Vocabulary v;
    for (std::size_t round = 0; round < n_merges; ++round) {
        std::map<std::pair<std::string, std::string>, std::size_t> pairs;
        for (const auto& [syms, f] : words)
            for (std::size_t i = 0; i + 1 < syms.size(); ++i)
                pairs[{syms[i], syms[i + 1]}] += f;
        if (pairs.empty()) break;
        auto best = pairs.begin();
        for (auto it = std::next(pairs.begin()); it != pairs.end(); ++it)
            if (it->second > best->second) best = it;  // ties keep the smaller key
        v.merges_.push_back(best->first);
        for (auto& [syms, f] : words) Vocabulary::apply_merge(syms, best->first);
    }

    // Token inventory: every symbol the trained segmentation produces, plus
    // every single character, each in both word-final and continuation form.
    std::set<std::string> toks;
    for (const auto& [syms, f] : words)
        for (std::size_t i = 0; i < syms.size(); ++i)
            toks.insert(i + 1 < syms.size() ? syms[i] + "@@" : syms[i]);
    for (const auto& [w, f] : word_freq)
        for (char c : w) {
            toks.insert(std::string(1, c));
            toks.insert(std::string(1, c) + "@@");
        }
    for (const std::string& t : toks) v.push_token(t);
    return v;
}

}  // namespace nct
