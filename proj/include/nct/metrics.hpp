#pragma once

// Corpus metrics over whitespace-tokenized text.
//
// BLEU: corpus-level, clipped n-gram precision up to 4-grams, geometric mean
// with brevity penalty. A zero clipped count for n >= 2 falls back to add-1
// smoothing for that order; a zero unigram count means a score of zero.
//
// TER: word edit distance plus greedy block shifts. A shift costs one edit
// and is only taken when it strictly lowers the total (shift cost included);
// among candidates the scan picks the largest reduction first encountered,
// scanning block start, then block length, then landing position.
//
// Coherence: cosine similarity between a sentence's mean word vector and the
// mean vectors one, two and three sentences back, plus a sliding window of
// preceding sentences pooled into a single vector.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nct/model.hpp"
#include "nct/vocab.hpp"

namespace nct {

inline std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

struct BleuReport {
    double bleu = 0.0;  // percentage, 0..100
    double precision[4] = {0.0, 0.0, 0.0, 0.0};
    double brevity_penalty = 1.0;
    std::size_t hyp_len = 0;
    std::size_t ref_len = 0;
};

namespace detail {

inline std::map<std::vector<std::string>, std::size_t> ngram_counts(
    const std::vector<std::string>& words, std::size_t n) {
    std::map<std::vector<std::string>, std::size_t> out;
    if (words.size() < n) return out;
    for (std::size_t i = 0; i + n <= words.size(); ++i)
        ++out[std::vector<std::string>(words.begin() + i, words.begin() + i + n)];
    return out;
}

}  // namespace detail

inline BleuReport corpus_bleu(const std::vector<std::vector<std::string>>& hyps,
                              const std::vector<std::vector<std::string>>& refs) {
    if (hyps.size() != refs.size())
        throw std::invalid_argument("corpus_bleu: " + std::to_string(hyps.size()) +
                                    " hypotheses against " +
                                    std::to_string(refs.size()) + " references");
    if (hyps.empty()) throw std::invalid_argument("corpus_bleu: empty corpus");

    BleuReport rep;
    std::size_t matched[4] = {0, 0, 0, 0};
    std::size_t possible[4] = {0, 0, 0, 0};
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        rep.hyp_len += hyps[i].size();
        rep.ref_len += refs[i].size();
        for (std::size_t n = 1; n <= 4; ++n) {
            auto hc = detail::ngram_counts(hyps[i], n);
            auto rc = detail::ngram_counts(refs[i], n);
            for (const auto& [g, c] : hc) {
                auto it = rc.find(g);
                if (it != rc.end()) matched[n - 1] += std::min(c, it->second);
            }
            if (hyps[i].size() >= n) possible[n - 1] += hyps[i].size() - n + 1;
        }
    }

    if (rep.hyp_len == 0) return rep;
    double log_sum = 0.0;
    for (std::size_t n = 0; n < 4; ++n) {
        double num = static_cast<double>(matched[n]);
        double den = static_cast<double>(possible[n]);
        if (n >= 1 && matched[n] == 0) {
            num += 1.0;
            den += 1.0;
        }
        if (num == 0.0 || den == 0.0) return rep;  // unigram miss: score 0
        rep.precision[n] = num / den;
        log_sum += std::log(rep.precision[n]);
    }
    rep.brevity_penalty =
        rep.hyp_len < rep.ref_len
            ? std::exp(1.0 - static_cast<double>(rep.ref_len) /
                                 static_cast<double>(rep.hyp_len))
            : 1.0;
    rep.bleu = 100.0 * rep.brevity_penalty * std::exp(log_sum / 4.0);
    return rep;
}

inline std::size_t edit_distance(const std::vector<std::string>& a,
                                 const std::vector<std::string>& b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<std::size_t> prev(m + 1), cur(m + 1);
    for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= m; ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

struct TerReport {
    std::size_t edits = 0;
    std::size_t shifts = 0;
    std::size_t ref_len = 0;
    double ter = 0.0;
};

namespace detail {

inline std::vector<std::string> apply_shift(const std::vector<std::string>& w,
                                            std::size_t start, std::size_t len,
                                            std::size_t dest) {
    std::vector<std::string> rest;
    rest.reserve(w.size());
    for (std::size_t i = 0; i < w.size(); ++i)
        if (i < start || i >= start + len) rest.push_back(w[i]);
    std::vector<std::string> out(rest.begin(),
                                 rest.begin() + static_cast<std::ptrdiff_t>(dest));
    out.insert(out.end(), w.begin() + static_cast<std::ptrdiff_t>(start),
               w.begin() + static_cast<std::ptrdiff_t>(start + len));
    out.insert(out.end(), rest.begin() + static_cast<std::ptrdiff_t>(dest),
               rest.end());
    return out;
}

}  // namespace detail

inline TerReport ter_sentence(std::vector<std::string> hyp,
                              const std::vector<std::string>& ref) {
    TerReport rep;
    rep.ref_len = ref.size();
    while (true) {
        const std::size_t base = edit_distance(hyp, ref);
        if (base <= 1 || hyp.size() < 2) break;
        std::size_t best_d = base;
        std::vector<std::string> best;
        bool found = false;
        for (std::size_t start = 0; start < hyp.size(); ++start) {
            for (std::size_t len = 1; start + len <= hyp.size(); ++len) {
                for (std::size_t dest = 0; dest + len <= hyp.size(); ++dest) {
                    if (dest == start) continue;
                    std::vector<std::string> cand =
                        detail::apply_shift(hyp, start, len, dest);
                    const std::size_t d = edit_distance(cand, ref);
                    // strict improvement: the shift's own cost must pay off
                    if (d + 1 < base && d < best_d) {
                        best_d = d;
                        best = std::move(cand);
                        found = true;
                    }
                }
            }
        }
        if (!found) break;
        hyp = std::move(best);
        ++rep.shifts;
    }
    rep.edits = rep.shifts + edit_distance(hyp, ref);
    rep.ter = rep.ref_len == 0
                  ? (rep.edits == 0 ? 0.0 : static_cast<double>(rep.edits))
                  : static_cast<double>(rep.edits) /
                        static_cast<double>(rep.ref_len);
    return rep;
}

inline double corpus_ter(const std::vector<std::vector<std::string>>& hyps,
                         const std::vector<std::vector<std::string>>& refs) {
    if (hyps.size() != refs.size())
        throw std::invalid_argument("corpus_ter: size mismatch");
    if (hyps.empty()) throw std::invalid_argument("corpus_ter: empty corpus");
    std::size_t edits = 0, ref_len = 0;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        TerReport r = ter_sentence(hyps[i], refs[i]);
        edits += r.edits;
        ref_len += r.ref_len;
    }
    if (ref_len == 0) return edits == 0 ? 0.0 : static_cast<double>(edits);
    return static_cast<double>(edits) / static_cast<double>(ref_len);
}

// Word vector source: may return an empty vector for unknown words.
using WordVecFn = std::function<std::vector<double>(const std::string&)>;

// Mean of the word-embedding rows of the word's subword units.
inline WordVecFn model_word_vectors(ModelParams& params, const Vocabulary& vocab) {
    return [&params, &vocab](const std::string& word) {
        const std::vector<int> ids = vocab.encode_word(word);
        std::vector<double> acc(params.cfg.hidden, 0.0);
        if (ids.empty()) return std::vector<double>{};
        for (int id : ids)
            for (std::size_t j = 0; j < params.cfg.hidden; ++j)
                acc[j] += params.we.at(static_cast<std::size_t>(id), j);
        for (double& x : acc) x /= static_cast<double>(ids.size());
        return acc;
    };
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.empty()) return 0.0;
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na <= 0.0 || nb <= 0.0) return 0.0;
    if (a == b) return 1.0;  // exact self-similarity, no rounding
    // rounding can push |cos| past 1 by an ulp; keep the contract tight
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

struct CoherenceReport {
    double one_back = 0.0;
    double two_back = 0.0;
    double three_back = 0.0;
    double window = 0.0;
    std::size_t sentences = 0;
};

namespace detail {

inline std::vector<double> mean_word_vec(
    const std::vector<std::vector<std::string>>& sents, std::size_t first,
    std::size_t last, const WordVecFn& vec) {
    std::vector<double> acc;
    std::size_t n = 0;
    for (std::size_t i = first; i < last; ++i)
        for (const std::string& w : sents[i]) {
            std::vector<double> v = vec(w);
            if (v.empty()) continue;
            if (acc.empty()) acc.assign(v.size(), 0.0);
            for (std::size_t j = 0; j < v.size(); ++j) acc[j] += v[j];
            ++n;
        }
    if (n > 0)
        for (double& x : acc) x /= static_cast<double>(n);
    return acc;
}

}  // namespace detail

inline CoherenceReport coherence_report(
    const std::vector<std::vector<std::string>>& sents, const WordVecFn& vec,
    std::size_t window = 3) {
    if (window == 0) throw std::invalid_argument("coherence: window must be >= 1");
    CoherenceReport rep;
    rep.sentences = sents.size();
    std::vector<std::vector<double>> reprs(sents.size());
    for (std::size_t i = 0; i < sents.size(); ++i)
        reprs[i] = detail::mean_word_vec(sents, i, i + 1, vec);

    double sums[3] = {0.0, 0.0, 0.0};
    std::size_t counts[3] = {0, 0, 0};
    double wsum = 0.0;
    std::size_t wcount = 0;
    for (std::size_t i = 0; i < sents.size(); ++i) {
        for (std::size_t back = 1; back <= 3; ++back) {
            if (i < back) continue;
            sums[back - 1] += cosine(reprs[i], reprs[i - back]);
            ++counts[back - 1];
        }
        if (i >= 1) {
            const std::size_t first = i > window ? i - window : 0;
            std::vector<double> ctx = detail::mean_word_vec(sents, first, i, vec);
            wsum += cosine(reprs[i], ctx);
            ++wcount;
        }
    }
    if (counts[0]) rep.one_back = sums[0] / static_cast<double>(counts[0]);
    if (counts[1]) rep.two_back = sums[1] / static_cast<double>(counts[1]);
    if (counts[2]) rep.three_back = sums[2] / static_cast<double>(counts[2]);
    if (wcount) rep.window = wsum / static_cast<double>(wcount);
    return rep;
}

struct MetricReport {
    BleuReport bleu;
    double ter = 0.0;
    CoherenceReport coherence;
    std::size_t pairs = 0;
};

inline nlohmann::json metric_report_json(const MetricReport& r) {
    nlohmann::json j;
    j["pairs"] = r.pairs;
    j["bleu"] = {{"score", r.bleu.bleu},
                 {"precisions",
                  {r.bleu.precision[0], r.bleu.precision[1], r.bleu.precision[2],
                   r.bleu.precision[3]}},
                 {"brevity_penalty", r.bleu.brevity_penalty},
                 {"hyp_len", r.bleu.hyp_len},
                 {"ref_len", r.bleu.ref_len}};
    j["ter"] = r.ter;
    j["coherence"] = {{"one_back", r.coherence.one_back},
                      {"two_back", r.coherence.two_back},
                      {"three_back", r.coherence.three_back},
                      {"window", r.coherence.window},
                      {"sentences", r.coherence.sentences}};
    return j;
}

inline void save_metric_report(const std::string& path, const MetricReport& r) {
    std::ofstream os(path);
    if (!os)
        throw std::runtime_error("metrics: cannot open '" + path + "' for writing");
    os << metric_report_json(r).dump(2) << "\n";
    if (!os) throw std::runtime_error("metrics: write to '" + path + "' failed");
}

}  // namespace nct
