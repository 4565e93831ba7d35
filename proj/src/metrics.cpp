#include "kmbart/metrics.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <map>
#include <unordered_map>

#include "kmbart/error.hpp"
#include "kmbart/vocab.hpp"

namespace kmbart {
namespace {

using NgramCounts = std::map<std::vector<std::string>, int>;

NgramCounts ngrams(const std::vector<std::string>& tokens, int n) {
  NgramCounts counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[std::vector<std::string>(tokens.begin() + i, tokens.begin() + i + n)];
  }
  return counts;
}

void check_corpus(std::span<const EvalItem> corpus) {
  bool any = false;
  for (const auto& item : corpus) {
    if (item.references.empty()) throw ValidationError("evaluation item without references");
    any = any || !item.hypotheses.empty();
  }
  if (!any) throw ValidationError("empty hypothesis corpus");
}

constexpr int kCiderN = 4;
constexpr double kCiderSigma = 6.0;

struct CiderVector {
  std::array<std::map<std::vector<std::string>, double>, kCiderN> weights;
  std::array<double, kCiderN> norm{};
  int length = 0;
};

}  // namespace

std::vector<std::string> metric_tokens(std::string_view sentence) {
  std::string lower(sentence);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return split_words(lower);
}

std::string normalize_whitespace(std::string_view sentence) {
  std::string out;
  for (const auto& w : split_words(sentence)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

double bleu2(std::span<const EvalItem> corpus) {
  check_corpus(corpus);
  std::array<long, 2> matched{}, total{};
  long hyp_len = 0, ref_len = 0;
  for (const auto& item : corpus) {
    std::vector<std::vector<std::string>> refs;
    for (const auto& r : item.references) refs.push_back(metric_tokens(r));
    std::array<std::map<std::vector<std::string>, int>, 2> max_ref;
    for (int n = 1; n <= 2; ++n) {
      for (const auto& r : refs) {
        for (const auto& [g, c] : ngrams(r, n)) max_ref[n - 1][g] = std::max(max_ref[n - 1][g], c);
      }
    }
    for (const auto& h : item.hypotheses) {
      const auto hyp = metric_tokens(h);
      const long c = static_cast<long>(hyp.size());
      hyp_len += c;
      long best = -1;
      for (const auto& r : refs) {
        const long len = static_cast<long>(r.size());
        if (best < 0 || std::labs(len - c) < std::labs(best - c) ||
            (std::labs(len - c) == std::labs(best - c) && len < best)) {
          best = len;
        }
      }
      ref_len += best;
      for (int n = 1; n <= 2; ++n) {
        for (const auto& [g, cnt] : ngrams(hyp, n)) {
          const auto it = max_ref[n - 1].find(g);
          matched[n - 1] += std::min(cnt, it == max_ref[n - 1].end() ? 0 : it->second);
          total[n - 1] += cnt;
        }
      }
    }
  }
  if (hyp_len == 0 || matched[0] == 0 || matched[1] == 0) return 0.0;
  const double log_p = 0.5 * std::log(static_cast<double>(matched[0]) / total[0]) +
                       0.5 * std::log(static_cast<double>(matched[1]) / total[1]);
  const double bp = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - static_cast<double>(ref_len) / hyp_len);
  return 100.0 * bp * std::exp(log_p);
}

double cider_d(std::span<const EvalItem> corpus) {
  check_corpus(corpus);
  std::map<std::vector<std::string>, int> df;
  std::vector<std::vector<std::vector<std::string>>> refs(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    std::map<std::vector<std::string>, int> seen;
    for (const auto& r : corpus[i].references) {
      refs[i].push_back(metric_tokens(r));
      for (int n = 1; n <= kCiderN; ++n) {
        for (const auto& [g, c] : ngrams(refs[i].back(), n)) seen[g] = 1;
      }
    }
    for (const auto& [g, c] : seen) ++df[g];
  }
  const bool unit_idf = corpus.size() == 1;
  const double log_docs = std::log(static_cast<double>(corpus.size()));

  auto vectorize = [&](const std::vector<std::string>& tokens) {
    CiderVector v;
    v.length = static_cast<int>(tokens.size());
    for (int n = 1; n <= kCiderN; ++n) {
      for (const auto& [g, c] : ngrams(tokens, n)) {
        const auto it = df.find(g);
        const double idf =
            unit_idf ? 1.0 : log_docs - std::log(std::max(1.0, it == df.end() ? 0.0 : double(it->second)));
        const double w = c * idf;
        v.weights[n - 1][g] = w;
        v.norm[n - 1] += w * w;
      }
      v.norm[n - 1] = std::sqrt(v.norm[n - 1]);
    }
    return v;
  };

  double score_sum = 0.0;
  long count = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    std::vector<CiderVector> ref_vecs;
    for (const auto& r : refs[i]) ref_vecs.push_back(vectorize(r));
    for (const auto& h : corpus[i].hypotheses) {
      const auto hv = vectorize(metric_tokens(h));
      std::array<double, kCiderN> per_n{};
      for (const auto& rv : ref_vecs) {
        const double delta = hv.length - rv.length;
        const double penalty = std::exp(-(delta * delta) / (2.0 * kCiderSigma * kCiderSigma));
        for (int n = 0; n < kCiderN; ++n) {
          double dot = 0.0;
          for (const auto& [g, w] : hv.weights[n]) {
            const auto it = rv.weights[n].find(g);
            if (it != rv.weights[n].end()) dot += std::min(w, it->second) * it->second;
          }
          if (hv.norm[n] != 0.0 && rv.norm[n] != 0.0) dot /= hv.norm[n] * rv.norm[n];
          per_n[n] += dot * penalty;
        }
      }
      double mean_n = 0.0;
      for (double s : per_n) mean_n += s;
      mean_n /= kCiderN;
      score_sum += 10.0 * mean_n / static_cast<double>(ref_vecs.size());
      ++count;
    }
  }
  return score_sum / static_cast<double>(count);
}

double unique_metric(std::span<const std::string> generated, UniqueMode mode) {
  if (generated.empty()) throw ValidationError("unique metric over an empty list");
  std::unordered_map<std::string, int> counts;
  for (const auto& s : generated) ++counts[normalize_whitespace(s)];
  long hits = 0;
  if (mode == UniqueMode::distinct) {
    hits = static_cast<long>(counts.size());
  } else {
    for (const auto& [s, c] : counts) hits += c == 1;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(generated.size());
}

std::unordered_set<std::string> sentence_set(std::span<const std::string> sentences) {
  std::unordered_set<std::string> out;
  for (const auto& s : sentences) out.insert(normalize_whitespace(s));
  return out;
}

double novel_metric(std::span<const std::string> generated,
                    const std::unordered_set<std::string>& training_sentences) {
  if (generated.empty()) throw ValidationError("novel metric over an empty list");
  long novel = 0;
  for (const auto& s : generated) novel += training_sentences.count(normalize_whitespace(s)) == 0;
  return 100.0 * static_cast<double>(novel) / static_cast<double>(generated.size());
}

}  // namespace kmbart
