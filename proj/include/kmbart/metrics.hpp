#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace kmbart {

// One evaluated example: every generated sentence is scored against the
// same reference set.
struct EvalItem {
  std::vector<std::string> hypotheses;
  std::vector<std::string> references;
};

// Lowercased whitespace tokens, as used by BLEU and CIDEr.
std::vector<std::string> metric_tokens(std::string_view sentence);

// Collapses whitespace runs to one space and trims both ends.
std::string normalize_whitespace(std::string_view sentence);

// Corpus BLEU over n = 1, 2 with uniform weights and no smoothing, x100.
// Each hypothesis is one segment; the effective reference length is the
// closest reference length (ties: shorter). Throws ValidationError when
// there is no hypothesis or an item has no reference.
double bleu2(std::span<const EvalItem> corpus);

// CIDEr-D (n = 1..4, sigma 6, clipped), x10. Document frequencies count
// items whose reference set contains the n-gram. A one-item corpus uses
// unit idf since log-frequency weights vanish there.
double cider_d(std::span<const EvalItem> corpus);

enum class UniqueMode {
  exactly_once,  // sentences occurring once in the list
  distinct,      // number of distinct sentences
};

// Percentage of sentences that are unique. Throws ValidationError on an
// empty list.
double unique_metric(std::span<const std::string> generated, UniqueMode mode = UniqueMode::exactly_once);

// Percentage of generated sentences absent from the training sentences.
double novel_metric(std::span<const std::string> generated,
                    const std::unordered_set<std::string>& training_sentences);

// Normalized set for novel_metric.
std::unordered_set<std::string> sentence_set(std::span<const std::string> sentences);

}  // namespace kmbart
