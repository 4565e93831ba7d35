#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "kmbart/example.hpp"
#include "kmbart/model.hpp"
#include "kmbart/vocab.hpp"

namespace kmbart {

// Optional size limits checked while loading a dataset. Unset fields are
// inferred from the first RoI in the file and then enforced on the rest.
struct DatasetSchema {
  std::optional<int> d_visual;
  std::optional<int> n_classes;
  std::optional<int> n_attr;
  std::optional<int> n_rel;
};

// Parses one JSONL record. Throws ParseError carrying line_number.
MultimodalExample parse_example(std::string_view line, std::size_t line_number,
                                const DatasetSchema& schema = {});

// Blank lines are skipped; the first bad record aborts with its line number.
std::vector<MultimodalExample> parse_jsonl(std::string_view text, const DatasetSchema& schema = {});
std::vector<MultimodalExample> load_jsonl(const std::filesystem::path& path,
                                          const DatasetSchema& schema = {});

nlohmann::ordered_json example_to_json(const MultimodalExample& example);
std::string to_jsonl(std::span<const MultimodalExample> examples);
void write_jsonl(const std::filesystem::path& path, std::span<const MultimodalExample> examples);

// xIntent, xWant -> intent; xNeed -> before; xReact, xEffect -> after.
// Anything else throws UnknownRelationError.
TaskType map_comet_relation(std::string_view relation);

struct ScoredExample {
  MultimodalExample example;
  float avg_ce = 0.0F;  // nats per target token
};

// Teacher-forced mean token cross-entropy of the example's target (plus
// </s>) under model in eval mode. Throws EmptyLossError for an empty target.
ScoredExample score_description(const Model<float>& model, const Vocabulary& vocab,
                                const MultimodalExample& example, bool use_event = true);

// Scores examples, optionally spreading the work over threads; the result
// order matches the input order.
std::vector<ScoredExample> score_dataset(const Model<float>& model, const Vocabulary& vocab,
                                         std::span<const MultimodalExample> examples,
                                         bool use_event, int threads);

struct FilterResult {
  std::vector<ScoredExample> kept;     // avg_ce < threshold
  std::vector<ScoredExample> dropped;  // avg_ce >= threshold
};

inline constexpr float kDefaultFilterThreshold = 3.5F;

FilterResult filter_dataset(std::span<const ScoredExample> scored,
                            float threshold = kDefaultFilterThreshold);

nlohmann::ordered_json scored_to_json(const ScoredExample& scored);
std::string to_jsonl(std::span<const ScoredExample> scored);

// Counts, keep ratio and a 50-bin histogram of avg_ce over [0, 10) plus an
// overflow bin for scores >= 10.
nlohmann::ordered_json filter_report(std::span<const ScoredExample> kept,
                                     std::span<const ScoredExample> dropped,
                                     std::optional<float> threshold = std::nullopt);

inline constexpr int kHistogramBins = 50;
inline constexpr float kHistogramMax = 10.0F;

// Groups example indices into batches of batch_size (last one may be
// short). shuffle permutes deterministically from seed first.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t count, std::size_t batch_size,
                                                    std::uint64_t seed, bool shuffle);

// Right-pads every input to the longest encoder / decoder length in the
// batch; padded positions get pad ids, mask 0 and pad targets.
std::vector<AssembledInput> pad_batch(std::vector<AssembledInput> inputs, int pad_id = tok::pad);

struct PaddedBatch {
  std::vector<std::size_t> indices;  // into the sequence given to make_batches
  std::vector<AssembledInput> inputs;
};

std::vector<PaddedBatch> make_batches(std::span<const AssembledInput> inputs, std::size_t batch_size,
                                      int pad_id, std::uint64_t seed, bool shuffle);

// Sentences used for vocabulary building: events and targets.
std::vector<std::string> corpus_sentences(std::span<const MultimodalExample> examples);

}  // namespace kmbart
