#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kmbart/example.hpp"
#include "kmbart/model.hpp"
#include "kmbart/rng.hpp"
#include "kmbart/vocab.hpp"

namespace kmbart {

enum class DecodeMode { greedy, nucleus };

struct GenerationConfig {
  DecodeMode mode = DecodeMode::greedy;
  double top_p = 0.9;
  int max_len = 32;
  int num_samples = 1;
  std::uint64_t seed = 0;
  bool use_event = true;

  // Throws ValidationError for top_p outside (0, 1] or non-positive counts.
  void validate() const;
};

DecodeMode parse_decode_mode(std::string_view name);
std::string_view decode_mode_name(DecodeMode mode);

struct NucleusCandidate {
  int id;
  double prob;  // renormalized within the nucleus
};

// Minimal prefix of ids sorted by descending probability (ties: lower id
// first) whose cumulative mass reaches top_p, renormalized.
std::vector<NucleusCandidate> nucleus_candidates(std::span<const double> probs, double top_p);

// Draws one id from the nucleus with a single uniform from rng.
int sample_nucleus(std::span<const double> probs, double top_p, Rng& rng);

// Index of the largest probability; ties go to the lowest id.
int greedy_pick(std::span<const double> probs);

// Next-token distribution from one row of logits, with <pad> .. <intent>
// except </s> given zero mass.
std::vector<double> generation_distribution(std::span<const float> logits);

// Returns config.num_samples token sequences without <s> / </s>. Each
// sample stops at </s> or after max_len tokens. Greedy repeats one
// deterministic decode; nucleus sample k draws from Rng(mix_seed(seed, k)).
// Throws ValidationError for a non-generation task.
std::vector<std::vector<int>> generate(const Model<float>& model, const Vocabulary& vocab,
                                       const MultimodalExample& example, const GenerationConfig& config);

}  // namespace kmbart
