#pragma once

#include <cstdint>
#include <vector>

#include "kmbart/example.hpp"

namespace kmbart {

// Templated toy corpus. Each RoI belongs to a latent class: its feature is a
// fixed class prototype plus Gaussian noise and its class distribution is a
// Dirichlet draw concentrated on that class. Texts are filled in from
// per-class word lists keyed by the first (or first two) RoIs, so targets
// are predictable from the visual input and the event.
struct SyntheticOptions {
  int n_examples = 64;
  int d_visual = 32;
  int n_classes = 10;
  int n_attr = 8;
  int n_rel = 4;
  int min_rois = 1;
  int max_rois = 3;
  double feature_noise = 0.1;
  double dirichlet_peak = 8.0;
  double dirichlet_floor = 0.2;
  // Task of example i is tasks[i % tasks.size()].
  std::vector<TaskType> tasks = {TaskType::intent, TaskType::before, TaskType::after,
                                 TaskType::caption, TaskType::region_caption};
  // Tag generation examples with a COMET relation string as candidate data.
  bool comet_relations = false;
  std::uint64_t seed = 0;
};

// Throws ValidationError for non-positive sizes or an empty task list.
std::vector<MultimodalExample> make_synthetic(const SyntheticOptions& options);

}  // namespace kmbart
