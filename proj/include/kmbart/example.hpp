#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kmbart/vocab.hpp"

namespace kmbart {

// Precomputed detector output for one region of interest.
struct RoIFeature {
  std::vector<float> feat;         // d_visual
  std::vector<float> class_probs;  // n_classes, sums to 1

  bool operator==(const RoIFeature&) const = default;
};

struct AttributeLabel {
  int roi = 0;
  int label = 0;
  bool operator==(const AttributeLabel&) const = default;
};

struct RelationLabel {
  int subject = 0;
  int object = 0;
  int label = 0;
  bool operator==(const RelationLabel&) const = default;
};

struct MultimodalExample {
  TaskType task = TaskType::caption;
  std::vector<RoIFeature> rois;
  std::optional<std::string> event_text;
  std::string target_text;
  std::vector<AttributeLabel> attributes;
  std::vector<RelationLabel> relations;
  std::string source_id;
  // COMET relation the task was mapped from, kept for re-serialization.
  std::optional<std::string> relation;

  bool operator==(const MultimodalExample&) const = default;
};

}  // namespace kmbart
