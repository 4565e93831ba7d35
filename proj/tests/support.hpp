#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kmbart/example.hpp"
#include "kmbart/losses.hpp"
#include "kmbart/model.hpp"
#include "kmbart/rng.hpp"
#include "kmbart/vocab.hpp"

namespace kmbart::testing {

inline std::filesystem::path fixture_path(const std::string& name) {
  return std::filesystem::path(KMBART_FIXTURE_DIR) / name;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  return nlohmann::json::parse(read_file(path));
}

// Fresh directory under the system temp dir, removed first if present.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("kmbart_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline Vocabulary small_vocab() {
  std::vector<std::string> corpus = {
      "the man opens the door", "a woman eats cake", "to leave the room quickly",
      "person1 wants to pay the bill", "the dog is next to the table"};
  return Vocabulary::build(corpus, 1);
}

// d_model 16, one encoder and one decoder layer.
inline ModelConfig tiny_config(int vocab_size) {
  ModelConfig c;
  c.d_model = 16;
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  c.n_heads = 2;
  c.d_ffn = 32;
  c.vocab_size = vocab_size;
  c.d_visual = 6;
  c.n_classes = 5;
  c.n_attr = 4;
  c.n_rel = 3;
  c.max_positions = 32;
  c.dropout_rate = 0.0;
  return c;
}

inline std::vector<float> normalized(std::vector<float> v) {
  float s = 0.0F;
  for (float x : v) s += x;
  for (float& x : v) x /= s;
  return v;
}

inline RoIFeature make_roi(Rng& rng, int d_visual, int n_classes) {
  RoIFeature r;
  for (int i = 0; i < d_visual; ++i) r.feat.push_back(static_cast<float>(rng.normal()));
  std::vector<float> p;
  for (int i = 0; i < n_classes; ++i) p.push_back(static_cast<float>(0.1 + rng.uniform()));
  r.class_probs = normalized(std::move(p));
  return r;
}

inline MultimodalExample make_example(TaskType task, int n_rois, const ModelConfig& config,
                                      std::uint64_t seed, std::string target = "the man opens the door",
                                      std::string event = "a woman eats cake") {
  Rng rng(seed);
  MultimodalExample ex;
  ex.task = task;
  for (int i = 0; i < n_rois; ++i) ex.rois.push_back(make_roi(rng, config.d_visual, config.n_classes));
  if (is_generation_task(task)) ex.event_text = std::move(event);
  ex.target_text = std::move(target);
  if (task == TaskType::region_caption) {
    for (int i = 0; i < n_rois; ++i) ex.attributes.push_back({i, (i * 3 + 1) % config.n_attr});
    for (int i = 0; i + 1 < n_rois; ++i) ex.relations.push_back({i, i + 1, (i + 2) % config.n_rel});
  }
  ex.source_id = "test-" + std::to_string(seed);
  return ex;
}

struct GradCheckResult {
  std::string worst_param;
  double worst_ratio = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double max_grad_norm = 0.0;
  int zero_tensors = 0;  // tensors whose gradient norm is at the 1e-9 floor
  bool ok = true;
};

// Compares analytic gradients of loss_fn with central differences on every
// element of every parameter. A tensor passes when ||a - n|| <= tol *
// max(||a||, ||n||) + 1e-9. Tensors at the floor, such as attention key
// biases, are counted in zero_tensors and left out of worst_ratio.
inline GradCheckResult gradient_check(Model<double>& model,
                                      const std::function<Tensor<double>(Tape<double>&)>& loss_fn,
                                      double step = 1e-3, double tol = 1e-3) {
  auto& params = model.params();
  params.zero_grad();
  {
    Tape<double> tape(true);
    tape.backward(loss_fn(tape));
  }
  GradCheckResult result;
  for (auto& e : params.entries()) {
    auto& data = e.tensor.data();
    const Eigen::ArrayXd analytic = e.tensor.has_grad() ? Eigen::ArrayXd(e.tensor.grad())
                                                         : Eigen::ArrayXd::Zero(data.size());
    Eigen::ArrayXd numeric(data.size());
    for (Index i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + step;
      Tape<double> t1(false);
      const double up = loss_fn(t1).item();
      data[i] = saved - step;
      Tape<double> t2(false);
      const double down = loss_fn(t2).item();
      data[i] = saved;
      numeric[i] = (up - down) / (2.0 * step);
    }
    const double diff = (analytic - numeric).matrix().norm();
    const double scale = std::max(analytic.matrix().norm(), numeric.matrix().norm());
    result.max_grad_norm = std::max(result.max_grad_norm, scale);
    if (diff > tol * scale + 1e-9) result.ok = false;
    if (scale <= 1e-9) {
      ++result.zero_tensors;
      continue;
    }
    const double ratio = diff / scale;
    if (ratio > result.worst_ratio) {
      result.worst_ratio = ratio;
      result.worst_param = e.name;
    }
  }
  params.zero_grad();
  return result;
}

}  // namespace kmbart::testing
