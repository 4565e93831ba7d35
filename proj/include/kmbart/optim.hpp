#pragma once

#include <cstdint>
#include <vector>

#include "kmbart/tensor.hpp"

namespace kmbart {

struct AdamWOptions {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// AdamW with bias correction and decoupled weight decay. Decay applies only
// to parameters registered with decay = true (biases and norm gains are not).
// Parameters without a populated gradient are skipped for that step.
template <typename S>
class AdamW {
 public:
  using Array = typename Tensor<S>::Array;

  AdamW(ParameterSet<S>& params, AdamWOptions options);

  // Throws ValidationError naming the first parameter with a non-finite
  // gradient; no parameter is touched in that case.
  void step();

  std::int64_t step_count() const noexcept { return step_; }
  const AdamWOptions& options() const noexcept { return options_; }
  void set_lr(double lr) { options_.lr = lr; }

  // Moment buffers, index-aligned with params.entries().
  const std::vector<Array>& first_moments() const noexcept { return m_; }
  const std::vector<Array>& second_moments() const noexcept { return v_; }
  void restore(std::int64_t step, std::vector<Array> m, std::vector<Array> v);

 private:
  ParameterSet<S>* params_;
  AdamWOptions options_;
  std::vector<Array> m_;
  std::vector<Array> v_;
  std::int64_t step_ = 0;
};

extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace kmbart
