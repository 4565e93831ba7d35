#include "kmbart/optim.hpp"

#include <cmath>

namespace kmbart {

template <typename S>
AdamW<S>::AdamW(ParameterSet<S>& params, AdamWOptions options)
    : params_(&params), options_(options) {
  for (const auto& e : params.entries()) {
    m_.push_back(Array::Zero(e.tensor.numel()));
    v_.push_back(Array::Zero(e.tensor.numel()));
  }
}

template <typename S>
void AdamW<S>::step() {
  auto& entries = params_->entries();
  for (const auto& e : entries) {
    if (e.tensor.has_grad() && !e.tensor.grad().allFinite()) {
      throw ValidationError("non-finite gradient in parameter '" + e.name + "'");
    }
  }
  ++step_;
  const S b1 = S(options_.beta1);
  const S b2 = S(options_.beta2);
  const S lr = S(options_.lr);
  const S eps = S(options_.eps);
  const S correction1 = S(1) - S(std::pow(options_.beta1, static_cast<double>(step_)));
  const S correction2 = S(1) - S(std::pow(options_.beta2, static_cast<double>(step_)));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& p = entries[i].tensor;
    if (!p.has_grad()) continue;
    auto& w = p.data();
    const auto& g = p.grad();
    if (entries[i].decay && options_.weight_decay != 0.0) {
      w *= S(1) - lr * S(options_.weight_decay);
    }
    m_[i] = b1 * m_[i] + (S(1) - b1) * g;
    v_[i] = b2 * v_[i] + (S(1) - b2) * g.square();
    w -= lr * (m_[i] / correction1) / ((v_[i] / correction2).sqrt() + eps);
  }
}

template <typename S>
void AdamW<S>::restore(std::int64_t step, std::vector<Array> m, std::vector<Array> v) {
  const auto& entries = params_->entries();
  if (m.size() != entries.size() || v.size() != entries.size()) {
    throw ValidationError("optimizer state does not match the parameter set");
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (m[i].size() != entries[i].tensor.numel() || v[i].size() != entries[i].tensor.numel()) {
      throw ValidationError("optimizer state size mismatch for '" + entries[i].name + "'");
    }
  }
  step_ = step;
  m_ = std::move(m);
  v_ = std::move(v);
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace kmbart
