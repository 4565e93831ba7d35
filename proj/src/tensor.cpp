#include "kmbart/tensor.hpp"

#include <unordered_set>

namespace kmbart {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Index shape_numel(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
  Index n = 1;
  for (Index d : shape) {
    if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_string(shape));
    n *= d;
  }
  return n;
}

template <typename Scalar>
void Tape<Scalar>::backward(Tensor<Scalar> loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw DimensionError("backward() needs a scalar loss, got shape " +
                         (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) throw Error("backward(): loss is not on the tape");

  // Reverse reachability from the loss; unrelated branches stay untouched.
  std::unordered_set<const void*> reachable{loss.id()};
  std::vector<bool> live(entries_.size(), false);
  for (std::size_t i = entries_.size(); i-- > 0;) {
    if (reachable.count(entries_[i].output.id()) == 0) continue;
    live[i] = true;
    for (const auto& in : entries_[i].inputs) reachable.insert(in.id());
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (live[i]) entries_[i].output.ensure_grad().setZero();
  }
  loss.ensure_grad()[0] += Scalar(1);
  for (std::size_t i = entries_.size(); i-- > 0;) {
    if (live[i]) entries_[i].rule();
  }
}

template <typename Scalar>
Tensor<Scalar> ParameterSet<Scalar>::add(std::string name, Tensor<Scalar> tensor, bool decay) {
  if (contains(name)) throw ValidationError("duplicate parameter name '" + name + "'");
  tensor.set_requires_grad(true);
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(tensor), decay});
  return entries_.back().tensor;
}

template <typename Scalar>
const Tensor<Scalar>& ParameterSet<Scalar>::at(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw RangeError("no parameter named '" + std::string(name) + "'");
  return entries_[it->second].tensor;
}

template <typename Scalar>
Tensor<Scalar>& ParameterSet<Scalar>::at(std::string_view name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw RangeError("no parameter named '" + std::string(name) + "'");
  return entries_[it->second].tensor;
}

template <typename Scalar>
Index ParameterSet<Scalar>::numel() const {
  Index n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

template <typename Scalar>
void ParameterSet<Scalar>::zero_grad() {
  for (auto& e : entries_) e.tensor.clear_grad();
}

template class Tape<float>;
template class Tape<double>;
template class ParameterSet<float>;
template class ParameterSet<double>;

}  // namespace kmbart
