#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "kmbart/error.hpp"

namespace kmbart {

using Index = std::int64_t;
using Shape = std::vector<Index>;

std::string shape_string(const Shape& shape);

// Number of elements; throws DimensionError for an empty or non-positive shape.
Index shape_numel(const Shape& shape);

// Dense row-major array that can take part in a reverse-mode graph.
//
// Tensor is a handle: copies share storage, so an op output captured by a
// backward rule and the caller's copy see the same gradient buffer. A
// scalar has shape {1}. Every op views its operands as a (rows x cols)
// matrix where cols is the last dimension.
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;

  Tensor() = default;

  Tensor(Shape shape, Array data, bool requires_grad = false)
      : storage_(std::make_shared<Storage>()) {
    const Index n = shape_numel(shape);
    if (data.size() != n) {
      throw DimensionError("tensor data has " + std::to_string(data.size()) +
                           " elements, shape " + shape_string(shape) + " needs " +
                           std::to_string(n));
    }
    storage_->shape = std::move(shape);
    storage_->data = std::move(data);
    storage_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const Index n = shape_numel(shape);
    return Tensor(std::move(shape), Array::Zero(n), requires_grad);
  }

  static Tensor filled(Shape shape, Scalar value, bool requires_grad = false) {
    const Index n = shape_numel(shape);
    return Tensor(std::move(shape), Array::Constant(n, value), requires_grad);
  }

  static Tensor scalar(Scalar value, bool requires_grad = false) {
    return filled({1}, value, requires_grad);
  }

  static Tensor from_matrix(const Matrix& m, bool requires_grad = false) {
    Array data(m.size());
    Eigen::Map<Matrix>(data.data(), m.rows(), m.cols()) = m;
    return Tensor({static_cast<Index>(m.rows()), static_cast<Index>(m.cols())}, std::move(data),
                  requires_grad);
  }

  static Tensor from_values(Shape shape, const std::vector<Scalar>& values,
                            bool requires_grad = false) {
    Array data = Eigen::Map<const Array>(values.data(), static_cast<Index>(values.size()));
    return Tensor(std::move(shape), std::move(data), requires_grad);
  }

  bool defined() const noexcept { return storage_ != nullptr; }
  const void* id() const noexcept { return storage_.get(); }

  const Shape& shape() const { return storage_->shape; }
  int ndim() const { return static_cast<int>(storage_->shape.size()); }
  Index numel() const { return storage_->data.size(); }
  Index cols() const { return storage_->shape.back(); }
  Index rows() const { return numel() / cols(); }

  const Array& data() const { return storage_->data; }
  Array& data() { return storage_->data; }

  ConstMatrixMap matrix() const { return ConstMatrixMap(storage_->data.data(), rows(), cols()); }
  MatrixMap matrix() { return MatrixMap(storage_->data.data(), rows(), cols()); }

  Scalar item() const {
    if (numel() != 1) {
      throw DimensionError("item() on tensor of shape " + shape_string(shape()));
    }
    return storage_->data[0];
  }

  bool requires_grad() const { return storage_->requires_grad; }
  void set_requires_grad(bool value) { storage_->requires_grad = value; }

  bool has_grad() const { return storage_->grad.size() == storage_->data.size(); }
  const Array& grad() const { return storage_->grad; }

  // Returns the gradient buffer, creating a zeroed one on first use. The
  // buffer is shared by every copy of the handle, so backward rules
  // accumulate through const handles.
  Array& ensure_grad() const {
    if (!has_grad()) storage_->grad = Array::Zero(storage_->data.size());
    return storage_->grad;
  }

  MatrixMap grad_matrix() const { return MatrixMap(ensure_grad().data(), rows(), cols()); }

  void clear_grad() const { storage_->grad.resize(0); }

  // Deep copy without graph participation.
  Tensor clone() const { return Tensor(shape(), data(), false); }

 private:
  struct Storage {
    Shape shape;
    Array data;
    Array grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> storage_;
};

// Ordered record of differentiable operations.
//
// Ops append an entry only when some input requires a gradient and the tape
// is recording; a non-recording tape turns every forward into inference.
template <typename Scalar>
class Tape {
 public:
  using Rule = std::function<void()>;

  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return entries_.size(); }
  void clear() { entries_.clear(); }

  bool wants(std::initializer_list<const Tensor<Scalar>*> inputs) const {
    if (!recording_) return false;
    for (const auto* t : inputs) {
      if (t->defined() && t->requires_grad()) return true;
    }
    return false;
  }

  bool wants(const std::vector<Tensor<Scalar>>& inputs) const {
    if (!recording_) return false;
    for (const auto& t : inputs) {
      if (t.requires_grad()) return true;
    }
    return false;
  }

  void record(std::vector<Tensor<Scalar>> inputs, Tensor<Scalar> output, Rule rule) {
    output.set_requires_grad(true);
    entries_.push_back({std::move(inputs), std::move(output), std::move(rule)});
  }

  // Propagates d(loss)/d(x) into every requires_grad tensor reachable from
  // loss. Intermediate gradients are reset first, so calling twice without
  // clearing leaf gradients accumulates exactly twice the leaf gradient.
  void backward(Tensor<Scalar> loss);

 private:
  struct Entry {
    std::vector<Tensor<Scalar>> inputs;
    Tensor<Scalar> output;
    Rule rule;
  };
  std::vector<Entry> entries_;
  bool recording_;
};

// Named learnable tensors in registration order.
template <typename Scalar>
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor<Scalar> tensor;
    bool decay;  // AdamW weight decay applies
  };

  // Returns a handle sharing storage with the registered tensor.
  Tensor<Scalar> add(std::string name, Tensor<Scalar> tensor, bool decay);

  bool contains(std::string_view name) const { return index_.find(name) != index_.end(); }
  const Tensor<Scalar>& at(std::string_view name) const;
  Tensor<Scalar>& at(std::string_view name);

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::vector<Entry>& entries() noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  Index numel() const;
  void zero_grad();

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

extern template class Tape<float>;
extern template class Tape<double>;
extern template class ParameterSet<float>;
extern template class ParameterSet<double>;

}  // namespace kmbart
