#include "kmbart/ops.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <utility>

namespace kmbart {
namespace {

template <typename S>
void require_ndim(const Tensor<S>& t, int ndim, const char* op) {
  if (t.ndim() != ndim) {
    throw DimensionError(std::string(op) + ": expected rank-" + std::to_string(ndim) +
                         " tensor, got shape " + shape_string(t.shape()));
  }
}

template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

}  // namespace

template <typename S>
Tensor<S> matmul(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  require_ndim(a, 2, "matmul");
  require_ndim(b, 2, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  typename Tensor<S>::Matrix m;
  m.noalias() = a.matrix() * b.matrix();
  Tensor<S> out = Tensor<S>::from_matrix(m);
  if (tape.wants({&a, &b})) {
    tape.record({a, b}, out, [a, b, out]() mutable {
      const auto g = out.grad_matrix();
      if (a.requires_grad()) a.grad_matrix().noalias() += g * b.matrix().transpose();
      if (b.requires_grad()) b.grad_matrix().noalias() += a.matrix().transpose() * g;
    });
  }
  return out;
}

template <typename S>
Tensor<S> transpose(Tape<S>& tape, const Tensor<S>& a) {
  require_ndim(a, 2, "transpose");
  typename Tensor<S>::Matrix m = a.matrix().transpose();
  Tensor<S> out = Tensor<S>::from_matrix(m);
  if (tape.wants({&a})) {
    tape.record({a}, out, [a, out]() mutable { a.grad_matrix() += out.grad_matrix().transpose(); });
  }
  return out;
}

template <typename S>
Tensor<S> add(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a, b, "add");
  Tensor<S> out(a.shape(), a.data() + b.data());
  if (tape.wants({&a, &b})) {
    tape.record({a, b}, out, [a, b, out]() mutable {
      if (a.requires_grad()) a.ensure_grad() += out.grad();
      if (b.requires_grad()) b.ensure_grad() += out.grad();
    });
  }
  return out;
}

template <typename S>
Tensor<S> add_bias(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& bias) {
  if (bias.ndim() != 1 || bias.numel() != x.cols()) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " does not match " +
                         shape_string(x.shape()));
  }
  Tensor<S> out = x.clone();
  out.matrix().rowwise() += bias.matrix().row(0);
  if (tape.wants({&x, &bias})) {
    tape.record({x, bias}, out, [x, bias, out]() mutable {
      if (x.requires_grad()) x.ensure_grad() += out.grad();
      if (bias.requires_grad()) bias.grad_matrix() += out.grad_matrix().colwise().sum();
    });
  }
  return out;
}

template <typename S>
Tensor<S> add_constant(Tape<S>& tape, const Tensor<S>& x, const typename Tensor<S>::Array& constant) {
  if (constant.size() != x.numel()) {
    throw DimensionError("add_constant: constant has " + std::to_string(constant.size()) +
                         " elements, tensor " + shape_string(x.shape()));
  }
  Tensor<S> out(x.shape(), x.data() + constant);
  if (tape.wants({&x})) {
    tape.record({x}, out, [x, out]() mutable { x.ensure_grad() += out.grad(); });
  }
  return out;
}

template <typename S>
Tensor<S> mul(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a, b, "mul");
  Tensor<S> out(a.shape(), a.data() * b.data());
  if (tape.wants({&a, &b})) {
    tape.record({a, b}, out, [a, b, out]() mutable {
      if (a.requires_grad()) a.ensure_grad() += out.grad() * b.data();
      if (b.requires_grad()) b.ensure_grad() += out.grad() * a.data();
    });
  }
  return out;
}

template <typename S>
Tensor<S> scale(Tape<S>& tape, const Tensor<S>& a, S factor) {
  Tensor<S> out(a.shape(), a.data() * factor);
  if (tape.wants({&a})) {
    tape.record({a}, out, [a, out, factor]() mutable { a.ensure_grad() += out.grad() * factor; });
  }
  return out;
}

template <typename S>
Tensor<S> sum(Tape<S>& tape, const Tensor<S>& a) {
  Tensor<S> out = Tensor<S>::scalar(a.data().sum());
  if (tape.wants({&a})) {
    tape.record({a}, out, [a, out]() mutable { a.ensure_grad() += out.grad()[0]; });
  }
  return out;
}

template <typename S>
Tensor<S> linear(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias) {
  return add_bias(tape, matmul(tape, x, weight), bias);
}

template <typename S>
Tensor<S> gelu(Tape<S>& tape, const Tensor<S>& x) {
  const S inv_sqrt2 = S(1) / std::sqrt(S(2));
  typename Tensor<S>::Array cdf =
      S(0.5) * (S(1) + (x.data() * inv_sqrt2).unaryExpr([](S v) { return std::erf(v); }));
  Tensor<S> out(x.shape(), x.data() * cdf);
  if (tape.wants({&x})) {
    tape.record({x}, out, [x, out, cdf]() mutable {
      const S inv_sqrt_2pi = S(1) / std::sqrt(S(2) * S(M_PI));
      const auto& v = x.data();
      auto pdf = (S(-0.5) * v.square()).exp() * inv_sqrt_2pi;
      x.ensure_grad() += out.grad() * (cdf + v * pdf);
    });
  }
  return out;
}

namespace {

template <typename S>
struct Normalized {
  typename Tensor<S>::Matrix xhat;
  typename Tensor<S>::Array inv_std;  // per row
};

template <typename S>
Normalized<S> normalize_rows(const Tensor<S>& x, S eps) {
  const auto m = x.matrix();
  Normalized<S> n;
  n.xhat.resize(m.rows(), m.cols());
  n.inv_std.resize(m.rows());
  for (Index r = 0; r < m.rows(); ++r) {
    const S mu = m.row(r).mean();
    const auto centered = (m.row(r).array() - mu).matrix();
    const S var = centered.squaredNorm() / S(m.cols());
    n.inv_std[r] = S(1) / std::sqrt(var + eps);
    n.xhat.row(r) = centered * n.inv_std[r];
  }
  return n;
}

// d/dx of xhat given upstream d/dxhat, row by row.
template <typename S>
void accumulate_norm_grad(const Tensor<S>& x, const typename Tensor<S>::Matrix& dxhat,
                          const Normalized<S>& n) {
  auto gx = x.grad_matrix();
  const S inv_c = S(1) / S(dxhat.cols());
  for (Index r = 0; r < dxhat.rows(); ++r) {
    const S mean_d = dxhat.row(r).sum() * inv_c;
    const S mean_dx = dxhat.row(r).dot(n.xhat.row(r)) * inv_c;
    gx.row(r).array() +=
        n.inv_std[r] * (dxhat.row(r).array() - mean_d - n.xhat.row(r).array() * mean_dx);
  }
}

}  // namespace

template <typename S>
Tensor<S> layer_norm(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                     S eps) {
  if (gain.numel() != x.cols() || bias.numel() != x.cols()) {
    throw DimensionError("layer_norm: affine parameters " + shape_string(gain.shape()) + "/" +
                         shape_string(bias.shape()) + " do not match " + shape_string(x.shape()));
  }
  auto n = normalize_rows(x, eps);
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  out.matrix() = (n.xhat.array().rowwise() * gain.data().transpose()).rowwise() +
                 bias.data().transpose();
  if (tape.wants({&x, &gain, &bias})) {
    tape.record({x, gain, bias}, out, [x, gain, bias, out, n = std::move(n)]() mutable {
      const auto g = out.grad_matrix();
      if (gain.requires_grad()) {
        gain.grad_matrix() += (g.array() * n.xhat.array()).matrix().colwise().sum();
      }
      if (bias.requires_grad()) bias.grad_matrix() += g.colwise().sum();
      if (x.requires_grad()) {
        typename Tensor<S>::Matrix dxhat = (g.array().rowwise() * gain.data().transpose()).matrix();
        accumulate_norm_grad(x, dxhat, n);
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> layer_norm(Tape<S>& tape, const Tensor<S>& x, S eps) {
  auto n = normalize_rows(x, eps);
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  out.matrix() = n.xhat;
  if (tape.wants({&x})) {
    tape.record({x}, out, [x, out, n = std::move(n)]() mutable {
      typename Tensor<S>::Matrix dxhat = out.grad_matrix();
      accumulate_norm_grad(x, dxhat, n);
    });
  }
  return out;
}

template <typename S>
Tensor<S> softmax(Tape<S>& tape, const Tensor<S>& x) {
  Tensor<S> out = x.clone();
  auto y = out.matrix();
  for (Index r = 0; r < y.rows(); ++r) {
    const S mx = y.row(r).maxCoeff();
    y.row(r) = (y.row(r).array() - mx).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  if (tape.wants({&x})) {
    tape.record({x}, out, [x, out]() mutable {
      const auto y = std::as_const(out).matrix();
      const auto g = out.grad_matrix();
      auto gx = x.grad_matrix();
      for (Index r = 0; r < y.rows(); ++r) {
        const S dot = g.row(r).dot(y.row(r));
        gx.row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> log_softmax(Tape<S>& tape, const Tensor<S>& x) {
  Tensor<S> out = x.clone();
  auto y = out.matrix();
  for (Index r = 0; r < y.rows(); ++r) {
    const S mx = y.row(r).maxCoeff();
    const S lse = mx + std::log((y.row(r).array() - mx).exp().sum());
    y.row(r).array() -= lse;
  }
  if (tape.wants({&x})) {
    tape.record({x}, out, [x, out]() mutable {
      const auto y = std::as_const(out).matrix();
      const auto g = out.grad_matrix();
      auto gx = x.grad_matrix();
      for (Index r = 0; r < y.rows(); ++r) {
        const S total = g.row(r).sum();
        gx.row(r).array() += g.row(r).array() - y.row(r).array().exp() * total;
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> concat_rows(Tape<S>& tape, const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) {
      throw DimensionError("concat_rows: column mismatch " + shape_string(parts.front().shape()) +
                           " vs " + shape_string(p.shape()));
    }
    rows += p.rows();
  }
  Tensor<S> out = Tensor<S>::zeros({rows, cols});
  Index offset = 0;
  for (const auto& p : parts) {
    out.matrix().middleRows(offset, p.rows()) = p.matrix();
    offset += p.rows();
  }
  if (tape.wants(parts)) {
    tape.record(parts, out, [parts, out]() mutable {
      Index off = 0;
      const auto g = out.grad_matrix();
      for (auto& p : parts) {
        if (p.requires_grad()) p.grad_matrix() += g.middleRows(off, p.rows());
        off += p.rows();
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> concat_cols(Tape<S>& tape, const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.ndim() != 2 || p.rows() != rows) {
      throw DimensionError("concat_cols: row mismatch " + shape_string(parts.front().shape()) +
                           " vs " + shape_string(p.shape()));
    }
    cols += p.cols();
  }
  Tensor<S> out = Tensor<S>::zeros({rows, cols});
  Index offset = 0;
  for (const auto& p : parts) {
    out.matrix().middleCols(offset, p.cols()) = p.matrix();
    offset += p.cols();
  }
  if (tape.wants(parts)) {
    tape.record(parts, out, [parts, out]() mutable {
      Index off = 0;
      const auto g = out.grad_matrix();
      for (auto& p : parts) {
        if (p.requires_grad()) p.grad_matrix() += g.middleCols(off, p.cols());
        off += p.cols();
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> slice_rows(Tape<S>& tape, const Tensor<S>& x, Index start, Index count) {
  require_ndim(x, 2, "slice_rows");
  if (start < 0 || count <= 0 || start + count > x.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(start) + ", +" + std::to_string(count) +
                         ") outside " + shape_string(x.shape()));
  }
  typename Tensor<S>::Matrix m = x.matrix().middleRows(start, count);
  Tensor<S> out = Tensor<S>::from_matrix(m);
  if (tape.wants({&x})) {
    tape.record({x}, out, [x, out, start, count]() mutable {
      x.grad_matrix().middleRows(start, count) += out.grad_matrix();
    });
  }
  return out;
}

template <typename S>
Tensor<S> slice_cols(Tape<S>& tape, const Tensor<S>& x, Index start, Index count) {
  require_ndim(x, 2, "slice_cols");
  if (start < 0 || count <= 0 || start + count > x.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", +" + std::to_string(count) +
                         ") outside " + shape_string(x.shape()));
  }
  typename Tensor<S>::Matrix m = x.matrix().middleCols(start, count);
  Tensor<S> out = Tensor<S>::from_matrix(m);
  if (tape.wants({&x})) {
    tape.record({x}, out, [x, out, start, count]() mutable {
      x.grad_matrix().middleCols(start, count) += out.grad_matrix();
    });
  }
  return out;
}

template <typename S>
Tensor<S> gather_rows(Tape<S>& tape, const Tensor<S>& x, std::span<const int> indices) {
  require_ndim(x, 2, "gather_rows");
  if (indices.empty()) throw DimensionError("gather_rows: empty index list");
  std::vector<int> idx(indices.begin(), indices.end());
  for (int i : idx) {
    if (i < 0 || i >= x.rows()) {
      throw RangeError("gather_rows: index " + std::to_string(i) + " outside " +
                       shape_string(x.shape()));
    }
  }
  Tensor<S> out = Tensor<S>::zeros({static_cast<Index>(idx.size()), x.cols()});
  for (std::size_t r = 0; r < idx.size(); ++r) out.matrix().row(r) = x.matrix().row(idx[r]);
  if (tape.wants({&x})) {
    tape.record({x}, out, [x, out, idx = std::move(idx)]() mutable {
      auto gx = x.grad_matrix();
      const auto g = out.grad_matrix();
      for (std::size_t r = 0; r < idx.size(); ++r) gx.row(idx[r]) += g.row(r);
    });
  }
  return out;
}

template <typename S>
Tensor<S> dropout(Tape<S>& tape, const Tensor<S>& x, double rate, Rng* rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ValidationError("dropout rate must be in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  if (rng == nullptr) throw ValidationError("dropout in training mode needs a generator");
  typename Tensor<S>::Array mask(x.numel());
  const S keep_scale = S(1) / S(1.0 - rate);
  for (Index i = 0; i < mask.size(); ++i) mask[i] = rng->uniform() < rate ? S(0) : keep_scale;
  Tensor<S> out(x.shape(), x.data() * mask);
  if (tape.wants({&x})) {
    tape.record({x}, out, [x, out, mask]() mutable { x.ensure_grad() += out.grad() * mask; });
  }
  return out;
}

template <typename S>
Tensor<S> cross_entropy(Tape<S>& tape, const Tensor<S>& logits, std::span<const int> targets,
                        int ignore_index, Reduction reduction) {
  if (static_cast<Index>(targets.size()) != logits.rows()) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                         shape_string(logits.shape()));
  }
  const Index vocab = logits.cols();
  std::vector<int> tgt(targets.begin(), targets.end());
  const auto z = logits.matrix();
  typename Tensor<S>::Matrix probs(z.rows(), z.cols());
  S total = 0;
  Index count = 0;
  for (Index r = 0; r < z.rows(); ++r) {
    const S mx = z.row(r).maxCoeff();
    probs.row(r) = (z.row(r).array() - mx).exp().matrix();
    const S denom = probs.row(r).sum();
    probs.row(r) /= denom;
    const int t = tgt[r];
    if (t == ignore_index) continue;
    if (t < 0 || t >= vocab) {
      throw RangeError("cross_entropy: target " + std::to_string(t) + " outside [0, " +
                       std::to_string(vocab) + ")");
    }
    total += (mx + std::log(denom)) - z(r, t);
    ++count;
  }
  if (count == 0) throw EmptyLossError("every position is ignored");
  const S norm = reduction == Reduction::mean ? S(1) / S(count) : S(1);
  Tensor<S> out = Tensor<S>::scalar(total * norm);
  if (tape.wants({&logits})) {
    tape.record({logits}, out,
                [logits, out, tgt = std::move(tgt), probs = std::move(probs), norm,
                 ignore_index]() mutable {
                  const S g = out.grad()[0] * norm;
                  auto gz = logits.grad_matrix();
                  for (Index r = 0; r < probs.rows(); ++r) {
                    if (tgt[r] == ignore_index) continue;
                    gz.row(r) += g * probs.row(r);
                    gz(r, tgt[r]) -= g;
                  }
                });
  }
  return out;
}

template <typename S>
Tensor<S> kl_divergence(Tape<S>& tape, const Tensor<S>& p, const Tensor<S>& log_q,
                        Reduction reduction) {
  require_same_shape(p, log_q, "kl_divergence");
  const auto pm = p.matrix();
  const auto lq = log_q.matrix();
  S total = 0;
  for (Index r = 0; r < pm.rows(); ++r) {
    const S row_sum = pm.row(r).sum();
    if (std::abs(row_sum - S(1)) > S(1e-4) || pm.row(r).minCoeff() < S(0)) {
      throw ValidationError("kl_divergence: row " + std::to_string(r) +
                            " of p is not a probability vector (sum " + std::to_string(row_sum) +
                            ")");
    }
    for (Index c = 0; c < pm.cols(); ++c) {
      const S pc = pm(r, c);
      if (pc > S(0)) total += pc * (std::log(pc) - lq(r, c));
    }
  }
  const S norm = reduction == Reduction::mean ? S(1) / S(pm.rows()) : S(1);
  Tensor<S> out = Tensor<S>::scalar(total * norm);
  if (tape.wants({&log_q})) {
    tape.record({log_q}, out, [p, log_q, out, norm]() mutable {
      log_q.ensure_grad() -= p.data() * (out.grad()[0] * norm);
    });
  }
  return out;
}

#define KMBART_INSTANTIATE_OPS(S)                                                                  \
  template Tensor<S> matmul(Tape<S>&, const Tensor<S>&, const Tensor<S>&);                         \
  template Tensor<S> transpose(Tape<S>&, const Tensor<S>&);                                        \
  template Tensor<S> add(Tape<S>&, const Tensor<S>&, const Tensor<S>&);                            \
  template Tensor<S> add_bias(Tape<S>&, const Tensor<S>&, const Tensor<S>&);                       \
  template Tensor<S> add_constant(Tape<S>&, const Tensor<S>&, const Tensor<S>::Array&);            \
  template Tensor<S> mul(Tape<S>&, const Tensor<S>&, const Tensor<S>&);                            \
  template Tensor<S> scale(Tape<S>&, const Tensor<S>&, S);                                         \
  template Tensor<S> sum(Tape<S>&, const Tensor<S>&);                                              \
  template Tensor<S> linear(Tape<S>&, const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);       \
  template Tensor<S> gelu(Tape<S>&, const Tensor<S>&);                                             \
  template Tensor<S> layer_norm(Tape<S>&, const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S); \
  template Tensor<S> layer_norm(Tape<S>&, const Tensor<S>&, S);                                    \
  template Tensor<S> softmax(Tape<S>&, const Tensor<S>&);                                          \
  template Tensor<S> log_softmax(Tape<S>&, const Tensor<S>&);                                      \
  template Tensor<S> concat_rows(Tape<S>&, const std::vector<Tensor<S>>&);                         \
  template Tensor<S> concat_cols(Tape<S>&, const std::vector<Tensor<S>>&);                         \
  template Tensor<S> slice_rows(Tape<S>&, const Tensor<S>&, Index, Index);                         \
  template Tensor<S> slice_cols(Tape<S>&, const Tensor<S>&, Index, Index);                         \
  template Tensor<S> gather_rows(Tape<S>&, const Tensor<S>&, std::span<const int>);                \
  template Tensor<S> dropout(Tape<S>&, const Tensor<S>&, double, Rng*, bool);                      \
  template Tensor<S> cross_entropy(Tape<S>&, const Tensor<S>&, std::span<const int>, int, Reduction); \
  template Tensor<S> kl_divergence(Tape<S>&, const Tensor<S>&, const Tensor<S>&, Reduction);

KMBART_INSTANTIATE_OPS(float)
KMBART_INSTANTIATE_OPS(double)

#undef KMBART_INSTANTIATE_OPS

}  // namespace kmbart
