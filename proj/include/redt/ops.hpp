#pragma once

// Differentiable primitives. Every op computes its forward value eagerly and,
// when recording, attaches a closure that maps the output gradient onto its
// inputs. Reductions accumulate sequentially in index order.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <vector>

#include "redt/tensor.hpp"

namespace redt {

using IndexList = std::shared_ptr<const std::vector<Index>>;

inline IndexList make_index_list(std::vector<Index> idx) {
  return std::make_shared<const std::vector<Index>>(std::move(idx));
}

namespace detail {

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

inline Index last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

template <typename Scalar>
Eigen::Map<const RowMat<Scalar>> as_matrix(const Vec<Scalar>& v, Index rows, Index cols) {
  return Eigen::Map<const RowMat<Scalar>>(v.data(), rows, cols);
}

template <typename Scalar>
Eigen::Map<RowMat<Scalar>> as_matrix(Vec<Scalar>& v, Index rows, Index cols) {
  return Eigen::Map<RowMat<Scalar>>(v.data(), rows, cols);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape) {
  if (numel(shape) != x.size())
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  return Tensor<Scalar>::make_result(std::move(shape), x.data(), {x},
                                     [x](const Vec<Scalar>& g) { x.accumulate_grad(g); });
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::reshaped(Shape new_shape) const {
  return reshape(*this, std::move(new_shape));
}

/// out.flat[i] = x.flat[idx[i]]. Backward scatter-adds, so repeated indices
/// accumulate. Covers permutation, window partition, masked selection and
/// embedding lookup.
template <typename Scalar>
Tensor<Scalar> gather(const Tensor<Scalar>& x, IndexList idx, Shape shape) {
  const auto& ids = *idx;
  if (numel(shape) != static_cast<Index>(ids.size()))
    throw ShapeError("gather: " + std::to_string(ids.size()) + " indices for shape " + to_string(shape));
  const Vec<Scalar>& xv = x.data();
  Vec<Scalar> out(static_cast<Index>(ids.size()));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const Index j = ids[i];
    if (j < 0 || j >= xv.size()) throw UsageError("gather: index out of range");
    out[static_cast<Index>(i)] = xv[j];
  }
  return Tensor<Scalar>::make_result(std::move(shape), std::move(out), {x}, [x, idx](const Vec<Scalar>& g) {
    Vec<Scalar> gx = Vec<Scalar>::Zero(x.size());
    const auto& ids = *idx;
    for (std::size_t i = 0; i < ids.size(); ++i) gx[ids[i]] += g[static_cast<Index>(i)];
    x.accumulate_grad(gx);
  });
}

/// Permutes axes of a tensor (generalized transpose).
template <typename Scalar>
Tensor<Scalar> permute(const Tensor<Scalar>& x, const std::vector<int>& axes) {
  const Shape& s = x.shape();
  const std::size_t r = s.size();
  if (axes.size() != r) throw ShapeError("permute: axis count mismatch");
  std::vector<Index> in_stride(r, 1);
  for (std::size_t i = r - 1; i-- > 0;) in_stride[i] = in_stride[i + 1] * s[i + 1];
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = s[static_cast<std::size_t>(axes[i])];
  std::vector<Index> idx(static_cast<std::size_t>(x.size()));
  std::vector<Index> coord(r, 0);
  for (std::size_t flat = 0; flat < idx.size(); ++flat) {
    Index src = 0;
    for (std::size_t i = 0; i < r; ++i) src += coord[i] * in_stride[static_cast<std::size_t>(axes[i])];
    idx[flat] = src;
    for (std::size_t i = r; i-- > 0;) {
      if (++coord[i] < out_shape[i]) break;
      coord[i] = 0;
    }
  }
  return gather(x, make_index_list(std::move(idx)), std::move(out_shape));
}

/// Concatenates along the last axis; leading extents must agree.
template <typename Scalar>
Tensor<Scalar> concat_last(const std::vector<Tensor<Scalar>>& parts) {
  if (parts.empty()) throw UsageError("concat_last: no inputs");
  Shape lead = parts[0].shape();
  lead.pop_back();
  const Index rows = numel(lead);
  std::vector<Index> widths;
  Index total = 0;
  for (const auto& p : parts) {
    Shape l = p.shape();
    const Index w = l.back();
    l.pop_back();
    if (l != lead) throw ShapeError("concat_last: leading shape mismatch " + to_string(p.shape()));
    widths.push_back(w);
    total += w;
  }
  RowMat<Scalar> out(rows, total);
  Index off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    out.middleCols(off, widths[k]) = detail::as_matrix(parts[k].data(), rows, widths[k]);
    off += widths[k];
  }
  Shape shape = lead;
  shape.push_back(total);
  Vec<Scalar> values = Eigen::Map<Vec<Scalar>>(out.data(), out.size());
  return Tensor<Scalar>::make_result(std::move(shape), std::move(values), parts,
                                     [parts, widths, rows, total](const Vec<Scalar>& g) {
    auto gm = detail::as_matrix(g, rows, total);
    Index off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (parts[k].requires_grad()) {
        RowMat<Scalar> part = gm.middleCols(off, widths[k]);
        parts[k].accumulate_grad(Eigen::Map<const Vec<Scalar>>(part.data(), part.size()));
      }
      off += widths[k];
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "add");
  return Tensor<Scalar>::make_result(a.shape(), a.data() + b.data(), {a, b}, [a, b](const Vec<Scalar>& g) {
    a.accumulate_grad(g);
    b.accumulate_grad(g);
  });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "sub");
  return Tensor<Scalar>::make_result(a.shape(), a.data() - b.data(), {a, b}, [a, b](const Vec<Scalar>& g) {
    a.accumulate_grad(g);
    b.accumulate_grad(-g);
  });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  return Tensor<Scalar>::make_result(a.shape(), a.data() * b.data(), {a, b}, [a, b](const Vec<Scalar>& g) {
    if (a.requires_grad()) a.accumulate_grad(g * b.data());
    if (b.requires_grad()) b.accumulate_grad(g * a.data());
  });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar c) {
  return Tensor<Scalar>::make_result(x.shape(), x.data() * c, {x},
                                     [x, c](const Vec<Scalar>& g) { x.accumulate_grad(g * c); });
}

template <typename Scalar>
Tensor<Scalar> add_scalar(const Tensor<Scalar>& x, Scalar c) {
  return Tensor<Scalar>::make_result(x.shape(), x.data() + c, {x},
                                     [x](const Vec<Scalar>& g) { x.accumulate_grad(g); });
}

/// x[..., N] + b[N], broadcasting over leading axes.
template <typename Scalar>
Tensor<Scalar> add_rowwise(const Tensor<Scalar>& x, const Tensor<Scalar>& b) {
  const Index cols = detail::last_dim(x.shape());
  if (b.size() != cols) throw ShapeError("add_rowwise: bias length mismatch");
  const Index rows = x.size() / cols;
  RowMat<Scalar> out = detail::as_matrix(x.data(), rows, cols);
  out.rowwise() += detail::as_matrix(b.data(), 1, cols).row(0);
  Vec<Scalar> values = Eigen::Map<Vec<Scalar>>(out.data(), out.size());
  return Tensor<Scalar>::make_result(x.shape(), std::move(values), {x, b}, [x, b, rows, cols](const Vec<Scalar>& g) {
    x.accumulate_grad(g);
    if (b.requires_grad()) {
      Vec<Scalar> gb = Vec<Scalar>::Zero(cols);
      for (Index r = 0; r < rows; ++r) gb += g.segment(r * cols, cols);
      b.accumulate_grad(gb);
    }
  });
}

/// x[..., N] * s[N], broadcasting over leading axes.
template <typename Scalar>
Tensor<Scalar> mul_rowwise(const Tensor<Scalar>& x, const Tensor<Scalar>& s) {
  const Index cols = detail::last_dim(x.shape());
  if (s.size() != cols) throw ShapeError("mul_rowwise: scale length mismatch");
  const Index rows = x.size() / cols;
  Vec<Scalar> out(x.size());
  for (Index r = 0; r < rows; ++r) out.segment(r * cols, cols) = x.data().segment(r * cols, cols) * s.data();
  return Tensor<Scalar>::make_result(x.shape(), std::move(out), {x, s}, [x, s, rows, cols](const Vec<Scalar>& g) {
    if (x.requires_grad()) {
      Vec<Scalar> gx(g.size());
      for (Index r = 0; r < rows; ++r) gx.segment(r * cols, cols) = g.segment(r * cols, cols) * s.data();
      x.accumulate_grad(gx);
    }
    if (s.requires_grad()) {
      Vec<Scalar> gs = Vec<Scalar>::Zero(cols);
      for (Index r = 0; r < rows; ++r) gs += g.segment(r * cols, cols) * x.data().segment(r * cols, cols);
      s.accumulate_grad(gs);
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
  Vec<Scalar> y = (Scalar(1) + (-x.data()).exp()).inverse();
  Vec<Scalar> dy = y * (Scalar(1) - y);
  return Tensor<Scalar>::make_result(x.shape(), std::move(y), {x},
                                     [x, dy](const Vec<Scalar>& g) { x.accumulate_grad(g * dy); });
}

/// Exact (erf-based) GELU.
template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& x) {
  const Scalar inv_sqrt2 = Scalar(1) / std::sqrt(Scalar(2));
  const Scalar inv_sqrt2pi = Scalar(1) / std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
  const Vec<Scalar>& xv = x.data();
  Vec<Scalar> y(xv.size()), dy(xv.size());
  for (Index i = 0; i < xv.size(); ++i) {
    const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(xv[i] * inv_sqrt2));
    const Scalar pdf = inv_sqrt2pi * std::exp(Scalar(-0.5) * xv[i] * xv[i]);
    y[i] = xv[i] * cdf;
    dy[i] = cdf + xv[i] * pdf;
  }
  return Tensor<Scalar>::make_result(x.shape(), std::move(y), {x},
                                     [x, dy](const Vec<Scalar>& g) { x.accumulate_grad(g * dy); });
}

template <typename Scalar>
Tensor<Scalar> log(const Tensor<Scalar>& x) {
  if ((x.data() <= Scalar(0)).any()) throw DataError("log of a non-positive value");
  return Tensor<Scalar>::make_result(x.shape(), x.data().log(), {x},
                                     [x](const Vec<Scalar>& g) { x.accumulate_grad(g / x.data()); });
}

template <typename Scalar>
Tensor<Scalar> exp(const Tensor<Scalar>& x) {
  Vec<Scalar> y = x.data().exp();
  return Tensor<Scalar>::make_result(x.shape(), y, {x}, [x, y](const Vec<Scalar>& g) { x.accumulate_grad(g * y); });
}

template <typename Scalar>
Tensor<Scalar> square(const Tensor<Scalar>& x) {
  return Tensor<Scalar>::make_result(x.shape(), x.data().square(), {x},
                                     [x](const Vec<Scalar>& g) { x.accumulate_grad(Scalar(2) * g * x.data()); });
}

/// Square root whose derivative is taken as 0 at exactly 0 (the clamped case).
template <typename Scalar>
Tensor<Scalar> sqrt(const Tensor<Scalar>& x) {
  if ((x.data() < Scalar(0)).any()) throw DataError("sqrt of a negative value");
  Vec<Scalar> y = x.data().sqrt();
  Vec<Scalar> dy = (y > Scalar(0)).select(Scalar(0.5) / y, Scalar(0));
  return Tensor<Scalar>::make_result(x.shape(), std::move(y), {x},
                                     [x, dy](const Vec<Scalar>& g) { x.accumulate_grad(g * dy); });
}

/// max(x, lo); gradient passes only where x > lo.
template <typename Scalar>
Tensor<Scalar> clamp_min(const Tensor<Scalar>& x, Scalar lo) {
  Vec<Scalar> pass = (x.data() > lo).template cast<Scalar>();
  return Tensor<Scalar>::make_result(x.shape(), x.data().max(lo), {x},
                                     [x, pass](const Vec<Scalar>& g) { x.accumulate_grad(g * pass); });
}

/// Gated linear unit over the last axis: first half * sigmoid(second half).
template <typename Scalar>
Tensor<Scalar> glu_last(const Tensor<Scalar>& x) {
  const Index cols = detail::last_dim(x.shape());
  if (cols % 2 != 0) throw ShapeError("glu_last: last axis must be even");
  const Index half = cols / 2, rows = x.size() / cols;
  auto xm = detail::as_matrix(x.data(), rows, cols);
  RowMat<Scalar> a = xm.leftCols(half);
  RowMat<Scalar> gate = (Scalar(1) + (-xm.rightCols(half).array()).exp()).inverse().matrix();
  RowMat<Scalar> out = a.cwiseProduct(gate);
  Shape shape = x.shape();
  shape.back() = half;
  Vec<Scalar> values = Eigen::Map<Vec<Scalar>>(out.data(), out.size());
  return Tensor<Scalar>::make_result(std::move(shape), std::move(values), {x},
                                     [x, a, gate, rows, half](const Vec<Scalar>& g) {
    auto gm = detail::as_matrix(g, rows, half);
    RowMat<Scalar> gx(rows, 2 * half);
    gx.leftCols(half) = gm.cwiseProduct(gate);
    gx.rightCols(half) = gm.cwiseProduct(a).cwiseProduct(gate).cwiseProduct(
        (RowMat<Scalar>::Ones(rows, half) - gate));
    x.accumulate_grad(Eigen::Map<const Vec<Scalar>>(gx.data(), gx.size()));
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  Scalar s = 0;
  for (Index i = 0; i < x.size(); ++i) s += x.data()[i];
  return Tensor<Scalar>::make_result({1}, Vec<Scalar>::Constant(1, s), {x}, [x](const Vec<Scalar>& g) {
    x.accumulate_grad(Vec<Scalar>::Constant(x.size(), g[0]));
  });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x) {
  return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.size()));
}

/// Selects the listed flat positions into a rank-1 tensor.
template <typename Scalar>
Tensor<Scalar> masked_select(const Tensor<Scalar>& x, const std::vector<bool>& mask) {
  if (static_cast<Index>(mask.size()) != x.size()) throw ShapeError("masked_select: mask size mismatch");
  std::vector<Index> idx;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) idx.push_back(static_cast<Index>(i));
  if (idx.empty()) throw UsageError("masked_select: empty selection");
  const Index n = static_cast<Index>(idx.size());
  return gather(x, make_index_list(std::move(idx)), {n});
}

// ---------------------------------------------------------------------------
// Linear algebra

/// x[..., K] · w[K, N] (+ b[N]).
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b = {}) {
  if (w.rank() != 2) throw ShapeError("linear: weight must be 2-D");
  const Index k = w.dim(0), n = w.dim(1);
  if (detail::last_dim(x.shape()) != k)
    throw ShapeError("linear: input " + to_string(x.shape()) + " vs weight " + to_string(w.shape()));
  const Index rows = x.size() / k;
  RowMat<Scalar> y = detail::as_matrix(x.data(), rows, k) * detail::as_matrix(w.data(), k, n);
  if (b.defined()) {
    if (b.size() != n) throw ShapeError("linear: bias length mismatch");
    y.rowwise() += detail::as_matrix(b.data(), 1, n).row(0);
  }
  Shape shape = x.shape();
  shape.back() = n;
  Vec<Scalar> values = Eigen::Map<Vec<Scalar>>(y.data(), y.size());
  return Tensor<Scalar>::make_result(std::move(shape), std::move(values), {x, w, b},
                                     [x, w, b, rows, k, n](const Vec<Scalar>& g) {
    auto gm = detail::as_matrix(g, rows, n);
    if (x.requires_grad()) {
      RowMat<Scalar> gx = gm * detail::as_matrix(w.data(), k, n).transpose();
      x.accumulate_grad(Eigen::Map<const Vec<Scalar>>(gx.data(), gx.size()));
    }
    if (w.requires_grad()) {
      RowMat<Scalar> gw = detail::as_matrix(x.data(), rows, k).transpose() * gm;
      w.accumulate_grad(Eigen::Map<const Vec<Scalar>>(gw.data(), gw.size()));
    }
    if (b.defined() && b.requires_grad()) {
      Vec<Scalar> gb = Vec<Scalar>::Zero(n);
      for (Index r = 0; r < rows; ++r) gb += g.segment(r * n, n);
      b.accumulate_grad(gb);
    }
  });
}

/// Batched product a[G, n, k] · b[G, k, m], or a · b^T when b is [G, m, k].
template <typename Scalar>
Tensor<Scalar> bmm(const Tensor<Scalar>& a, const Tensor<Scalar>& b, bool transpose_b = false) {
  if (a.rank() != 3 || b.rank() != 3) throw ShapeError("bmm: inputs must be 3-D");
  const Index groups = a.dim(0), n = a.dim(1), k = a.dim(2);
  const Index m = transpose_b ? b.dim(1) : b.dim(2);
  const Index bk = transpose_b ? b.dim(2) : b.dim(1);
  if (b.dim(0) != groups || bk != k)
    throw ShapeError("bmm: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  const Index bs = b.dim(1) * b.dim(2);
  Vec<Scalar> out(groups * n * m);
  for (Index gi = 0; gi < groups; ++gi) {
    auto am = Eigen::Map<const RowMat<Scalar>>(a.data().data() + gi * n * k, n, k);
    auto om = Eigen::Map<RowMat<Scalar>>(out.data() + gi * n * m, n, m);
    if (transpose_b)
      om.noalias() = am * Eigen::Map<const RowMat<Scalar>>(b.data().data() + gi * bs, m, k).transpose();
    else
      om.noalias() = am * Eigen::Map<const RowMat<Scalar>>(b.data().data() + gi * bs, k, m);
  }
  return Tensor<Scalar>::make_result({groups, n, m}, std::move(out), {a, b},
                                     [a, b, groups, n, k, m, bs, transpose_b](const Vec<Scalar>& g) {
    Vec<Scalar> ga, gb;
    if (a.requires_grad()) ga = Vec<Scalar>::Zero(a.size());
    if (b.requires_grad()) gb = Vec<Scalar>::Zero(b.size());
    for (Index gi = 0; gi < groups; ++gi) {
      auto gm = Eigen::Map<const RowMat<Scalar>>(g.data() + gi * n * m, n, m);
      auto am = Eigen::Map<const RowMat<Scalar>>(a.data().data() + gi * n * k, n, k);
      if (transpose_b) {
        auto bm = Eigen::Map<const RowMat<Scalar>>(b.data().data() + gi * bs, m, k);
        if (a.requires_grad()) Eigen::Map<RowMat<Scalar>>(ga.data() + gi * n * k, n, k).noalias() += gm * bm;
        if (b.requires_grad())
          Eigen::Map<RowMat<Scalar>>(gb.data() + gi * bs, m, k).noalias() += gm.transpose() * am;
      } else {
        auto bm = Eigen::Map<const RowMat<Scalar>>(b.data().data() + gi * bs, k, m);
        if (a.requires_grad())
          Eigen::Map<RowMat<Scalar>>(ga.data() + gi * n * k, n, k).noalias() += gm * bm.transpose();
        if (b.requires_grad())
          Eigen::Map<RowMat<Scalar>>(gb.data() + gi * bs, k, m).noalias() += am.transpose() * gm;
      }
    }
    if (a.requires_grad()) a.accumulate_grad(ga);
    if (b.requires_grad()) b.accumulate_grad(gb);
  });
}

/// Row-wise softmax over the last axis with max subtraction.
template <typename Scalar>
Tensor<Scalar> softmax_rows(const Tensor<Scalar>& x) {
  if (x.rank() < 2) throw ShapeError("softmax_rows: input must have at least 2 dimensions");
  const Index cols = x.shape().back(), rows = x.size() / cols;
  for (Index i = 0; i < x.size(); ++i)
    if (!std::isfinite(x.data()[i])) throw NumericalError("softmax_rows: non-finite logit");
  Vec<Scalar> y(x.size());
  for (Index r = 0; r < rows; ++r) {
    auto in = x.data().segment(r * cols, cols);
    auto out = y.segment(r * cols, cols);
    const Scalar mx = in.maxCoeff();
    out = (in - mx).exp();
    Scalar s = 0;
    for (Index c = 0; c < cols; ++c) s += out[c];
    out /= s;
  }
  return Tensor<Scalar>::make_result(x.shape(), y, {x}, [x, y, rows, cols](const Vec<Scalar>& g) {
    Vec<Scalar> gx(y.size());
    for (Index r = 0; r < rows; ++r) {
      auto yr = y.segment(r * cols, cols);
      auto gr = g.segment(r * cols, cols);
      Scalar dot = 0;
      for (Index c = 0; c < cols; ++c) dot += yr[c] * gr[c];
      gx.segment(r * cols, cols) = yr * (gr - dot);
    }
    x.accumulate_grad(gx);
  });
}

// ---------------------------------------------------------------------------
// Normalization

/// Layer normalization over the last axis with affine gamma/beta.
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                          Scalar eps = Scalar(1e-5)) {
  const Index cols = detail::last_dim(x.shape()), rows = x.size() / cols;
  if (gamma.size() != cols || beta.size() != cols) throw ShapeError("layer_norm: affine size mismatch");
  Vec<Scalar> xhat(x.size()), inv_std(rows), y(x.size());
  for (Index r = 0; r < rows; ++r) {
    auto xr = x.data().segment(r * cols, cols);
    Scalar mu = 0;
    for (Index c = 0; c < cols; ++c) mu += xr[c];
    mu /= static_cast<Scalar>(cols);
    Scalar var = 0;
    for (Index c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<Scalar>(cols);
    inv_std[r] = Scalar(1) / std::sqrt(var + eps);
    xhat.segment(r * cols, cols) = (xr - mu) * inv_std[r];
    y.segment(r * cols, cols) = xhat.segment(r * cols, cols) * gamma.data() + beta.data();
  }
  return Tensor<Scalar>::make_result(x.shape(), std::move(y), {x, gamma, beta},
                                     [x, gamma, beta, xhat, inv_std, rows, cols](const Vec<Scalar>& g) {
    if (x.requires_grad()) {
      Vec<Scalar> gx(g.size());
      for (Index r = 0; r < rows; ++r) {
        Vec<Scalar> dxhat = g.segment(r * cols, cols) * gamma.data();
        auto xh = xhat.segment(r * cols, cols);
        Scalar m1 = 0, m2 = 0;
        for (Index c = 0; c < cols; ++c) {
          m1 += dxhat[c];
          m2 += dxhat[c] * xh[c];
        }
        m1 /= static_cast<Scalar>(cols);
        m2 /= static_cast<Scalar>(cols);
        gx.segment(r * cols, cols) = inv_std[r] * (dxhat - m1 - xh * m2);
      }
      x.accumulate_grad(gx);
    }
    if (gamma.requires_grad() || beta.requires_grad()) {
      Vec<Scalar> gg = Vec<Scalar>::Zero(cols), gbeta = Vec<Scalar>::Zero(cols);
      for (Index r = 0; r < rows; ++r) {
        gg += g.segment(r * cols, cols) * xhat.segment(r * cols, cols);
        gbeta += g.segment(r * cols, cols);
      }
      gamma.accumulate_grad(gg);
      beta.accumulate_grad(gbeta);
    }
  });
}

/// Per-channel batch normalization over all leading axes. In training mode
/// the batch statistics normalize and the running buffers are updated with
/// `momentum`; otherwise the running buffers normalize.
template <typename Scalar>
Tensor<Scalar> batch_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                          Tensor<Scalar>& running_mean, Tensor<Scalar>& running_var, bool training,
                          Scalar momentum = Scalar(0.1), Scalar eps = Scalar(1e-5)) {
  const Index cols = detail::last_dim(x.shape()), rows = x.size() / cols;
  if (gamma.size() != cols || beta.size() != cols || running_mean.size() != cols || running_var.size() != cols)
    throw ShapeError("batch_norm: channel size mismatch");
  auto xm = detail::as_matrix(x.data(), rows, cols);
  Vec<Scalar> mu(cols), var(cols);
  if (training) {
    mu.setZero();
    for (Index r = 0; r < rows; ++r) mu += xm.row(r).transpose().array();
    mu /= static_cast<Scalar>(rows);
    var.setZero();
    for (Index r = 0; r < rows; ++r) var += (xm.row(r).transpose().array() - mu).square();
    var /= static_cast<Scalar>(rows);
    const Scalar unbias = rows > 1 ? static_cast<Scalar>(rows) / static_cast<Scalar>(rows - 1) : Scalar(1);
    running_mean.mutable_data() = (Scalar(1) - momentum) * running_mean.data() + momentum * mu;
    running_var.mutable_data() = (Scalar(1) - momentum) * running_var.data() + momentum * var * unbias;
  } else {
    mu = running_mean.data();
    var = running_var.data();
  }
  Vec<Scalar> inv_std = (var + eps).rsqrt();
  Vec<Scalar> xhat(x.size()), y(x.size());
  for (Index r = 0; r < rows; ++r) {
    xhat.segment(r * cols, cols) = (xm.row(r).transpose().array() - mu) * inv_std;
    y.segment(r * cols, cols) = xhat.segment(r * cols, cols) * gamma.data() + beta.data();
  }
  return Tensor<Scalar>::make_result(x.shape(), std::move(y), {x, gamma, beta},
                                     [x, gamma, beta, xhat, inv_std, rows, cols, training](const Vec<Scalar>& g) {
    Vec<Scalar> gg = Vec<Scalar>::Zero(cols), gbeta = Vec<Scalar>::Zero(cols);
    for (Index r = 0; r < rows; ++r) {
      gg += g.segment(r * cols, cols) * xhat.segment(r * cols, cols);
      gbeta += g.segment(r * cols, cols);
    }
    if (x.requires_grad()) {
      Vec<Scalar> gx(g.size());
      const Scalar n = static_cast<Scalar>(rows);
      for (Index r = 0; r < rows; ++r) {
        auto gr = g.segment(r * cols, cols);
        if (training)
          gx.segment(r * cols, cols) =
              gamma.data() * inv_std * (gr - gbeta / n - xhat.segment(r * cols, cols) * gg / n);
        else
          gx.segment(r * cols, cols) = gamma.data() * inv_std * gr;
      }
      x.accumulate_grad(gx);
    }
    gamma.accumulate_grad(gg);
    beta.accumulate_grad(gbeta);
  });
}

// ---------------------------------------------------------------------------
// Spatial ops on [B, H, W, C] feature maps

/// Stride-1 convolution with zero "same" padding and odd kernel size k.
/// Weight layout: [k*k*Cin, Cout] with rows ordered (ky, kx, cin).
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b, Index k) {
  if (x.rank() != 4) throw ShapeError("conv2d: input must be [B,H,W,C]");
  if (k % 2 == 0) throw UsageError("conv2d: kernel size must be odd");
  const Index B = x.dim(0), H = x.dim(1), W = x.dim(2), Ci = x.dim(3);
  if (w.rank() != 2 || w.dim(0) != k * k * Ci)
    throw ShapeError("conv2d: weight " + to_string(w.shape()) + " for input " + to_string(x.shape()));
  const Index Co = w.dim(1), pad = k / 2, K = k * k * Ci, P = B * H * W;
  RowMat<Scalar> cols = RowMat<Scalar>::Zero(P, K);
  const Scalar* xd = x.data().data();
  for (Index bi = 0; bi < B; ++bi)
    for (Index y = 0; y < H; ++y)
      for (Index xx = 0; xx < W; ++xx) {
        Scalar* row = cols.data() + ((bi * H + y) * W + xx) * K;
        for (Index ky = 0; ky < k; ++ky) {
          const Index sy = y + ky - pad;
          if (sy < 0 || sy >= H) continue;
          for (Index kx = 0; kx < k; ++kx) {
            const Index sx = xx + kx - pad;
            if (sx < 0 || sx >= W) continue;
            std::copy_n(xd + ((bi * H + sy) * W + sx) * Ci, Ci, row + (ky * k + kx) * Ci);
          }
        }
      }
  RowMat<Scalar> out = cols * detail::as_matrix(w.data(), K, Co);
  if (b.defined()) out.rowwise() += detail::as_matrix(b.data(), 1, Co).row(0);
  Vec<Scalar> values = Eigen::Map<Vec<Scalar>>(out.data(), out.size());
  auto cols_ptr = std::make_shared<const RowMat<Scalar>>(std::move(cols));
  return Tensor<Scalar>::make_result({B, H, W, Co}, std::move(values), {x, w, b},
                                     [x, w, b, cols_ptr, B, H, W, Ci, Co, k, pad, K, P](const Vec<Scalar>& g) {
    auto gm = detail::as_matrix(g, P, Co);
    if (w.requires_grad()) {
      RowMat<Scalar> gw = cols_ptr->transpose() * gm;
      w.accumulate_grad(Eigen::Map<const Vec<Scalar>>(gw.data(), gw.size()));
    }
    if (b.defined() && b.requires_grad()) {
      Vec<Scalar> gb = Vec<Scalar>::Zero(Co);
      for (Index r = 0; r < P; ++r) gb += g.segment(r * Co, Co);
      b.accumulate_grad(gb);
    }
    if (x.requires_grad()) {
      RowMat<Scalar> gcols = gm * detail::as_matrix(w.data(), K, Co).transpose();
      Vec<Scalar> gx = Vec<Scalar>::Zero(x.size());
      for (Index bi = 0; bi < B; ++bi)
        for (Index y = 0; y < H; ++y)
          for (Index xx = 0; xx < W; ++xx) {
            const Scalar* row = gcols.data() + ((bi * H + y) * W + xx) * K;
            for (Index ky = 0; ky < k; ++ky) {
              const Index sy = y + ky - pad;
              if (sy < 0 || sy >= H) continue;
              for (Index kx = 0; kx < k; ++kx) {
                const Index sx = xx + kx - pad;
                if (sx < 0 || sx >= W) continue;
                gx.segment(((bi * H + sy) * W + sx) * Ci, Ci) +=
                    Eigen::Map<const Vec<Scalar>>(row + (ky * k + kx) * Ci, Ci);
              }
            }
          }
      x.accumulate_grad(gx);
    }
  });
}

/// Depthwise stride-1 convolution, "same" zero padding. Weight [k*k, C].
template <typename Scalar>
Tensor<Scalar> depthwise_conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b,
                                Index k) {
  if (x.rank() != 4) throw ShapeError("depthwise_conv2d: input must be [B,H,W,C]");
  const Index B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3), pad = k / 2;
  if (k % 2 == 0) throw UsageError("depthwise_conv2d: kernel size must be odd");
  if (w.rank() != 2 || w.dim(0) != k * k || w.dim(1) != C) throw ShapeError("depthwise_conv2d: weight shape");
  Vec<Scalar> out(x.size());
  const Vec<Scalar>& xd = x.data();
  const Vec<Scalar>& wd = w.data();
  for (Index bi = 0; bi < B; ++bi)
    for (Index y = 0; y < H; ++y)
      for (Index xx = 0; xx < W; ++xx) {
        Vec<Scalar> acc = b.defined() ? b.data() : Vec<Scalar>::Zero(C);
        for (Index ky = 0; ky < k; ++ky) {
          const Index sy = y + ky - pad;
          if (sy < 0 || sy >= H) continue;
          for (Index kx = 0; kx < k; ++kx) {
            const Index sx = xx + kx - pad;
            if (sx < 0 || sx >= W) continue;
            acc += xd.segment(((bi * H + sy) * W + sx) * C, C) * wd.segment((ky * k + kx) * C, C);
          }
        }
        out.segment(((bi * H + y) * W + xx) * C, C) = acc;
      }
  return Tensor<Scalar>::make_result(x.shape(), std::move(out), {x, w, b},
                                     [x, w, b, B, H, W, C, k, pad](const Vec<Scalar>& g) {
    Vec<Scalar> gx = Vec<Scalar>::Zero(x.size()), gw = Vec<Scalar>::Zero(w.size()), gb = Vec<Scalar>::Zero(C);
    const Vec<Scalar>& xd = x.data();
    const Vec<Scalar>& wd = w.data();
    for (Index bi = 0; bi < B; ++bi)
      for (Index y = 0; y < H; ++y)
        for (Index xx = 0; xx < W; ++xx) {
          auto go = g.segment(((bi * H + y) * W + xx) * C, C);
          gb += go;
          for (Index ky = 0; ky < k; ++ky) {
            const Index sy = y + ky - pad;
            if (sy < 0 || sy >= H) continue;
            for (Index kx = 0; kx < k; ++kx) {
              const Index sx = xx + kx - pad;
              if (sx < 0 || sx >= W) continue;
              const Index src = ((bi * H + sy) * W + sx) * C, tap = (ky * k + kx) * C;
              gx.segment(src, C) += go * wd.segment(tap, C);
              gw.segment(tap, C) += go * xd.segment(src, C);
            }
          }
        }
    x.accumulate_grad(gx);
    w.accumulate_grad(gw);
    if (b.defined()) b.accumulate_grad(gb);
  });
}

/// Bilinear resize of [B, h, w, C] to [B, H, W, C] with aligned corners, so
/// affine ramps are reproduced exactly and constants stay constant.
template <typename Scalar>
Tensor<Scalar> upsample_bilinear(const Tensor<Scalar>& x, Index out_h, Index out_w) {
  if (x.rank() != 4) throw ShapeError("upsample_bilinear: input must be [B,H,W,C]");
  const Index B = x.dim(0), h = x.dim(1), w = x.dim(2), C = x.dim(3);
  if (h == out_h && w == out_w) return x;
  struct Tap {
    Index i0, i1;
    Scalar f;
  };
  auto taps = [](Index in, Index out) {
    std::vector<Tap> t(static_cast<std::size_t>(out));
    for (Index o = 0; o < out; ++o) {
      const Scalar src = out > 1 ? static_cast<Scalar>(o) * static_cast<Scalar>(in - 1) / static_cast<Scalar>(out - 1)
                                 : Scalar(0);
      Index i0 = static_cast<Index>(std::floor(src));
      i0 = std::clamp<Index>(i0, 0, in - 1);
      const Index i1 = std::min<Index>(i0 + 1, in - 1);
      t[static_cast<std::size_t>(o)] = {i0, i1, src - static_cast<Scalar>(i0)};
    }
    return t;
  };
  auto ty = std::make_shared<std::vector<Tap>>(taps(h, out_h));
  auto tx = std::make_shared<std::vector<Tap>>(taps(w, out_w));
  Vec<Scalar> out(B * out_h * out_w * C);
  const Vec<Scalar>& xd = x.data();
  for (Index bi = 0; bi < B; ++bi)
    for (Index y = 0; y < out_h; ++y) {
      const Tap& a = (*ty)[static_cast<std::size_t>(y)];
      for (Index xx = 0; xx < out_w; ++xx) {
        const Tap& c = (*tx)[static_cast<std::size_t>(xx)];
        auto at = [&](Index yy, Index xq) { return xd.segment(((bi * h + yy) * w + xq) * C, C); };
        out.segment(((bi * out_h + y) * out_w + xx) * C, C) =
            (Scalar(1) - a.f) * ((Scalar(1) - c.f) * at(a.i0, c.i0) + c.f * at(a.i0, c.i1)) +
            a.f * ((Scalar(1) - c.f) * at(a.i1, c.i0) + c.f * at(a.i1, c.i1));
      }
    }
  return Tensor<Scalar>::make_result({B, out_h, out_w, C}, std::move(out), {x},
                                     [x, ty, tx, B, h, w, C, out_h, out_w](const Vec<Scalar>& g) {
    Vec<Scalar> gx = Vec<Scalar>::Zero(x.size());
    for (Index bi = 0; bi < B; ++bi)
      for (Index y = 0; y < out_h; ++y) {
        const Tap& a = (*ty)[static_cast<std::size_t>(y)];
        for (Index xx = 0; xx < out_w; ++xx) {
          const Tap& c = (*tx)[static_cast<std::size_t>(xx)];
          auto go = g.segment(((bi * out_h + y) * out_w + xx) * C, C);
          auto at = [&](Index yy, Index xq) { return gx.segment(((bi * h + yy) * w + xq) * C, C); };
          at(a.i0, c.i0) += (Scalar(1) - a.f) * (Scalar(1) - c.f) * go;
          at(a.i0, c.i1) += (Scalar(1) - a.f) * c.f * go;
          at(a.i1, c.i0) += a.f * (Scalar(1) - c.f) * go;
          at(a.i1, c.i1) += a.f * c.f * go;
        }
      }
    x.accumulate_grad(gx);
  });
}

/// Rearranges non-overlapping f×f patches into channels: [B,H,W,C] -> [B,H/f,W/f,f*f*C].
template <typename Scalar>
Tensor<Scalar> space_to_depth(const Tensor<Scalar>& x, Index f) {
  if (x.rank() != 4) throw ShapeError("space_to_depth: input must be [B,H,W,C]");
  const Index B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  if (H % f != 0 || W % f != 0) throw ShapeError("space_to_depth: extent not divisible by factor");
  const Index h = H / f, w = W / f;
  std::vector<Index> idx;
  idx.reserve(static_cast<std::size_t>(x.size()));
  for (Index bi = 0; bi < B; ++bi)
    for (Index y = 0; y < h; ++y)
      for (Index xx = 0; xx < w; ++xx)
        for (Index dy = 0; dy < f; ++dy)
          for (Index dx = 0; dx < f; ++dx)
            for (Index c = 0; c < C; ++c) idx.push_back(((bi * H + y * f + dy) * W + xx * f + dx) * C + c);
  return gather(x, make_index_list(std::move(idx)), {B, h, w, f * f * C});
}

}  // namespace redt
