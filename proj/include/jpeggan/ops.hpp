#pragma once

// Differentiable primitives. Every backward is written in terms of these
// same primitives, so gradients can themselves be differentiated (needed by
// the gradient penalty).

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "jpeggan/tensor.hpp"

namespace jpeggan::ops {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
Tensor<T> constant(const Shape& shape, std::vector<T> data) {
  return Tensor<T>(shape, std::move(data));
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

inline void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

inline void require_rank(const Shape& a, std::size_t r, const char* op) {
  if (a.size() != r)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " + to_string(a));
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> scale(const Tensor<T>& a, T s);
template <class T>
Tensor<T> sum(const Tensor<T>& a);
template <class T>
Tensor<T> transpose(const Tensor<T>& a);
template <class T>
Tensor<T> col2im(const Tensor<T>& cols, const Shape& xshape, std::size_t k, std::size_t stride, std::size_t pad);
template <class T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t fh, std::size_t fw);
template <class T>
Tensor<T> rows_to_blocks(const Tensor<T>& rows, const Shape& xshape, std::size_t bh, std::size_t bw);
template <class T>
Tensor<T> crop2d(const Tensor<T>& x, std::size_t pad);
template <class T>
Tensor<T> embed(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t full);
template <class T>
Tensor<T> repeat_cols(const Tensor<T>& x, std::size_t n);
template <class T>
Tensor<T> reshape(const Tensor<T>& a, const Shape& shape);
template <class T>
Tensor<T> repeat_rows(const Tensor<T>& x, std::size_t m);

// ---------------------------------------------------------------- elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a.shape(), b.shape(), "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return Tensor<T>::make_result("add", a.shape(), std::move(out), {a, b},
                                [](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{g, g};
                                });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a.shape(), b.shape(), "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return Tensor<T>::make_result("sub", a.shape(), std::move(out), {a, b},
                                [](const Tensor<T>& g, const std::vector<bool>& needs) {
                                  return std::vector<Tensor<T>>{g, needs[1] ? scale(g, T(-1)) : Tensor<T>()};
                                });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return Tensor<T>::make_result("mul", a.shape(), std::move(out), {a, b},
                                [a, b](const Tensor<T>& g, const std::vector<bool>& needs) {
                                  return std::vector<Tensor<T>>{needs[0] ? mul(g, b) : Tensor<T>(),
                                                                needs[1] ? mul(g, a) : Tensor<T>()};
                                });
}

// a / b with 0 where b == 0.
template <class T>
Tensor<T> safe_div(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a.shape(), b.shape(), "safe_div");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = b[i] != T(0) ? a[i] / b[i] : T(0);
  return Tensor<T>::make_result("safe_div", a.shape(), std::move(out), {a, b},
                                [a, b](const Tensor<T>& g, const std::vector<bool>& needs) {
                                  std::vector<Tensor<T>> r(2);
                                  if (needs[0]) r[0] = safe_div(g, b);
                                  if (needs[1]) r[1] = scale(safe_div(mul(g, a), mul(b, b)), T(-1));
                                  return r;
                                });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  return Tensor<T>::make_result("scale", a.shape(), std::move(out), {a},
                                [s](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{scale(g, s)};
                                });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + s;
  return Tensor<T>::make_result("add_scalar", a.shape(), std::move(out), {a},
                                [](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{g};
                                });
}

// Multiplies by a fixed 0/1 (or slope) mask; the mask is a constant.
template <class T>
Tensor<T> masked(const Tensor<T>& a, std::vector<T> mask, const char* op) {
  Tensor<T> m = detail::constant(a.shape(), std::move(mask));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * m[i];
  return Tensor<T>::make_result(op, a.shape(), std::move(out), {a},
                                [m](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{mul(g, m)};
                                });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> mask(a.numel());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = a[i] > T(0) ? T(1) : T(0);
  return masked(a, std::move(mask), "relu");
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope) {
  std::vector<T> mask(a.numel());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = a[i] > T(0) ? T(1) : slope;
  return masked(a, std::move(mask), "leaky_relu");
}

// Hard clamp; zero gradient outside [lo, hi].
template <class T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  std::vector<T> out(a.numel()), mask(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const bool inside = a[i] >= lo && a[i] <= hi;
    mask[i] = inside ? T(1) : T(0);
    out[i] = std::clamp(a[i], lo, hi);
  }
  Tensor<T> m = detail::constant(a.shape(), std::move(mask));
  return Tensor<T>::make_result("clamp", a.shape(), std::move(out), {a},
                                [m](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{mul(g, m)};
                                });
}

template <class T>
Tensor<T> abs(const Tensor<T>& a) {
  std::vector<T> sign(a.numel());
  for (std::size_t i = 0; i < sign.size(); ++i) sign[i] = a[i] > T(0) ? T(1) : (a[i] < T(0) ? T(-1) : T(0));
  return masked(a, std::move(sign), "abs");
}

template <class T>
Tensor<T> tanh(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a[i]);
  return Tensor<T>::make_result("tanh", a.shape(), std::move(out), {a},
                                [a](const Tensor<T>& g, const std::vector<bool>&) {
                                  // recomputed so the derivative stays on the graph
                                  Tensor<T> y = tanh(a);
                                  Tensor<T> dy = add_scalar(scale(mul(y, y), T(-1)), T(1));
                                  return std::vector<Tensor<T>>{mul(g, dy)};
                                });
}

// Round half away from zero; straight-through backward (identity).
template <class T>
Tensor<T> round_ste(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::round(a[i]);
  return Tensor<T>::make_result("round_ste", a.shape(), std::move(out), {a},
                                [](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{g};
                                });
}

// ---------------------------------------------------------------- reductions

template <class T>
Tensor<T> expand(const Tensor<T>& s, const Shape& shape) {
  detail::require(s.numel() == 1, "expand: input must be scalar");
  std::vector<T> out(numel_of(shape), s[0]);
  const Shape in_shape = s.shape();
  return Tensor<T>::make_result("expand", shape, std::move(out), {s},
                                [in_shape](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{reshape(sum(g), in_shape)};
                                });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.data()) acc += v;
  const Shape shape = a.shape();
  return Tensor<T>::make_result("sum", Shape{}, std::vector<T>{acc}, {a},
                                [shape](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{expand(g, shape)};
                                });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <class T>
Tensor<T> l1_norm(const Tensor<T>& a) {
  return sum(abs(a));
}

// M x n -> M x 1
template <class T>
Tensor<T> sum_cols(const Tensor<T>& x) {
  detail::require_rank(x.shape(), 2, "sum_cols");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<T> out(m, T(0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i] += x[i * n + j];
  return Tensor<T>::make_result("sum_cols", Shape{m, 1}, std::move(out), {x},
                                [n](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{repeat_cols(g, n)};
                                });
}

// M x 1 -> M x n
template <class T>
Tensor<T> repeat_cols(const Tensor<T>& x, std::size_t n) {
  detail::require(x.rank() == 2 && x.dim(1) == 1, "repeat_cols: expected M x 1, got " + to_string(x.shape()));
  const std::size_t m = x.dim(0);
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i];
  return Tensor<T>::make_result("repeat_cols", Shape{m, n}, std::move(out), {x},
                                [](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{sum_cols(g)};
                                });
}

// M x n -> 1 x n
template <class T>
Tensor<T> sum_rows(const Tensor<T>& x) {
  detail::require_rank(x.shape(), 2, "sum_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<T> out(n, T(0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += x[i * n + j];
  return Tensor<T>::make_result("sum_rows", Shape{1, n}, std::move(out), {x},
                                [m](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{repeat_rows(g, m)};
                                });
}

// 1 x n -> M x n
template <class T>
Tensor<T> repeat_rows(const Tensor<T>& x, std::size_t m) {
  detail::require(x.rank() == 2 && x.dim(0) == 1, "repeat_rows: expected 1 x n, got " + to_string(x.shape()));
  const std::size_t n = x.dim(1);
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i) std::copy(x.data().begin(), x.data().end(), out.begin() + i * n);
  return Tensor<T>::make_result("repeat_rows", Shape{m, n}, std::move(out), {x},
                                [](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{sum_rows(g)};
                                });
}

// Euclidean norm of each row: M x n -> M x 1. The derivative at a zero row is taken as 0.
template <class T>
Tensor<T> row_norm(const Tensor<T>& x) {
  detail::require_rank(x.shape(), 2, "row_norm");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<T> out(m, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    T acc = T(0);
    for (std::size_t j = 0; j < n; ++j) acc += x[i * n + j] * x[i * n + j];
    out[i] = std::sqrt(acc);
  }
  return Tensor<T>::make_result("row_norm", Shape{m, 1}, std::move(out), {x},
                                [x, n](const Tensor<T>& g, const std::vector<bool>&) {
                                  Tensor<T> y = row_norm(x);
                                  return std::vector<Tensor<T>>{mul(repeat_cols(safe_div(g, y), n), x)};
                                });
}

// ---------------------------------------------------------------- linear algebra / layout

// op(a) * op(b), where op transposes when the flag is set. Backward stays in
// terms of gemm so no transposed copies are materialized.
template <class T>
Tensor<T> gemm(const Tensor<T>& a, const Tensor<T>& b, bool ta, bool tb) {
  detail::require_rank(a.shape(), 2, "matmul");
  detail::require_rank(b.shape(), 2, "matmul");
  const std::size_t m = ta ? a.dim(1) : a.dim(0), k = ta ? a.dim(0) : a.dim(1);
  const std::size_t kb = tb ? b.dim(1) : b.dim(0), n = tb ? b.dim(0) : b.dim(1);
  if (k != kb)
    throw ShapeError("matmul: inner extents differ " + to_string(a.shape()) + (ta ? "^T" : "") + " x " +
                     to_string(b.shape()) + (tb ? "^T" : ""));
  std::vector<T> out(m * n);
  using M = detail::RowMat<T>;
  Eigen::Map<const M> A(a.data().data(), a.dim(0), a.dim(1));
  Eigen::Map<const M> B(b.data().data(), b.dim(0), b.dim(1));
  Eigen::Map<M> C(out.data(), m, n);
  if (!ta && !tb)
    C.noalias() = A * B;
  else if (ta && !tb)
    C.noalias() = A.transpose() * B;
  else if (!ta && tb)
    C.noalias() = A * B.transpose();
  else
    C.noalias() = A.transpose() * B.transpose();
  return Tensor<T>::make_result("matmul", Shape{m, n}, std::move(out), {a, b},
                                [a, b, ta, tb](const Tensor<T>& g, const std::vector<bool>& needs) {
                                  Tensor<T> ga, gb;
                                  if (needs[0]) ga = ta ? gemm(b, g, tb, true) : gemm(g, b, false, !tb);
                                  if (needs[1]) gb = tb ? gemm(g, a, true, ta) : gemm(a, g, !ta, false);
                                  return std::vector<Tensor<T>>{ga, gb};
                                });
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  return gemm(a, b, false, false);
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_rank(a.shape(), 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(m * n);
  using M = detail::RowMat<T>;
  Eigen::Map<M>(out.data(), n, m) = Eigen::Map<const M>(a.data().data(), m, n).transpose();
  return Tensor<T>::make_result("transpose", Shape{n, m}, std::move(out), {a},
                                [](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{transpose(g)};
                                });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, const Shape& shape) {
  if (numel_of(shape) != a.numel())
    throw ShapeError("reshape: " + to_string(a.shape()) + " -> " + to_string(shape));
  const Shape from = a.shape();
  return Tensor<T>::make_result("reshape", shape, a.vec(), {a},
                                [from](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{reshape(g, from)};
                                });
}

// A x B x R -> B x A x R
template <class T>
Tensor<T> swap01(const Tensor<T>& x) {
  detail::require_rank(x.shape(), 3, "swap01");
  const std::size_t a = x.dim(0), b = x.dim(1), r = x.dim(2);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j)
      std::copy_n(x.data().data() + (i * b + j) * r, r, out.data() + (j * a + i) * r);
  return Tensor<T>::make_result("swap01", Shape{b, a, r}, std::move(out), {x},
                                [](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{swap01(g)};
                                });
}

// Slice [start, start+len) along axis.
template <class T>
Tensor<T> narrow(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t len) {
  detail::require(axis < x.rank() && start + len <= x.dim(axis), "narrow: range out of bounds");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t full = x.dim(axis);
  Shape shape = x.shape();
  shape[axis] = len;
  std::vector<T> out(outer * len * inner);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.data().data() + (o * full + start) * inner, len * inner, out.data() + o * len * inner);
  return Tensor<T>::make_result("narrow", shape, std::move(out), {x},
                                [axis, start, full](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{embed(g, axis, start, full)};
                                });
}

// Zero tensor of extent `full` along axis with x placed at `start`.
template <class T>
Tensor<T> embed(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t full) {
  const std::size_t len = x.dim(axis);
  detail::require(start + len <= full, "embed: range out of bounds");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  Shape shape = x.shape();
  shape[axis] = full;
  std::vector<T> out(outer * full * inner, T(0));
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.data().data() + o * len * inner, len * inner, out.data() + (o * full + start) * inner);
  return Tensor<T>::make_result("embed", shape, std::move(out), {x},
                                [axis, start, len](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{narrow(g, axis, start, len)};
                                });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis) {
  detail::require(!xs.empty(), "concat: no inputs");
  Shape shape = xs[0].shape();
  detail::require(axis < shape.size(), "concat: bad axis");
  std::size_t full = 0;
  for (const auto& x : xs) {
    Shape s = x.shape();
    detail::require(s.size() == shape.size(), "concat: rank mismatch");
    s[axis] = shape[axis];
    detail::require_same(s, shape, "concat");
    full += x.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  std::vector<T> out(outer * full * inner);
  std::vector<std::size_t> starts;
  std::size_t at = 0;
  for (const auto& x : xs) {
    const std::size_t len = x.dim(axis);
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(x.data().data() + o * len * inner, len * inner, out.data() + (o * full + at) * inner);
    starts.push_back(at);
    at += len;
  }
  shape[axis] = full;
  std::vector<std::size_t> lens;
  for (const auto& x : xs) lens.push_back(x.dim(axis));
  return Tensor<T>::make_result("concat", shape, std::move(out), xs,
                                [axis, starts, lens](const Tensor<T>& g, const std::vector<bool>& needs) {
                                  std::vector<Tensor<T>> r(starts.size());
                                  for (std::size_t i = 0; i < r.size(); ++i)
                                    if (needs[i]) r[i] = narrow(g, axis, starts[i], lens[i]);
                                  return r;
                                });
}

// ---------------------------------------------------------------- spatial (NCHW)

template <class T>
Tensor<T> pad2d(const Tensor<T>& x, std::size_t pad) {
  detail::require_rank(x.shape(), 4, "pad2d");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = h + 2 * pad, wo = w + 2 * pad;
  std::vector<T> out(n * c * ho * wo, T(0));
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t i = 0; i < h; ++i)
      std::copy_n(x.data().data() + (p * h + i) * w, w, out.data() + (p * ho + i + pad) * wo + pad);
  return Tensor<T>::make_result("pad2d", Shape{n, c, ho, wo}, std::move(out), {x},
                                [pad](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{crop2d(g, pad)};
                                });
}

template <class T>
Tensor<T> crop2d(const Tensor<T>& x, std::size_t pad) {
  detail::require_rank(x.shape(), 4, "crop2d");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  detail::require(h > 2 * pad && w > 2 * pad, "crop2d: crop exceeds extent");
  const std::size_t ho = h - 2 * pad, wo = w - 2 * pad;
  std::vector<T> out(n * c * ho * wo);
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t i = 0; i < ho; ++i)
      std::copy_n(x.data().data() + (p * h + i + pad) * w + pad, wo, out.data() + (p * ho + i) * wo);
  return Tensor<T>::make_result("crop2d", Shape{n, c, ho, wo}, std::move(out), {x},
                                [pad](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{pad2d(g, pad)};
                                });
}

struct ConvGeometry {
  std::size_t n, c, h, w, k, stride, pad, ho, wo;
  static ConvGeometry of(const Shape& xs, std::size_t k, std::size_t stride, std::size_t pad) {
    detail::require_rank(xs, 4, "conv");
    detail::require(stride >= 1 && k >= 1, "conv: stride and kernel must be positive");
    detail::require(xs[2] + 2 * pad >= k && xs[3] + 2 * pad >= k, "conv: kernel larger than padded input");
    ConvGeometry g{xs[0], xs[1], xs[2], xs[3], k, stride, pad, 0, 0};
    g.ho = (g.h + 2 * pad - k) / stride + 1;
    g.wo = (g.w + 2 * pad - k) / stride + 1;
    return g;
  }
};

// NCHW -> (C*k*k) x (N*Ho*Wo)
template <class T>
Tensor<T> im2col(const Tensor<T>& x, std::size_t k, std::size_t stride, std::size_t pad) {
  const ConvGeometry g = ConvGeometry::of(x.shape(), k, stride, pad);
  const std::size_t cols = g.n * g.ho * g.wo;
  std::vector<T> out(g.c * k * k * cols, T(0));
  const T* src = x.data().data();
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = out.data() + ((c * k + ky) * k + kx) * cols;
        for (std::size_t n = 0; n < g.n; ++n)
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
            T* dst = row + (n * g.ho + oy) * g.wo;
            if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
            const T* srow = src + ((n * g.c + c) * g.h + iy) * g.w;
            for (std::size_t ox = 0; ox < g.wo; ++ox) {
              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
              if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ox] = srow[ix];
            }
          }
      }
  const Shape xs = x.shape();
  return Tensor<T>::make_result("im2col", Shape{g.c * k * k, cols}, std::move(out), {x},
                                [xs, k, stride, pad](const Tensor<T>& gr, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{col2im(gr, xs, k, stride, pad)};
                                });
}

// Adjoint of im2col: scatter-add columns back into an NCHW tensor.
template <class T>
Tensor<T> col2im(const Tensor<T>& colsT, const Shape& xs, std::size_t k, std::size_t stride, std::size_t pad) {
  const ConvGeometry g = ConvGeometry::of(xs, k, stride, pad);
  const std::size_t cols = g.n * g.ho * g.wo;
  detail::require(colsT.rank() == 2 && colsT.dim(0) == g.c * k * k && colsT.dim(1) == cols,
                  "col2im: column matrix has wrong shape " + to_string(colsT.shape()));
  std::vector<T> out(numel_of(xs), T(0));
  const T* src = colsT.data().data();
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = src + ((c * k + ky) * k + kx) * cols;
        for (std::size_t n = 0; n < g.n; ++n)
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
            if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
            const T* srow = row + (n * g.ho + oy) * g.wo;
            T* drow = out.data() + ((n * g.c + c) * g.h + iy) * g.w;
            for (std::size_t ox = 0; ox < g.wo; ++ox) {
              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
              if (ix >= 0 && ix < static_cast<long>(g.w)) drow[ix] += srow[ox];
            }
          }
      }
  return Tensor<T>::make_result("col2im", xs, std::move(out), {colsT},
                                [k, stride, pad](const Tensor<T>& gr, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{im2col(gr, k, stride, pad)};
                                });
}

// Mean over fh x fw tiles.
template <class T>
Tensor<T> avg_pool(const Tensor<T>& x, std::size_t fh, std::size_t fw) {
  detail::require_rank(x.shape(), 4, "avg_pool");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % fh != 0 || w % fw != 0)
    throw ShapeError("avg_pool: extent " + to_string(x.shape()) + " not divisible by " + std::to_string(fh) + "x" +
                     std::to_string(fw));
  const std::size_t ho = h / fh, wo = w / fw;
  const T inv = T(1) / static_cast<T>(fh * fw);
  std::vector<T> out(n * c * ho * wo, T(0));
  const T* src = x.data().data();
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t oi = 0; oi < ho; ++oi) {
      T* dst = out.data() + (p * ho + oi) * wo;
      for (std::size_t di = 0; di < fh; ++di) {
        const T* row = src + (p * h + oi * fh + di) * w;
        for (std::size_t oj = 0; oj < wo; ++oj)
          for (std::size_t dj = 0; dj < fw; ++dj) dst[oj] += row[oj * fw + dj];
      }
    }
  for (auto& v : out) v *= inv;
  return Tensor<T>::make_result("avg_pool", Shape{n, c, ho, wo}, std::move(out), {x},
                                [fh, fw, inv](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{scale(upsample_nearest(g, fh, fw), inv)};
                                });
}

template <class T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t fh, std::size_t fw) {
  detail::require_rank(x.shape(), 4, "upsample_nearest");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = h * fh, wo = w * fw;
  std::vector<T> out(n * c * ho * wo);
  const T* src = x.data().data();
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t i = 0; i < h; ++i) {
      T* dst = out.data() + (p * ho + i * fh) * wo;
      const T* row = src + (p * h + i) * w;
      for (std::size_t j = 0; j < w; ++j)
        for (std::size_t dj = 0; dj < fw; ++dj) dst[j * fw + dj] = row[j];
      for (std::size_t di = 1; di < fh; ++di) std::copy_n(dst, wo, dst + di * wo);
    }
  const T area = static_cast<T>(fh * fw);
  return Tensor<T>::make_result("upsample_nearest", Shape{n, c, ho, wo}, std::move(out), {x},
                                [fh, fw, area](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{scale(avg_pool(g, fh, fw), area)};
                                });
}

// NCHW -> (N * H/bh * W/bw) x (C*bh*bw); one row per tile, row order (n, ty, tx),
// column order (c, dy, dx).
template <class T>
Tensor<T> blocks_to_rows(const Tensor<T>& x, std::size_t bh, std::size_t bw) {
  detail::require_rank(x.shape(), 4, "blocks_to_rows");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (bh == 0 || bw == 0 || h % bh != 0 || w % bw != 0)
    throw ShapeError("blocks_to_rows: extent " + to_string(x.shape()) + " not a multiple of block " +
                     std::to_string(bh) + "x" + std::to_string(bw));
  const std::size_t th = h / bh, tw = w / bw, cols = c * bh * bw;
  std::vector<T> out(x.numel());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          const std::size_t row = (b * th + i / bh) * tw + j / bw;
          const std::size_t col = (ch * bh + i % bh) * bw + j % bw;
          out[row * cols + col] = x[((b * c + ch) * h + i) * w + j];
        }
  const Shape xs = x.shape();
  return Tensor<T>::make_result("blocks_to_rows", Shape{n * th * tw, cols}, std::move(out), {x},
                                [xs, bh, bw](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{rows_to_blocks(g, xs, bh, bw)};
                                });
}

template <class T>
Tensor<T> rows_to_blocks(const Tensor<T>& rows, const Shape& xs, std::size_t bh, std::size_t bw) {
  detail::require_rank(xs, 4, "rows_to_blocks");
  const std::size_t n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  detail::require(h % bh == 0 && w % bw == 0, "rows_to_blocks: extent not a multiple of block");
  const std::size_t th = h / bh, tw = w / bw, cols = c * bh * bw;
  detail::require(rows.rank() == 2 && rows.dim(0) == n * th * tw && rows.dim(1) == cols,
                  "rows_to_blocks: row matrix " + to_string(rows.shape()) + " does not tile " + to_string(xs));
  std::vector<T> out(rows.numel());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          const std::size_t row = (b * th + i / bh) * tw + j / bw;
          const std::size_t col = (ch * bh + i % bh) * bw + j % bw;
          out[((b * c + ch) * h + i) * w + j] = rows[row * cols + col];
        }
  return Tensor<T>::make_result("rows_to_blocks", xs, std::move(out), {rows},
                                [bh, bw](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{blocks_to_rows(g, bh, bw)};
                                });
}


// ---------------------------------------------------------------- direct convolution
//
// Stride-1 convolution as three mutually adjoint primitives:
//   conv_forward(x, w)            y  = x * w
//   conv_input_grad(g, w, xs)     dx = adjoint of x -> x * w applied to g
//   conv_weight_grad(x, g, ws)    dw = adjoint of w -> x * w applied to g
// Each is bilinear, and the backward of each is expressed with the other two.

namespace detail {

struct DirectGeom {
  std::size_t n, cin, h, w, cout, k, pad, ho, wo;
};

inline DirectGeom direct_geom(const Shape& xs, const Shape& ws, std::size_t pad) {
  require_rank(xs, 4, "conv input");
  require_rank(ws, 4, "conv weight");
  require(ws[2] == ws[3], "conv: kernel must be square");
  require(xs[1] == ws[1], "conv: input has " + std::to_string(xs[1]) + " channels, kernel expects " +
                              std::to_string(ws[1]));
  require(xs[2] + 2 * pad >= ws[2] && xs[3] + 2 * pad >= ws[2], "conv: kernel larger than padded input");
  return {xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], pad, xs[2] + 2 * pad - ws[2] + 1, xs[3] + 2 * pad - ws[2] + 1};
}

}  // namespace detail

template <class T>
Tensor<T> conv_input_grad(const Tensor<T>& g, const Tensor<T>& w, const Shape& xs, std::size_t pad);
template <class T>
Tensor<T> conv_weight_grad(const Tensor<T>& x, const Tensor<T>& g, const Shape& ws, std::size_t pad);

namespace detail {

// Zero-padded staging copy of one sample. Patch rows are then plain
// contiguous copies; the border stays zero between loads.
template <class T>
class Padded {
 public:
  explicit Padded(const DirectGeom& d)
      : d_(d), ph_(d.h + 2 * d.pad), pw_(d.w + 2 * d.pad), buf_(d.cin * ph_ * pw_, T(0)) {}

  void load(const T* x) {
    for (std::size_t ci = 0; ci < d_.cin; ++ci)
      for (std::size_t r = 0; r < d_.h; ++r)
        std::copy_n(x + (ci * d_.h + r) * d_.w, d_.w, &buf_[(ci * ph_ + r + d_.pad) * pw_ + d_.pad]);
  }

  // (Cin*k*k) x (Ho*Wo) patch matrix of the loaded sample; rows are `stride` apart.
  void patches(T* cols, std::size_t stride = 0) const {
    if (stride == 0) stride = d_.ho * d_.wo;
    for (std::size_t ci = 0; ci < d_.cin; ++ci)
      for (std::size_t ky = 0; ky < d_.k; ++ky)
        for (std::size_t kx = 0; kx < d_.k; ++kx) {
          T* row = cols + ((ci * d_.k + ky) * d_.k + kx) * stride;
          for (std::size_t oy = 0; oy < d_.ho; ++oy)
            std::copy_n(&buf_[(ci * ph_ + oy + ky) * pw_ + kx], d_.wo, row + oy * d_.wo);
        }
  }

  // Adjoint of patches, written into x (one sample, overwritten).
  void unpatch(const T* cols, T* x) {
    std::fill(buf_.begin(), buf_.end(), T(0));
    for (std::size_t ci = 0; ci < d_.cin; ++ci)
      for (std::size_t ky = 0; ky < d_.k; ++ky)
        for (std::size_t kx = 0; kx < d_.k; ++kx) {
          const T* row = cols + ((ci * d_.k + ky) * d_.k + kx) * d_.ho * d_.wo;
          for (std::size_t oy = 0; oy < d_.ho; ++oy) {
            T* dst = &buf_[(ci * ph_ + oy + ky) * pw_ + kx];
            const T* src = row + oy * d_.wo;
            for (std::size_t ox = 0; ox < d_.wo; ++ox) dst[ox] += src[ox];
          }
        }
    for (std::size_t ci = 0; ci < d_.cin; ++ci)
      for (std::size_t r = 0; r < d_.h; ++r)
        std::copy_n(&buf_[(ci * ph_ + r + d_.pad) * pw_ + d_.pad], d_.w, x + (ci * d_.h + r) * d_.w);
  }

 private:
  DirectGeom d_;
  std::size_t ph_, pw_;
  std::vector<T> buf_;
};

}  // namespace detail

namespace detail {

// y = x * w over all samples. Small planes are batched so each GEMM has at
// least ~256 columns.
template <class T>
void correlate(const T* x, const T* w, const DirectGeom& d, T* y) {
  const std::size_t ckk = d.cin * d.k * d.k, hw = d.ho * d.wo;
  const std::size_t nb = std::min(d.n, std::max<std::size_t>(1, 256 / std::max<std::size_t>(hw, 1)));
  std::vector<T> cols(ckk * hw * nb);
  std::vector<T> stage(nb > 1 ? d.cout * hw * nb : 0);
  Padded<T> pad_buf(d);
  using M = RowMat<T>;
  using S = Eigen::OuterStride<>;
  Eigen::Map<const M> W(w, d.cout, ckk);
  for (std::size_t n0 = 0; n0 < d.n; n0 += nb) {
    const std::size_t m = std::min(nb, d.n - n0);
    for (std::size_t j = 0; j < m; ++j) {
      pad_buf.load(x + (n0 + j) * d.cin * d.h * d.w);
      pad_buf.patches(cols.data() + j * hw, nb * hw);
    }
    if (nb == 1) {
      Eigen::Map<M>(y + n0 * d.cout * hw, d.cout, hw).noalias() = W * Eigen::Map<const M>(cols.data(), ckk, hw);
      continue;
    }
    Eigen::Map<const M, 0, S> C(cols.data(), ckk, m * hw, S(nb * hw));
    Eigen::Map<M, 0, S> Y(stage.data(), d.cout, m * hw, S(nb * hw));
    Y.noalias() = W * C;
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t co = 0; co < d.cout; ++co)
        std::copy_n(stage.data() + co * nb * hw + j * hw, hw, y + ((n0 + j) * d.cout + co) * hw);
  }
}

}  // namespace detail

template <class T>
Tensor<T> conv_forward(const Tensor<T>& x, const Tensor<T>& w, std::size_t pad) {
  const auto d = detail::direct_geom(x.shape(), w.shape(), pad);
  std::vector<T> out(d.n * d.cout * d.ho * d.wo);
  detail::correlate(x.data().data(), w.data().data(), d, out.data());
  const Shape xs = x.shape(), ws = w.shape();
  return Tensor<T>::make_result("conv", Shape{d.n, d.cout, d.ho, d.wo}, std::move(out), {x, w},
                                [x, w, xs, ws, pad](const Tensor<T>& g, const std::vector<bool>& needs) {
                                  return std::vector<Tensor<T>>{
                                      needs[0] ? conv_input_grad(g, w, xs, pad) : Tensor<T>(),
                                      needs[1] ? conv_weight_grad(x, g, ws, pad) : Tensor<T>()};
                                });
}

template <class T>
Tensor<T> conv_input_grad(const Tensor<T>& g, const Tensor<T>& w, const Shape& xs, std::size_t pad) {
  const auto d = detail::direct_geom(xs, w.shape(), pad);
  detail::require(g.shape() == Shape({d.n, d.cout, d.ho, d.wo}), "conv_input_grad: gradient shape " +
                                                                     to_string(g.shape()));
  std::vector<T> out(numel_of(xs));
  if (pad < d.k) {
    // Full correlation of g with the flipped, transposed kernel.
    std::vector<T> wf(w.numel());
    for (std::size_t co = 0; co < d.cout; ++co)
      for (std::size_t ci = 0; ci < d.cin; ++ci)
        for (std::size_t ky = 0; ky < d.k; ++ky)
          for (std::size_t kx = 0; kx < d.k; ++kx)
            wf[((ci * d.cout + co) * d.k + (d.k - 1 - ky)) * d.k + (d.k - 1 - kx)] =
                w[((co * d.cin + ci) * d.k + ky) * d.k + kx];
    const auto dt = detail::direct_geom(g.shape(), Shape{d.cin, d.cout, d.k, d.k}, d.k - 1 - pad);
    detail::correlate(g.data().data(), wf.data(), dt, out.data());
  } else {
    const std::size_t ckk = d.cin * d.k * d.k, hw = d.ho * d.wo;
    std::vector<T> cols(ckk * hw);
    detail::Padded<T> pad_buf(d);
    using M = detail::RowMat<T>;
    Eigen::Map<const M> W(w.data().data(), d.cout, ckk);
    Eigen::Map<M> C(cols.data(), ckk, hw);
    for (std::size_t n = 0; n < d.n; ++n) {
      C.noalias() = W.transpose() * Eigen::Map<const M>(g.data().data() + n * d.cout * hw, d.cout, hw);
      pad_buf.unpatch(cols.data(), out.data() + n * d.cin * d.h * d.w);
    }
  }
  const Shape ws = w.shape();
  return Tensor<T>::make_result("conv_input_grad", xs, std::move(out), {g, w},
                                [g, w, ws, pad](const Tensor<T>& h, const std::vector<bool>& needs) {
                                  return std::vector<Tensor<T>>{
                                      needs[0] ? conv_forward(h, w, pad) : Tensor<T>(),
                                      needs[1] ? conv_weight_grad(h, g, ws, pad) : Tensor<T>()};
                                });
}

template <class T>
Tensor<T> conv_weight_grad(const Tensor<T>& x, const Tensor<T>& g, const Shape& ws, std::size_t pad) {
  const auto d = detail::direct_geom(x.shape(), ws, pad);
  detail::require(g.shape() == Shape({d.n, d.cout, d.ho, d.wo}), "conv_weight_grad: gradient shape " +
                                                                      to_string(g.shape()));
  const std::size_t ckk = d.cin * d.k * d.k, hw = d.ho * d.wo;
  std::vector<T> out(numel_of(ws), T(0));
  const std::size_t nb = std::min(d.n, std::max<std::size_t>(1, 256 / std::max<std::size_t>(hw, 1)));
  std::vector<T> cols(ckk * hw * nb), gs(d.cout * hw * nb);
  detail::Padded<T> pad_buf(d);
  using M = detail::RowMat<T>;
  using S = Eigen::OuterStride<>;
  Eigen::Map<M> dW(out.data(), d.cout, ckk);
  for (std::size_t n0 = 0; n0 < d.n; n0 += nb) {
    const std::size_t m = std::min(nb, d.n - n0);
    for (std::size_t j = 0; j < m; ++j) {
      pad_buf.load(x.data().data() + (n0 + j) * d.cin * d.h * d.w);
      pad_buf.patches(cols.data() + j * hw, nb * hw);
      for (std::size_t co = 0; co < d.cout; ++co)
        std::copy_n(g.data().data() + ((n0 + j) * d.cout + co) * hw, hw, gs.data() + co * nb * hw + j * hw);
    }
    Eigen::Map<const M, 0, S> C(cols.data(), ckk, m * hw, S(nb * hw));
    Eigen::Map<const M, 0, S> G(gs.data(), d.cout, m * hw, S(nb * hw));
    dW.noalias() += G * C.transpose();
  }
  const Shape xs = x.shape();
  return Tensor<T>::make_result("conv_weight_grad", ws, std::move(out), {x, g},
                                [x, g, xs, pad](const Tensor<T>& h, const std::vector<bool>& needs) {
                                  return std::vector<Tensor<T>>{
                                      needs[0] ? conv_input_grad(g, h, xs, pad) : Tensor<T>(),
                                      needs[1] ? conv_forward(x, h, pad) : Tensor<T>()};
                                });
}

template <class T>
Tensor<T> channel_broadcast(const Tensor<T>& b, const Shape& shape);

// N x C x H x W -> C (sum over everything but channels)
template <class T>
Tensor<T> channel_sum(const Tensor<T>& x) {
  detail::require_rank(x.shape(), 4, "channel_sum");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<T> out(c, T(0));
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* p = x.data().data() + (b * c + ch) * hw;
      T acc = T(0);
      for (std::size_t i = 0; i < hw; ++i) acc += p[i];
      out[ch] += acc;
    }
  const Shape xs = x.shape();
  return Tensor<T>::make_result("channel_sum", Shape{c}, std::move(out), {x},
                                [xs](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{channel_broadcast(g, xs)};
                                });
}

// C -> N x C x H x W
template <class T>
Tensor<T> channel_broadcast(const Tensor<T>& b, const Shape& shape) {
  detail::require(shape.size() == 4 && b.numel() == shape[1], "channel_broadcast: length mismatch");
  const std::size_t n = shape[0], c = shape[1], hw = shape[2] * shape[3];
  std::vector<T> out(numel_of(shape));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) std::fill_n(out.data() + (i * c + ch) * hw, hw, b[ch]);
  return Tensor<T>::make_result("channel_broadcast", shape, std::move(out), {b},
                                [](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{channel_sum(g)};
                                });
}

// y + b[c] over N x C x H x W.
template <class T>
Tensor<T> add_channel_bias(const Tensor<T>& y, const Tensor<T>& b) {
  detail::require(y.rank() == 4 && b.numel() == y.dim(1), "add_channel_bias: bias length mismatch");
  const std::size_t n = y.dim(0), c = y.dim(1), hw = y.dim(2) * y.dim(3);
  std::vector<T> out(y.vec());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      T* p = out.data() + (i * c + ch) * hw;
      const T bv = b[ch];
      for (std::size_t j = 0; j < hw; ++j) p[j] += bv;
    }
  return Tensor<T>::make_result("add_channel_bias", y.shape(), std::move(out), {y, b},
                                [](const Tensor<T>& g, const std::vector<bool>& needs) {
                                  return std::vector<Tensor<T>>{g, needs[1] ? channel_sum(g) : Tensor<T>()};
                                });
}

// ---------------------------------------------------------------- composites

// x: N x Cin x H x W, weight: Cout x Cin x k x k, bias: Cout (or undefined).
// Stride 1 uses the direct primitives; other strides go through im2col.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad) {
  detail::require_rank(weight.shape(), 4, "conv2d weight");
  detail::require_rank(x.shape(), 4, "conv2d input");
  const std::size_t cout = weight.dim(0), cin = weight.dim(1), k = weight.dim(2);
  if (weight.dim(3) != k) throw ShapeError("conv2d: kernel must be square");
  if (x.dim(1) != cin)
    throw ShapeError("conv2d: input has " + std::to_string(x.dim(1)) + " channels, kernel expects " +
                     std::to_string(cin));
  if (bias.defined() && bias.numel() != cout) throw ShapeError("conv2d: bias length mismatch");
  Tensor<T> y;
  if (stride == 1) {
    y = conv_forward(x, weight, pad);
  } else {
    const ConvGeometry g = ConvGeometry::of(x.shape(), k, stride, pad);
    Tensor<T> cols = im2col(x, k, stride, pad);
    y = matmul(reshape(weight, Shape{cout, cin * k * k}), cols);
    y = reshape(swap01(reshape(y, Shape{cout, g.n, g.ho * g.wo})), Shape{g.n, cout, g.ho, g.wo});
  }
  return bias.defined() ? add_channel_bias(y, bias) : y;
}

// x: N x in, weight: in x out, bias: out.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  Tensor<T> y = matmul(x, weight);
  if (bias.defined()) y = add(y, repeat_rows(reshape(bias, Shape{1, weight.dim(1)}), x.dim(0)));
  return y;
}

}  // namespace jpeggan::ops
