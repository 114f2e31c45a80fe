#pragma once

// Differentiable tensor operations on the Graph tape. Each op appends one
// node whose backward closure pushes gradients into its inputs via
// Graph::grad. Masks, token ids and similar non-differentiable side inputs
// are captured by value, not recorded as nodes.

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "jessi/graph.hpp"
#include "jessi/kernels.hpp"
#include "jessi/rng.hpp"
#include "jessi/tensor.hpp"

namespace jessi {

enum class Mode { Train, Eval };

constexpr double kLogClampEps = 1e-12;   // floor inside log(p)
constexpr double kLayerNormEps = 1e-5;

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

// Rows-by-last-dim view: every rank >= 1 tensor is (rows x cols), a scalar is 1x1.
template <typename Real>
inline std::pair<std::size_t, std::size_t> rows_cols(const Tensor<Real>& t) {
  if (t.rank() == 0) return {1, 1};
  std::size_t cols = t.shape.back();
  std::size_t rows = 1;
  for (std::size_t i = 0; i + 1 < t.rank(); ++i) rows *= t.shape[i];
  return {rows, cols};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename Real>
Var add(Graph<Real>& g, Var a, Var b) {
  const auto& ta = g.val(a);
  const auto& tb = g.val(b);
  detail::require(ta.same_shape(tb), strf("add: shape mismatch %s vs %s",
                                          shape_str(ta.shape).c_str(),
                                          shape_str(tb.shape).c_str()));
  Tensor<Real> out(ta.shape);
  kernels::ew_add(ta.ptr(), tb.ptr(), out.ptr(), out.size());
  return g.make_node(std::move(out), {a, b},
                     [a, b](Graph<Real>& gr, std::int32_t self) {
                       const auto& gy = gr.grad(Var{self});
                       kernels::axpy(Real(1), gy.ptr(), gr.grad(a).ptr(), gy.size());
                       kernels::axpy(Real(1), gy.ptr(), gr.grad(b).ptr(), gy.size());
                     },
                     "add");
}

template <typename Real>
Var sub(Graph<Real>& g, Var a, Var b) {
  const auto& ta = g.val(a);
  const auto& tb = g.val(b);
  detail::require(ta.same_shape(tb), strf("sub: shape mismatch %s vs %s",
                                          shape_str(ta.shape).c_str(),
                                          shape_str(tb.shape).c_str()));
  Tensor<Real> out(ta.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = ta.data[i] - tb.data[i];
  return g.make_node(std::move(out), {a, b},
                     [a, b](Graph<Real>& gr, std::int32_t self) {
                       const auto& gy = gr.grad(Var{self});
                       kernels::axpy(Real(1), gy.ptr(), gr.grad(a).ptr(), gy.size());
                       kernels::axpy(Real(-1), gy.ptr(), gr.grad(b).ptr(), gy.size());
                     },
                     "sub");
}

template <typename Real>
Var mul(Graph<Real>& g, Var a, Var b) {
  const auto& ta = g.val(a);
  const auto& tb = g.val(b);
  detail::require(ta.same_shape(tb), strf("mul: shape mismatch %s vs %s",
                                          shape_str(ta.shape).c_str(),
                                          shape_str(tb.shape).c_str()));
  Tensor<Real> out(ta.shape);
  kernels::ew_mul(ta.ptr(), tb.ptr(), out.ptr(), out.size());
  return g.make_node(std::move(out), {a, b},
                     [a, b](Graph<Real>& gr, std::int32_t self) {
                       const auto& gy = gr.grad(Var{self});
                       const auto& va = gr.val(a);
                       const auto& vb = gr.val(b);
                       auto& ga = gr.grad(a);
                       auto& gb = gr.grad(b);
                       for (std::size_t i = 0; i < gy.size(); ++i) {
                         ga.data[i] += gy.data[i] * vb.data[i];
                         gb.data[i] += gy.data[i] * va.data[i];
                       }
                     },
                     "mul");
}

template <typename Real>
Var scale(Graph<Real>& g, Var a, Real c) {
  Tensor<Real> out(g.val(a).shape);
  kernels::ew_scale(c, g.val(a).ptr(), out.ptr(), out.size());
  return g.make_node(std::move(out), {a},
                     [a, c](Graph<Real>& gr, std::int32_t self) {
                       const auto& gy = gr.grad(Var{self});
                       kernels::axpy(c, gy.ptr(), gr.grad(a).ptr(), gy.size());
                     },
                     "scale");
}

// x (... x D) + bias (D), broadcast over leading dims.
template <typename Real>
Var add_bias(Graph<Real>& g, Var x, Var bias) {
  const auto& tx = g.val(x);
  const auto& tb = g.val(bias);
  auto [rows, cols] = detail::rows_cols(tx);
  detail::require(tb.rank() == 1 && tb.shape[0] == cols,
                  strf("add_bias: bias %s does not match last dim of %s",
                       shape_str(tb.shape).c_str(), shape_str(tx.shape).c_str()));
  Tensor<Real> out(tx.shape);
  for (std::size_t r = 0; r < rows; ++r)
    kernels::ew_add(tx.ptr() + r * cols, tb.ptr(), out.ptr() + r * cols, cols);
  return g.make_node(std::move(out), {x, bias},
                     [x, bias, rows = rows, cols = cols](Graph<Real>& gr, std::int32_t self) {
                       const auto& gy = gr.grad(Var{self});
                       auto& gx = gr.grad(x);
                       auto& gb = gr.grad(bias);
                       kernels::axpy(Real(1), gy.ptr(), gx.ptr(), gy.size());
                       for (std::size_t r = 0; r < rows; ++r)
                         kernels::axpy(Real(1), gy.ptr() + r * cols, gb.ptr(), cols);
                     },
                     "add_bias");
}

template <typename Real>
Var relu(Graph<Real>& g, Var x) {
  const auto& tx = g.val(x);
  Tensor<Real> out(tx.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = tx.data[i] > Real(0) ? tx.data[i] : Real(0);
  return g.make_node(std::move(out), {x},
                     [x](Graph<Real>& gr, std::int32_t self) {
                       const auto& gy = gr.grad(Var{self});
                       const auto& vx = gr.val(x);
                       auto& gx = gr.grad(x);
                       for (std::size_t i = 0; i < gy.size(); ++i)
                         if (vx.data[i] > Real(0)) gx.data[i] += gy.data[i];
                     },
                     "relu");
}

template <typename Real>
Var tanh_op(Graph<Real>& g, Var x) {
  const auto& tx = g.val(x);
  Tensor<Real> out(tx.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = std::tanh(tx.data[i]);
  auto vals = std::make_shared<std::vector<Real>>(out.data);
  return g.make_node(std::move(out), {x},
                     [x, vals](Graph<Real>& gr, std::int32_t self) {
                       const auto& gy = gr.grad(Var{self});
                       auto& gx = gr.grad(x);
                       for (std::size_t i = 0; i < gy.size(); ++i) {
                         const Real t = (*vals)[i];
                         gx.data[i] += gy.data[i] * (Real(1) - t * t);
                       }
                     },
                     "tanh");
}

template <typename Real>
Var sigmoid(Graph<Real>& g, Var x) {
  const auto& tx = g.val(x);
  Tensor<Real> out(tx.shape);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] = Real(1) / (Real(1) + std::exp(-tx.data[i]));
  auto vals = std::make_shared<std::vector<Real>>(out.data);
  return g.make_node(std::move(out), {x},
                     [x, vals](Graph<Real>& gr, std::int32_t self) {
                       const auto& gy = gr.grad(Var{self});
                       auto& gx = gr.grad(x);
                       for (std::size_t i = 0; i < gy.size(); ++i) {
                         const Real s = (*vals)[i];
                         gx.data[i] += gy.data[i] * s * (Real(1) - s);
                       }
                     },
                     "sigmoid");
}

// ---------------------------------------------------------------------------
// shape plumbing
// ---------------------------------------------------------------------------

template <typename Real>
Var reshape(Graph<Real>& g, Var x, std::vector<std::size_t> shape) {
  const auto& tx = g.val(x);
  detail::require(numel(shape) == tx.size(),
                  strf("reshape: cannot view %s as %s", shape_str(tx.shape).c_str(),
                       shape_str(shape).c_str()));
  Tensor<Real> out(std::move(shape), tx.data);
  return g.make_node(std::move(out), {x},
                     [x](Graph<Real>& gr, std::int32_t self) {
                       const auto& gy = gr.grad(Var{self});
                       kernels::axpy(Real(1), gy.ptr(), gr.grad(x).ptr(), gy.size());
                     },
                     "reshape");
}

// Swap the last two axes of a rank-2 or rank-3 tensor.
template <typename Real>
Var transpose2(Graph<Real>& g, Var x) {
  const auto& tx = g.val(x);
  detail::require(tx.rank() == 2 || tx.rank() == 3,
                  strf("transpose2: expects rank 2 or 3, got %s", shape_str(tx.shape).c_str()));
  const std::size_t N = tx.rank() == 3 ? tx.shape[0] : 1;
  const std::size_t p = tx.shape[tx.rank() - 2];
  const std::size_t q = tx.shape[tx.rank() - 1];
  std::vector<std::size_t> oshape = tx.shape;
  std::swap(oshape[tx.rank() - 2], oshape[tx.rank() - 1]);
  Tensor<Real> out(oshape);
  for (std::size_t s = 0; s < N; ++s)
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < q; ++j)
        out.data[(s * q + j) * p + i] = tx.data[(s * p + i) * q + j];
  return g.make_node(std::move(out), {x},
                     [x, N, p, q](Graph<Real>& gr, std::int32_t self) {
                       const auto& gy = gr.grad(Var{self});
                       auto& gx = gr.grad(x);
                       for (std::size_t s = 0; s < N; ++s)
                         for (std::size_t i = 0; i < p; ++i)
                           for (std::size_t j = 0; j < q; ++j)
                             gx.data[(s * p + i) * q + j] += gy.data[(s * q + j) * p + i];
                     },
                     "transpose2");
}

// B x T x (H*dk)  ->  (B*H) x T x dk
template <typename Real>
Var split_heads(Graph<Real>& g, Var x, std::size_t heads) {
  const auto& tx = g.val(x);
  detail::require(tx.rank() == 3 && tx.shape[2] % heads == 0,
                  strf("split_heads: %s not divisible into %zu heads",
                       shape_str(tx.shape).c_str(), heads));
  const std::size_t B = tx.shape[0], T = tx.shape[1], dk = tx.shape[2] / heads;
  Tensor<Real> out({B * heads, T, dk});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t j = 0; j < dk; ++j)
          out.data[((b * heads + h) * T + t) * dk + j] =
              tx.data[(b * T + t) * (heads * dk) + h * dk + j];
  return g.make_node(std::move(out), {x},
                     [x, B, T, heads, dk](Graph<Real>& gr, std::int32_t self) {
                       const auto& gy = gr.grad(Var{self});
                       auto& gx = gr.grad(x);
                       for (std::size_t b = 0; b < B; ++b)
                         for (std::size_t t = 0; t < T; ++t)
                           for (std::size_t h = 0; h < heads; ++h)
                             for (std::size_t j = 0; j < dk; ++j)
                               gx.data[(b * T + t) * (heads * dk) + h * dk + j] +=
                                   gy.data[((b * heads + h) * T + t) * dk + j];
                     },
                     "split_heads");
}

// (B*H) x T x dk  ->  B x T x (H*dk)
template <typename Real>
Var merge_heads(Graph<Real>& g, Var x, std::size_t heads) {
  const auto& tx = g.val(x);
  detail::require(tx.rank() == 3 && tx.shape[0] % heads == 0,
                  strf("merge_heads: leading dim of %s not divisible by %zu",
                       shape_str(tx.shape).c_str(), heads));
  const std::size_t B = tx.shape[0] / heads, T = tx.shape[1], dk = tx.shape[2];
  Tensor<Real> out({B, T, heads * dk});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t j = 0; j < dk; ++j)
          out.data[(b * T + t) * (heads * dk) + h * dk + j] =
              tx.data[((b * heads + h) * T + t) * dk + j];
  return g.make_node(std::move(out), {x},
                     [x, B, T, heads, dk](Graph<Real>& gr, std::int32_t self) {
                       const auto& gy = gr.grad(Var{self});
                       auto& gx = gr.grad(x);
                       for (std::size_t b = 0; b < B; ++b)
                         for (std::size_t t = 0; t < T; ++t)
                           for (std::size_t h = 0; h < heads; ++h)
                             for (std::size_t j = 0; j < dk; ++j)
                               gx.data[((b * heads + h) * T + t) * dk + j] +=
                                   gy.data[(b * T + t) * (heads * dk) + h * dk + j];
                     },
                     "merge_heads");
}

// Concatenate along the last axis; leading dims must agree.
template <typename Real>
Var concat_last(Graph<Real>& g, Var a, Var b) {
  const auto& ta = g.val(a);
  const auto& tb = g.val(b);
  detail::require(ta.rank() == tb.rank() && ta.rank() >= 1,
                  strf("concat_last: rank mismatch %s vs %s", shape_str(ta.shape).c_str(),
                       shape_str(tb.shape).c_str()));
  for (std::size_t i = 0; i + 1 < ta.rank(); ++i)
    detail::require(ta.shape[i] == tb.shape[i],
                    strf("concat_last: leading dims differ, %s vs %s",
                         shape_str(ta.shape).c_str(), shape_str(tb.shape).c_str()));
  const std::size_t da = ta.shape.back(), db = tb.shape.back();
  auto [rows, colsA] = detail::rows_cols(ta);
  (void)colsA;
  std::vector<std::size_t> oshape = ta.shape;
  oshape.back() = da + db;
  Tensor<Real> out(oshape);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(ta.ptr() + r * da, da, out.ptr() + r * (da + db));
    std::copy_n(tb.ptr() + r * db, db, out.ptr() + r * (da + db) + da);
  }
  return g.make_node(std::move(out), {a, b},
                     [a, b, rows = rows, da, db](Graph<Real>& gr, std::int32_t self) {
                       const auto& gy = gr.grad(Var{self});
                       auto& ga = gr.grad(a);
                       auto& gb = gr.grad(b);
                       for (std::size_t r = 0; r < rows; ++r) {
                         kernels::axpy(Real(1), gy.ptr() + r * (da + db), ga.ptr() + r * da, da);
                         kernels::axpy(Real(1), gy.ptr() + r * (da + db) + da, gb.ptr() + r * db, db);
                       }
                     },
                     "concat_last");
}

// ---------------------------------------------------------------------------
// matrix products
// ---------------------------------------------------------------------------

template <typename Real>
Var matmul(Graph<Real>& g, Var a, Var b) {
  const auto& ta = g.val(a);
  const auto& tb = g.val(b);
  detail::require(ta.rank() == 2 && tb.rank() == 2 && ta.shape[1] == tb.shape[0],
                  strf("matmul: shape mismatch %s vs %s", shape_str(ta.shape).c_str(),
                       shape_str(tb.shape).c_str()));
  const std::size_t m = ta.shape[0], k = ta.shape[1], n = tb.shape[1];
  Tensor<Real> out({m, n});
  kernels::matmul_nn(ta.ptr(), tb.ptr(), out.ptr(), m, k, n, false);
  return g.make_node(std::move(out), {a, b},
                     [a, b, m, k, n](Graph<Real>& gr, std::int32_t self) {
                       const auto& gy = gr.grad(Var{self});
                       // dA = G * B^T, dB = A^T * G
                       kernels::matmul_nt(gy.ptr(), gr.val(b).ptr(), gr.grad(a).ptr(), m, n, k, true);
                       kernels::matmul_tn(gr.val(a).ptr(), gy.ptr(), gr.grad(b).ptr(), k, m, n, true);
                     },
                     "matmul");
}

// Batched matmul: (N x p x q) * (N x q x r) -> N x p x r.
template <typename Real>
Var bmm(Graph<Real>& g, Var a, Var b) {
  const auto& ta = g.val(a);
  const auto& tb = g.val(b);
  detail::require(ta.rank() == 3 && tb.rank() == 3 && ta.shape[0] == tb.shape[0] &&
                      ta.shape[2] == tb.shape[1],
                  strf("bmm: shape mismatch %s vs %s", shape_str(ta.shape).c_str(),
                       shape_str(tb.shape).c_str()));
  const std::size_t N = ta.shape[0], p = ta.shape[1], q = ta.shape[2], r = tb.shape[2];
  Tensor<Real> out({N, p, r});
  for (std::size_t s = 0; s < N; ++s)
    kernels::matmul_nn(ta.ptr() + s * p * q, tb.ptr() + s * q * r, out.ptr() + s * p * r, p, q, r,
                       false);
  return g.make_node(std::move(out), {a, b},
                     [a, b, N, p, q, r](Graph<Real>& gr, std::int32_t self) {
                       const auto& gy = gr.grad(Var{self});
                       const auto& va = gr.val(a);
                       const auto& vb = gr.val(b);
                       auto& ga = gr.grad(a);
                       auto& gb = gr.grad(b);
                       for (std::size_t s = 0; s < N; ++s) {
                         kernels::matmul_nt(gy.ptr() + s * p * r, vb.ptr() + s * q * r,
                                            ga.ptr() + s * p * q, p, r, q, true);
                         kernels::matmul_tn(va.ptr() + s * p * q, gy.ptr() + s * p * r,
                                            gb.ptr() + s * q * r, q, p, r, true);
                       }
                     },
                     "bmm");
}

// x (... x k) * W^T (n x k) [+ bias (n)] -> (... x n). Pass bias = Var{} to skip.
template <typename Real>
Var linear(Graph<Real>& g, Var x, Var w, Var bias = Var{}) {
  const auto& tx = g.val(x);
  const auto& tw = g.val(w);
  auto [rows, k] = detail::rows_cols(tx);
  detail::require(tw.rank() == 2 && tw.shape[1] == k,
                  strf("linear: input %s vs weight %s", shape_str(tx.shape).c_str(),
                       shape_str(tw.shape).c_str()));
  const std::size_t n = tw.shape[0];
  std::vector<std::size_t> oshape = tx.shape;
  if (oshape.empty()) oshape = {1};
  oshape.back() = n;
  Tensor<Real> out(oshape);
  kernels::matmul_nt(tx.ptr(), tw.ptr(), out.ptr(), rows, k, n, false);
  if (bias.valid()) {
    const auto& tb = g.val(bias);
    detail::require(tb.rank() == 1 && tb.shape[0] == n,
                    strf("linear: bias %s does not match output width %zu",
                         shape_str(tb.shape).c_str(), n));
    for (std::size_t r = 0; r < rows; ++r)
      kernels::axpy(Real(1), tb.ptr(), out.ptr() + r * n, n);
  }
  std::vector<Var> ins = bias.valid() ? std::vector<Var>{x, w, bias} : std::vector<Var>{x, w};
  return g.make_node(std::move(out), std::move(ins),
                     [x, w, bias, rows = rows, k = k, n](Graph<Real>& gr, std::int32_t self) {
                       const auto& gy = gr.grad(Var{self});
                       // dX = G * W ; dW = G^T * X
                       kernels::matmul_nn(gy.ptr(), gr.val(w).ptr(), gr.grad(x).ptr(), rows, n, k,
                                          true);
                       kernels::matmul_tn(gy.ptr(), gr.val(x).ptr(), gr.grad(w).ptr(), n, rows, k,
                                          true);
                       if (bias.valid()) {
                         auto& gb = gr.grad(bias);
                         for (std::size_t r = 0; r < rows; ++r)
                           kernels::axpy(Real(1), gy.ptr() + r * n, gb.ptr(), n);
                       }
                     },
                     "linear");
}

// ---------------------------------------------------------------------------
// convolution and pooling
// ---------------------------------------------------------------------------

// Same-length 1-d convolution over time. x is (T x Din) or (B x T x Din),
// kernel is (h x Din x Dout) with h odd, zero padding of (h-1)/2 per side.
template <typename Real>
Var conv1d_same(Graph<Real>& g, Var x, Var kernel, Var bias) {
  const auto& tx = g.val(x);
  const auto& tk = g.val(kernel);
  const auto& tb = g.val(bias);
  detail::require(tx.rank() == 2 || tx.rank() == 3,
                  strf("conv1d_same: input must be rank 2 or 3, got %s",
                       shape_str(tx.shape).c_str()));
  detail::require(tk.rank() == 3, strf("conv1d_same: kernel must be rank 3, got %s",
                                       shape_str(tk.shape).c_str()));
  const std::size_t h = tk.shape[0];
  if (h % 2 == 0)
    throw ValueError(strf("conv1d_same: unsupported even filter width %zu", h));
  const bool batched = tx.rank() == 3;
  const std::size_t B = batched ? tx.shape[0] : 1;
  const std::size_t T = batched ? tx.shape[1] : tx.shape[0];
  const std::size_t Din = tx.shape.back();
  const std::size_t Dout = tk.shape[2];
  detail::require(tk.shape[1] == Din, strf("conv1d_same: kernel %s vs input %s",
                                           shape_str(tk.shape).c_str(),
                                           shape_str(tx.shape).c_str()));
  detail::require(tb.rank() == 1 && tb.shape[0] == Dout,
                  strf("conv1d_same: bias %s vs Dout %zu", shape_str(tb.shape).c_str(), Dout));
  const std::size_t pad = (h - 1) / 2;

  std::vector<std::size_t> oshape = batched ? std::vector<std::size_t>{B, T, Dout}
                                            : std::vector<std::size_t>{T, Dout};
  Tensor<Real> out(oshape);
  for (std::size_t b = 0; b < B; ++b) {
    const Real* xb = tx.ptr() + b * T * Din;
    Real* ob = out.ptr() + b * T * Dout;
    for (std::size_t t = 0; t < T; ++t) {
      Real* orow = ob + t * Dout;
      std::copy_n(tb.ptr(), Dout, orow);
      for (std::size_t tau = 0; tau < h; ++tau) {
        const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t + tau) - static_cast<std::ptrdiff_t>(pad);
        if (s < 0 || s >= static_cast<std::ptrdiff_t>(T)) continue;
        const Real* xrow = xb + static_cast<std::size_t>(s) * Din;
        const Real* krow = tk.ptr() + tau * Din * Dout;
        for (std::size_t i = 0; i < Din; ++i) {
          if (xrow[i] == Real(0)) continue;
          kernels::axpy(xrow[i], krow + i * Dout, orow, Dout);
        }
      }
    }
  }
  return g.make_node(
      std::move(out), {x, kernel, bias},
      [x, kernel, bias, B, T, Din, Dout, h, pad](Graph<Real>& gr, std::int32_t self) {
        const auto& gy = gr.grad(Var{self});
        const auto& vx = gr.val(x);
        const auto& vk = gr.val(kernel);
        auto& gx = gr.grad(x);
        auto& gk = gr.grad(kernel);
        auto& gb = gr.grad(bias);
        for (std::size_t b = 0; b < B; ++b) {
          const Real* xb = vx.ptr() + b * T * Din;
          const Real* gyb = gy.ptr() + b * T * Dout;
          Real* gxb = gx.ptr() + b * T * Din;
          for (std::size_t t = 0; t < T; ++t) {
            const Real* gyrow = gyb + t * Dout;
            kernels::axpy(Real(1), gyrow, gb.ptr(), Dout);
            for (std::size_t tau = 0; tau < h; ++tau) {
              const std::ptrdiff_t s =
                  static_cast<std::ptrdiff_t>(t + tau) - static_cast<std::ptrdiff_t>(pad);
              if (s < 0 || s >= static_cast<std::ptrdiff_t>(T)) continue;
              const Real* xrow = xb + static_cast<std::size_t>(s) * Din;
              Real* gxrow = gxb + static_cast<std::size_t>(s) * Din;
              const Real* krow = vk.ptr() + tau * Din * Dout;
              Real* gkrow = gk.ptr() + tau * Din * Dout;
              for (std::size_t i = 0; i < Din; ++i) {
                if (xrow[i] != Real(0))
                  kernels::axpy(xrow[i], gyrow, gkrow + i * Dout, Dout);
                gxrow[i] += kernels::dot(krow + i * Dout, gyrow, Dout);
              }
            }
          }
        }
      },
      "conv1d_same");
}

// Zero out feature rows at masked time steps. x (B x T x D) with mask (B x T),
// or (T x D) with mask (T).
template <typename Real>
Var mask_zero(Graph<Real>& g, Var x, const Tensor<Real>& mask) {
  const auto& tx = g.val(x);
  detail::require(tx.rank() == 2 || tx.rank() == 3,
                  strf("mask_zero: input must be rank 2 or 3, got %s",
                       shape_str(tx.shape).c_str()));
  const std::size_t D = tx.shape.back();
  const std::size_t rows = tx.size() / D;
  detail::require(mask.size() == rows, strf("mask_zero: mask %s vs input %s",
                                            shape_str(mask.shape).c_str(),
                                            shape_str(tx.shape).c_str()));
  Tensor<Real> out(tx.shape);
  auto m = std::make_shared<Tensor<Real>>(mask);
  for (std::size_t r = 0; r < rows; ++r) {
    if (mask.data[r] != Real(0))
      std::copy_n(tx.ptr() + r * D, D, out.ptr() + r * D);
  }
  return g.make_node(std::move(out), {x},
                     [x, m, rows, D](Graph<Real>& gr, std::int32_t self) {
                       const auto& gy = gr.grad(Var{self});
                       auto& gx = gr.grad(x);
                       for (std::size_t r = 0; r < rows; ++r)
                         if (m->data[r] != Real(0))
                           kernels::axpy(Real(1), gy.ptr() + r * D, gx.ptr() + r * D, D);
                     },
                     "mask_zero");
}

// Per-feature maximum over unmasked time steps; gradient flows to the argmax
// position (first one on ties). x (B x T x D) + mask (B x T) -> (B x D), or
// (T x D) + mask (T) -> (D).
template <typename Real>
Var max_pool_time(Graph<Real>& g, Var x, const Tensor<Real>& mask) {
  const auto& tx = g.val(x);
  detail::require(tx.rank() == 2 || tx.rank() == 3,
                  strf("max_pool_time: input must be rank 2 or 3, got %s",
                       shape_str(tx.shape).c_str()));
  const bool batched = tx.rank() == 3;
  const std::size_t B = batched ? tx.shape[0] : 1;
  const std::size_t T = batched ? tx.shape[1] : tx.shape[0];
  const std::size_t D = tx.shape.back();
  detail::require(mask.size() == B * T, strf("max_pool_time: mask %s vs input %s",
                                             shape_str(mask.shape).c_str(),
                                             shape_str(tx.shape).c_str()));
  Tensor<Real> out(batched ? std::vector<std::size_t>{B, D} : std::vector<std::size_t>{D});
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(B * D, 0);
  for (std::size_t b = 0; b < B; ++b) {
    bool seen = false;
    for (std::size_t t = 0; t < T; ++t) {
      if (mask.data[b * T + t] == Real(0)) continue;
      const Real* xrow = tx.ptr() + (b * T + t) * D;
      if (!seen) {
        std::copy_n(xrow, D, out.ptr() + b * D);
        for (std::size_t d = 0; d < D; ++d) (*argmax)[b * D + d] = static_cast<std::uint32_t>(t);
        seen = true;
      } else {
        for (std::size_t d = 0; d < D; ++d) {
          if (xrow[d] > out.data[b * D + d]) {
            out.data[b * D + d] = xrow[d];
            (*argmax)[b * D + d] = static_cast<std::uint32_t>(t);
          }
        }
      }
    }
    if (!seen)
      throw ValueError(strf("max_pool_time: empty sequence, row %zu is fully masked", b));
  }
  return g.make_node(std::move(out), {x},
                     [x, argmax, B, T, D](Graph<Real>& gr, std::int32_t self) {
                       const auto& gy = gr.grad(Var{self});
                       auto& gx = gr.grad(x);
                       for (std::size_t b = 0; b < B; ++b)
                         for (std::size_t d = 0; d < D; ++d)
                           gx.data[(b * T + (*argmax)[b * D + d]) * D + d] += gy.data[b * D + d];
                     },
                     "max_pool_time");
}

// Softmax over the last axis with optional mask (same shape as the logits).
// Masked entries are exactly zero; rows are stabilized by max subtraction.
template <typename Real>
Var masked_softmax(Graph<Real>& g, Var logits, const Tensor<Real>* mask = nullptr) {
  const auto& tx = g.val(logits);
  detail::require(tx.rank() >= 1, "masked_softmax: scalar input");
  if (mask)
    detail::require(mask->same_shape(tx), strf("masked_softmax: mask %s vs logits %s",
                                               shape_str(mask->shape).c_str(),
                                               shape_str(tx.shape).c_str()));
  auto [rows, cols] = detail::rows_cols(tx);
  Tensor<Real> out(tx.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = tx.ptr() + r * cols;
    const Real* mr = mask ? mask->ptr() + r * cols : nullptr;
    Real mx = Real(0);
    bool any = false;
    for (std::size_t j = 0; j < cols; ++j) {
      if (mr && mr[j] == Real(0)) continue;
      if (!any || xr[j] > mx) mx = xr[j];
      any = true;
    }
    if (!any)
      throw ValueError(strf("masked_softmax: empty sequence, row %zu is fully masked", r));
    Real sum = Real(0);
    Real* yr = out.ptr() + r * cols;
    for (std::size_t j = 0; j < cols; ++j) {
      if (mr && mr[j] == Real(0)) {
        yr[j] = Real(0);
        continue;
      }
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    for (std::size_t j = 0; j < cols; ++j) yr[j] /= sum;
  }
  auto yv = std::make_shared<std::vector<Real>>(out.data);
  return g.make_node(std::move(out), {logits},
                     [logits, yv, rows = rows, cols = cols](Graph<Real>& gr, std::int32_t self) {
                       const auto& gy = gr.grad(Var{self});
                       auto& gx = gr.grad(logits);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const Real* y = yv->data() + r * cols;
                         const Real* gyr = gy.ptr() + r * cols;
                         Real dotv = Real(0);
                         for (std::size_t j = 0; j < cols; ++j) dotv += gyr[j] * y[j];
                         Real* gxr = gx.ptr() + r * cols;
                         for (std::size_t j = 0; j < cols; ++j)
                           gxr[j] += y[j] * (gyr[j] - dotv);
                       }
                     },
                     "masked_softmax");
}

// ---------------------------------------------------------------------------
// reductions and losses
// ---------------------------------------------------------------------------

template <typename Real>
Var sum(Graph<Real>& g, Var x) {
  const auto& tx = g.val(x);
  Real acc = Real(0);
  for (Real v : tx.data) acc += v;
  return g.make_node(Tensor<Real>::scalar(acc), {x},
                     [x](Graph<Real>& gr, std::int32_t self) {
                       const Real go = gr.grad(Var{self}).data[0];
                       auto& gx = gr.grad(x);
                       for (std::size_t i = 0; i < gx.size(); ++i) gx.data[i] += go;
                     },
                     "sum");
}

// -log p[gold] over one distribution, clamped below by -log(1e-12).
template <typename Real>
Var cross_entropy(Graph<Real>& g, Var probs, std::size_t gold) {
  const auto& tp = g.val(probs);
  detail::require(tp.rank() == 1, strf("cross_entropy: expects a rank-1 distribution, got %s",
                                       shape_str(tp.shape).c_str()));
  if (gold >= tp.shape[0])
    throw ValueError(strf("cross_entropy: gold index %zu out of range for %zu classes", gold,
                          tp.shape[0]));
  Real total = Real(0);
  for (Real v : tp.data) {
    if (v < Real(0)) throw ValueError("cross_entropy: negative probability");
    total += v;
  }
  if (std::abs(static_cast<double>(total) - 1.0) > 1e-6)
    throw ValueError(strf("cross_entropy: probabilities sum to %.9f, expected 1",
                          static_cast<double>(total)));
  const Real p = tp.data[gold];
  const Real eps = static_cast<Real>(kLogClampEps);
  const Real clamped = p > eps ? p : eps;
  Tensor<Real> out = Tensor<Real>::scalar(-std::log(clamped));
  return g.make_node(std::move(out), {probs},
                     [probs, gold, eps](Graph<Real>& gr, std::int32_t self) {
                       const Real go = gr.grad(Var{self}).data[0];
                       const Real p = gr.val(probs).data[gold];
                       if (p > eps) gr.grad(probs).data[gold] += go * (Real(-1) / p);
                     },
                     "cross_entropy");
}

// Mean of -log p[b, gold_b] over a batch of distributions (B x C).
template <typename Real>
Var cross_entropy_mean(Graph<Real>& g, Var probs, const std::vector<int>& golds) {
  const auto& tp = g.val(probs);
  detail::require(tp.rank() == 2 && tp.shape[0] == golds.size(),
                  strf("cross_entropy_mean: probs %s vs %zu labels",
                       shape_str(tp.shape).c_str(), golds.size()));
  const std::size_t B = tp.shape[0], C = tp.shape[1];
  const Real eps = static_cast<Real>(kLogClampEps);
  Real acc = Real(0);
  for (std::size_t b = 0; b < B; ++b) {
    const int gold = golds[b];
    if (gold < 0 || static_cast<std::size_t>(gold) >= C)
      throw ValueError(strf("cross_entropy_mean: gold index %d out of range for %zu classes",
                            gold, C));
    const Real p = tp.data[b * C + static_cast<std::size_t>(gold)];
    acc += -std::log(p > eps ? p : eps);
  }
  acc /= static_cast<Real>(B);
  auto gv = std::make_shared<std::vector<int>>(golds);
  return g.make_node(Tensor<Real>::scalar(acc), {probs},
                     [probs, gv, B, C, eps](Graph<Real>& gr, std::int32_t self) {
                       const Real go = gr.grad(Var{self}).data[0];
                       const auto& vp = gr.val(probs);
                       auto& gp = gr.grad(probs);
                       const Real w = go / static_cast<Real>(B);
                       for (std::size_t b = 0; b < B; ++b) {
                         const std::size_t j = b * C + static_cast<std::size_t>((*gv)[b]);
                         if (vp.data[j] > eps) gp.data[j] += w * (Real(-1) / vp.data[j]);
                       }
                     },
                     "cross_entropy_mean");
}

// ---------------------------------------------------------------------------
// stochastic and adversarial
// ---------------------------------------------------------------------------

// Inverted dropout: identity in eval mode, survivors scaled by 1/(1-rate).
template <typename Real>
Var dropout(Graph<Real>& g, Var x, double rate, Mode mode, RngStream& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw ValueError(strf("dropout: invalid rate %.6f, must be in [0,1)", rate));
  const auto& tx = g.val(x);
  if (mode == Mode::Eval || rate == 0.0) {
    return g.make_node(tx, {x},
                       [x](Graph<Real>& gr, std::int32_t self) {
                         const auto& gy = gr.grad(Var{self});
                         kernels::axpy(Real(1), gy.ptr(), gr.grad(x).ptr(), gy.size());
                       },
                       "dropout");
  }
  const Real keep_scale = static_cast<Real>(1.0 / (1.0 - rate));
  auto keep = std::make_shared<std::vector<Real>>(tx.size());
  Tensor<Real> out(tx.shape);
  for (std::size_t i = 0; i < tx.size(); ++i) {
    const Real k = rng.next_uniform() >= rate ? keep_scale : Real(0);
    (*keep)[i] = k;
    out.data[i] = tx.data[i] * k;
  }
  return g.make_node(std::move(out), {x},
                     [x, keep](Graph<Real>& gr, std::int32_t self) {
                       const auto& gy = gr.grad(Var{self});
                       auto& gx = gr.grad(x);
                       for (std::size_t i = 0; i < gy.size(); ++i)
                         gx.data[i] += gy.data[i] * (*keep)[i];
                     },
                     "dropout");
}

// Identity forward, negated gradient backward. The adversarial weight stays
// out of this op; the loss applies it to the domain term instead.
template <typename Real>
Var grad_reverse(Graph<Real>& g, Var x) {
  return g.make_node(g.val(x), {x},
                     [x](Graph<Real>& gr, std::int32_t self) {
                       const auto& gy = gr.grad(Var{self});
                       kernels::axpy(Real(-1), gy.ptr(), gr.grad(x).ptr(), gy.size());
                     },
                     "grad_reverse");
}

// ---------------------------------------------------------------------------
// embedding / positions / normalization
// ---------------------------------------------------------------------------

// Rows of `table` gathered by token id; masked positions come out zero and
// send no gradient, so the PAD row never trains away from zero.
template <typename Real>
Var embedding_lookup(Graph<Real>& g, Var table, const std::vector<std::int32_t>& ids,
                     std::size_t B, std::size_t T, const Tensor<Real>& mask) {
  const auto& tt = g.val(table);
  detail::require(tt.rank() == 2, strf("embedding_lookup: table must be rank 2, got %s",
                                       shape_str(tt.shape).c_str()));
  detail::require(ids.size() == B * T && mask.size() == B * T,
                  "embedding_lookup: ids/mask do not match B x T");
  const std::size_t V = tt.shape[0], d = tt.shape[1];
  Tensor<Real> out({B, T, d});
  for (std::size_t i = 0; i < B * T; ++i) {
    if (mask.data[i] == Real(0)) continue;
    const auto id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= V)
      throw ValueError(strf("embedding_lookup: token id %d outside vocabulary of %zu", id, V));
    std::copy_n(tt.ptr() + static_cast<std::size_t>(id) * d, d, out.ptr() + i * d);
  }
  auto idv = std::make_shared<std::vector<std::int32_t>>(ids);
  auto mv = std::make_shared<Tensor<Real>>(mask);
  return g.make_node(std::move(out), {table},
                     [table, idv, mv, B, T, d](Graph<Real>& gr, std::int32_t self) {
                       const auto& gy = gr.grad(Var{self});
                       auto& gt = gr.grad(table);
                       for (std::size_t i = 0; i < B * T; ++i) {
                         if (mv->data[i] == Real(0)) continue;
                         kernels::axpy(Real(1), gy.ptr() + i * d,
                                       gt.ptr() + static_cast<std::size_t>((*idv)[i]) * d, d);
                       }
                     },
                     "embedding_lookup");
}

// x (B x T x d) + positions[t] for t < T; positions is (maxLen x d).
template <typename Real>
Var add_position(Graph<Real>& g, Var x, Var positions) {
  const auto& tx = g.val(x);
  const auto& tp = g.val(positions);
  detail::require(tx.rank() == 3 && tp.rank() == 2 && tx.shape[2] == tp.shape[1],
                  strf("add_position: input %s vs table %s", shape_str(tx.shape).c_str(),
                       shape_str(tp.shape).c_str()));
  const std::size_t B = tx.shape[0], T = tx.shape[1], d = tx.shape[2];
  if (T > tp.shape[0])
    throw ValueError(strf("add_position: sequence length %zu exceeds maximum %zu", T, tp.shape[0]));
  Tensor<Real> out(tx.shape);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      kernels::ew_add(tx.ptr() + (b * T + t) * d, tp.ptr() + t * d, out.ptr() + (b * T + t) * d, d);
  return g.make_node(std::move(out), {x, positions},
                     [x, positions, B, T, d](Graph<Real>& gr, std::int32_t self) {
                       const auto& gy = gr.grad(Var{self});
                       auto& gx = gr.grad(x);
                       auto& gp = gr.grad(positions);
                       kernels::axpy(Real(1), gy.ptr(), gx.ptr(), gy.size());
                       for (std::size_t b = 0; b < B; ++b)
                         for (std::size_t t = 0; t < T; ++t)
                           kernels::axpy(Real(1), gy.ptr() + (b * T + t) * d, gp.ptr() + t * d, d);
                     },
                     "add_position");
}

// Layer normalization over the last axis with learned gain and bias.
template <typename Real>
Var layer_norm(Graph<Real>& g, Var x, Var gain, Var bias, double eps = kLayerNormEps) {
  const auto& tx = g.val(x);
  const auto& tg = g.val(gain);
  const auto& tb = g.val(bias);
  auto [rows, D] = detail::rows_cols(tx);
  detail::require(tg.rank() == 1 && tg.shape[0] == D && tb.rank() == 1 && tb.shape[0] == D,
                  strf("layer_norm: gain/bias must be rank-1 of %zu", D));
  Tensor<Real> out(tx.shape);
  auto xhat = std::make_shared<std::vector<Real>>(tx.size());
  auto inv_std = std::make_shared<std::vector<Real>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = tx.ptr() + r * D;
    Real mean = Real(0);
    for (std::size_t j = 0; j < D; ++j) mean += xr[j];
    mean /= static_cast<Real>(D);
    Real var = Real(0);
    for (std::size_t j = 0; j < D; ++j) {
      const Real c = xr[j] - mean;
      var += c * c;
    }
    var /= static_cast<Real>(D);
    const Real istd = Real(1) / std::sqrt(var + static_cast<Real>(eps));
    (*inv_std)[r] = istd;
    Real* yr = out.ptr() + r * D;
    for (std::size_t j = 0; j < D; ++j) {
      const Real xh = (xr[j] - mean) * istd;
      (*xhat)[r * D + j] = xh;
      yr[j] = xh * tg.data[j] + tb.data[j];
    }
  }
  return g.make_node(
      std::move(out), {x, gain, bias},
      [x, gain, bias, xhat, inv_std, rows = rows, D = D](Graph<Real>& gr, std::int32_t self) {
        const auto& gy = gr.grad(Var{self});
        const auto& vg = gr.val(gain);
        auto& gx = gr.grad(x);
        auto& gg = gr.grad(gain);
        auto& gb = gr.grad(bias);
        for (std::size_t r = 0; r < rows; ++r) {
          const Real* gyr = gy.ptr() + r * D;
          const Real* xh = xhat->data() + r * D;
          Real sum_dxhat = Real(0), sum_dxhat_xhat = Real(0);
          for (std::size_t j = 0; j < D; ++j) {
            const Real dxh = gyr[j] * vg.data[j];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh[j];
            gg.data[j] += gyr[j] * xh[j];
            gb.data[j] += gyr[j];
          }
          const Real istd = (*inv_std)[r];
          const Real invD = Real(1) / static_cast<Real>(D);
          Real* gxr = gx.ptr() + r * D;
          for (std::size_t j = 0; j < D; ++j) {
            const Real dxh = gyr[j] * vg.data[j];
            gxr[j] += istd * (dxh - sum_dxhat * invD - xh[j] * sum_dxhat_xhat * invD);
          }
        }
      },
      "layer_norm");
}

// Select one time step per batch row: x (B x T x D), idx[b] < T -> (B x D).
template <typename Real>
Var gather_time(Graph<Real>& g, Var x, const std::vector<std::size_t>& idx) {
  const auto& tx = g.val(x);
  detail::require(tx.rank() == 3 && idx.size() == tx.shape[0],
                  strf("gather_time: input %s vs %zu indices", shape_str(tx.shape).c_str(),
                       idx.size()));
  const std::size_t B = tx.shape[0], T = tx.shape[1], D = tx.shape[2];
  Tensor<Real> out({B, D});
  for (std::size_t b = 0; b < B; ++b) {
    if (idx[b] >= T) throw ValueError(strf("gather_time: index %zu out of range %zu", idx[b], T));
    std::copy_n(tx.ptr() + (b * T + idx[b]) * D, D, out.ptr() + b * D);
  }
  auto iv = std::make_shared<std::vector<std::size_t>>(idx);
  return g.make_node(std::move(out), {x},
                     [x, iv, B, T, D](Graph<Real>& gr, std::int32_t self) {
                       const auto& gy = gr.grad(Var{self});
                       auto& gx = gr.grad(x);
                       for (std::size_t b = 0; b < B; ++b)
                         kernels::axpy(Real(1), gy.ptr() + b * D,
                                       gx.ptr() + (b * T + (*iv)[b]) * D, D);
                     },
                     "gather_time");
}

}  // namespace jessi
