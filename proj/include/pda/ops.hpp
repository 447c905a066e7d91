#pragma once

// Differentiable tensor operations. Each op computes its value eagerly and,
// when an input is tracked by the active Tape, records a pullback.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "pda/tensor.hpp"

namespace pda {

namespace detail {

// C[M,N] += A[M,K] * B[K,N]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M,N] += A[K,M]^T * B[K,N]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c[i * n + j] += s;
    }
  }
}

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeError(std::string(op) + ": shapes " + to_string(a) + " and " + to_string(b) +
                       " are not broadcast-compatible");
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

// Strides of `in` expressed over the (right-aligned) output index space;
// broadcast axes get stride 0.
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t s = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    const std::size_t oi = i + (out.size() - in.size());
    strides[oi] = in[i] == 1 ? 0 : s;
    s *= in[i];
  }
  return strides;
}

// Calls fn(out_index, a_index, b_index) for every output element.
template <typename Fn>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, Fn&& fn) {
  const std::size_t total = numel(out);
  if (a == out && b == out) {
    for (std::size_t i = 0; i < total; ++i) fn(i, i, i);
    return;
  }
  const auto sa = broadcast_strides(a, out);
  const auto sb = broadcast_strides(b, out);
  const std::size_t r = out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < total; ++o) {
    fn(o, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

enum class Binary { add, sub, mul };

inline Tensor binary(const Tensor& a, const Tensor& b, Binary kind) {
  static constexpr const char* names[] = {"add", "sub", "mul"};
  const Shape out_shape = broadcast_shape(a.shape(), b.shape(), names[static_cast<int>(kind)]);
  std::vector<double> out(numel(out_shape));
  const auto av = a.data();
  const auto bv = b.data();
  switch (kind) {
    case Binary::add:
      for_each_broadcast(out_shape, a.shape(), b.shape(),
                         [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = av[i] + bv[j]; });
      break;
    case Binary::sub:
      for_each_broadcast(out_shape, a.shape(), b.shape(),
                         [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = av[i] - bv[j]; });
      break;
    case Binary::mul:
      for_each_broadcast(out_shape, a.shape(), b.shape(),
                         [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = av[i] * bv[j]; });
      break;
  }
  Tensor result(out_shape, std::move(out));
  if (!Tape::tracking({&a, &b})) return result;

  const OpId op = kind == Binary::add ? OpId::add : kind == Binary::sub ? OpId::sub : OpId::mul;
  std::vector<double> saved_a, saved_b;
  if (kind == Binary::mul) {
    saved_a = a.values();
    saved_b = b.values();
  }
  return Tape::record(
      std::move(result), op, {&a, &b},
      [kind, out_shape, sa = a.shape(), sb = b.shape(), saved_a = std::move(saved_a), saved_b = std::move(saved_b)](
          std::span<const double> g, std::span<std::vector<double>* const> gin) {
        std::vector<double>* ga = gin[0];
        std::vector<double>* gb = gin[1];
        for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
          switch (kind) {
            case Binary::add:
              if (ga) (*ga)[i] += g[o];
              if (gb) (*gb)[j] += g[o];
              break;
            case Binary::sub:
              if (ga) (*ga)[i] += g[o];
              if (gb) (*gb)[j] -= g[o];
              break;
            case Binary::mul:
              if (ga) (*ga)[i] += g[o] * saved_b[j];
              if (gb) (*gb)[j] += g[o] * saved_a[i];
              break;
          }
        });
      });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::Binary::add); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::Binary::sub); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::Binary::mul); }

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.values());
  for (double& v : out) v *= s;
  Tensor result(a.shape(), std::move(out));
  return Tape::record(std::move(result), OpId::scale, {&a},
                      [s](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                        auto& ga = *gin[0];
                        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
                      });
}

/// [n,k] x [k,m] -> [n,m]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) + " are incompatible");
  }
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  std::vector<double> out(n * m, 0.0);
  detail::gemm_nn(a.data().data(), b.data().data(), out.data(), n, m, k);
  Tensor result(Shape{n, m}, std::move(out));
  if (!Tape::tracking({&a, &b})) return result;
  return Tape::record(std::move(result), OpId::matmul, {&a, &b},
                      [av = a.values(), bv = b.values(), n, k, m](std::span<const double> g,
                                                                  std::span<std::vector<double>* const> gin) {
                        if (gin[0]) detail::gemm_nt(g.data(), bv.data(), gin[0]->data(), n, k, m);
                        if (gin[1]) detail::gemm_tn(av.data(), g.data(), gin[1]->data(), k, m, n);
                      });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.values());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  Tensor result(a.shape(), out);
  if (!Tape::tracking({&a})) return result;
  return Tape::record(std::move(result), OpId::relu, {&a},
                      [y = std::move(out)](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                        auto& ga = *gin[0];
                        for (std::size_t i = 0; i < g.size(); ++i)
                          if (y[i] > 0.0) ga[i] += g[i];
                      });
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return Tape::record(Tensor::scalar(s), OpId::sum, {&a},
                      [](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                        for (double& v : *gin[0]) v += g[0];
                      });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  Tensor result(std::move(shape), a.values());
  return Tape::record(std::move(result), OpId::reshape, {&a},
                      [](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                        auto& ga = *gin[0];
                        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                      });
}

/// [N, ...] -> [N, prod(...)]
inline Tensor flatten(const Tensor& a) {
  if (a.rank() < 1) throw ShapeError("flatten: needs a batch axis");
  return reshape(a, Shape{a.dim(0), a.size() / a.dim(0)});
}

namespace detail {

struct ConvGeometry {
  std::size_t n, c, h, w, f, kh, kw, stride, pad, oh, ow;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t positions() const { return oh * ow; }
};

inline void im2col(const double* img, const ConvGeometry& g, double* cols) {
  const std::size_t p = g.positions();
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        double* row = cols + ((ch * g.kh + ki) * g.kw + kj) * p;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const auto x = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = y >= 0 && x >= 0 && y < static_cast<std::ptrdiff_t>(g.h) &&
                                x < static_cast<std::ptrdiff_t>(g.w);
            row[oy * g.ow + ox] = inside ? img[(ch * g.h + static_cast<std::size_t>(y)) * g.w +
                                               static_cast<std::size_t>(x)]
                                         : 0.0;
          }
        }
      }
    }
  }
}

inline void col2im_add(const double* cols, const ConvGeometry& g, double* img) {
  const std::size_t p = g.positions();
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* row = cols + ((ch * g.kh + ki) * g.kw + kj) * p;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const auto x = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            if (x < 0 || x >= static_cast<std::ptrdiff_t>(g.w)) continue;
            img[(ch * g.h + static_cast<std::size_t>(y)) * g.w + static_cast<std::size_t>(x)] += row[oy * g.ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Cross-correlation of x[N,C,H,W] with kernel[F,C,kh,kw] -> [N,F,OH,OW].
inline Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t stride = 1, std::size_t padding = 0) {
  if (x.rank() != 4 || kernel.rank() != 4 || x.dim(1) != kernel.dim(1)) {
    throw ShapeError("conv2d: input " + to_string(x.shape()) + " and kernel " + to_string(kernel.shape()) +
                     " are incompatible");
  }
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  detail::ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), kernel.dim(0), kernel.dim(2), kernel.dim(3),
                         stride,   padding,  0,        0};
  if (g.kh > g.h + 2 * padding || g.kw > g.w + 2 * padding) {
    throw std::invalid_argument("conv2d: kernel " + to_string(kernel.shape()) + " exceeds padded input " +
                                to_string(x.shape()) + " with padding " + std::to_string(padding));
  }
  g.oh = (g.h + 2 * padding - g.kh) / stride + 1;
  g.ow = (g.w + 2 * padding - g.kw) / stride + 1;

  const std::size_t in_per = g.c * g.h * g.w;
  const std::size_t out_per = g.f * g.positions();
  std::vector<double> out(g.n * out_per, 0.0);
  std::vector<double> cols(g.patch() * g.positions());
  for (std::size_t s = 0; s < g.n; ++s) {
    detail::im2col(x.data().data() + s * in_per, g, cols.data());
    detail::gemm_nn(kernel.data().data(), cols.data(), out.data() + s * out_per, g.f, g.positions(), g.patch());
  }
  Tensor result(Shape{g.n, g.f, g.oh, g.ow}, std::move(out));
  if (!Tape::tracking({&x, &kernel})) return result;
  return Tape::record(
      std::move(result), OpId::conv2d, {&x, &kernel},
      [g, xv = x.values(), kv = kernel.values(), in_per, out_per](std::span<const double> grad,
                                                                  std::span<std::vector<double>* const> gin) {
        std::vector<double> cols(g.patch() * g.positions());
        for (std::size_t s = 0; s < g.n; ++s) {
          const double* gs = grad.data() + s * out_per;
          if (gin[1]) {
            detail::im2col(xv.data() + s * in_per, g, cols.data());
            detail::gemm_nt(gs, cols.data(), gin[1]->data(), g.f, g.patch(), g.positions());
          }
          if (gin[0]) {
            std::fill(cols.begin(), cols.end(), 0.0);
            detail::gemm_tn(kv.data(), gs, cols.data(), g.patch(), g.positions(), g.f);
            detail::col2im_add(cols.data(), g, gin[0]->data() + s * in_per);
          }
        }
      });
}

enum class Reduction { mean, sum };

/// Softmax cross-entropy of logits[N,m] against class indices, reduced over
/// the batch. Uses the max-shifted log-sum-exp.
inline Tensor softmax_logloss(const Tensor& logits, std::span<const std::size_t> labels,
                              Reduction reduction = Reduction::mean) {
  if (logits.rank() != 2) throw ShapeError("softmax_logloss: logits must be [N,m], got " + to_string(logits.shape()));
  const std::size_t n = logits.dim(0), m = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("softmax_logloss: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                     " rows");
  }
  const auto z = logits.data();
  std::vector<double> probs(n * m);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= m) throw std::out_of_range("softmax_logloss: label " + std::to_string(labels[i]) + " >= " + std::to_string(m));
    const double* row = z.data() + i * m;
    double mx = row[0];
    for (std::size_t j = 0; j < m; ++j) {
      if (!std::isfinite(row[j])) throw NumericError("softmax_logloss: non-finite logit in row " + std::to_string(i));
      mx = std::max(mx, row[j]);
    }
    double se = 0.0;
    for (std::size_t j = 0; j < m; ++j) se += std::exp(row[j] - mx);
    const double lse = mx + std::log(se);
    for (std::size_t j = 0; j < m; ++j) probs[i * m + j] = std::exp(row[j] - lse);
    total += lse - row[labels[i]];
  }
  const double factor = reduction == Reduction::mean ? 1.0 / static_cast<double>(n) : 1.0;
  Tensor result = Tensor::scalar(total * factor);
  if (!Tape::tracking({&logits})) return result;
  return Tape::record(std::move(result), OpId::softmax_logloss, {&logits},
                      [probs = std::move(probs), y = std::vector<std::size_t>(labels.begin(), labels.end()), n, m,
                       factor](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                        auto& gz = *gin[0];
                        const double s = g[0] * factor;
                        for (std::size_t i = 0; i < n; ++i) {
                          for (std::size_t j = 0; j < m; ++j) {
                            const double target = j == y[i] ? 1.0 : 0.0;
                            gz[i * m + j] += s * (probs[i * m + j] - target);
                          }
                        }
                      });
}

// Value-level helpers (never recorded).

inline Tensor clip(const Tensor& a, double lo, double hi) {
  std::vector<double> out(a.values());
  for (double& v : out) v = std::clamp(v, lo, hi);
  return Tensor(a.shape(), std::move(out));
}

inline std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("argmax_rows: expected [N,m], got " + to_string(logits.shape()));
  const std::size_t n = logits.dim(0), m = logits.dim(1);
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.data().data() + i * m;
    out[i] = static_cast<std::size_t>(std::max_element(row, row + m) - row);
  }
  return out;
}

/// Per-row L2 norms of a batch tensor [N, ...].
inline std::vector<double> row_norms(const Tensor& t) {
  const std::size_t n = t.dim(0), per = t.size() / n;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < per; ++j) s += t[i * per + j] * t[i * per + j];
    out[i] = std::sqrt(s);
  }
  return out;
}

}  // namespace pda
