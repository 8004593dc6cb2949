#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "pcaae/gemm.hpp"
#include "pcaae/tape.hpp"
#include "pcaae/tensor.hpp"

// Differentiable operations over Var. Shapes must agree exactly; the only
// broadcast is scalar-with-tensor (scale, add_scalar). Bias additions are
// explicit ops.

namespace pcaae::ops {

namespace detail {

inline void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

inline void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(s));
}

template <typename T, typename Fwd, typename Deriv>
Var<T> unary(const Var<T>& x, Fwd fwd, Deriv deriv) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {x}, [xi, deriv](Tape<T>& tape, const Tensor<T>& g) {
    const Tensor<T>& xv = tape.value(xi);
    Tensor<T>& dx = tape.grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * deriv(xv[i]);
  });
}

template <typename T>
void im2col(const T* x, std::size_t batch, std::size_t channels, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, T* cols) {
  const std::size_t ncols = batch * ho * wo;
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = cols + ((c * k + ky) * k + kx) * ncols;
        for (std::size_t b = 0; b < batch; ++b) {
          const T* plane = x + (b * channels + c) * h * w;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
            T* dst = row + (b * ho + oy) * wo;
            if (iy < 0 || iy >= static_cast<long>(h)) {
              std::fill(dst, dst + wo, T(0));
              continue;
            }
            const T* src = plane + static_cast<std::size_t>(iy) * w;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
              dst[ox] = (ix < 0 || ix >= static_cast<long>(w)) ? T(0) : src[ix];
            }
          }
        }
      }
}

template <typename T>
void col2im(const T* cols, std::size_t batch, std::size_t channels, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, T* x) {
  const std::size_t ncols = batch * ho * wo;
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = cols + ((c * k + ky) * k + kx) * ncols;
        for (std::size_t b = 0; b < batch; ++b) {
          T* plane = x + (b * channels + c) * h * w;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            const T* src = row + (b * ho + oy) * wo;
            T* dst = plane + static_cast<std::size_t>(iy) * w;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
              if (ix >= 0 && ix < static_cast<long>(w)) dst[ix] += src[ox];
            }
          }
        }
      }
}

/// [B, C, P] <-> [C, B, P] (P = spatial plane size).
template <typename T>
void swap_batch_channel(const T* src, std::size_t d0, std::size_t d1, std::size_t plane, T* dst) {
  for (std::size_t i = 0; i < d0; ++i)
    for (std::size_t j = 0; j < d1; ++j) std::copy_n(src + (i * d1 + j) * plane, plane, dst + (j * d0 + i) * plane);
}

struct ConvGeometry {
  std::size_t batch, in_ch, out_ch, h, w, k, stride, pad, ho, wo;
};

/// Geometry of a forward convolution from an input of extent h×w.
inline ConvGeometry conv_geometry(const Shape& x, const Shape& wshape, std::size_t stride, std::size_t pad,
                                  const char* op) {
  require_rank(x, 4, op);
  require_rank(wshape, 4, op);
  if (wshape[2] != wshape[3]) throw DimensionError(std::string(op) + ": kernel must be square, got " + shape_str(wshape));
  const std::size_t k = wshape[2];
  const std::size_t h = x[2], w = x[3];
  if (h + 2 * pad < k || w + 2 * pad < k || (h + 2 * pad - k) % stride != 0 || (w + 2 * pad - k) % stride != 0)
    throw DimensionError(std::string(op) + ": spatial extent " + shape_str(x) + " incompatible with kernel " +
                         shape_str(wshape) + " stride " + std::to_string(stride));
  return {x[0], x[1], wshape[0], h, w, k, stride, pad, (h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reductions

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {a, b}, [ai, bi](Tape<T>& tape, const Tensor<T>& g) {
    tape.accumulate(ai, g);
    tape.accumulate(bi, g);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {a, b}, [ai, bi](Tape<T>& tape, const Tensor<T>& g) {
    tape.accumulate(ai, g);
    if (tape.requires_grad(bi)) {
      Tensor<T>& db = tape.grad_buffer(bi);
      for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {a, b}, [ai, bi](Tape<T>& tape, const Tensor<T>& g) {
    const Tensor<T>& av = tape.value(ai);
    const Tensor<T>& bv = tape.value(bi);
    if (tape.requires_grad(ai)) {
      Tensor<T>& da = tape.grad_buffer(ai);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv[i];
    }
    if (tape.requires_grad(bi)) {
      Tensor<T>& db = tape.grad_buffer(bi);
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T s) {
  return detail::unary(x, [s](T v) { return v * s; }, [s](T) { return s; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, T s) {
  return detail::unary(x, [s](T v) { return v + s; }, [](T) { return T(1); });
}

template <typename T>
Var<T> square(const Var<T>& x) {
  return detail::unary(x, [](T v) { return v * v; }, [](T v) { return T(2) * v; });
}

template <typename T>
Var<T> exp(const Var<T>& x) {
  return detail::unary(x, [](T v) { return std::exp(v); }, [](T v) { return std::exp(v); });
}

template <typename T>
Var<T> log(const Var<T>& x) {
  for (std::size_t i = 0; i < x.value().size(); ++i)
    if (!(x.value()[i] > T(0)))
      throw DomainError("log: non-positive input " + std::to_string(static_cast<double>(x.value()[i])) + " at index " +
                        std::to_string(i));
  return detail::unary(x, [](T v) { return std::log(v); }, [](T v) { return T(1) / v; });
}

template <typename T>
T sigmoid_scalar(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return detail::unary(x, [](T v) { return sigmoid_scalar(v); },
                       [](T v) {
                         const T s = sigmoid_scalar(v);
                         return s * (T(1) - s);
                       });
}

/// max(x, αx) for 0 < α < 1; the subgradient at exactly 0 is 1.
template <typename T>
Var<T> leaky_relu(const Var<T>& x, T alpha = T(0.2)) {
  return detail::unary(x, [alpha](T v) { return v >= T(0) ? v : alpha * v; },
                       [alpha](T v) { return v >= T(0) ? T(1) : alpha; });
}

/// Clamps into [lo, hi]; gradient passes only where the input lies inside.
template <typename T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
  return detail::unary(x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
                       [lo, hi](T v) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T acc = 0;
  for (T v : x.value().values()) acc += v;
  const std::size_t xi = x.id();
  return x.tape().record(Tensor<T>::scalar(acc), {x}, [xi](Tape<T>& tape, const Tensor<T>& g) {
    Tensor<T>& dx = tape.grad_buffer(xi);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.value().size()));
}

/// Mean of squared differences over all elements.
template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a.shape(), b.shape(), "mse");
  const std::size_t n = a.value().size();
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T d = a.value()[i] - b.value()[i];
    acc += d * d;
  }
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(Tensor<T>::scalar(acc / static_cast<T>(n)), {a, b},
                         [ai, bi, n](Tape<T>& tape, const Tensor<T>& g) {
                           const Tensor<T>& av = tape.value(ai);
                           const Tensor<T>& bv = tape.value(bi);
                           const T c = T(2) * g[0] / static_cast<T>(n);
                           if (tape.requires_grad(ai)) {
                             Tensor<T>& da = tape.grad_buffer(ai);
                             for (std::size_t i = 0; i < n; ++i) da[i] += c * (av[i] - bv[i]);
                           }
                           if (tape.requires_grad(bi)) {
                             Tensor<T>& db = tape.grad_buffer(bi);
                             for (std::size_t i = 0; i < n; ++i) db[i] -= c * (av[i] - bv[i]);
                           }
                         });
}

// ---------------------------------------------------------------------------
// Structural

/// Identity on values, cut from the graph.
template <typename T>
Var<T> detach(const Var<T>& x) {
  return x.tape().constant(x.value());
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {x}, [xi](Tape<T>& tape, const Tensor<T>& g) {
    Tensor<T>& dx = tape.grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
  });
}

/// Concatenates rank-2 tensors [B×k_j] along the column axis.
template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = parts[0].shape().at(0);
  std::size_t cols = 0;
  std::vector<std::size_t> widths, ids;
  for (const auto& p : parts) {
    detail::require_rank(p.shape(), 2, "concat_cols");
    if (p.shape()[0] != rows)
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    widths.push_back(p.shape()[1]);
    ids.push_back(p.id());
    cols += p.shape()[1];
  }
  Tensor<T> out({rows, cols});
  std::size_t offset = 0;
  for (std::size_t j = 0; j < parts.size(); ++j) {
    const Tensor<T>& v = parts[j].value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < widths[j]; ++c) out[r * cols + offset + c] = v[r * widths[j] + c];
    offset += widths[j];
  }
  return parts[0].tape().record(std::move(out), parts, [ids, widths, rows, cols](Tape<T>& tape, const Tensor<T>& g) {
    std::size_t offset = 0;
    for (std::size_t j = 0; j < ids.size(); ++j) {
      if (tape.requires_grad(ids[j])) {
        Tensor<T>& d = tape.grad_buffer(ids[j]);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < widths[j]; ++c) d[r * widths[j] + c] += g[r * cols + offset + c];
      }
      offset += widths[j];
    }
  });
}

/// Column j of a rank-2 tensor as [B×1].
template <typename T>
Var<T> column(const Var<T>& x, std::size_t j) {
  detail::require_rank(x.shape(), 2, "column");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (j >= cols) throw DimensionError("column: index " + std::to_string(j) + " out of " + shape_str(x.shape()));
  Tensor<T> out({rows, 1});
  for (std::size_t r = 0; r < rows; ++r) out[r] = x.value()[r * cols + j];
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {x}, [xi, rows, cols, j](Tape<T>& tape, const Tensor<T>& g) {
    Tensor<T>& dx = tape.grad_buffer(xi);
    for (std::size_t r = 0; r < rows; ++r) dx[r * cols + j] += g[r];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra and layers

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0])
    throw DimensionError("matmul: incompatible shapes " + shape_str(as) + " and " + shape_str(bs));
  const std::size_t r = as[0], k = as[1], c = bs[1];
  Tensor<T> out({r, c});
  pcaae::detail::gemm(false, false, r, c, k, a.value().data(), b.value().data(), out.data(), false);
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {a, b}, [ai, bi, r, k, c](Tape<T>& tape, const Tensor<T>& g) {
    if (tape.requires_grad(ai))
      pcaae::detail::gemm(false, true, r, k, c, g.data(), tape.value(bi).data(), tape.grad_buffer(ai).data(), true);
    if (tape.requires_grad(bi))
      pcaae::detail::gemm(true, false, k, c, r, tape.value(ai).data(), g.data(), tape.grad_buffer(bi).data(), true);
  });
}

/// x[B×F] + bias[F] on every row.
template <typename T>
Var<T> add_row_bias(const Var<T>& x, const Var<T>& bias) {
  detail::require_rank(x.shape(), 2, "add_row_bias");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (bias.value().size() != cols)
    throw DimensionError("add_row_bias: bias " + shape_str(bias.shape()) + " vs input " + shape_str(x.shape()));
  Tensor<T> out = x.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bias.value()[c];
  const std::size_t xi = x.id(), bi = bias.id();
  return x.tape().record(std::move(out), {x, bias}, [xi, bi, rows, cols](Tape<T>& tape, const Tensor<T>& g) {
    tape.accumulate(xi, g);
    if (tape.requires_grad(bi)) {
      Tensor<T>& db = tape.grad_buffer(bi);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) db[c] += g[r * cols + c];
    }
  });
}

/// x[B×C×H×W] + bias[C] on every channel plane.
template <typename T>
Var<T> add_channel_bias(const Var<T>& x, const Var<T>& bias) {
  detail::require_rank(x.shape(), 4, "add_channel_bias");
  const std::size_t batch = x.shape()[0], ch = x.shape()[1], plane = x.shape()[2] * x.shape()[3];
  if (bias.value().size() != ch)
    throw DimensionError("add_channel_bias: bias " + shape_str(bias.shape()) + " vs input " + shape_str(x.shape()));
  Tensor<T> out = x.value();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c) {
      T* p = out.data() + (b * ch + c) * plane;
      const T v = bias.value()[c];
      for (std::size_t i = 0; i < plane; ++i) p[i] += v;
    }
  const std::size_t xi = x.id(), bi = bias.id();
  return x.tape().record(std::move(out), {x, bias}, [xi, bi, batch, ch, plane](Tape<T>& tape, const Tensor<T>& g) {
    tape.accumulate(xi, g);
    if (tape.requires_grad(bi)) {
      Tensor<T>& db = tape.grad_buffer(bi);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < ch; ++c) {
          const T* p = g.data() + (b * ch + c) * plane;
          T acc = 0;
          for (std::size_t i = 0; i < plane; ++i) acc += p[i];
          db[c] += acc;
        }
    }
  });
}

/// Cross-correlation of x[B×C×H×W] with w[F×C×K×K], zero padding.
/// With K = 4, stride 2, padding 1 the spatial extent exactly halves.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, std::size_t stride = 2, std::size_t pad = 1) {
  const auto geo = detail::conv_geometry(x.shape(), w.shape(), stride, pad, "conv2d");
  if (w.shape()[1] != geo.in_ch)
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  const std::size_t rows = geo.in_ch * geo.k * geo.k;
  const std::size_t ncols = geo.batch * geo.ho * geo.wo;
  const std::size_t plane = geo.ho * geo.wo;
  Tensor<T> cols({rows, ncols});
  detail::im2col(x.value().data(), geo.batch, geo.in_ch, geo.h, geo.w, geo.k, stride, pad, geo.ho, geo.wo, cols.data());
  std::vector<T> ymat(geo.out_ch * ncols);
  pcaae::detail::gemm(false, false, geo.out_ch, ncols, rows, w.value().data(), cols.data(), ymat.data(), false);
  Tensor<T> out({geo.batch, geo.out_ch, geo.ho, geo.wo});
  detail::swap_batch_channel(ymat.data(), geo.out_ch, geo.batch, plane, out.data());
  const std::size_t xi = x.id(), wi = w.id();
  const bool keep_cols = w.requires_grad();
  return x.tape().record(
      std::move(out), {x, w},
      [xi, wi, geo, rows, ncols, plane, cols = keep_cols ? std::move(cols) : Tensor<T>()](Tape<T>& tape,
                                                                                       const Tensor<T>& g) {
        std::vector<T> gmat(geo.out_ch * ncols);
        detail::swap_batch_channel(g.data(), geo.batch, geo.out_ch, plane, gmat.data());
        if (tape.requires_grad(wi))
          pcaae::detail::gemm(false, true, geo.out_ch, rows, ncols, gmat.data(), cols.data(),
                              tape.grad_buffer(wi).data(), true);
        if (tape.requires_grad(xi)) {
          std::vector<T> dcols(rows * ncols);
          pcaae::detail::gemm(true, false, rows, ncols, geo.out_ch, tape.value(wi).data(), gmat.data(), dcols.data(),
                              false);
          detail::col2im(dcols.data(), geo.batch, geo.in_ch, geo.h, geo.w, geo.k, geo.stride, geo.pad, geo.ho, geo.wo,
                         tape.grad_buffer(xi).data());
        }
      });
}

/// Adjoint of conv2d: x[B×C_in×H×W], w[C_in×C_out×K×K] -> [B×C_out×H'×W'] with
/// H' = (H−1)·stride − 2·pad + K (doubling for K = 4, stride 2, padding 1).
template <typename T>
Var<T> conv2d_transpose(const Var<T>& x, const Var<T>& w, std::size_t stride = 2, std::size_t pad = 1) {
  detail::require_rank(x.shape(), 4, "conv2d_transpose");
  detail::require_rank(w.shape(), 4, "conv2d_transpose");
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (ws[0] != xs[1] || ws[2] != ws[3])
    throw DimensionError("conv2d_transpose: input " + shape_str(xs) + " vs weight " + shape_str(ws));
  const std::size_t k = ws[2];
  if ((xs[2] - 1) * stride + k < 2 * pad + 1 || (xs[3] - 1) * stride + k < 2 * pad + 1)
    throw DimensionError("conv2d_transpose: output extent would be empty for " + shape_str(xs));
  const std::size_t ho = (xs[2] - 1) * stride + k - 2 * pad;
  const std::size_t wo = (xs[3] - 1) * stride + k - 2 * pad;
  // The equivalent forward convolution maps [B×C_out×ho×wo] onto x's grid.
  const detail::ConvGeometry geo{xs[0], ws[1], ws[0], ho, wo, k, stride, pad, xs[2], xs[3]};
  const std::size_t rows = geo.in_ch * k * k;
  const std::size_t ncols = geo.batch * geo.ho * geo.wo;
  const std::size_t plane = geo.ho * geo.wo;
  std::vector<T> xmat(geo.out_ch * ncols);
  detail::swap_batch_channel(x.value().data(), geo.batch, geo.out_ch, plane, xmat.data());
  std::vector<T> cols(rows * ncols);
  pcaae::detail::gemm(true, false, rows, ncols, geo.out_ch, w.value().data(), xmat.data(), cols.data(), false);
  Tensor<T> out({geo.batch, geo.in_ch, ho, wo});
  detail::col2im(cols.data(), geo.batch, geo.in_ch, ho, wo, k, stride, pad, geo.ho, geo.wo, out.data());
  const std::size_t xi = x.id(), wi = w.id();
  const bool keep_x = w.requires_grad();
  return x.tape().record(
      std::move(out), {x, w},
      [xi, wi, geo, rows, ncols, plane, xmat = keep_x ? std::move(xmat) : std::vector<T>()](Tape<T>& tape,
                                                                                         const Tensor<T>& g) {
        std::vector<T> dcols(rows * ncols);
        detail::im2col(g.data(), geo.batch, geo.in_ch, geo.h, geo.w, geo.k, geo.stride, geo.pad, geo.ho, geo.wo,
                       dcols.data());
        if (tape.requires_grad(wi))
          pcaae::detail::gemm(false, true, geo.out_ch, rows, ncols, xmat.data(), dcols.data(),
                              tape.grad_buffer(wi).data(), true);
        if (tape.requires_grad(xi)) {
          std::vector<T> dxmat(geo.out_ch * ncols);
          pcaae::detail::gemm(false, false, geo.out_ch, ncols, rows, tape.value(wi).data(), dcols.data(),
                              dxmat.data(), false);
          Tensor<T>& dx = tape.grad_buffer(xi);
          std::vector<T> tmp(dx.size());
          detail::swap_batch_channel(dxmat.data(), geo.out_ch, geo.batch, plane, tmp.data());
          for (std::size_t i = 0; i < tmp.size(); ++i) dx[i] += tmp[i];
        }
      });
}

// ---------------------------------------------------------------------------
// Normalization

/// Per-column batch statistics of x[B×k] (population variance).
template <typename T>
struct ColumnStats {
  std::vector<double> mean;
  std::vector<double> var;
};

/// Standardizes each column of x[B×k] with its own batch mean and population
/// variance; the gradient flows through the statistics. Throws
/// DegenerateBatchError when a column's variance is below `min_var`.
template <typename T>
Var<T> standardize_columns(const Var<T>& x, ColumnStats<T>* stats_out = nullptr, double min_var = 1e-12) {
  detail::require_rank(x.shape(), 2, "standardize_columns");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (rows < 2) throw DegenerateBatchError("batch normalization needs at least 2 samples, got " + std::to_string(rows));
  const Tensor<T>& xv = x.value();
  std::vector<double> mu(cols, 0.0), var(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) mu[c] += xv[r * cols + c];
  for (auto& m : mu) m /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = xv[r * cols + c] - mu[c];
      var[c] += d * d;
    }
  for (std::size_t c = 0; c < cols; ++c) {
    var[c] /= static_cast<double>(rows);
    if (!(var[c] >= min_var))
      throw DegenerateBatchError("degenerate batch: variance " + std::to_string(var[c]) + " in column " +
                                 std::to_string(c));
  }
  std::vector<double> inv_std(cols);
  for (std::size_t c = 0; c < cols; ++c) inv_std[c] = 1.0 / std::sqrt(var[c]);
  Tensor<T> out({rows, cols});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out[r * cols + c] = static_cast<T>((xv[r * cols + c] - mu[c]) * inv_std[c]);
  if (stats_out) *stats_out = {mu, var};
  const std::size_t xi = x.id();
  // dx = inv_std · (g − mean(g) − ŷ · mean(g · ŷ)) with ŷ the standardized output.
  return x.tape().record(out, {x}, [xi, rows, cols, inv_std, yv = out](Tape<T>& tape, const Tensor<T>& g) {
    Tensor<T>& dx = tape.grad_buffer(xi);
    for (std::size_t c = 0; c < cols; ++c) {
      double gm = 0, gy = 0;
      for (std::size_t r = 0; r < rows; ++r) {
        gm += g[r * cols + c];
        gy += static_cast<double>(g[r * cols + c]) * yv[r * cols + c];
      }
      gm /= static_cast<double>(rows);
      gy /= static_cast<double>(rows);
      for (std::size_t r = 0; r < rows; ++r)
        dx[r * cols + c] += static_cast<T>(inv_std[c] * (g[r * cols + c] - gm - yv[r * cols + c] * gy));
    }
  });
}

}  // namespace pcaae::ops
