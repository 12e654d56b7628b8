#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pfseg/autograd.hpp"
#include "pfseg/kernels.hpp"
#include "pfseg/tensor.hpp"

namespace pfseg {

/// Label value excluded from loss and metrics.
inline constexpr std::int32_t kVoidLabel = 255;

/// Argmax positions recorded by max_pool2d: one flat offset into the pooled
/// input per output cell.
struct IndexMap {
  Shape input_shape;
  std::vector<std::size_t> offsets;
};

namespace detail {

template <class T>
void require_rank4(const Tensor<T>& t, const char* what) {
  if (t.rank() != 4)
    throw ShapeError(std::string(what) + ": expected N x C x H x W, got " + shape_string(t.shape()));
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

template <class T>
void require_same_tape(Var<T> a, Var<T> b) {
  if (a.tape != b.tape) throw std::invalid_argument("operands live on different tapes");
}

template <class T, class Fwd, class Deriv>
Var<T> unary(Var<T> x, Fwd fwd, Deriv deriv) {
  const Tensor<T>& in = x.value();
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.numel(); ++i) out[i] = fwd(in[i]);
  const std::size_t xi = x.id;
  return x.tape->record(std::move(out), {xi}, [xi, deriv](Tape<T>& tape, std::size_t self) {
    if (!tape.requires_grad(xi)) return;
    const Tensor<T>& gy = *tape.grad(Var<T>{&tape, self});
    const Tensor<T>& xv = tape.value(xi);
    const Tensor<T>& yv = tape.value(self);
    Tensor<T>& gx = tape.grad_buffer(xi);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += gy[i] * deriv(xv[i], yv[i]);
  });
}

}  // namespace detail

template <class T>
Var<T> tanh_op(Var<T> x) {
  return detail::unary(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T{1} - y * y; });
}

template <class T>
Var<T> relu_op(Var<T> x) {
  return detail::unary(
      x, [](T v) { return v > T{0} ? v : T{0}; }, [](T v, T) { return v > T{0} ? T{1} : T{0}; });
}

/// Multiplies by a constant.
template <class T>
Var<T> scale_op(Var<T> x, T factor) {
  return detail::unary(
      x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <class T>
Var<T> add_op(Var<T> a, Var<T> b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape(a.value(), b.value(), "add");
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(out), {ai, bi}, [ai, bi](Tape<T>& tape, std::size_t self) {
    const Tensor<T>& gy = *tape.grad(Var<T>{&tape, self});
    for (std::size_t id : {ai, bi}) {
      if (!tape.requires_grad(id)) continue;
      Tensor<T>& g = tape.grad_buffer(id);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += gy[i];
    }
  });
}

/// Elementwise product.
template <class T>
Var<T> mul_op(Var<T> a, Var<T> b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape(a.value(), b.value(), "mul");
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(out), {ai, bi}, [ai, bi](Tape<T>& tape, std::size_t self) {
    const Tensor<T>& gy = *tape.grad(Var<T>{&tape, self});
    if (tape.requires_grad(ai)) {
      Tensor<T>& g = tape.grad_buffer(ai);
      const Tensor<T>& other = tape.value(bi);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += gy[i] * other[i];
    }
    if (tape.requires_grad(bi)) {
      Tensor<T>& g = tape.grad_buffer(bi);
      const Tensor<T>& other = tape.value(ai);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += gy[i] * other[i];
    }
  });
}

/// Sum of all elements, as a {1} tensor.
template <class T>
Var<T> sum_op(Var<T> x) {
  T acc{0};
  for (T v : x.value().data()) acc += v;
  const std::size_t xi = x.id;
  return x.tape->record(Tensor<T>::scalar(acc), {xi}, [xi](Tape<T>& tape, std::size_t self) {
    if (!tape.requires_grad(xi)) return;
    const T gy = (*tape.grad(Var<T>{&tape, self}))[0];
    Tensor<T>& g = tape.grad_buffer(xi);
    for (auto& v : g.data()) v += gy;
  });
}

/// Channel-wise concatenation; a's channels come first.
template <class T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  detail::require_same_tape(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  detail::require_rank4(av, "concat_channels");
  detail::require_rank4(bv, "concat_channels");
  for (std::size_t d : {0u, 2u, 3u})
    if (av.dim(d) != bv.dim(d))
      throw ShapeError("concat_channels: dimension " + std::to_string(d) + " differs (" + shape_string(av.shape()) +
                       " vs " + shape_string(bv.shape()) + ")");
  const std::size_t N = av.dim(0), Ca = av.dim(1), Cb = bv.dim(1), HW = av.dim(2) * av.dim(3);
  Tensor<T> out({N, Ca + Cb, av.dim(2), av.dim(3)});
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(av.ptr() + n * Ca * HW, Ca * HW, out.ptr() + n * (Ca + Cb) * HW);
    std::copy_n(bv.ptr() + n * Cb * HW, Cb * HW, out.ptr() + (n * (Ca + Cb) + Ca) * HW);
  }
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(out), {ai, bi}, [=](Tape<T>& tape, std::size_t self) {
    const Tensor<T>& gy = *tape.grad(Var<T>{&tape, self});
    for (std::size_t n = 0; n < N; ++n) {
      const T* src = gy.ptr() + n * (Ca + Cb) * HW;
      if (tape.requires_grad(ai)) {
        T* dst = tape.grad_buffer(ai).ptr() + n * Ca * HW;
        for (std::size_t i = 0; i < Ca * HW; ++i) dst[i] += src[i];
      }
      if (tape.requires_grad(bi)) {
        T* dst = tape.grad_buffer(bi).ptr() + n * Cb * HW;
        for (std::size_t i = 0; i < Cb * HW; ++i) dst[i] += src[Ca * HW + i];
      }
    }
  });
}

/// 2-D cross-correlation with zero padding.
///
/// input N x Cin x H x W, weight Cout x Cin x k x k, optional bias of Cout.
template <class T>
Var<T> conv2d(Var<T> input, Var<T> weight, std::optional<Var<T>> bias, int stride, int padding) {
  detail::require_same_tape(input, weight);
  if (bias) detail::require_same_tape(input, *bias);
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be positive, got " + std::to_string(stride));
  if (padding < 0) throw std::invalid_argument("conv2d: padding must be non-negative");
  const Tensor<T>& x = input.value();
  const Tensor<T>& w = weight.value();
  detail::require_rank4(x, "conv2d input");
  detail::require_rank4(w, "conv2d weight");
  const std::size_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != Cin)
    throw ShapeError("conv2d: input channels " + std::to_string(Cin) + " but weight expects " +
                     std::to_string(w.dim(1)));
  if (w.dim(3) != k) throw ShapeError("conv2d: kernel must be square, got " + shape_string(w.shape()));
  const auto pad = static_cast<std::size_t>(padding);
  if (k > H + 2 * pad) throw ShapeError("conv2d: kernel height " + std::to_string(k) + " exceeds padded height");
  if (k > W + 2 * pad) throw ShapeError("conv2d: kernel width " + std::to_string(k) + " exceeds padded width");
  if (bias && bias->value().shape() != Shape{Cout})
    throw ShapeError("conv2d: bias shape " + shape_string(bias->value().shape()) + " but " + std::to_string(Cout) +
                     " output channels");

  const kernels::ConvGeometry g{Cin, H, W, k, static_cast<std::size_t>(stride), pad};
  const std::size_t Ho = g.out_h(), Wo = g.out_w(), P = Ho * Wo, Kc = g.patch();
  Tensor<T> out({N, Cout, Ho, Wo});
  std::vector<T> col(g.identity() ? 0 : Kc * P);
  for (std::size_t n = 0; n < N; ++n) {
    const T* xn = x.ptr() + n * Cin * H * W;
    const T* cols = xn;
    if (!g.identity()) {
      kernels::im2col(g, xn, col.data());
      cols = col.data();
    }
    T* yn = out.ptr() + n * Cout * P;
    kernels::gemm_nn(Cout, P, Kc, w.ptr(), cols, yn);
    if (bias) {
      const Tensor<T>& b = bias->value();
      for (std::size_t co = 0; co < Cout; ++co)
        for (std::size_t p = 0; p < P; ++p) yn[co * P + p] += b[co];
    }
  }

  std::vector<std::size_t> inputs{input.id, weight.id};
  if (bias) inputs.push_back(bias->id);
  const std::size_t xi = input.id, wi = weight.id;
  const std::optional<std::size_t> bi = bias ? std::optional<std::size_t>(bias->id) : std::nullopt;
  return input.tape->record(std::move(out), std::move(inputs), [=](Tape<T>& tape, std::size_t self) {
    const Tensor<T>& gy = *tape.grad(Var<T>{&tape, self});
    const Tensor<T>& xv = tape.value(xi);
    const Tensor<T>& wv = tape.value(wi);
    std::vector<T> colbuf(g.identity() ? 0 : Kc * P), colT(P * Kc), tmp;
    if (tape.requires_grad(wi)) {
      Tensor<T>& gw = tape.grad_buffer(wi);
      tmp.resize(Cout * Kc);
      for (std::size_t n = 0; n < N; ++n) {
        const T* xn = xv.ptr() + n * Cin * H * W;
        const T* cols = xn;
        if (!g.identity()) {
          kernels::im2col(g, xn, colbuf.data());
          cols = colbuf.data();
        }
        kernels::transpose(Kc, P, cols, colT.data());
        kernels::gemm_nn(Cout, Kc, P, gy.ptr() + n * Cout * P, colT.data(), tmp.data());
        for (std::size_t i = 0; i < Cout * Kc; ++i) gw[i] += tmp[i];
      }
    }
    if (bi && tape.requires_grad(*bi)) {
      Tensor<T>& gb = tape.grad_buffer(*bi);
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t co = 0; co < Cout; ++co) {
          T acc{0};
          const T* row = gy.ptr() + (n * Cout + co) * P;
          for (std::size_t p = 0; p < P; ++p) acc += row[p];
          gb[co] += acc;
        }
    }
    if (tape.requires_grad(xi)) {
      Tensor<T>& gx = tape.grad_buffer(xi);
      std::vector<T> wT(Kc * Cout), dcol(Kc * P);
      kernels::transpose(Cout, Kc, wv.ptr(), wT.data());
      for (std::size_t n = 0; n < N; ++n) {
        kernels::gemm_nn(Kc, P, Cout, wT.data(), gy.ptr() + n * Cout * P, dcol.data());
        T* gxn = gx.ptr() + n * Cin * H * W;
        if (g.identity()) {
          for (std::size_t i = 0; i < Kc * P; ++i) gxn[i] += dcol[i];
        } else {
          kernels::col2im(g, dcol.data(), gxn);
        }
      }
    }
  });
}

template <class T>
struct PoolResult {
  Var<T> values;
  IndexMap indices;
};

/// 2x2 max pooling with stride 2. Ties go to the lowest flat offset.
template <class T>
PoolResult<T> max_pool2d(Var<T> input) {
  const Tensor<T>& x = input.value();
  detail::require_rank4(x, "max_pool2d");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 || W % 2) throw ShapeError("max_pool2d: spatial extents must be even, got " + shape_string(x.shape()));
  const std::size_t Ho = H / 2, Wo = W / 2;
  Tensor<T> out({N, C, Ho, Wo});
  IndexMap idx{x.shape(), std::vector<std::size_t>(out.numel())};
  for (std::size_t plane = 0; plane < N * C; ++plane)
    for (std::size_t y = 0; y < Ho; ++y)
      for (std::size_t xx = 0; xx < Wo; ++xx) {
        std::size_t best = plane * H * W + (2 * y) * W + 2 * xx;
        // Row-major window scan with strict '>' keeps the lowest offset on ties.
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t off = plane * H * W + (2 * y + dy) * W + 2 * xx + dx;
            if (x[off] > x[best]) best = off;
          }
        const std::size_t o = (plane * Ho + y) * Wo + xx;
        out[o] = x[best];
        idx.offsets[o] = best;
      }
  const std::size_t xi = input.id;
  std::vector<std::size_t> offsets = idx.offsets;
  Var<T> v = input.tape->record(std::move(out), {xi}, [xi, offsets = std::move(offsets)](Tape<T>& tape, std::size_t self) {
    if (!tape.requires_grad(xi)) return;
    const Tensor<T>& gy = *tape.grad(Var<T>{&tape, self});
    Tensor<T>& gx = tape.grad_buffer(xi);
    for (std::size_t o = 0; o < offsets.size(); ++o) gx[offsets[o]] += gy[o];
  });
  return {v, std::move(idx)};
}

/// Scatters each value to the offset its pooling recorded; other cells are zero.
template <class T>
Var<T> max_unpool2d(Var<T> input, const IndexMap& indices) {
  const Tensor<T>& x = input.value();
  detail::require_rank4(x, "max_unpool2d");
  const Shape& os = indices.input_shape;
  if (os.size() != 4 || os[0] != x.dim(0) || os[1] != x.dim(1) || os[2] != 2 * x.dim(2) || os[3] != 2 * x.dim(3))
    throw ShapeError("max_unpool2d: input " + shape_string(x.shape()) + " incompatible with pooled shape " +
                     shape_string(os));
  if (indices.offsets.size() != x.numel()) throw ShapeError("max_unpool2d: index map size mismatch");
  const std::size_t plane_in = x.dim(2) * x.dim(3), plane_out = os[2] * os[3];
  Tensor<T> out(os, T{0});
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const std::size_t off = indices.offsets[i];
    if (off >= out.numel() || off / plane_out != i / plane_in)
      throw std::out_of_range("max_unpool2d: index " + std::to_string(off) + " out of range for cell " +
                              std::to_string(i));
    out[off] = x[i];
  }
  const std::size_t xi = input.id;
  return input.tape->record(std::move(out), {xi}, [xi, offsets = indices.offsets](Tape<T>& tape, std::size_t self) {
    if (!tape.requires_grad(xi)) return;
    const Tensor<T>& gy = *tape.grad(Var<T>{&tape, self});
    Tensor<T>& gx = tape.grad_buffer(xi);
    for (std::size_t i = 0; i < offsets.size(); ++i) gx[i] += gy[offsets[i]];
  });
}

/// Mean per-pixel cross-entropy over non-ignored pixels.
///
/// logits N x C x H x W, labels N x H x W. A batch with every pixel ignored
/// has loss 0 and zero gradient.
template <class T>
Var<T> softmax_cross_entropy(Var<T> logits, const IntTensor& labels, std::int32_t ignore_label = kVoidLabel) {
  const Tensor<T>& z = logits.value();
  detail::require_rank4(z, "softmax_cross_entropy logits");
  const std::size_t N = z.dim(0), C = z.dim(1), HW = z.dim(2) * z.dim(3);
  if (labels.shape() != Shape{N, z.dim(2), z.dim(3)})
    throw ShapeError("softmax_cross_entropy: labels " + shape_string(labels.shape()) + " vs logits " +
                     shape_string(z.shape()));
  std::size_t count = 0;
  for (std::int32_t l : labels.data()) {
    if (l == ignore_label) continue;
    if (l < 0 || static_cast<std::size_t>(l) >= C)
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(l) + " outside [0, " +
                              std::to_string(C) + ")");
    ++count;
  }
  // Softmax probabilities are kept for the backward pass.
  Tensor<T> prob(z.shape(), T{0});
  double total = 0.0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t p = 0; p < HW; ++p) {
      const std::int32_t l = labels[n * HW + p];
      if (l == ignore_label) continue;
      const T* zp = z.ptr() + n * C * HW + p;
      T mx = zp[0];
      for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, zp[c * HW]);
      T s{0};
      for (std::size_t c = 0; c < C; ++c) s += std::exp(zp[c * HW] - mx);
      T* pp = prob.ptr() + n * C * HW + p;
      for (std::size_t c = 0; c < C; ++c) pp[c * HW] = std::exp(zp[c * HW] - mx) / s;
      total += static_cast<double>(std::log(s) + mx - zp[static_cast<std::size_t>(l) * HW]);
    }
  const T loss = count ? static_cast<T>(total / static_cast<double>(count)) : T{0};
  const std::size_t zi = logits.id;
  return logits.tape->record(Tensor<T>::scalar(loss), {zi},
                             [=, prob = std::move(prob), labels = labels](Tape<T>& tape, std::size_t self) {
                               if (!tape.requires_grad(zi) || count == 0) return;
                               const T gy = (*tape.grad(Var<T>{&tape, self}))[0];
                               const T f = gy / static_cast<T>(count);
                               Tensor<T>& gz = tape.grad_buffer(zi);
                               for (std::size_t n = 0; n < N; ++n)
                                 for (std::size_t p = 0; p < HW; ++p) {
                                   const std::int32_t l = labels[n * HW + p];
                                   if (l == ignore_label) continue;
                                   for (std::size_t c = 0; c < C; ++c) {
                                     const std::size_t o = (n * C + c) * HW + p;
                                     gz[o] += f * (prob[o] - (static_cast<std::int32_t>(c) == l ? T{1} : T{0}));
                                   }
                                 }
                             });
}

/// Per-pixel argmax over channels of N x C x H x W logits; ties pick the lowest class.
template <class T>
IntTensor argmax_channels(const Tensor<T>& logits) {
  detail::require_rank4(logits, "argmax_channels");
  const std::size_t N = logits.dim(0), C = logits.dim(1), HW = logits.dim(2) * logits.dim(3);
  IntTensor out({N, logits.dim(2), logits.dim(3)});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t p = 0; p < HW; ++p) {
      const T* zp = logits.ptr() + n * C * HW + p;
      std::size_t best = 0;
      for (std::size_t c = 1; c < C; ++c)
        if (zp[c * HW] > zp[best * HW]) best = c;
      out[n * HW + p] = static_cast<std::int32_t>(best);
    }
  return out;
}

}  // namespace pfseg
