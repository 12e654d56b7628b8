#pragma once

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <vector>

#include "pfseg/parallel.hpp"

// Low-level dense kernels. Every output element of gemm_nn is accumulated
// from zero, one k at a time in ascending order; convolution results are
// therefore bit-identical to the direct nested-loop form that sums over input
// channel, then kernel row, then kernel column.
namespace pfseg::kernels {

struct ConvGeometry {
  std::size_t channels, height, width;
  std::size_t kernel, stride, pad;
  std::size_t out_h() const { return (height + 2 * pad - kernel) / stride + 1; }
  std::size_t out_w() const { return (width + 2 * pad - kernel) / stride + 1; }
  std::size_t patch() const { return channels * kernel * kernel; }
  bool identity() const { return kernel == 1 && stride == 1 && pad == 0; }
};

namespace detail {
// Output columns [lo, hi) of a kernel tap read inside the input row.
inline void valid_span(const ConvGeometry& g, std::size_t kw, std::size_t ow, std::size_t& lo, std::size_t& hi) {
  lo = std::min(ow, kw >= g.pad ? 0 : (g.pad - kw + g.stride - 1) / g.stride);
  // xx * stride must stay below width + pad - kw, which can be non-positive.
  const std::ptrdiff_t limit = static_cast<std::ptrdiff_t>(g.width + g.pad) - static_cast<std::ptrdiff_t>(kw);
  hi = limit <= 0 ? 0 : std::min(ow, (static_cast<std::size_t>(limit) + g.stride - 1) / g.stride);
  hi = std::min(hi, ow);
  if (hi < lo) hi = lo;
}
}  // namespace detail

/// col has patch() rows and out_h()*out_w() columns.
template <class T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.kernel, st = g.stride;
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t kh = 0; kh < k; ++kh)
      for (std::size_t kw = 0; kw < k; ++kw) {
        T* row = col + ((c * k + kh) * k + kw) * oh * ow;
        std::size_t lo, hi;
        detail::valid_span(g, kw, ow, lo, hi);
        for (std::size_t y = 0; y < oh; ++y) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * st + kh) - static_cast<std::ptrdiff_t>(g.pad);
          T* out = row + y * ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height) || lo == hi) {
            std::fill(out, out + ow, T{0});
            continue;
          }
          const T* src = x + (c * g.height + static_cast<std::size_t>(iy)) * g.width + (lo * st + kw - g.pad);
          std::fill(out, out + lo, T{0});
          if (st == 1) {
            std::copy(src, src + (hi - lo), out + lo);
          } else {
            for (std::size_t xx = lo; xx < hi; ++xx) out[xx] = src[(xx - lo) * st];
          }
          std::fill(out + hi, out + ow, T{0});
        }
      }
}

/// Scatter-adds col back into x (x must be zeroed or hold a partial sum).
template <class T>
void col2im(const ConvGeometry& g, const T* col, T* x) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.kernel, st = g.stride;
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t kh = 0; kh < k; ++kh)
      for (std::size_t kw = 0; kw < k; ++kw) {
        const T* row = col + ((c * k + kh) * k + kw) * oh * ow;
        std::size_t lo, hi;
        detail::valid_span(g, kw, ow, lo, hi);
        if (lo == hi) continue;
        for (std::size_t y = 0; y < oh; ++y) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * st + kh) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          T* __restrict dst = x + (c * g.height + static_cast<std::size_t>(iy)) * g.width + (lo * st + kw - g.pad);
          const T* __restrict in = row + y * ow;
          if (st == 1) {
            for (std::size_t xx = lo; xx < hi; ++xx) dst[xx - lo] += in[xx];
          } else {
            for (std::size_t xx = lo; xx < hi; ++xx) dst[(xx - lo) * st] += in[xx];
          }
        }
      }
}

/// dst (cols x rows) = src (rows x cols) transposed.
template <class T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  constexpr std::size_t B = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += B)
    for (std::size_t c0 = 0; c0 < cols; c0 += B) {
      const std::size_t r1 = std::min(rows, r0 + B), c1 = std::min(cols, c0 + B);
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) dst[c * rows + r] = src[r * cols + c];
    }
}

namespace detail {

constexpr std::size_t kGemmNR = 32, kGemmMR = 4, kGemmKC = 256;

// Accumulates an mr x NR tile over kc steps of a packed B panel. The tile is
// loaded from C unless `first`, so K blocks continue the same running sum.
template <class T, std::size_t MRt>
inline void gemm_tile(std::size_t kc, const T* const* a, const T* __restrict bp, T* const* c, std::size_t ncols,
                      bool first) {
  constexpr std::size_t NR = kGemmNR;
  T acc[MRt][NR];
  for (std::size_t r = 0; r < MRt; ++r)
    for (std::size_t j = 0; j < NR; ++j) acc[r][j] = first || j >= ncols ? T{0} : c[r][j];
  for (std::size_t k = 0; k < kc; ++k) {
    const T* __restrict b = bp + k * NR;
    for (std::size_t r = 0; r < MRt; ++r) {
      const T av = a[r][k];
      for (std::size_t j = 0; j < NR; ++j) acc[r][j] += av * b[j];
    }
  }
  for (std::size_t r = 0; r < MRt; ++r)
    for (std::size_t j = 0; j < ncols; ++j) c[r][j] = acc[r][j];
}

template <class T, std::size_t MRt>
inline void gemm_rows(std::size_t i0, std::size_t j0, std::size_t k0, std::size_t kc, std::size_t N, std::size_t K,
                      const T* A, const T* bp, T* C, std::size_t ncols, bool first) {
  const T* a[MRt];
  T* c[MRt];
  for (std::size_t r = 0; r < MRt; ++r) {
    a[r] = A + (i0 + r) * K + k0;
    c[r] = C + (i0 + r) * N + j0;
  }
  gemm_tile<T, MRt>(kc, a, bp, c, ncols, first);
}

}  // namespace detail

/// C (M x N) = A (M x K) * B (K x N), all row-major and dense.
template <class T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  constexpr std::size_t NR = detail::kGemmNR, MR = detail::kGemmMR, KC = detail::kGemmKC;
  if (K == 0) {
    std::fill_n(C, M * N, T{0});
    return;
  }
  const std::size_t panels = (N + NR - 1) / NR;
  parallel_for(panels, [&](std::size_t p0, std::size_t p1) {
    std::vector<T> packed(std::min(K, KC) * NR);
    for (std::size_t p = p0; p < p1; ++p) {
      const std::size_t j0 = p * NR, ncols = std::min(NR, N - j0);
      for (std::size_t k0 = 0; k0 < K; k0 += KC) {
        const std::size_t kc = std::min(KC, K - k0);
        for (std::size_t k = 0; k < kc; ++k) {
          const T* src = B + (k0 + k) * N + j0;
          T* dst = packed.data() + k * NR;
          std::copy(src, src + ncols, dst);
          std::fill(dst + ncols, dst + NR, T{0});
        }
        const bool first = k0 == 0;
        std::size_t i = 0;
        for (; i + MR <= M; i += MR)
          detail::gemm_rows<T, MR>(i, j0, k0, kc, N, K, A, packed.data(), C, ncols, first);
        switch (M - i) {
          case 3: detail::gemm_rows<T, 3>(i, j0, k0, kc, N, K, A, packed.data(), C, ncols, first); break;
          case 2: detail::gemm_rows<T, 2>(i, j0, k0, kc, N, K, A, packed.data(), C, ncols, first); break;
          case 1: detail::gemm_rows<T, 1>(i, j0, k0, kc, N, K, A, packed.data(), C, ncols, first); break;
          default: break;
        }
      }
    }
  });
}

}  // namespace pfseg::kernels
