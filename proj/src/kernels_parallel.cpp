#include "cobra/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace cobra::kernels::parallel {

namespace {

using v8d = double __attribute__((vector_size(64)));

inline v8d load8(const double* p) {
  v8d v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}
inline void store8(double* p, v8d v) { std::memcpy(p, &v, sizeof(v)); }
inline v8d splat(double x) { return v8d{} + x; }
inline double hsum(v8d v) {
  return ((v[0] + v[1]) + (v[2] + v[3])) + ((v[4] + v[5]) + (v[6] + v[7]));
}

constexpr std::size_t kRowBlock = 8;
constexpr std::size_t kDotRowBlock = 4;
constexpr std::size_t kColBlock = 32;
constexpr std::size_t kDepthBlock = 128;
constexpr std::size_t kParallelMinWork = std::size_t{1} << 16;

// C[8 x 32] += A(rows i..i+7, p in [p0,p1)) * B[p, j0..j0+32)
template <bool TransA>
inline void micro_8x32(std::size_t i, std::size_t j0, std::size_t p0, std::size_t p1, std::size_t m,
                       std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  v8d acc[kRowBlock][4];
#pragma GCC unroll 8
  for (std::size_t r = 0; r < kRowBlock; ++r) {
#pragma GCC unroll 4
    for (std::size_t q = 0; q < 4; ++q) acc[r][q] = load8(c + (i + r) * n + j0 + 8 * q);
  }
  for (std::size_t p = p0; p < p1; ++p) {
    const double* bp = b + p * n + j0;
    const v8d b0 = load8(bp), b1 = load8(bp + 8), b2 = load8(bp + 16), b3 = load8(bp + 24);
#pragma GCC unroll 8
    for (std::size_t r = 0; r < kRowBlock; ++r) {
      const v8d av = splat(TransA ? a[p * m + i + r] : a[(i + r) * k + p]);
      acc[r][0] += av * b0;
      acc[r][1] += av * b1;
      acc[r][2] += av * b2;
      acc[r][3] += av * b3;
    }
  }
#pragma GCC unroll 8
  for (std::size_t r = 0; r < kRowBlock; ++r) {
#pragma GCC unroll 4
    for (std::size_t q = 0; q < 4; ++q) store8(c + (i + r) * n + j0 + 8 * q, acc[r][q]);
  }
}

template <bool TransA>
void gemm_impl(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  const std::size_t panels = (n + kColBlock - 1) / kColBlock;
  const bool big = m * n * k >= kParallelMinWork;
#pragma omp parallel for schedule(static) if (big)
  for (std::size_t jp = 0; jp < panels; ++jp) {
    const std::size_t j0 = jp * kColBlock;
    const std::size_t nb = std::min(kColBlock, n - j0);
    for (std::size_t p0 = 0; p0 < k; p0 += kDepthBlock) {
      const std::size_t p1 = std::min(k, p0 + kDepthBlock);
      std::size_t i = 0;
      if (nb == kColBlock) {
        for (; i + kRowBlock <= m; i += kRowBlock) micro_8x32<TransA>(i, j0, p0, p1, m, n, k, a, b, c);
      }
      for (; i < m; ++i) {
        double* crow = c + i * n + j0;
        for (std::size_t p = p0; p < p1; ++p) {
          const double av = TransA ? a[p * m + i] : a[i * k + p];
          const double* brow = b + p * n + j0;
          for (std::size_t j = 0; j < nb; ++j) crow[j] += av * brow[j];
        }
      }
    }
  }
}

inline double dot(const double* x, const double* y, std::size_t len) {
  v8d acc{};
  std::size_t p = 0;
  for (; p + 8 <= len; p += 8) acc += load8(x + p) * load8(y + p);
  double s = hsum(acc);
  for (; p < len; ++p) s += x[p] * y[p];
  return s;
}

// Thread-local scratch for im2col buffers.
std::vector<double>& scratch(std::size_t size) {
  thread_local std::vector<double> buf;
  if (buf.size() < size) buf.resize(size);
  return buf;
}

void im2col(const Conv2dGeometry& g, const double* input, double* cols) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), kk = g.kernel;
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  const auto h = static_cast<std::ptrdiff_t>(g.height), w = static_cast<std::ptrdiff_t>(g.width);
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const double* plane = input + c * g.height * g.width;
    for (std::size_t ky = 0; ky < kk; ++ky) {
      for (std::size_t kx = 0; kx < kk; ++kx) {
        double* row = cols + ((c * kk + ky) * kk + kx) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          double* out = row + oy * ow;
          if (iy < 0 || iy >= h) {
            std::fill(out, out + ow, 0.0);
            continue;
          }
          const double* src = plane + iy * w;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            out[ox] = (ix < 0 || ix >= w) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const Conv2dGeometry& g, const double* cols, double* grad_in) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), kk = g.kernel;
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  const auto h = static_cast<std::ptrdiff_t>(g.height), w = static_cast<std::ptrdiff_t>(g.width);
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    double* plane = grad_in + c * g.height * g.width;
    for (std::size_t ky = 0; ky < kk; ++ky) {
      for (std::size_t kx = 0; kx < kk; ++kx) {
        const double* row = cols + ((c * kk + ky) * kk + kx) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          if (iy < 0 || iy >= h) continue;
          double* dst = plane + iy * w;
          const double* src = row + oy * ow;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

void im2col(const Conv1dGeometry& g, const double* input, double* cols) {
  const auto len = static_cast<std::ptrdiff_t>(g.length);
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t kk = 0; kk < g.kernel; ++kk) {
      double* row = cols + (c * g.kernel + kk) * g.length;
      const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kk * g.dilation) - g.pad();
      for (std::ptrdiff_t v = 0; v < len; ++v) {
        const std::ptrdiff_t i = v + shift;
        row[v] = (i < 0 || i >= len) ? 0.0 : input[c * g.length + static_cast<std::size_t>(i)];
      }
    }
  }
}

void col2im_add(const Conv1dGeometry& g, const double* cols, double* grad_in) {
  const auto len = static_cast<std::ptrdiff_t>(g.length);
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t kk = 0; kk < g.kernel; ++kk) {
      const double* row = cols + (c * g.kernel + kk) * g.length;
      const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kk * g.dilation) - g.pad();
      for (std::ptrdiff_t v = 0; v < len; ++v) {
        const std::ptrdiff_t i = v + shift;
        if (i >= 0 && i < len) grad_in[c * g.length + static_cast<std::size_t>(i)] += row[v];
      }
    }
  }
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  gemm_impl<false>(m, n, k, a, b, c);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  gemm_impl<true>(m, n, k, a, b, c);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  const std::size_t row_blocks = (m + kDotRowBlock - 1) / kDotRowBlock;
  const bool big = m * n * k >= kParallelMinWork;
#pragma omp parallel for schedule(static) if (big)
  for (std::size_t ib = 0; ib < row_blocks; ++ib) {
    const std::size_t i0 = ib * kDotRowBlock;
    if (i0 + kDotRowBlock <= m && k >= 8) {
      std::size_t j0 = 0;
      for (; j0 + 4 <= n; j0 += 4) {
        v8d acc[kDotRowBlock][4] = {};
        std::size_t p = 0;
        for (; p + 8 <= k; p += 8) {
          const v8d b0 = load8(b + (j0 + 0) * k + p), b1 = load8(b + (j0 + 1) * k + p);
          const v8d b2 = load8(b + (j0 + 2) * k + p), b3 = load8(b + (j0 + 3) * k + p);
#pragma GCC unroll 4
          for (std::size_t r = 0; r < kDotRowBlock; ++r) {
            const v8d av = load8(a + (i0 + r) * k + p);
            acc[r][0] += av * b0;
            acc[r][1] += av * b1;
            acc[r][2] += av * b2;
            acc[r][3] += av * b3;
          }
        }
        for (std::size_t r = 0; r < kDotRowBlock; ++r) {
          for (std::size_t q = 0; q < 4; ++q) {
            double s = hsum(acc[r][q]);
            for (std::size_t pp = p; pp < k; ++pp) s += a[(i0 + r) * k + pp] * b[(j0 + q) * k + pp];
            c[(i0 + r) * n + j0 + q] += s;
          }
        }
      }
      for (; j0 < n; ++j0) {
        for (std::size_t r = 0; r < kDotRowBlock; ++r) c[(i0 + r) * n + j0] += dot(a + (i0 + r) * k, b + j0 * k, k);
      }
    } else {
      for (std::size_t i = i0; i < std::min(m, i0 + kDotRowBlock); ++i) {
        for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot(a + i * k, b + j * k, k);
      }
    }
  }
}

void conv2d_forward(const Conv2dGeometry& g, const double* input, const double* weight, double* output) {
  const std::size_t spatial = g.out_height() * g.out_width();
  auto& cols = scratch(g.patch() * spatial);
  im2col(g, input, cols.data());
  std::fill(output, output + g.out_channels * spatial, 0.0);
  gemm_nn(g.out_channels, spatial, g.patch(), weight, cols.data(), output);
}

void conv2d_backward_input(const Conv2dGeometry& g, const double* weight, const double* grad_out,
                           double* grad_in) {
  const std::size_t spatial = g.out_height() * g.out_width();
  auto& cols = scratch(g.patch() * spatial);
  std::fill(cols.begin(), cols.begin() + static_cast<std::ptrdiff_t>(g.patch() * spatial), 0.0);
  gemm_tn(g.patch(), spatial, g.out_channels, weight, grad_out, cols.data());
  col2im_add(g, cols.data(), grad_in);
}

void conv2d_backward_weight(const Conv2dGeometry& g, const double* input, const double* grad_out,
                            double* grad_weight) {
  const std::size_t spatial = g.out_height() * g.out_width();
  auto& cols = scratch(g.patch() * spatial);
  im2col(g, input, cols.data());
  gemm_nt(g.out_channels, g.patch(), spatial, grad_out, cols.data(), grad_weight);
}

void conv1d_forward(const Conv1dGeometry& g, const double* input, const double* weight, double* output) {
  auto& cols = scratch(g.patch() * g.length);
  im2col(g, input, cols.data());
  std::fill(output, output + g.out_channels * g.length, 0.0);
  gemm_nn(g.out_channels, g.length, g.patch(), weight, cols.data(), output);
}

void conv1d_backward_input(const Conv1dGeometry& g, const double* weight, const double* grad_out,
                           double* grad_in) {
  auto& cols = scratch(g.patch() * g.length);
  std::fill(cols.begin(), cols.begin() + static_cast<std::ptrdiff_t>(g.patch() * g.length), 0.0);
  gemm_tn(g.patch(), g.length, g.out_channels, weight, grad_out, cols.data());
  col2im_add(g, cols.data(), grad_in);
}

void conv1d_backward_weight(const Conv1dGeometry& g, const double* input, const double* grad_out,
                            double* grad_weight) {
  auto& cols = scratch(g.patch() * g.length);
  im2col(g, input, cols.data());
  gemm_nt(g.out_channels, g.patch(), g.length, grad_out, cols.data(), grad_weight);
}

}  // namespace cobra::kernels::parallel
