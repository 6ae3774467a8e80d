#include "cobra/kernels.hpp"

#include <cstddef>

namespace cobra::kernels::serial {

namespace {

// Input index for output (oy,ox) and tap (ky,kx); -1 when the tap is padding.
inline std::ptrdiff_t tap_index(const Conv2dGeometry& g, std::size_t c, std::size_t oy, std::size_t ox,
                                std::size_t ky, std::size_t kx) {
  const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.padding);
  const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.padding);
  if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.height) ||
      ix >= static_cast<std::ptrdiff_t>(g.width)) {
    return -1;
  }
  return static_cast<std::ptrdiff_t>((c * g.height + static_cast<std::size_t>(iy)) * g.width +
                                     static_cast<std::size_t>(ix));
}

inline std::ptrdiff_t tap_index(const Conv1dGeometry& g, std::size_t c, std::size_t v, std::size_t kk) {
  const auto i = static_cast<std::ptrdiff_t>(v) + static_cast<std::ptrdiff_t>(kk * g.dilation) - g.pad();
  if (i < 0 || i >= static_cast<std::ptrdiff_t>(g.length)) return -1;
  return static_cast<std::ptrdiff_t>(c * g.length + static_cast<std::size_t>(i));
}

}  // namespace

void conv2d_forward(const Conv2dGeometry& g, const double* input, const double* weight, double* output) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), kk = g.kernel;
  for (std::size_t co = 0; co < g.out_channels; ++co) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (std::size_t c = 0; c < g.in_channels; ++c) {
          for (std::size_t ky = 0; ky < kk; ++ky) {
            for (std::size_t kx = 0; kx < kk; ++kx) {
              const auto idx = tap_index(g, c, oy, ox, ky, kx);
              if (idx < 0) continue;
              acc += weight[((co * g.in_channels + c) * kk + ky) * kk + kx] * input[idx];
            }
          }
        }
        output[(co * oh + oy) * ow + ox] = acc;
      }
    }
  }
}

void conv2d_backward_input(const Conv2dGeometry& g, const double* weight, const double* grad_out,
                           double* grad_in) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), kk = g.kernel;
  for (std::size_t co = 0; co < g.out_channels; ++co) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const double go = grad_out[(co * oh + oy) * ow + ox];
        for (std::size_t c = 0; c < g.in_channels; ++c) {
          for (std::size_t ky = 0; ky < kk; ++ky) {
            for (std::size_t kx = 0; kx < kk; ++kx) {
              const auto idx = tap_index(g, c, oy, ox, ky, kx);
              if (idx < 0) continue;
              grad_in[idx] += weight[((co * g.in_channels + c) * kk + ky) * kk + kx] * go;
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_weight(const Conv2dGeometry& g, const double* input, const double* grad_out,
                            double* grad_weight) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), kk = g.kernel;
  for (std::size_t co = 0; co < g.out_channels; ++co) {
    for (std::size_t c = 0; c < g.in_channels; ++c) {
      for (std::size_t ky = 0; ky < kk; ++ky) {
        for (std::size_t kx = 0; kx < kk; ++kx) {
          double acc = 0.0;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const auto idx = tap_index(g, c, oy, ox, ky, kx);
              if (idx < 0) continue;
              acc += grad_out[(co * oh + oy) * ow + ox] * input[idx];
            }
          }
          grad_weight[((co * g.in_channels + c) * kk + ky) * kk + kx] += acc;
        }
      }
    }
  }
}

void conv1d_forward(const Conv1dGeometry& g, const double* input, const double* weight, double* output) {
  for (std::size_t co = 0; co < g.out_channels; ++co) {
    for (std::size_t v = 0; v < g.length; ++v) {
      double acc = 0.0;
      for (std::size_t c = 0; c < g.in_channels; ++c) {
        for (std::size_t kk = 0; kk < g.kernel; ++kk) {
          const auto idx = tap_index(g, c, v, kk);
          if (idx < 0) continue;
          acc += weight[(co * g.in_channels + c) * g.kernel + kk] * input[idx];
        }
      }
      output[co * g.length + v] = acc;
    }
  }
}

void conv1d_backward_input(const Conv1dGeometry& g, const double* weight, const double* grad_out,
                           double* grad_in) {
  for (std::size_t co = 0; co < g.out_channels; ++co) {
    for (std::size_t v = 0; v < g.length; ++v) {
      const double go = grad_out[co * g.length + v];
      for (std::size_t c = 0; c < g.in_channels; ++c) {
        for (std::size_t kk = 0; kk < g.kernel; ++kk) {
          const auto idx = tap_index(g, c, v, kk);
          if (idx < 0) continue;
          grad_in[idx] += weight[(co * g.in_channels + c) * g.kernel + kk] * go;
        }
      }
    }
  }
}

void conv1d_backward_weight(const Conv1dGeometry& g, const double* input, const double* grad_out,
                            double* grad_weight) {
  for (std::size_t co = 0; co < g.out_channels; ++co) {
    for (std::size_t c = 0; c < g.in_channels; ++c) {
      for (std::size_t kk = 0; kk < g.kernel; ++kk) {
        double acc = 0.0;
        for (std::size_t v = 0; v < g.length; ++v) {
          const auto idx = tap_index(g, c, v, kk);
          if (idx < 0) continue;
          acc += grad_out[co * g.length + v] * input[idx];
        }
        grad_weight[(co * g.in_channels + c) * g.kernel + kk] += acc;
      }
    }
  }
}

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] += acc;
    }
  }
}

}  // namespace cobra::kernels::serial
