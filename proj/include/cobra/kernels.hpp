#pragma once

// Convolution kernels on raw row-major buffers.
//
// `serial` holds direct-loop reference implementations used by the tests and
// the benchmark. `parallel` holds the im2col + blocked GEMM versions the
// graph ops call; they split work over OpenMP threads by output column panel,
// so every output element is produced by one thread in a fixed order and the
// result does not depend on the thread count.
//
// All backward kernels accumulate into their output buffers.

#include <cstddef>

namespace cobra::kernels {

struct Conv2dGeometry {
  std::size_t in_channels, height, width;
  std::size_t out_channels, kernel;
  std::size_t stride, padding;

  std::size_t out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
  std::size_t patch() const { return in_channels * kernel * kernel; }
};

struct Conv1dGeometry {
  std::size_t in_channels, length;
  std::size_t out_channels, kernel;
  std::size_t dilation;

  std::size_t patch() const { return in_channels * kernel; }
  std::ptrdiff_t pad() const { return static_cast<std::ptrdiff_t>(dilation * (kernel - 1) / 2); }
};

namespace serial {

void conv2d_forward(const Conv2dGeometry& g, const double* input, const double* weight, double* output);
void conv2d_backward_input(const Conv2dGeometry& g, const double* weight, const double* grad_out,
                           double* grad_in);
void conv2d_backward_weight(const Conv2dGeometry& g, const double* input, const double* grad_out,
                            double* grad_weight);

void conv1d_forward(const Conv1dGeometry& g, const double* input, const double* weight, double* output);
void conv1d_backward_input(const Conv1dGeometry& g, const double* weight, const double* grad_out,
                           double* grad_in);
void conv1d_backward_weight(const Conv1dGeometry& g, const double* input, const double* grad_out,
                            double* grad_weight);

/// C[M,N] += A[M,K] * B[K,N]
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);

}  // namespace serial

namespace parallel {

void conv2d_forward(const Conv2dGeometry& g, const double* input, const double* weight, double* output);
void conv2d_backward_input(const Conv2dGeometry& g, const double* weight, const double* grad_out,
                           double* grad_in);
void conv2d_backward_weight(const Conv2dGeometry& g, const double* input, const double* grad_out,
                            double* grad_weight);

void conv1d_forward(const Conv1dGeometry& g, const double* input, const double* weight, double* output);
void conv1d_backward_input(const Conv1dGeometry& g, const double* weight, const double* grad_out,
                           double* grad_in);
void conv1d_backward_weight(const Conv1dGeometry& g, const double* input, const double* grad_out,
                            double* grad_weight);

/// C[M,N] += A[M,K] * B[K,N]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
/// C[M,N] += A^T * B with A stored [K,M]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
/// C[M,N] += A * B^T with A stored [M,K], B stored [N,K]
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);

}  // namespace parallel

}  // namespace cobra::kernels
