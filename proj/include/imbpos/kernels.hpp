#pragma once

#include <cstddef>
#include <span>

// Numeric kernels shared by the generative models, the oversamplers and the
// SVM. Two implementations with identical signatures:
//
//   serial::  plain nested loops, the reference used by tests
//   omp::     im2col + Eigen GEMM (direct loops for stride-1 layers with one
//             or two output channels), OpenMP-parallel over samples / rows
//
// All tensors are dense row-major. Outputs are overwritten, never accumulated.
namespace imbpos::kernels {

// 2-D cross-correlation geometry, channels-first.
//   x  [batch, in_channels, in_h, in_w]
//   w  [out_channels, in_channels, kernel_h, kernel_w]
//   y  [batch, out_channels, out_h, out_w]
// y[o, oy, ox] = sum w[o, c, ky, kx] * x[c, oy*stride + ky - pad_top, ox*stride + kx - pad_left]
// with zero outside the input. Padding on the bottom/right is implied by out_h/out_w.
struct ConvGeometry {
  std::size_t in_channels = 0;
  std::size_t in_h = 0;
  std::size_t in_w = 0;
  std::size_t out_channels = 0;
  std::size_t out_h = 0;
  std::size_t out_w = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  std::size_t pad_top = 0;
  std::size_t pad_left = 0;

  std::size_t input_size() const { return in_channels * in_h * in_w; }
  std::size_t output_size() const { return out_channels * out_h * out_w; }
  std::size_t weight_size() const { return out_channels * in_channels * kernel_h * kernel_w; }
};

enum class Trans { No, Yes };

namespace serial {

void conv2d_forward(const ConvGeometry& g, std::size_t batch, std::span<const double> x,
                    std::span<const double> w, std::span<double> y);
// Gradient with respect to x given dy (equivalently, the transposed convolution of dy).
void conv2d_backward_data(const ConvGeometry& g, std::size_t batch, std::span<const double> dy,
                          std::span<const double> w, std::span<double> dx);
// Gradient with respect to w, summed over the batch.
void conv2d_backward_weight(const ConvGeometry& g, std::size_t batch, std::span<const double> x,
                            std::span<const double> dy, std::span<double> dw);

// C[m, n] = op(A) op(B), op(A) is m x k, op(B) is k x n.
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
          std::span<const double> b, std::span<double> c);

// out[i, j] = sum_d (a[i, d] - b[j, d])^2, evaluated by direct differences.
void squared_distances(std::size_t na, std::size_t nb, std::size_t dim, std::span<const double> a,
                       std::span<const double> b, std::span<double> out);

// out[i, j] = exp(-gamma * |a_i - b_j|^2)
void rbf_matrix(std::size_t na, std::size_t nb, std::size_t dim, double gamma, std::span<const double> a,
                std::span<const double> b, std::span<double> out);

}  // namespace serial

namespace omp {

void conv2d_forward(const ConvGeometry& g, std::size_t batch, std::span<const double> x,
                    std::span<const double> w, std::span<double> y);
void conv2d_backward_data(const ConvGeometry& g, std::size_t batch, std::span<const double> dy,
                          std::span<const double> w, std::span<double> dx);
// Per-sample partial gradients are reduced in sample order, so the result
// does not depend on the thread count.
void conv2d_backward_weight(const ConvGeometry& g, std::size_t batch, std::span<const double> x,
                            std::span<const double> dy, std::span<double> dw);

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
          std::span<const double> b, std::span<double> c);

// Same summation order as serial::squared_distances, so results are bitwise equal.
void squared_distances(std::size_t na, std::size_t nb, std::size_t dim, std::span<const double> a,
                       std::span<const double> b, std::span<double> out);

// Uses |a|^2 + |b|^2 - 2 a.b with a GEMM; agrees with the serial version to rounding.
void rbf_matrix(std::size_t na, std::size_t nb, std::size_t dim, double gamma, std::span<const double> a,
                std::span<const double> b, std::span<double> out);

}  // namespace omp

}  // namespace imbpos::kernels
