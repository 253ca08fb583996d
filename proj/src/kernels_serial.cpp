#include <algorithm>
#include <cmath>

#include "imbpos/kernels.hpp"

namespace imbpos::kernels::serial {

namespace {

// Input coordinate read by output position `o` at kernel tap `k`, or -1 when
// it falls in the padding.
inline long tap(std::size_t o, std::size_t k, std::size_t stride, std::size_t pad, std::size_t extent) {
  const long pos = static_cast<long>(o * stride + k) - static_cast<long>(pad);
  return (pos < 0 || pos >= static_cast<long>(extent)) ? -1 : pos;
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::size_t batch, std::span<const double> x,
                    std::span<const double> w, std::span<double> y) {
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xb = x.data() + b * g.input_size();
    double* yb = y.data() + b * g.output_size();
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      for (std::size_t oy = 0; oy < g.out_h; ++oy) {
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
          double acc = 0.0;
          for (std::size_t c = 0; c < g.in_channels; ++c) {
            for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
              const long iy = tap(oy, ky, g.stride, g.pad_top, g.in_h);
              if (iy < 0) continue;
              for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                const long ix = tap(ox, kx, g.stride, g.pad_left, g.in_w);
                if (ix < 0) continue;
                acc += w[((o * g.in_channels + c) * g.kernel_h + ky) * g.kernel_w + kx] *
                       xb[(c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w + static_cast<std::size_t>(ix)];
              }
            }
          }
          yb[(o * g.out_h + oy) * g.out_w + ox] = acc;
        }
      }
    }
  }
}

void conv2d_backward_data(const ConvGeometry& g, std::size_t batch, std::span<const double> dy,
                          std::span<const double> w, std::span<double> dx) {
  std::fill(dx.begin(), dx.begin() + static_cast<std::ptrdiff_t>(batch * g.input_size()), 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* dyb = dy.data() + b * g.output_size();
    double* dxb = dx.data() + b * g.input_size();
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      for (std::size_t oy = 0; oy < g.out_h; ++oy) {
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
          const double grad = dyb[(o * g.out_h + oy) * g.out_w + ox];
          for (std::size_t c = 0; c < g.in_channels; ++c) {
            for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
              const long iy = tap(oy, ky, g.stride, g.pad_top, g.in_h);
              if (iy < 0) continue;
              for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                const long ix = tap(ox, kx, g.stride, g.pad_left, g.in_w);
                if (ix < 0) continue;
                dxb[(c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w + static_cast<std::size_t>(ix)] +=
                    grad * w[((o * g.in_channels + c) * g.kernel_h + ky) * g.kernel_w + kx];
              }
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_weight(const ConvGeometry& g, std::size_t batch, std::span<const double> x,
                            std::span<const double> dy, std::span<double> dw) {
  std::fill(dw.begin(), dw.begin() + static_cast<std::ptrdiff_t>(g.weight_size()), 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xb = x.data() + b * g.input_size();
    const double* dyb = dy.data() + b * g.output_size();
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      for (std::size_t oy = 0; oy < g.out_h; ++oy) {
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
          const double grad = dyb[(o * g.out_h + oy) * g.out_w + ox];
          for (std::size_t c = 0; c < g.in_channels; ++c) {
            for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
              const long iy = tap(oy, ky, g.stride, g.pad_top, g.in_h);
              if (iy < 0) continue;
              for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                const long ix = tap(ox, kx, g.stride, g.pad_left, g.in_w);
                if (ix < 0) continue;
                dw[((o * g.in_channels + c) * g.kernel_h + ky) * g.kernel_w + kx] +=
                    grad * xb[(c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w + static_cast<std::size_t>(ix)];
              }
            }
          }
        }
      }
    }
  }
}

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
          std::span<const double> b, std::span<double> c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ta == Trans::No ? a[i * k + p] : a[p * m + i];
        const double bv = tb == Trans::No ? b[p * n + j] : b[j * k + p];
        acc += av * bv;
      }
      c[i * n + j] = acc;
    }
  }
}

void squared_distances(std::size_t na, std::size_t nb, std::size_t dim, std::span<const double> a,
                       std::span<const double> b, std::span<double> out) {
  for (std::size_t i = 0; i < na; ++i) {
    for (std::size_t j = 0; j < nb; ++j) {
      double acc = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        const double diff = a[i * dim + d] - b[j * dim + d];
        acc += diff * diff;
      }
      out[i * nb + j] = acc;
    }
  }
}

void rbf_matrix(std::size_t na, std::size_t nb, std::size_t dim, double gamma, std::span<const double> a,
                std::span<const double> b, std::span<double> out) {
  squared_distances(na, nb, dim, a, b, out);
  for (std::size_t i = 0; i < na * nb; ++i) out[i] = std::exp(-gamma * out[i]);
}

}  // namespace imbpos::kernels::serial
