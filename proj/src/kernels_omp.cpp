#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "imbpos/kernels.hpp"

namespace imbpos::kernels::omp {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

inline std::size_t patch_rows(const ConvGeometry& g) { return g.in_channels * g.kernel_h * g.kernel_w; }
inline std::size_t patch_cols(const ConvGeometry& g) { return g.out_h * g.out_w; }

// Output columns [lo, hi) whose input column ox*stride + kx - pad_left is in range.
inline void valid_cols(const ConvGeometry& g, std::size_t kx, std::size_t& lo, std::size_t& hi) {
  const long off = static_cast<long>(kx) - static_cast<long>(g.pad_left);
  const long s = static_cast<long>(g.stride);
  const long first = off >= 0 ? 0 : (-off + s - 1) / s;
  const long last = (static_cast<long>(g.in_w) - 1 - off) < 0 ? -1 : (static_cast<long>(g.in_w) - 1 - off) / s;
  lo = static_cast<std::size_t>(std::min<long>(first, static_cast<long>(g.out_w)));
  hi = static_cast<std::size_t>(std::clamp<long>(last + 1, static_cast<long>(lo), static_cast<long>(g.out_w)));
}

// cols[(c*kh + ky)*kw + kx, oy*out_w + ox] = x[c, oy*s + ky - pt, ox*s + kx - pl]
void im2col(const ConvGeometry& g, const double* x, double* cols) {
  const std::size_t p = patch_cols(g);
  const std::size_t s = g.stride;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        double* row = cols + ((c * g.kernel_h + ky) * g.kernel_w + kx) * p;
        std::size_t lo, hi;
        valid_cols(g, kx, lo, hi);
        const long off = static_cast<long>(kx) - static_cast<long>(g.pad_left);
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * s + ky) - static_cast<long>(g.pad_top);
          double* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<long>(g.in_h)) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = x + (c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w + off;
          std::fill(dst, dst + lo, 0.0);
          if (s == 1) {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox];
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox * s];
          }
          std::fill(dst + hi, dst + g.out_w, 0.0);
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const double* cols, double* x) {
  const std::size_t p = patch_cols(g);
  const std::size_t s = g.stride;
  std::fill(x, x + g.input_size(), 0.0);
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        const double* row = cols + ((c * g.kernel_h + ky) * g.kernel_w + kx) * p;
        std::size_t lo, hi;
        valid_cols(g, kx, lo, hi);
        const long off = static_cast<long>(kx) - static_cast<long>(g.pad_left);
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * s + ky) - static_cast<long>(g.pad_top);
          if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
          double* dst = x + (c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w + off;
          const double* src = row + oy * g.out_w;
          for (std::size_t ox = lo; ox < hi; ++ox) dst[ox * s] += src[ox];
        }
      }
    }
  }
}

// Direct stride-1 convolution for layers with very few output channels,
// where im2col traffic would dominate the arithmetic.
inline bool use_direct(const ConvGeometry& g) { return g.stride == 1 && g.out_channels <= 2; }

void direct_forward(const ConvGeometry& g, const double* x, const double* w, double* y) {
  std::fill(y, y + g.output_size(), 0.0);
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    double* yo = y + o * g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.in_channels; ++c) {
      for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
        for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
          const double wv = w[((o * g.in_channels + c) * g.kernel_h + ky) * g.kernel_w + kx];
          std::size_t lo, hi;
          valid_cols(g, kx, lo, hi);
          const long shift = static_cast<long>(kx) - static_cast<long>(g.pad_left);
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const long iy = static_cast<long>(oy + ky) - static_cast<long>(g.pad_top);
            if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
            const double* src = x + (c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w + shift;
            double* dst = yo + oy * g.out_w;
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] += wv * src[ox];
          }
        }
      }
    }
  }
}

void direct_backward_data(const ConvGeometry& g, const double* dy, const double* w, double* dx) {
  std::fill(dx, dx + g.input_size(), 0.0);
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    const double* dyo = dy + o * g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.in_channels; ++c) {
      for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
        for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
          const double wv = w[((o * g.in_channels + c) * g.kernel_h + ky) * g.kernel_w + kx];
          std::size_t lo, hi;
          valid_cols(g, kx, lo, hi);
          const long shift = static_cast<long>(kx) - static_cast<long>(g.pad_left);
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const long iy = static_cast<long>(oy + ky) - static_cast<long>(g.pad_top);
            if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
            double* dst = dx + (c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w + shift;
            const double* src = dyo + oy * g.out_w;
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] += wv * src[ox];
          }
        }
      }
    }
  }
}

void direct_backward_weight(const ConvGeometry& g, const double* x, const double* dy, double* dw) {
  std::vector<double> lane(g.out_w);
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    const double* dyo = dy + o * g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.in_channels; ++c) {
      for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
        for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
          std::size_t lo, hi;
          valid_cols(g, kx, lo, hi);
          const long shift = static_cast<long>(kx) - static_cast<long>(g.pad_left);
          std::fill(lane.begin(), lane.end(), 0.0);
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const long iy = static_cast<long>(oy + ky) - static_cast<long>(g.pad_top);
            if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
            const double* src = x + (c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w + shift;
            const double* d = dyo + oy * g.out_w;
            for (std::size_t ox = lo; ox < hi; ++ox) lane[ox] += d[ox] * src[ox];
          }
          double acc = 0.0;
          for (double v : lane) acc += v;
          dw[((o * g.in_channels + c) * g.kernel_h + ky) * g.kernel_w + kx] = acc;
        }
      }
    }
  }
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::size_t batch, std::span<const double> x,
                    std::span<const double> w, std::span<double> y) {
  const auto kdim = static_cast<Eigen::Index>(patch_rows(g));
  const auto pdim = static_cast<Eigen::Index>(patch_cols(g));
  const auto odim = static_cast<Eigen::Index>(g.out_channels);
  ConstMap wm(w.data(), odim, kdim);
  if (use_direct(g)) {
#pragma omp parallel for schedule(static)
    for (long b = 0; b < static_cast<long>(batch); ++b) {
      const auto i = static_cast<std::size_t>(b);
      direct_forward(g, x.data() + i * g.input_size(), w.data(), y.data() + i * g.output_size());
    }
    return;
  }
#pragma omp parallel
  {
    std::vector<double> cols(patch_rows(g) * patch_cols(g));
#pragma omp for schedule(static)
    for (long b = 0; b < static_cast<long>(batch); ++b) {
      im2col(g, x.data() + static_cast<std::size_t>(b) * g.input_size(), cols.data());
      MutMap ym(y.data() + static_cast<std::size_t>(b) * g.output_size(), odim, pdim);
      ym.noalias() = wm * ConstMap(cols.data(), kdim, pdim);
    }
  }
}

void conv2d_backward_data(const ConvGeometry& g, std::size_t batch, std::span<const double> dy,
                          std::span<const double> w, std::span<double> dx) {
  const auto kdim = static_cast<Eigen::Index>(patch_rows(g));
  const auto pdim = static_cast<Eigen::Index>(patch_cols(g));
  const auto odim = static_cast<Eigen::Index>(g.out_channels);
  ConstMap wm(w.data(), odim, kdim);
  if (use_direct(g)) {
#pragma omp parallel for schedule(static)
    for (long b = 0; b < static_cast<long>(batch); ++b) {
      const auto i = static_cast<std::size_t>(b);
      direct_backward_data(g, dy.data() + i * g.output_size(), w.data(), dx.data() + i * g.input_size());
    }
    return;
  }
#pragma omp parallel
  {
    std::vector<double> cols(patch_rows(g) * patch_cols(g));
#pragma omp for schedule(static)
    for (long b = 0; b < static_cast<long>(batch); ++b) {
      MutMap cm(cols.data(), kdim, pdim);
      cm.noalias() = wm.transpose() * ConstMap(dy.data() + static_cast<std::size_t>(b) * g.output_size(), odim, pdim);
      col2im(g, cols.data(), dx.data() + static_cast<std::size_t>(b) * g.input_size());
    }
  }
}

void conv2d_backward_weight(const ConvGeometry& g, std::size_t batch, std::span<const double> x,
                            std::span<const double> dy, std::span<double> dw) {
  const auto kdim = static_cast<Eigen::Index>(patch_rows(g));
  const auto pdim = static_cast<Eigen::Index>(patch_cols(g));
  const auto odim = static_cast<Eigen::Index>(g.out_channels);
  const std::size_t wsize = g.weight_size();
  std::vector<double> partial(batch * wsize);
  if (use_direct(g)) {
#pragma omp parallel for schedule(static)
    for (long b = 0; b < static_cast<long>(batch); ++b) {
      const auto i = static_cast<std::size_t>(b);
      direct_backward_weight(g, x.data() + i * g.input_size(), dy.data() + i * g.output_size(),
                             partial.data() + i * wsize);
    }
  } else
#pragma omp parallel
  {
    std::vector<double> cols(patch_rows(g) * patch_cols(g));
#pragma omp for schedule(static)
    for (long b = 0; b < static_cast<long>(batch); ++b) {
      im2col(g, x.data() + static_cast<std::size_t>(b) * g.input_size(), cols.data());
      MutMap pm(partial.data() + static_cast<std::size_t>(b) * wsize, odim, kdim);
      pm.noalias() = ConstMap(dy.data() + static_cast<std::size_t>(b) * g.output_size(), odim, pdim) *
                     ConstMap(cols.data(), kdim, pdim).transpose();
    }
  }
  std::fill(dw.begin(), dw.begin() + static_cast<std::ptrdiff_t>(wsize), 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* src = partial.data() + b * wsize;
    for (std::size_t i = 0; i < wsize; ++i) dw[i] += src[i];
  }
}

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
          std::span<const double> b, std::span<double> c) {
  const auto mi = static_cast<Eigen::Index>(m);
  const auto ni = static_cast<Eigen::Index>(n);
  const auto ki = static_cast<Eigen::Index>(k);
  MutMap cm(c.data(), mi, ni);
  if (ta == Trans::No && tb == Trans::No) {
    cm.noalias() = ConstMap(a.data(), mi, ki) * ConstMap(b.data(), ki, ni);
  } else if (ta == Trans::No) {
    cm.noalias() = ConstMap(a.data(), mi, ki) * ConstMap(b.data(), ni, ki).transpose();
  } else if (tb == Trans::No) {
    cm.noalias() = ConstMap(a.data(), ki, mi).transpose() * ConstMap(b.data(), ki, ni);
  } else {
    cm.noalias() = ConstMap(a.data(), ki, mi).transpose() * ConstMap(b.data(), ni, ki).transpose();
  }
}

void squared_distances(std::size_t na, std::size_t nb, std::size_t dim, std::span<const double> a,
                       std::span<const double> b, std::span<double> out) {
#pragma omp parallel for schedule(static)
  for (long i = 0; i < static_cast<long>(na); ++i) {
    const auto row = static_cast<std::size_t>(i);
    serial::squared_distances(1, nb, dim, a.subspan(row * dim, dim), b, out.subspan(row * nb, nb));
  }
}

void rbf_matrix(std::size_t na, std::size_t nb, std::size_t dim, double gamma, std::span<const double> a,
                std::span<const double> b, std::span<double> out) {
  const auto nai = static_cast<Eigen::Index>(na);
  const auto nbi = static_cast<Eigen::Index>(nb);
  const auto di = static_cast<Eigen::Index>(dim);
  ConstMap am(a.data(), nai, di);
  ConstMap bm(b.data(), nbi, di);
  const Eigen::VectorXd an = am.rowwise().squaredNorm();
  const Eigen::VectorXd bn = bm.rowwise().squaredNorm();
  MutMap om(out.data(), nai, nbi);
  om.noalias() = am * bm.transpose();
#pragma omp parallel for schedule(static)
  for (long i = 0; i < static_cast<long>(na); ++i) {
    for (Eigen::Index j = 0; j < nbi; ++j) {
      const double d2 = std::max(0.0, an[i] + bn[j] - 2.0 * om(i, j));
      om(i, j) = std::exp(-gamma * d2);
    }
  }
}

}  // namespace imbpos::kernels::omp
