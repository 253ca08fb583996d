#include "imbpos/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "imbpos/error.hpp"

namespace imbpos::ad {

namespace k = imbpos::kernels;

Tensor::Tensor(std::vector<std::size_t> s, double fill) : shape(std::move(s)) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  data.assign(n, fill);
}

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  if (n != data.size()) throw Error(ErrorCode::ShapeMismatch, "tensor " + shape_string(shape) + " given " +
                                                               std::to_string(data.size()) + " values");
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

Var Tape::push(Tensor value, bool requires_grad, BackwardFn fn) {
  nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, std::move(fn)});
  return Var{nodes_.size() - 1};
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.data.size() != n.value.data.size()) n.grad = Tensor(n.value.shape, 0.0);
  return n.grad;
}

const Tensor& Tape::grad(Var v) { return grad_buffer(v.id); }

void Tape::backward(Var loss) {
  if (value(loss).size() != 1) throw Error(ErrorCode::ShapeMismatch, "backward() needs a scalar");
  for (auto& n : nodes_) n.grad = Tensor{};
  grad_buffer(loss.id).data[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.data.empty()) continue;
    n.backward(*this, i);
  }
}

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::ShapeMismatch, what);
}

bool any_tracked(const Tape& t, std::initializer_list<Var> vars) {
  return std::any_of(vars.begin(), vars.end(), [&](Var v) { return t.requires_grad(v); });
}

}  // namespace

Var linear(Tape& t, Var x, Var w, Var b) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  require(wv.shape.size() == 2 && xv.row_size() == wv.shape[1] && t.value(b).size() == wv.shape[0],
          "linear: x " + shape_string(xv.shape) + " vs w " + shape_string(wv.shape));
  const std::size_t batch = xv.rows(), in = wv.shape[1], out = wv.shape[0];
  Tensor y({batch, out});
  k::omp::gemm(k::Trans::No, k::Trans::Yes, batch, out, in, xv.data, wv.data, y.data);
  const auto& bv = t.value(b).data;
  for (std::size_t r = 0; r < batch; ++r) {
    for (std::size_t j = 0; j < out; ++j) y.data[r * out + j] += bv[j];
  }
  return t.push(std::move(y), any_tracked(t, {x, w, b}), [x, w, b, batch, in, out](Tape& tp, std::size_t self) {
    const Tensor& dy = tp.grad_buffer(self);
    if (tp.tracks(x.id)) {
      std::vector<double> dx(batch * in);
      k::omp::gemm(k::Trans::No, k::Trans::No, batch, in, out, dy.data, tp.value_of(w.id).data, dx);
      auto& g = tp.grad_buffer(x.id).data;
      for (std::size_t i = 0; i < dx.size(); ++i) g[i] += dx[i];
    }
    if (tp.tracks(w.id)) {
      std::vector<double> dw(out * in);
      k::omp::gemm(k::Trans::Yes, k::Trans::No, out, in, batch, dy.data, tp.value_of(x.id).data, dw);
      auto& g = tp.grad_buffer(w.id).data;
      for (std::size_t i = 0; i < dw.size(); ++i) g[i] += dw[i];
    }
    if (tp.tracks(b.id)) {
      auto& g = tp.grad_buffer(b.id).data;
      for (std::size_t r = 0; r < batch; ++r) {
        for (std::size_t j = 0; j < out; ++j) g[j] += dy.data[r * out + j];
      }
    }
  });
}

namespace {

void add_channel_bias(std::vector<double>& y, std::size_t batch, std::size_t channels, std::size_t plane,
                      const std::vector<double>& bias) {
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      double* p = y.data() + (n * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += bias[c];
    }
  }
}

void accumulate_channel_bias(std::vector<double>& g, const std::vector<double>& dy, std::size_t batch,
                             std::size_t channels, std::size_t plane) {
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double* p = dy.data() + (n * channels + c) * plane;
      double s = 0.0;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      g[c] += s;
    }
  }
}

void add_into(std::vector<double>& dst, const std::vector<double>& src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

}  // namespace

Var conv2d(Tape& t, Var x, Var w, Var b, const k::ConvGeometry& g) {
  const Tensor& xv = t.value(x);
  require(xv.row_size() == g.input_size() && t.value(w).size() == g.weight_size() &&
              t.value(b).size() == g.out_channels,
          "conv2d: input " + shape_string(xv.shape) + " does not fit the geometry");
  const std::size_t batch = xv.rows();
  Tensor y({batch, g.out_channels, g.out_h, g.out_w});
  k::omp::conv2d_forward(g, batch, xv.data, t.value(w).data, y.data);
  add_channel_bias(y.data, batch, g.out_channels, g.out_h * g.out_w, t.value(b).data);
  return t.push(std::move(y), any_tracked(t, {x, w, b}), [x, w, b, g, batch](Tape& tp, std::size_t self) {
    const Tensor& dy = tp.grad_buffer(self);
    if (tp.tracks(x.id)) {
      std::vector<double> dx(batch * g.input_size());
      k::omp::conv2d_backward_data(g, batch, dy.data, tp.value_of(w.id).data, dx);
      add_into(tp.grad_buffer(x.id).data, dx);
    }
    if (tp.tracks(w.id)) {
      std::vector<double> dw(g.weight_size());
      k::omp::conv2d_backward_weight(g, batch, tp.value_of(x.id).data, dy.data, dw);
      add_into(tp.grad_buffer(w.id).data, dw);
    }
    if (tp.tracks(b.id)) {
      accumulate_channel_bias(tp.grad_buffer(b.id).data, dy.data, batch, g.out_channels, g.out_h * g.out_w);
    }
  });
}

Var conv_transpose2d(Tape& t, Var x, Var w, Var b, const k::ConvGeometry& adj) {
  const Tensor& xv = t.value(x);
  require(xv.row_size() == adj.output_size() && t.value(w).size() == adj.weight_size() &&
              t.value(b).size() == adj.in_channels,
          "conv_transpose2d: input " + shape_string(xv.shape) + " does not fit the geometry");
  const std::size_t batch = xv.rows();
  Tensor y({batch, adj.in_channels, adj.in_h, adj.in_w});
  k::omp::conv2d_backward_data(adj, batch, xv.data, t.value(w).data, y.data);
  add_channel_bias(y.data, batch, adj.in_channels, adj.in_h * adj.in_w, t.value(b).data);
  return t.push(std::move(y), any_tracked(t, {x, w, b}), [x, w, b, adj, batch](Tape& tp, std::size_t self) {
    const Tensor& dy = tp.grad_buffer(self);
    if (tp.tracks(x.id)) {
      std::vector<double> dx(batch * adj.output_size());
      k::omp::conv2d_forward(adj, batch, dy.data, tp.value_of(w.id).data, dx);
      add_into(tp.grad_buffer(x.id).data, dx);
    }
    if (tp.tracks(w.id)) {
      std::vector<double> dw(adj.weight_size());
      k::omp::conv2d_backward_weight(adj, batch, dy.data, tp.value_of(x.id).data, dw);
      add_into(tp.grad_buffer(w.id).data, dw);
    }
    if (tp.tracks(b.id)) {
      accumulate_channel_bias(tp.grad_buffer(b.id).data, dy.data, batch, adj.in_channels, adj.in_h * adj.in_w);
    }
  });
}

Var relu(Tape& t, Var x) {
  Tensor y = t.value(x);
  for (double& v : y.data) v = v > 0.0 ? v : 0.0;
  return t.push(std::move(y), t.requires_grad(x), [x](Tape& tp, std::size_t self) {
    const auto& dy = tp.grad_buffer(self).data;
    const auto& xv = tp.value_of(x.id).data;
    auto& g = tp.grad_buffer(x.id).data;
    for (std::size_t i = 0; i < dy.size(); ++i) {
      if (xv[i] > 0.0) g[i] += dy[i];
    }
  });
}

Var sigmoid(Tape& t, Var x) {
  Tensor y = t.value(x);
  for (double& v : y.data) v = 1.0 / (1.0 + std::exp(-v));
  return t.push(std::move(y), t.requires_grad(x), [x](Tape& tp, std::size_t self) {
    const auto& dy = tp.grad_buffer(self).data;
    const auto& s = tp.value_of(self).data;
    auto& g = tp.grad_buffer(x.id).data;
    for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i] * s[i] * (1.0 - s[i]);
  });
}

Var reshape(Tape& t, Var x, std::vector<std::size_t> shape) {
  Tensor y(std::move(shape), t.value(x).data);
  return t.push(std::move(y), t.requires_grad(x), [x](Tape& tp, std::size_t self) {
    add_into(tp.grad_buffer(x.id).data, tp.grad_buffer(self).data);
  });
}

Var concat(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require(av.rows() == bv.rows() && av.shape.size() == bv.shape.size() && av.shape.size() >= 2 &&
              std::equal(av.shape.begin() + 2, av.shape.end(), bv.shape.begin() + 2),
          "concat: " + shape_string(av.shape) + " vs " + shape_string(bv.shape));
  const std::size_t batch = av.rows(), na = av.row_size(), nb = bv.row_size();
  std::vector<std::size_t> shape = av.shape;
  shape[1] += bv.shape[1];
  Tensor y(shape);
  for (std::size_t r = 0; r < batch; ++r) {
    std::copy_n(av.data.begin() + static_cast<std::ptrdiff_t>(r * na), na, y.data.begin() + static_cast<std::ptrdiff_t>(r * (na + nb)));
    std::copy_n(bv.data.begin() + static_cast<std::ptrdiff_t>(r * nb), nb,
                y.data.begin() + static_cast<std::ptrdiff_t>(r * (na + nb) + na));
  }
  return t.push(std::move(y), any_tracked(t, {a, b}), [a, b, batch, na, nb](Tape& tp, std::size_t self) {
    const auto& dy = tp.grad_buffer(self).data;
    if (tp.tracks(a.id)) {
      auto& g = tp.grad_buffer(a.id).data;
      for (std::size_t r = 0; r < batch; ++r) {
        for (std::size_t i = 0; i < na; ++i) g[r * na + i] += dy[r * (na + nb) + i];
      }
    }
    if (tp.tracks(b.id)) {
      auto& g = tp.grad_buffer(b.id).data;
      for (std::size_t r = 0; r < batch; ++r) {
        for (std::size_t i = 0; i < nb; ++i) g[r * nb + i] += dy[r * (na + nb) + na + i];
      }
    }
  });
}

Var add(Tape& t, Var a, Var b) {
  require(t.value(a).size() == t.value(b).size(), "add: size mismatch");
  Tensor y = t.value(a);
  add_into(y.data, t.value(b).data);
  return t.push(std::move(y), any_tracked(t, {a, b}), [a, b](Tape& tp, std::size_t self) {
    const Tensor& dy = tp.grad_buffer(self);
    if (tp.tracks(a.id)) add_into(tp.grad_buffer(a.id).data, dy.data);
    if (tp.tracks(b.id)) add_into(tp.grad_buffer(b.id).data, dy.data);
  });
}

Var reparameterize(Tape& t, Var mu, Var log_var, Var eps) {
  const auto& m = t.value(mu).data;
  const auto& lv = t.value(log_var).data;
  const auto& e = t.value(eps).data;
  require(m.size() == lv.size() && m.size() == e.size(), "reparameterize: size mismatch");
  Tensor z = t.value(mu);
  for (std::size_t i = 0; i < m.size(); ++i) z.data[i] = m[i] + std::exp(0.5 * lv[i]) * e[i];
  return t.push(std::move(z), any_tracked(t, {mu, log_var, eps}), [mu, log_var, eps](Tape& tp, std::size_t self) {
    const auto& dz = tp.grad_buffer(self).data;
    const auto& lv = tp.value_of(log_var.id).data;
    const auto& e = tp.value_of(eps.id).data;
    if (tp.tracks(mu.id)) add_into(tp.grad_buffer(mu.id).data, dz);
    if (tp.tracks(log_var.id)) {
      auto& g = tp.grad_buffer(log_var.id).data;
      for (std::size_t i = 0; i < dz.size(); ++i) g[i] += dz[i] * 0.5 * std::exp(0.5 * lv[i]) * e[i];
    }
    if (tp.tracks(eps.id)) {
      auto& g = tp.grad_buffer(eps.id).data;
      for (std::size_t i = 0; i < dz.size(); ++i) g[i] += dz[i] * std::exp(0.5 * lv[i]);
    }
  });
}

Var binary_cross_entropy(Tape& t, Var prediction, Var target) {
  const Tensor& p = t.value(prediction);
  const Tensor& x = t.value(target);
  require(p.size() == x.size() && p.rows() == x.rows() && p.rows() > 0, "binary_cross_entropy: shape mismatch");
  const double inv_batch = 1.0 / static_cast<double>(p.rows());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p.data[i], kBceClamp, 1.0 - kBceClamp);
    total -= x.data[i] * std::log(q) + (1.0 - x.data[i]) * std::log(1.0 - q);
  }
  Tensor y({1}, total * inv_batch);
  return t.push(std::move(y), t.requires_grad(prediction), [prediction, target, inv_batch](Tape& tp, std::size_t self) {
    const double dy = tp.grad_buffer(self).data[0];
    const auto& p = tp.value_of(prediction.id).data;
    const auto& x = tp.value_of(target.id).data;
    auto& g = tp.grad_buffer(prediction.id).data;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p[i] < kBceClamp || p[i] > 1.0 - kBceClamp) continue;  // clamp is flat there
      g[i] += dy * inv_batch * (-x[i] / p[i] + (1.0 - x[i]) / (1.0 - p[i]));
    }
  });
}

Var kl_divergence(Tape& t, Var mu, Var log_var) {
  const Tensor& m = t.value(mu);
  const Tensor& lv = t.value(log_var);
  require(m.size() == lv.size() && m.rows() > 0, "kl_divergence: shape mismatch");
  const double inv_batch = 1.0 / static_cast<double>(m.rows());
  double total = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    total += 1.0 + lv.data[i] - m.data[i] * m.data[i] - std::exp(lv.data[i]);
  }
  Tensor y({1}, -0.5 * total * inv_batch);
  return t.push(std::move(y), any_tracked(t, {mu, log_var}), [mu, log_var, inv_batch](Tape& tp, std::size_t self) {
    const double dy = tp.grad_buffer(self).data[0];
    const auto& m = tp.value_of(mu.id).data;
    const auto& lv = tp.value_of(log_var.id).data;
    if (tp.tracks(mu.id)) {
      auto& g = tp.grad_buffer(mu.id).data;
      for (std::size_t i = 0; i < m.size(); ++i) g[i] += dy * inv_batch * m[i];
    }
    if (tp.tracks(log_var.id)) {
      auto& g = tp.grad_buffer(log_var.id).data;
      for (std::size_t i = 0; i < lv.size(); ++i) g[i] += dy * inv_batch * -0.5 * (1.0 - std::exp(lv[i]));
    }
  });
}

}  // namespace imbpos::ad
