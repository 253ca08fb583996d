#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "imbpos/kernels.hpp"

// Minimal reverse-mode differentiation over dense float64 tensors.
//
// A Tape records each operation together with a closure that pushes the
// output gradient back to its inputs. backward() walks the tape once in
// reverse. Tapes are single-use: build one per mini-batch.
namespace imbpos::ad {

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, double fill = 0.0);
  Tensor(std::vector<std::size_t> s, std::vector<double> values);

  std::size_t size() const { return data.size(); }
  // Leading (batch) dimension.
  std::size_t rows() const { return shape.empty() ? 0 : shape.front(); }
  // Elements per leading index.
  std::size_t row_size() const { return rows() == 0 ? 0 : size() / rows(); }
};

std::string shape_string(const std::vector<std::size_t>& shape);

struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Var constant(Tensor value) { return push(std::move(value), false, {}); }
  Var variable(Tensor value) { return push(std::move(value), true, {}); }

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  // Gradient of the last backward() target; zeros when the node never received one.
  const Tensor& grad(Var v);
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  // Seeds d(loss)/d(loss) = 1 and propagates to every recorded node.
  void backward(Var loss);

  // Used by operations.
  Var push(Tensor value, bool requires_grad, BackwardFn fn);
  Tensor& grad_buffer(std::size_t id);
  const Tensor& value_of(std::size_t id) const { return nodes_[id].value; }
  bool tracks(std::size_t id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// y = x W^T + b with x [B, in], w [out, in], b [out].
Var linear(Tape& t, Var x, Var w, Var b);

// x [B, C, H, W] -> [B, O, OH, OW]; w [O, C, KH, KW]; b [O].
Var conv2d(Tape& t, Var x, Var w, Var b, const kernels::ConvGeometry& g);

// Transposed convolution. `adjoint` describes the ordinary convolution that
// maps this layer's output space back to its input space, so
//   x [B, adjoint.out_channels, adjoint.out_h, adjoint.out_w]
//   y [B, adjoint.in_channels, adjoint.in_h, adjoint.in_w]
//   w [adjoint.out_channels, adjoint.in_channels, KH, KW], b [adjoint.in_channels].
Var conv_transpose2d(Tape& t, Var x, Var w, Var b, const kernels::ConvGeometry& adjoint);

Var relu(Tape& t, Var x);
Var sigmoid(Tape& t, Var x);
Var reshape(Tape& t, Var x, std::vector<std::size_t> shape);
// Concatenate per sample along axis 1; trailing dimensions must agree.
Var concat(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);

// z = mu + exp(0.5 * log_var) * eps
Var reparameterize(Tape& t, Var mu, Var log_var, Var eps);

inline constexpr double kBceClamp = 1e-7;

// -sum_pixels [x ln p + (1 - x) ln(1 - p)], averaged over the batch, with p
// clamped to [kBceClamp, 1 - kBceClamp]. Returns a scalar.
Var binary_cross_entropy(Tape& t, Var prediction, Var target);

// -0.5 * sum_latent (1 + log_var - mu^2 - exp(log_var)), averaged over the batch.
Var kl_divergence(Tape& t, Var mu, Var log_var);

}  // namespace imbpos::ad
