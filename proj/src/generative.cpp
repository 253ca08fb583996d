#include "imbpos/generative.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "imbpos/container.hpp"
#include "imbpos/error.hpp"
#include "imbpos/rng.hpp"

namespace imbpos {

using ad::Tape;
using ad::Tensor;
using ad::Var;
using Shape = std::vector<std::size_t>;

// ---------------------------------------------------------------------------
// Architectures

namespace {

LayerSpec input(std::string name, Shape shape) {
  return {std::move(name), LayerKind::Input, {}, 0, 0, 1, Activation::Linear, std::move(shape)};
}

LayerSpec dense(std::string name, std::string from, std::size_t units, Activation act) {
  return {std::move(name), LayerKind::Dense, {std::move(from)}, units, 0, 1, act, {units}};
}

LayerSpec conv(std::string name, std::string from, std::size_t filters, std::size_t kernel, std::size_t stride,
               Activation act, Shape out) {
  return {std::move(name), LayerKind::Conv, {std::move(from)}, filters, kernel, stride, act, std::move(out)};
}

LayerSpec deconv(std::string name, std::string from, std::size_t filters, std::size_t kernel, std::size_t stride,
                 Activation act, Shape out) {
  return {std::move(name), LayerKind::Deconv, {std::move(from)}, filters, kernel, stride, act, std::move(out)};
}

LayerSpec flatten(std::string name, std::string from, std::size_t size) {
  return {std::move(name), LayerKind::Flatten, {std::move(from)}, 0, 0, 1, Activation::Linear, {size}};
}

LayerSpec reshape(std::string name, std::string from, Shape out) {
  return {std::move(name), LayerKind::Reshape, {std::move(from)}, 0, 0, 1, Activation::Linear, std::move(out)};
}

LayerSpec concat(std::string name, std::string a, std::string b, Shape out) {
  return {std::move(name), LayerKind::Concat, {std::move(a), std::move(b)}, 0, 0, 1, Activation::Linear, std::move(out)};
}

}  // namespace

Architecture vae_architecture() {
  constexpr auto relu = Activation::Relu;
  constexpr auto linear = Activation::Linear;
  Architecture a;
  a.kind = ModelKind::Vae;
  a.encoder = {
      input("plot", {1, 30, 30}),
      conv("enc_conv1", "plot", 8, 4, 2, relu, {8, 15, 15}),
      conv("enc_conv2", "enc_conv1", 16, 4, 2, relu, {16, 8, 8}),
      // Declared 8x8 -> 8x8, so this layer runs at stride 1.
      conv("enc_conv3", "enc_conv2", 16, 4, 1, relu, {16, 8, 8}),
      flatten("enc_flatten", "enc_conv3", 1024),
      dense("enc_dense", "enc_flatten", 8, relu),
      dense("mu", "enc_dense", 2, linear),
      dense("log_var", "enc_dense", 2, linear),
  };
  a.decoder = {
      input("z", {2}),
      dense("dec_dense", "z", 1024, relu),
      reshape("dec_reshape", "dec_dense", {16, 8, 8}),
      deconv("dec_deconv1", "dec_reshape", 16, 4, 2, relu, {16, 15, 15}),
      deconv("dec_deconv2", "dec_deconv1", 8, 4, 2, relu, {8, 30, 30}),
      deconv("recon", "dec_deconv2", 1, 3, 1, Activation::Sigmoid, {1, 30, 30}),
  };
  return a;
}

Architecture cvae_architecture(std::size_t label_dim) {
  constexpr auto relu = Activation::Relu;
  constexpr auto linear = Activation::Linear;
  Architecture a;
  a.kind = ModelKind::Cvae;
  a.label_dim = label_dim;
  a.encoder = {
      input("plot", {1, 30, 30}),
      input("label", {label_dim}),
      dense("enc_label_dense", "label", 900, linear),
      reshape("enc_label_map", "enc_label_dense", {1, 30, 30}),
      concat("enc_concat", "plot", "enc_label_map", {2, 30, 30}),
      conv("enc_conv1", "enc_concat", 16, 4, 2, relu, {16, 15, 15}),
      conv("enc_conv2", "enc_conv1", 32, 4, 2, relu, {32, 8, 8}),
      flatten("enc_flatten", "enc_conv2", 2048),
      dense("enc_dense", "enc_flatten", 16, relu),
      dense("mu", "enc_dense", 2, linear),
      dense("log_var", "enc_dense", 2, linear),
  };
  a.decoder = {
      input("z", {2}),
      input("label", {label_dim}),
      concat("dec_concat", "z", "label", {2 + label_dim}),
      dense("dec_dense", "dec_concat", 2048, relu),
      reshape("dec_reshape", "dec_dense", {32, 8, 8}),
      deconv("dec_deconv1", "dec_reshape", 32, 4, 2, relu, {32, 15, 15}),
      deconv("dec_deconv2", "dec_deconv1", 16, 4, 2, relu, {16, 30, 30}),
      deconv("recon", "dec_deconv2", 1, 4, 1, Activation::Sigmoid, {1, 30, 30}),
  };
  return a;
}

TrainConfig default_train_config(ModelKind kind) {
  TrainConfig c;
  c.batch_size = kind == ModelKind::Vae ? 23 : 64;
  return c;
}

// ---------------------------------------------------------------------------
// Shape resolution

namespace {

struct Resolved {
  Shape shape;
  kernels::ConvGeometry geometry;
  Shape weight_shape;
  Shape bias_shape;
};

std::size_t volume(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

[[noreturn]] void shape_error(const LayerSpec& l, const std::string& what) {
  throw Error(ErrorCode::ShapeMismatch, "layer '" + l.name + "': " + what);
}

std::map<std::string, Resolved> resolve_stack(const std::vector<LayerSpec>& stack) {
  std::map<std::string, Resolved> out;
  auto in_shape = [&](const LayerSpec& l, std::size_t i) -> const Shape& {
    if (i >= l.inputs.size()) shape_error(l, "missing input");
    auto it = out.find(l.inputs[i]);
    if (it == out.end()) shape_error(l, "unknown input '" + l.inputs[i] + "'");
    return it->second.shape;
  };

  for (const auto& l : stack) {
    if (out.contains(l.name)) shape_error(l, "duplicate layer name");
    Resolved r;
    switch (l.kind) {
      case LayerKind::Input:
        r.shape = l.output_shape;
        break;
      case LayerKind::Dense: {
        const Shape& in = in_shape(l, 0);
        if (in.size() != 1) shape_error(l, "dense input must be a vector, got " + ad::shape_string(in));
        r.shape = {l.filters};
        r.weight_shape = {l.filters, in[0]};
        r.bias_shape = {l.filters};
        break;
      }
      case LayerKind::Conv: {
        const Shape& in = in_shape(l, 0);
        if (in.size() != 3 || l.output_shape.size() != 3) shape_error(l, "convolution needs C,H,W shapes");
        const long h = static_cast<long>(in[1]), w = static_cast<long>(in[2]);
        const long oh = static_cast<long>(l.output_shape[1]), ow = static_cast<long>(l.output_shape[2]);
        const long k = static_cast<long>(l.kernel), s = static_cast<long>(l.stride);
        const long pad_h = std::max((oh - 1) * s + k - h, 0L);
        const long pad_w = std::max((ow - 1) * s + k - w, 0L);
        if ((h + pad_h - k) / s + 1 != oh || (w + pad_w - k) / s + 1 != ow) {
          shape_error(l, "cannot reach declared " + ad::shape_string(l.output_shape) + " from " + ad::shape_string(in));
        }
        r.shape = {l.filters, l.output_shape[1], l.output_shape[2]};
        r.geometry = {in[0], in[1], in[2], l.filters, l.output_shape[1], l.output_shape[2], l.kernel, l.kernel,
                      l.stride, static_cast<std::size_t>(pad_h / 2), static_cast<std::size_t>(pad_w / 2)};
        r.weight_shape = {l.filters, in[0], l.kernel, l.kernel};
        r.bias_shape = {l.filters};
        break;
      }
      case LayerKind::Deconv: {
        const Shape& in = in_shape(l, 0);
        if (in.size() != 3 || l.output_shape.size() != 3) shape_error(l, "transposed convolution needs C,H,W shapes");
        const std::size_t full_h = (in[1] - 1) * l.stride + l.kernel;
        const std::size_t full_w = (in[2] - 1) * l.stride + l.kernel;
        const std::size_t oh = l.output_shape[1], ow = l.output_shape[2];
        if (full_h < oh || full_w < ow) {
          shape_error(l, "cannot reach declared " + ad::shape_string(l.output_shape) + " from " + ad::shape_string(in));
        }
        r.shape = {l.filters, oh, ow};
        r.geometry = {l.filters, oh, ow, in[0], in[1], in[2], l.kernel, l.kernel,
                      l.stride, (full_h - oh) / 2, (full_w - ow) / 2};
        r.weight_shape = {in[0], l.filters, l.kernel, l.kernel};
        r.bias_shape = {l.filters};
        break;
      }
      case LayerKind::Flatten:
        r.shape = {volume(in_shape(l, 0))};
        break;
      case LayerKind::Reshape:
        if (volume(in_shape(l, 0)) != volume(l.output_shape)) shape_error(l, "reshape changes the element count");
        r.shape = l.output_shape;
        break;
      case LayerKind::Concat: {
        const Shape& a = in_shape(l, 0);
        const Shape& b = in_shape(l, 1);
        if (a.size() != b.size() || !std::equal(a.begin() + 1, a.end(), b.begin() + 1)) {
          shape_error(l, "cannot concatenate " + ad::shape_string(a) + " and " + ad::shape_string(b));
        }
        r.shape = a;
        r.shape[0] += b[0];
        break;
      }
    }
    if (!l.output_shape.empty() && r.shape != l.output_shape) {
      shape_error(l, "realized " + ad::shape_string(r.shape) + " but declared " + ad::shape_string(l.output_shape));
    }
    out.emplace(l.name, std::move(r));
  }
  return out;
}

void apply_activation(Tape& t, Var& v, Activation a) {
  if (a == Activation::Relu) v = ad::relu(t, v);
  if (a == Activation::Sigmoid) v = ad::sigmoid(t, v);
}

// Runs a stack on the tape. `values` must already hold every Input layer.
void run_stack(Tape& t, const std::vector<LayerSpec>& stack, const std::map<std::string, Resolved>& resolved,
               const std::map<std::string, Var>& params, std::map<std::string, Var>& values, std::size_t batch) {
  auto param = [&](const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw Error(ErrorCode::ShapeMismatch, "missing parameter '" + name + "'");
    return it->second;
  };
  for (const auto& l : stack) {
    if (l.kind == LayerKind::Input) {
      if (!values.contains(l.name)) throw Error(ErrorCode::ShapeMismatch, "input '" + l.name + "' not supplied");
      continue;
    }
    const Resolved& r = resolved.at(l.name);
    const Var x = values.at(l.inputs[0]);
    Var y;
    switch (l.kind) {
      case LayerKind::Dense:
        y = ad::linear(t, x, param(l.name + ".weight"), param(l.name + ".bias"));
        break;
      case LayerKind::Conv:
        y = ad::conv2d(t, x, param(l.name + ".weight"), param(l.name + ".bias"), r.geometry);
        break;
      case LayerKind::Deconv:
        y = ad::conv_transpose2d(t, x, param(l.name + ".weight"), param(l.name + ".bias"), r.geometry);
        break;
      case LayerKind::Flatten:
      case LayerKind::Reshape: {
        Shape s{batch};
        s.insert(s.end(), r.shape.begin(), r.shape.end());
        y = ad::reshape(t, x, s);
        break;
      }
      case LayerKind::Concat:
        y = ad::concat(t, x, values.at(l.inputs[1]));
        break;
      case LayerKind::Input:
        break;
    }
    apply_activation(t, y, l.activation);
    values[l.name] = y;
  }
}

Tensor plot_batch(std::span<const RecurrencePlot> plots, std::size_t side) {
  Tensor x({plots.size(), 1, side, side});
  for (std::size_t i = 0; i < plots.size(); ++i) {
    if (plots[i].r.size() != side * side) {
      throw Error(ErrorCode::ShapeMismatch, "plot has " + std::to_string(plots[i].r.size()) + " entries, expected " +
                                                std::to_string(side * side));
    }
    std::copy(plots[i].r.begin(), plots[i].r.end(), x.data.begin() + static_cast<std::ptrdiff_t>(i * side * side));
  }
  return x;
}

Tensor one_hot_batch(std::span<const Label> labels, std::size_t label_dim) {
  Tensor y({labels.size(), label_dim});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= label_dim) {
      throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(labels[i]) + " outside one-hot width");
    }
    y.data[i * label_dim + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  return y;
}

void check_labels(const Architecture& a, std::size_t batch, std::span<const Label> labels) {
  if (a.kind == ModelKind::Cvae && labels.size() != batch) {
    throw Error(ErrorCode::ShapeMismatch, "CVAE needs one label per sample");
  }
  if (a.kind == ModelKind::Vae && !labels.empty()) {
    throw Error(ErrorCode::ShapeMismatch, "VAE takes no labels");
  }
}

std::map<std::string, Var> constant_params(Tape& t, const GenerativeModel& m) {
  std::map<std::string, Var> out;
  for (const auto& [name, tensor] : m.parameters()) out.emplace(name, t.constant(tensor));
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Model

GenerativeModel::GenerativeModel(Architecture arch) : arch_(std::move(arch)) {
  if (arch_.kind == ModelKind::Cvae && arch_.label_dim == 0) {
    throw Error(ErrorCode::ShapeMismatch, "CVAE needs a label dimension");
  }
  config = default_train_config(arch_.kind);
  for (const auto* stack : {&arch_.encoder, &arch_.decoder}) {
    const auto resolved = resolve_stack(*stack);
    for (const auto& l : *stack) {
      const Resolved& r = resolved.at(l.name);
      if (r.weight_shape.empty()) continue;
      if (params_.contains(l.name + ".weight")) {
        throw Error(ErrorCode::ShapeMismatch, "layer name '" + l.name + "' used in both stacks");
      }
      params_.emplace(l.name + ".weight", Tensor(r.weight_shape));
      params_.emplace(l.name + ".bias", Tensor(r.bias_shape));
    }
  }
  const auto enc = resolve_stack(arch_.encoder);
  const auto dec = resolve_stack(arch_.decoder);
  const Shape latent{arch_.latent_dim};
  const Shape image{1, arch_.side, arch_.side};
  if (!enc.contains("plot") || enc.at("plot").shape != image || !enc.contains("mu") ||
      enc.at("mu").shape != latent || !enc.contains("log_var") || enc.at("log_var").shape != latent ||
      !dec.contains("z") || dec.at("z").shape != latent || !dec.contains("recon") || dec.at("recon").shape != image) {
    throw Error(ErrorCode::ShapeMismatch, "architecture inputs/outputs do not match plot side and latent size");
  }
}

void GenerativeModel::initialize(std::uint64_t seed) {
  Rng rng(seed);
  for (auto& [name, tensor] : params_) {
    if (name.ends_with(".bias")) {
      std::fill(tensor.data.begin(), tensor.data.end(), 0.0);
      continue;
    }
    const Shape& s = tensor.shape;
    double fan_in = 0, fan_out = 0;
    if (s.size() == 2) {
      fan_out = static_cast<double>(s[0]);
      fan_in = static_cast<double>(s[1]);
    } else {
      const double field = static_cast<double>(s[2] * s[3]);
      fan_out = static_cast<double>(s[0]) * field;
      fan_in = static_cast<double>(s[1]) * field;
    }
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : tensor.data) v = (2.0 * rng.uniform() - 1.0) * limit;
  }
}

// ---------------------------------------------------------------------------
// Forward passes

std::vector<Encoding> encode_batch(const GenerativeModel& model, std::span<const RecurrencePlot> plots,
                                   std::span<const Label> labels) {
  const Architecture& a = model.architecture();
  check_labels(a, plots.size(), labels);
  if (plots.empty()) return {};
  for (const auto& p : plots) {
    for (double v : p.r) {
      if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorCode::DomainError, "plot entries must lie in [0, 1]");
    }
  }
  Tape t;
  std::map<std::string, Var> values{{"plot", t.constant(plot_batch(plots, a.side))}};
  if (a.kind == ModelKind::Cvae) values["label"] = t.constant(one_hot_batch(labels, a.label_dim));
  run_stack(t, a.encoder, resolve_stack(a.encoder), constant_params(t, model), values, plots.size());
  const auto& mu = t.value(values.at("mu")).data;
  const auto& lv = t.value(values.at("log_var")).data;
  std::vector<Encoding> out(plots.size());
  for (std::size_t i = 0; i < plots.size(); ++i) {
    out[i].mu.assign(mu.begin() + static_cast<std::ptrdiff_t>(i * a.latent_dim),
                     mu.begin() + static_cast<std::ptrdiff_t>((i + 1) * a.latent_dim));
    out[i].log_var.assign(lv.begin() + static_cast<std::ptrdiff_t>(i * a.latent_dim),
                          lv.begin() + static_cast<std::ptrdiff_t>((i + 1) * a.latent_dim));
  }
  return out;
}

std::vector<RecurrencePlot> decode_batch(const GenerativeModel& model, std::span<const double> z,
                                         std::span<const Label> labels, Label output_label) {
  const Architecture& a = model.architecture();
  if (z.size() % a.latent_dim != 0) throw Error(ErrorCode::ShapeMismatch, "z is not a multiple of the latent size");
  const std::size_t batch = z.size() / a.latent_dim;
  check_labels(a, batch, labels);
  if (batch == 0) return {};
  Tape t;
  std::map<std::string, Var> values{{"z", t.constant(Tensor({batch, a.latent_dim}, {z.begin(), z.end()}))}};
  if (a.kind == ModelKind::Cvae) values["label"] = t.constant(one_hot_batch(labels, a.label_dim));
  run_stack(t, a.decoder, resolve_stack(a.decoder), constant_params(t, model), values, batch);
  const auto& recon = t.value(values.at("recon")).data;
  const std::size_t px = a.side * a.side;
  std::vector<RecurrencePlot> out(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    out[i].n = a.side;
    out[i].label = a.kind == ModelKind::Cvae ? labels[i] : output_label;
    out[i].r.assign(recon.begin() + static_cast<std::ptrdiff_t>(i * px),
                    recon.begin() + static_cast<std::ptrdiff_t>((i + 1) * px));
  }
  return out;
}

Encoding encode(const GenerativeModel& model, const RecurrencePlot& plot, std::optional<Label> label) {
  std::vector<Label> labels;
  if (label) labels.push_back(*label);
  return encode_batch(model, std::span<const RecurrencePlot>(&plot, 1), labels).front();
}

std::vector<double> reparameterize(std::span<const double> mu, std::span<const double> log_var,
                                   std::span<const double> eps) {
  if (mu.size() != log_var.size() || mu.size() != eps.size()) {
    throw Error(ErrorCode::ShapeMismatch, "reparameterize: size mismatch");
  }
  std::vector<double> z(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) z[i] = mu[i] + std::exp(0.5 * log_var[i]) * eps[i];
  return z;
}

RecurrencePlot decode(const GenerativeModel& model, std::span<const double> z, std::optional<Label> label) {
  if (!std::all_of(z.begin(), z.end(), [](double v) { return std::isfinite(v); })) {
    throw Error(ErrorCode::DomainError, "z must be finite");
  }
  std::vector<Label> labels;
  if (label) labels.push_back(*label);
  return decode_batch(model, z, labels).front();
}

LossTerms loss(std::span<const double> x, std::span<const double> x_hat, std::span<const double> mu,
               std::span<const double> log_var, std::size_t batch) {
  if (x.size() != x_hat.size() || mu.size() != log_var.size() || batch == 0) {
    throw Error(ErrorCode::ShapeMismatch, "loss: size mismatch");
  }
  Tape t;
  const Var pred = t.constant(Tensor({batch, x_hat.size() / batch}, {x_hat.begin(), x_hat.end()}));
  const Var target = t.constant(Tensor({batch, x.size() / batch}, {x.begin(), x.end()}));
  const Var m = t.constant(Tensor({batch, mu.size() / batch}, {mu.begin(), mu.end()}));
  const Var lv = t.constant(Tensor({batch, log_var.size() / batch}, {log_var.begin(), log_var.end()}));
  LossTerms out;
  out.bce = t.value(ad::binary_cross_entropy(t, pred, target)).data[0];
  out.kl = t.value(ad::kl_divergence(t, m, lv)).data[0];
  out.total = out.bce + out.kl;
  if (!std::isfinite(out.total)) throw Error(ErrorCode::NonFiniteLoss, "loss is not finite");
  return out;
}

ObjectiveGraph build_objective(Tape& t, const GenerativeModel& model, const std::map<std::string, Var>& params,
                               std::span<const RecurrencePlot> plots, std::span<const Label> labels,
                               std::span<const double> eps) {
  const Architecture& a = model.architecture();
  const std::size_t batch = plots.size();
  check_labels(a, batch, labels);
  if (eps.size() != batch * a.latent_dim) throw Error(ErrorCode::ShapeMismatch, "eps must be [batch, latent]");

  const Var x = t.constant(plot_batch(plots, a.side));
  std::map<std::string, Var> enc{{"plot", x}};
  Var label{};
  if (a.kind == ModelKind::Cvae) {
    label = t.constant(one_hot_batch(labels, a.label_dim));
    enc["label"] = label;
  }
  run_stack(t, a.encoder, resolve_stack(a.encoder), params, enc, batch);

  ObjectiveGraph g;
  g.mu = enc.at("mu");
  g.log_var = enc.at("log_var");
  const Var noise = t.constant(Tensor({batch, a.latent_dim}, {eps.begin(), eps.end()}));
  std::map<std::string, Var> dec{{"z", ad::reparameterize(t, g.mu, g.log_var, noise)}};
  if (a.kind == ModelKind::Cvae) dec["label"] = label;
  run_stack(t, a.decoder, resolve_stack(a.decoder), params, dec, batch);
  g.recon = dec.at("recon");
  g.bce = ad::binary_cross_entropy(t, g.recon, x);
  g.kl = ad::kl_divergence(t, g.mu, g.log_var);
  g.total = ad::add(t, g.bce, g.kl);
  return g;
}

// ---------------------------------------------------------------------------
// Training and sampling

namespace {

// Keep activation buffers on the heap between batches instead of mapping and
// unmapping them on every step.
void tune_allocator() {
#if defined(__GLIBC__)
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
  });
#endif
}

}  // namespace

GenerativeModel train(const Architecture& arch, std::span<const RecurrencePlot> samples,
                      std::span<const Label> labels, const TrainConfig& config) {
  tune_allocator();
  if (samples.empty()) throw Error(ErrorCode::EmptyInput, "no training samples");
  if (config.batch_size == 0) throw Error(ErrorCode::ConfigError, "batch size must be positive");
  GenerativeModel model(arch);
  check_labels(arch, samples.size(), labels);
  model.config = config;
  model.initialize(derive_seed(config.seed, "init"));

  std::map<std::string, std::vector<double>> m1, m2;
  for (const auto& [name, p] : model.parameters()) {
    m1[name].assign(p.size(), 0.0);
    m2[name].assign(p.size(), 0.0);
  }

  Rng rng(derive_seed(config.seed, "batches"));
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    LossTerms sum;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t batch = std::min(config.batch_size, order.size() - start);
      std::vector<RecurrencePlot> xb;
      std::vector<Label> lb;
      xb.reserve(batch);
      for (std::size_t i = 0; i < batch; ++i) {
        xb.push_back(samples[order[start + i]]);
        if (!labels.empty()) lb.push_back(labels[order[start + i]]);
      }
      std::vector<double> eps(batch * arch.latent_dim);
      for (double& e : eps) e = rng.normal();

      Tape t;
      std::map<std::string, Var> params;
      for (const auto& [name, p] : model.parameters()) params.emplace(name, t.variable(p));
      const ObjectiveGraph g = build_objective(t, model, params, xb, lb, eps);
      const double total = t.value(g.total).data[0];
      if (!std::isfinite(total)) {
        throw Error(ErrorCode::NonFiniteLoss, "loss diverged at epoch " + std::to_string(epoch + 1));
      }
      sum.total += total * static_cast<double>(batch);
      sum.bce += t.value(g.bce).data[0] * static_cast<double>(batch);
      sum.kl += t.value(g.kl).data[0] * static_cast<double>(batch);
      t.backward(g.total);

      ++step;
      const double corr = std::sqrt(1.0 - std::pow(config.beta2, static_cast<double>(step))) /
                          (1.0 - std::pow(config.beta1, static_cast<double>(step)));
      const double lr_t = config.learning_rate * corr;
      for (auto& [name, p] : model.parameters()) {
        const auto& grad = t.grad(params.at(name)).data;
        auto& a1 = m1[name];
        auto& a2 = m2[name];
        for (std::size_t i = 0; i < p.size(); ++i) {
          a1[i] = config.beta1 * a1[i] + (1.0 - config.beta1) * grad[i];
          a2[i] = config.beta2 * a2[i] + (1.0 - config.beta2) * grad[i] * grad[i];
          p.data[i] -= lr_t * a1[i] / (std::sqrt(a2[i]) + config.epsilon);
        }
      }
    }
    const double n = static_cast<double>(samples.size());
    model.training_log.push_back({sum.total / n, sum.bce / n, sum.kl / n});
  }
  return model;
}

std::vector<RecurrencePlot> generate(const GenerativeModel& model, std::size_t count, std::optional<Label> label,
                                     std::uint64_t seed, Label vae_label) {
  const Architecture& a = model.architecture();
  if (a.kind == ModelKind::Cvae && !label) throw Error(ErrorCode::ConfigError, "CVAE generation needs a label");
  std::vector<RecurrencePlot> out;
  out.reserve(count);
  Rng rng(seed);
  constexpr std::size_t chunk = 256;
  for (std::size_t start = 0; start < count; start += chunk) {
    const std::size_t batch = std::min(chunk, count - start);
    std::vector<double> z(batch * a.latent_dim);
    for (double& v : z) v = rng.normal();
    std::vector<Label> labels;
    if (a.kind == ModelKind::Cvae) labels.assign(batch, *label);
    auto plots = decode_batch(model, z, labels, label.value_or(vae_label));
    for (auto& p : plots) {
      p.synthetic = true;
      out.push_back(std::move(p));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Input: return "input";
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv: return "conv";
    case LayerKind::Deconv: return "deconv";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Reshape: return "reshape";
    case LayerKind::Concat: return "concat";
  }
  return "input";
}

LayerKind layer_kind(const std::string& s) {
  static const std::map<std::string, LayerKind> table{
      {"input", LayerKind::Input},     {"dense", LayerKind::Dense},     {"conv", LayerKind::Conv},
      {"deconv", LayerKind::Deconv},   {"flatten", LayerKind::Flatten}, {"reshape", LayerKind::Reshape},
      {"concat", LayerKind::Concat}};
  auto it = table.find(s);
  if (it == table.end()) throw Error(ErrorCode::IoError, "unknown layer kind '" + s + "'");
  return it->second;
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Linear: return "linear";
    case Activation::Relu: return "relu";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "linear";
}

Activation activation(const std::string& s) {
  if (s == "linear") return Activation::Linear;
  if (s == "relu") return Activation::Relu;
  if (s == "sigmoid") return Activation::Sigmoid;
  throw Error(ErrorCode::IoError, "unknown activation '" + s + "'");
}

}  // namespace

nlohmann::json to_json(const LayerSpec& spec) {
  return {{"name", spec.name},       {"kind", to_string(spec.kind)},   {"inputs", spec.inputs},
          {"filters", spec.filters}, {"kernel", spec.kernel},          {"stride", spec.stride},
          {"activation", to_string(spec.activation)}, {"output_shape", spec.output_shape}};
}

LayerSpec layer_spec_from_json(const nlohmann::json& j) {
  LayerSpec s;
  s.name = j.at("name").get<std::string>();
  s.kind = layer_kind(j.at("kind").get<std::string>());
  s.inputs = j.at("inputs").get<std::vector<std::string>>();
  s.filters = j.at("filters").get<std::size_t>();
  s.kernel = j.at("kernel").get<std::size_t>();
  s.stride = j.at("stride").get<std::size_t>();
  s.activation = activation(j.at("activation").get<std::string>());
  s.output_shape = j.at("output_shape").get<std::vector<std::size_t>>();
  return s;
}

void save_model(const std::filesystem::path& path, const GenerativeModel& model) {
  const Architecture& a = model.architecture();
  Container c;
  c.manifest["kind"] = "generative_model";
  c.manifest["model_kind"] = a.kind == ModelKind::Vae ? "vae" : "cvae";
  c.manifest["side"] = a.side;
  c.manifest["latent_dim"] = a.latent_dim;
  c.manifest["label_dim"] = a.label_dim;
  for (const auto& l : a.encoder) c.manifest["encoder"].push_back(to_json(l));
  for (const auto& l : a.decoder) c.manifest["decoder"].push_back(to_json(l));
  const TrainConfig& tc = model.config;
  c.manifest["config"] = {{"learning_rate", tc.learning_rate}, {"batch_size", tc.batch_size},
                          {"epochs", tc.epochs},               {"beta1", tc.beta1},
                          {"beta2", tc.beta2},                 {"epsilon", tc.epsilon},
                          {"seed", tc.seed}};
  c.manifest["training_log"] = nlohmann::json::array();
  for (const auto& e : model.training_log) {
    c.manifest["training_log"].push_back({{"total", e.total}, {"bce", e.bce}, {"kl", e.kl}});
  }
  for (const auto& [name, t] : model.parameters()) c.blobs[name] = Blob{t.shape, t.data};
  write_container(path, c);
}

GenerativeModel load_model(const std::filesystem::path& path) {
  const Container c = read_container(path);
  if (c.manifest.value("kind", "") != "generative_model") {
    throw Error(ErrorCode::IoError, path.string() + " does not hold a generative model");
  }
  Architecture a;
  a.kind = c.manifest.at("model_kind").get<std::string>() == "vae" ? ModelKind::Vae : ModelKind::Cvae;
  a.side = c.manifest.at("side").get<std::size_t>();
  a.latent_dim = c.manifest.at("latent_dim").get<std::size_t>();
  a.label_dim = c.manifest.at("label_dim").get<std::size_t>();
  for (const auto& l : c.manifest.at("encoder")) a.encoder.push_back(layer_spec_from_json(l));
  for (const auto& l : c.manifest.at("decoder")) a.decoder.push_back(layer_spec_from_json(l));
  GenerativeModel model(std::move(a));
  const auto& cfg = c.manifest.at("config");
  model.config.learning_rate = cfg.at("learning_rate").get<double>();
  model.config.batch_size = cfg.at("batch_size").get<std::size_t>();
  model.config.epochs = cfg.at("epochs").get<std::size_t>();
  model.config.beta1 = cfg.at("beta1").get<double>();
  model.config.beta2 = cfg.at("beta2").get<double>();
  model.config.epsilon = cfg.at("epsilon").get<double>();
  model.config.seed = cfg.at("seed").get<std::uint64_t>();
  for (const auto& e : c.manifest.at("training_log")) {
    model.training_log.push_back({e.at("total").get<double>(), e.at("bce").get<double>(), e.at("kl").get<double>()});
  }
  for (auto& [name, t] : model.parameters()) {
    auto it = c.blobs.find(name);
    if (it == c.blobs.end()) throw Error(ErrorCode::IoError, "model file lacks parameter '" + name + "'");
    if (it->second.shape != t.shape) throw Error(ErrorCode::ShapeMismatch, "parameter '" + name + "' has wrong shape");
    t.data = it->second.data;
  }
  return model;
}

}  // namespace imbpos
