#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "imbpos/autodiff.hpp"
#include "imbpos/dataset.hpp"

namespace imbpos {

enum class LayerKind { Input, Dense, Conv, Deconv, Flatten, Reshape, Concat };
enum class Activation { Linear, Relu, Sigmoid };

// One row of a model table. `output_shape` is the declared per-sample shape,
// channels first: {C, H, W} for images, {units} for vectors. Convolution
// padding and transposed-convolution cropping are derived from the declared
// shape (extra row/column on the bottom/right), and construction fails if a
// layer cannot realize it.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Input;
  std::vector<std::string> inputs;
  std::size_t filters = 0;  // output channels or dense units
  std::size_t kernel = 0;
  std::size_t stride = 1;
  Activation activation = Activation::Linear;
  std::vector<std::size_t> output_shape;
};

enum class ModelKind { Vae, Cvae };

// Encoder stack ends in layers named "mu" and "log_var"; the decoder stack in
// "recon". Inputs are named "plot", "label" and "z".
struct Architecture {
  ModelKind kind = ModelKind::Vae;
  std::size_t side = 30;
  std::size_t latent_dim = 2;
  std::size_t label_dim = 0;
  std::vector<LayerSpec> encoder;
  std::vector<LayerSpec> decoder;
};

Architecture vae_architecture();
Architecture cvae_architecture(std::size_t label_dim = kDefaultSpaces);

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 23;
  std::size_t epochs = 500;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
  std::uint64_t seed = 0;
};

// Batch size 23 for the VAE, 64 for the CVAE.
TrainConfig default_train_config(ModelKind kind);

struct LossTerms {
  double total = 0.0;
  double bce = 0.0;
  double kl = 0.0;
};

class GenerativeModel {
 public:
  // Validates every declared layer shape and allocates zero parameters.
  explicit GenerativeModel(Architecture arch);

  // Glorot-uniform weights, zero biases.
  void initialize(std::uint64_t seed);

  const Architecture& architecture() const { return arch_; }
  ModelKind kind() const { return arch_.kind; }
  std::map<std::string, ad::Tensor>& parameters() { return params_; }
  const std::map<std::string, ad::Tensor>& parameters() const { return params_; }

  std::vector<LossTerms> training_log;
  TrainConfig config;

 private:
  Architecture arch_;
  std::map<std::string, ad::Tensor> params_;
};

struct Encoding {
  std::vector<double> mu;
  std::vector<double> log_var;
};

// Inputs and outputs of a batched pass; labels are class ids turned into
// one-hot rows internally (CVAE only).
std::vector<Encoding> encode_batch(const GenerativeModel& model, std::span<const RecurrencePlot> plots,
                                   std::span<const Label> labels = {});
// Each z row is latent_dim wide; returns one plot per row with values in (0, 1).
std::vector<RecurrencePlot> decode_batch(const GenerativeModel& model, std::span<const double> z,
                                         std::span<const Label> labels = {}, Label output_label = 0);

Encoding encode(const GenerativeModel& model, const RecurrencePlot& plot, std::optional<Label> label = {});
std::vector<double> reparameterize(std::span<const double> mu, std::span<const double> log_var,
                                   std::span<const double> eps);
RecurrencePlot decode(const GenerativeModel& model, std::span<const double> z, std::optional<Label> label = {});

// Batched loss over `batch` samples stored back to back.
LossTerms loss(std::span<const double> x, std::span<const double> x_hat, std::span<const double> mu,
               std::span<const double> log_var, std::size_t batch);

// Builds the training objective on a tape. Exposed for gradient checking:
// `params` maps parameter names to tape variables; eps is [batch, latent].
struct ObjectiveGraph {
  ad::Var total;
  ad::Var bce;
  ad::Var kl;
  ad::Var recon;
  ad::Var mu;
  ad::Var log_var;
};
ObjectiveGraph build_objective(ad::Tape& tape, const GenerativeModel& model,
                               const std::map<std::string, ad::Var>& params, std::span<const RecurrencePlot> plots,
                               std::span<const Label> labels, std::span<const double> eps);

// VAE: `labels` must be empty. CVAE: one label per sample.
GenerativeModel train(const Architecture& arch, std::span<const RecurrencePlot> samples,
                      std::span<const Label> labels, const TrainConfig& config);

// z ~ N(0, I) decoded; CVAE requires `label`. Plots carry `label` (or
// `vae_label` for the VAE) and synthetic = true.
std::vector<RecurrencePlot> generate(const GenerativeModel& model, std::size_t count, std::optional<Label> label,
                                     std::uint64_t seed, Label vae_label = 0);

void save_model(const std::filesystem::path& path, const GenerativeModel& model);
GenerativeModel load_model(const std::filesystem::path& path);

nlohmann::json to_json(const LayerSpec& spec);
LayerSpec layer_spec_from_json(const nlohmann::json& j);

}  // namespace imbpos
