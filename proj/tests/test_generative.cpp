#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cmath>
#include <filesystem>

#include "imbpos/error.hpp"
#include "imbpos/generative.hpp"
#include "imbpos/rng.hpp"
#include "model_oracle.hpp"

using namespace imbpos;
namespace fs = std::filesystem;

namespace {

bool same_parameters(const GenerativeModel& a, const GenerativeModel& b) {
  if (a.parameters().size() != b.parameters().size()) return false;
  for (const auto& [name, p] : a.parameters()) {
    const auto& q = b.parameters().at(name);
    if (p.shape != q.shape) return false;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (std::bit_cast<std::uint64_t>(p.data[i]) != std::bit_cast<std::uint64_t>(q.data[i])) return false;
    }
  }
  return true;
}

RecurrencePlot zero_plot() {
  RecurrencePlot p;
  p.n = 30;
  p.r.assign(900, 0.0);
  return p;
}

}  // namespace

TEST_CASE("declared layer shapes and parameter shapes") {
  const GenerativeModel vae(vae_architecture());
  const auto& pv = vae.parameters();
  CHECK(pv.at("enc_conv1.weight").shape == std::vector<std::size_t>{8, 1, 4, 4});
  CHECK(pv.at("enc_conv3.weight").shape == std::vector<std::size_t>{16, 16, 4, 4});
  CHECK(pv.at("enc_dense.weight").shape == std::vector<std::size_t>{8, 1024});
  CHECK(pv.at("mu.weight").shape == std::vector<std::size_t>{2, 8});
  CHECK(pv.at("dec_dense.weight").shape == std::vector<std::size_t>{1024, 2});
  CHECK(pv.at("recon.weight").shape == std::vector<std::size_t>{8, 1, 3, 3});

  const GenerativeModel cvae(cvae_architecture());
  const auto& pc = cvae.parameters();
  CHECK(pc.at("enc_label_dense.weight").shape == std::vector<std::size_t>{900, 6});
  CHECK(pc.at("enc_conv1.weight").shape == std::vector<std::size_t>{16, 2, 4, 4});
  CHECK(pc.at("enc_dense.weight").shape == std::vector<std::size_t>{16, 2048});
  CHECK(pc.at("dec_dense.weight").shape == std::vector<std::size_t>{2048, 8});
  CHECK(pc.at("recon.weight").shape == std::vector<std::size_t>{16, 1, 4, 4});

  // A shape the stack cannot reach is rejected.
  auto bad = vae_architecture();
  bad.decoder.back().output_shape = {1, 40, 40};
  CHECK_THROWS_AS(GenerativeModel{bad}, Error);
  auto bad_channels = vae_architecture();
  bad_channels.encoder[1].output_shape = {9, 15, 15};
  CHECK_THROWS_AS(GenerativeModel{bad_channels}, Error);
  auto bad_flat = vae_architecture();
  bad_flat.decoder[2].output_shape = {16, 8, 9};
  CHECK_THROWS_AS(GenerativeModel{bad_flat}, Error);
}

TEST_CASE("zero parameters: mu = log_var = 0 and decode = 0.5") {
  for (const auto& arch : {vae_architecture(), cvae_architecture()}) {
    const GenerativeModel m(arch);
    const std::optional<Label> label =
        arch.kind == ModelKind::Cvae ? std::optional<Label>(3) : std::nullopt;
    const auto e = encode(m, zero_plot(), label);
    CHECK(e.mu == std::vector<double>{0.0, 0.0});
    CHECK(e.log_var == std::vector<double>{0.0, 0.0});
    const auto r = decode(m, std::vector<double>{0.7, -1.2}, label);
    REQUIRE(r.r.size() == 900);
    CHECK(r.n == 30);
    for (double v : r.r) CHECK(v == 0.5);
  }
}

TEST_CASE("label rules") {
  const GenerativeModel vae(vae_architecture());
  const GenerativeModel cvae(cvae_architecture());
  CHECK_THROWS_AS(encode(vae, zero_plot(), 1), Error);
  CHECK_THROWS_AS(encode(cvae, zero_plot()), Error);
  CHECK_THROWS_AS(encode(cvae, zero_plot(), 6), Error);
  RecurrencePlot small;
  small.n = 4;
  small.r.assign(16, 0.0);
  CHECK_THROWS_AS(encode(vae, small), Error);
  CHECK_THROWS_AS(generate(cvae, 3, std::nullopt, 1), Error);
}

TEST_CASE("forward passes match the plain-loop oracle") {
  Rng rng(11);
  const auto plots = oracle::random_plots(rng, 3);
  for (const auto& arch : {vae_architecture(), cvae_architecture()}) {
    const auto m = oracle::random_model(arch, 5);
    for (std::size_t i = 0; i < plots.size(); ++i) {
      const Label label = static_cast<Label>(i * 2);
      const std::optional<Label> opt = arch.kind == ModelKind::Cvae ? std::optional<Label>(label) : std::nullopt;
      const auto got = encode(m, plots[i], opt);
      const auto [mu, log_var] = oracle::encode(m, plots[i], label);
      for (std::size_t d = 0; d < 2; ++d) {
        CHECK(std::abs(got.mu[d] - mu[d]) <= 1e-6);
        CHECK(std::abs(got.log_var[d] - log_var[d]) <= 1e-6);
      }
      const std::vector<double> z{rng.normal(), rng.normal()};
      const auto recon = decode(m, z, opt);
      const auto expected = oracle::decode(m, z, label);
      double worst = 0;
      for (std::size_t p = 0; p < 900; ++p) worst = std::max(worst, std::abs(recon.r[p] - expected[p]));
      CHECK(worst <= 1e-6);
    }
  }
}

TEST_CASE("batched passes agree with single-sample passes") {
  Rng rng(12);
  const auto plots = oracle::random_plots(rng, 5);
  const std::vector<Label> labels{0, 1, 2, 3, 4};
  const auto m = oracle::random_model(cvae_architecture(), 6);
  const auto batch = encode_batch(m, plots, labels);
  for (std::size_t i = 0; i < plots.size(); ++i) {
    const auto single = encode(m, plots[i], labels[i]);
    CHECK(batch[i].mu[0] == doctest::Approx(single.mu[0]).epsilon(1e-12));
    CHECK(batch[i].log_var[1] == doctest::Approx(single.log_var[1]).epsilon(1e-12));
  }
}

TEST_CASE("reparameterize examples") {
  const std::vector<double> mu{0.3, -2.0};
  CHECK(reparameterize(mu, std::vector<double>{1.0, -1.0}, std::vector<double>{0.0, 0.0}) == mu);
  const auto z = reparameterize(mu, std::vector<double>{0.0, 0.0}, std::vector<double>{1.0, 1.0});
  CHECK(z[0] == doctest::Approx(1.3));
  CHECK(z[1] == doctest::Approx(-1.0));
  const auto z3 = reparameterize(mu, std::vector<double>{2 * std::log(3.0), 0.0}, std::vector<double>{1.0, 0.0});
  CHECK(z3[0] == doctest::Approx(3.3).epsilon(1e-14));
  CHECK(z3[1] == -2.0);
}

TEST_CASE("loss examples and KL non-negativity") {
  const std::vector<double> half(900, 0.5);
  const auto a = loss(half, half, std::vector<double>{0.0, 0.0}, std::vector<double>{0.0, 0.0}, 1);
  CHECK(a.kl == 0.0);
  CHECK(std::abs(a.bce - 900 * std::log(2.0)) <= 1e-9);
  CHECK(a.total == a.bce + a.kl);
  const auto b = loss(half, half, std::vector<double>{1.0, 1.0}, std::vector<double>{0.0, 0.0}, 1);
  CHECK(b.kl == 1.0);

  // Averaged over the batch.
  std::vector<double> two(1800, 0.5);
  const auto c = loss(two, two, std::vector<double>{1, 1, 0, 0}, std::vector<double>{0, 0, 0, 0}, 2);
  CHECK(c.kl == doctest::Approx(0.5));
  CHECK(c.bce == doctest::Approx(900 * std::log(2.0)));

  Rng rng(13);
  for (int i = 0; i < 2000; ++i) {
    const std::vector<double> mu{6 * rng.uniform() - 3, 6 * rng.uniform() - 3};
    const std::vector<double> lv{10 * rng.uniform() - 5, 10 * rng.uniform() - 5};
    CHECK(loss(half, half, mu, lv, 1).kl >= 0.0);
  }
}

TEST_CASE("analytic gradients match central differences") {
  Rng rng(14);
  const auto plots = oracle::random_plots(rng, 2);
  const std::vector<double> eps{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
  SUBCASE("vae") {
    const auto m = oracle::random_model(vae_architecture(), 21);
    const auto check = oracle::gradient_check(m, plots, {}, eps, 1e-4, 12);
    CHECK(check.checked > 100);
    CHECK(check.frozen < check.checked / 2);
    for (const auto& [name, err] : check.errors) {
      INFO(name);
      CHECK(err <= 1e-3);
    }
  }
  SUBCASE("cvae") {
    const auto m = oracle::random_model(cvae_architecture(), 22);
    const auto check = oracle::gradient_check(m, plots, {1, 4}, eps, 1e-4, 12);
    CHECK(check.checked > 100);
    CHECK(check.frozen < check.checked / 2);
    for (const auto& [name, err] : check.errors) {
      INFO(name);
      CHECK(err <= 1e-3);
    }
  }
}

TEST_CASE("training: zero epochs, determinism, and fitting a trivial set") {
  Rng rng(15);
  const auto one = oracle::random_plots(rng, 1, 2).front();
  const std::vector<RecurrencePlot> copies(68, one);

  TrainConfig cfg = default_train_config(ModelKind::Vae);
  cfg.seed = 3;
  cfg.epochs = 0;
  const auto untouched = train(vae_architecture(), copies, {}, cfg);
  GenerativeModel init(vae_architecture());
  init.initialize(derive_seed(3, "init"));
  CHECK(same_parameters(untouched, init));
  CHECK(untouched.training_log.empty());

  cfg.epochs = 50;
  const auto a = train(vae_architecture(), copies, {}, cfg);
  const auto b = train(vae_architecture(), copies, {}, cfg);
  CHECK(same_parameters(a, b));
  REQUIRE(a.training_log.size() == 50);
  CHECK(a.training_log.back().bce < a.training_log.front().bce);
  for (const auto& l : a.training_log) {
    CHECK(std::isfinite(l.total));
    CHECK(l.total == doctest::Approx(l.bce + l.kl));
  }

  cfg.seed = 4;
  CHECK_FALSE(same_parameters(a, train(vae_architecture(), copies, {}, cfg)));
}

TEST_CASE("cvae trains on labeled data") {
  Rng rng(16);
  std::vector<RecurrencePlot> plots;
  std::vector<Label> labels;
  for (Label c = 0; c < 3; ++c) {
    for (auto& p : oracle::random_plots(rng, 10, c)) {
      plots.push_back(p);
      labels.push_back(c);
    }
  }
  TrainConfig cfg = default_train_config(ModelKind::Cvae);
  cfg.epochs = 3;
  cfg.seed = 1;
  const auto m = train(cvae_architecture(3), plots, labels, cfg);
  CHECK(m.training_log.size() == 3);
  CHECK_THROWS_AS(train(cvae_architecture(3), plots, {}, cfg), Error);
  const auto g = generate(m, 5, 2, 9);
  REQUIRE(g.size() == 5);
  for (const auto& p : g) {
    CHECK(p.label == 2);
    CHECK(p.synthetic);
  }
}

TEST_CASE("generation") {
  const auto m = oracle::random_model(vae_architecture(), 31);
  CHECK(generate(m, 0, std::nullopt, 1).empty());
  const auto a = generate(m, 6732, std::nullopt, 7, 4);
  REQUIRE(a.size() == 6732);
  std::size_t outside = 0;
  for (const auto& p : a) {
    CHECK(p.label == 4);
    CHECK(p.synthetic);
    for (double v : p.r) outside += !(v > 0.0 && v < 1.0);
  }
  CHECK(outside == 0);
  const auto b = generate(m, 300, std::nullopt, 7, 4);
  for (std::size_t i = 0; i < b.size(); ++i) CHECK(b[i].r == a[i].r);
}

TEST_CASE("model files round trip bit for bit") {
  auto m = oracle::random_model(cvae_architecture(), 41);
  m.training_log = {{3.5, 3.0, 0.5}, {2.5, 2.25, 0.25}};
  m.config.epochs = 17;
  const fs::path dir = fs::temp_directory_path() / "imbpos_test_generative";
  fs::create_directories(dir);
  save_model(dir / "m.imb", m);
  const auto r = load_model(dir / "m.imb");
  CHECK(same_parameters(m, r));
  CHECK(r.kind() == ModelKind::Cvae);
  CHECK(r.architecture().label_dim == 6);
  CHECK(r.config.epochs == 17);
  REQUIRE(r.training_log.size() == 2);
  CHECK(r.training_log[1].kl == 0.25);
  const std::vector<double> z{0.1, 0.2};
  CHECK(decode(r, z, 1).r == decode(m, z, 1).r);
}
