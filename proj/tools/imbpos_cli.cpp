// imbpos: synthetic corpus generation, preprocessing, generative-model
// training and the oversampling experiment.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "imbpos/dataset.hpp"
#include "imbpos/error.hpp"
#include "imbpos/generative.hpp"
#include "imbpos/harness.hpp"
#include "imbpos/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace imbpos;

namespace {

json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, path.string() + ": " + e.what());
  }
}

std::vector<std::size_t> parse_counts(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto dash = item.find('-');
    if (dash != std::string::npos) {
      const std::size_t a = std::stoul(item.substr(0, dash));
      const std::size_t b = std::stoul(item.substr(dash + 1));
      for (std::size_t v = a; v <= b; ++v) out.push_back(v);
    } else if (!item.empty()) {
      out.push_back(std::stoul(item));
    }
  }
  if (out.empty()) throw Error(ErrorCode::ConfigError, "empty minority count list");
  return out;
}

std::vector<Method> parse_methods(const std::string& s) {
  std::vector<Method> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(method_from_string(item));
  }
  if (out.empty()) throw Error(ErrorCode::ConfigError, "empty method list");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Oversampling experiments for RSS-based indoor positioning"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "Synthesize an RSS corpus (CSV)");
  std::string gen_config, gen_out = "corpus.csv";
  std::uint64_t gen_seed = 0;
  std::optional<std::size_t> gen_scale;
  gen->add_option("--config", gen_config, "Generator config (JSON); desk layout when omitted");
  gen->add_option("--seed", gen_seed, "Master seed");
  gen->add_option("--scale", gen_scale, "Samples per space");
  gen->add_option("--out", gen_out, "Output CSV");

  // prep
  auto* prep = app.add_subcommand("prep", "Split, scale and convert a corpus to recurrence plots");
  std::string prep_corpus, prep_out = "prepared";
  std::uint64_t prep_seed = 0;
  std::size_t prep_scale = 0;
  double prep_fraction = 0.8;
  int prep_spaces = kDefaultSpaces;
  prep->add_option("--corpus", prep_corpus, "Input CSV")->required();
  prep->add_option("--seed", prep_seed, "Master seed");
  prep->add_option("--scale", prep_scale, "Cap on samples per space (0 keeps all)");
  prep->add_option("--train-fraction", prep_fraction, "Train share per class");
  prep->add_option("--spaces", prep_spaces, "Number of spaces");
  prep->add_option("--out", prep_out, "Output directory");

  // train-gen
  auto* tg = app.add_subcommand("train-gen", "Train a VAE (one class) or a CVAE (all classes)");
  std::string tg_data, tg_kind = "vae", tg_out = "model.imb";
  std::optional<int> tg_label;
  std::uint64_t tg_seed = 0;
  std::optional<std::size_t> tg_epochs, tg_batch;
  std::size_t tg_generate = 0;
  std::string tg_generate_out = "generated.imb";
  tg->add_option("--data", tg_data, "Training set written by prep")->required();
  tg->add_option("--kind", tg_kind, "vae or cvae")->check(CLI::IsMember({"vae", "cvae"}));
  tg->add_option("--label", tg_label, "Class used to train the VAE / generated by the CVAE");
  tg->add_option("--seed", tg_seed, "Seed");
  tg->add_option("--epochs", tg_epochs, "Epochs");
  tg->add_option("--batch", tg_batch, "Batch size");
  tg->add_option("--out", tg_out, "Model file");
  tg->add_option("--generate", tg_generate, "Synthesize this many plots after training");
  tg->add_option("--generate-out", tg_generate_out, "Where the synthetic plots go");

  // run
  auto* run = app.add_subcommand("run", "Run the oversampling experiment");
  std::string run_config, run_out = "results", run_corpus, run_minority, run_methods, run_averaging;
  std::optional<std::uint64_t> run_seed;
  std::optional<int> run_ratio;
  std::optional<std::size_t> run_trials, run_epochs, run_scale, run_jobs;
  bool run_save_models = false;
  run->add_option("--config", run_config, "Experiment plan (JSON)");
  run->add_option("--seed", run_seed, "Master seed");
  run->add_option("--ratio", run_ratio, "Imbalance ratio");
  run->add_option("--minority-counts", run_minority, "e.g. 1-5 or 1,3,5");
  run->add_option("--trials", run_trials, "Trials per minority count");
  run->add_option("--methods", run_methods, "Comma list of smote,adasyn,vae,cvae,none");
  run->add_option("--epochs", run_epochs, "Generative training epochs");
  run->add_option("--scale", run_scale, "Samples per space kept before splitting");
  run->add_option("--corpus", run_corpus, "Corpus CSV (synthetic desk corpus when omitted)");
  run->add_option("--averaging", run_averaging, "macro or micro")->check(CLI::IsMember({"macro", "micro"}));
  run->add_option("--jobs", run_jobs, "Trials run concurrently");
  run->add_flag("--save-models", run_save_models, "Keep trained generative models");
  run->add_option("--out", run_out, "Output directory");

  // report
  auto* rep = app.add_subcommand("report", "Rebuild the result tables from a run directory");
  std::string rep_dir = "results";
  rep->add_option("--out", rep_dir, "Run directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      GeneratorConfig cfg = gen_config.empty() ? desk_generator_config() : generator_config_from_json(read_json(gen_config));
      if (gen_scale) cfg.samples_per_space = *gen_scale;
      const auto rows = synth_corpus(cfg, derive_seed(gen_seed, "corpus"));
      write_csv(gen_out, rows);
      std::cout << "wrote " << rows.size() << " rows to " << gen_out << "\n";
    } else if (prep->parsed()) {
      CsvSchema schema;
      schema.spaces = prep_spaces;
      const auto rows = load_csv(prep_corpus, schema);
      const PreparedData data = prepare(rows, prep_scale, prep_fraction, derive_seed(prep_seed, "prepare"));
      fs::create_directories(prep_out);
      save_labeled_set(fs::path(prep_out) / "train.imb", data.train);
      save_labeled_set(fs::path(prep_out) / "test.imb", data.test);
      std::ofstream(fs::path(prep_out) / "scaling.json")
          << json{{"min", data.scaling.min}, {"max", data.scaling.max}}.dump(2) << "\n";
      std::cout << "train " << data.train.size() << ", test " << data.test.size() << " -> " << prep_out << "\n";
    } else if (tg->parsed()) {
      const LabeledSet set = load_labeled_set(tg_data);
      const bool cvae = tg_kind == "cvae";
      const ModelKind kind = cvae ? ModelKind::Cvae : ModelKind::Vae;
      TrainConfig cfg = default_train_config(kind);
      cfg.seed = tg_seed;
      if (tg_epochs) cfg.epochs = *tg_epochs;
      if (tg_batch) cfg.batch_size = *tg_batch;

      std::vector<RecurrencePlot> samples;
      std::vector<Label> labels;
      Label max_label = 0;
      for (const auto& p : set.plots()) {
        max_label = std::max(max_label, p.label);
        if (!cvae && tg_label && p.label != *tg_label) continue;
        samples.push_back(p);
        labels.push_back(p.label);
      }
      if (!cvae) labels.clear();
      if (!cvae && !tg_label) throw Error(ErrorCode::ConfigError, "--label is required for the VAE");
      const Architecture arch = cvae ? cvae_architecture(static_cast<std::size_t>(max_label) + 1) : vae_architecture();
      const GenerativeModel model = train(arch, samples, labels, cfg);
      for (std::size_t e = 0; e < model.training_log.size(); ++e) {
        const auto& l = model.training_log[e];
        std::cout << "epoch " << e + 1 << " loss " << l.total << " bce " << l.bce << " kl " << l.kl << "\n";
      }
      save_model(tg_out, model);
      if (tg_generate > 0) {
        if (!tg_label) throw Error(ErrorCode::ConfigError, "--label is required to generate");
        const auto plots = generate(model, tg_generate, cvae ? std::optional<Label>(*tg_label) : std::nullopt,
                                    derive_seed(tg_seed, "generate"), *tg_label);
        LabeledSet out(Role::Train);
        for (const auto& p : plots) out.add(p);
        save_labeled_set(tg_generate_out, out);
      }
    } else if (run->parsed()) {
      ExperimentPlan plan = run_config.empty() ? ExperimentPlan{} : plan_from_json(read_json(run_config));
      if (run_seed) plan.seed = *run_seed;
      if (run_ratio) plan.ratio = *run_ratio;
      if (!run_minority.empty()) plan.minority_counts = parse_counts(run_minority);
      if (run_trials) plan.trials = *run_trials;
      if (!run_methods.empty()) plan.methods = parse_methods(run_methods);
      if (run_epochs) plan.epochs = *run_epochs;
      if (run_scale) plan.scale = *run_scale;
      if (!run_corpus.empty()) plan.corpus = run_corpus;
      if (!run_averaging.empty()) plan.averaging = run_averaging == "micro" ? Averaging::Micro : Averaging::Macro;
      if (run_jobs) plan.jobs = *run_jobs;
      if (run_save_models) plan.save_models = true;
      if (plan.corpus.empty() && plan.generator.samples_per_space < plan.scale) {
        plan.generator.samples_per_space = plan.scale;
      }
      const auto out = run_plan(plan, run_out, [](const std::string& msg) { std::cerr << msg << "\n"; });
      std::cout << render_text(out.rows);
    } else if (rep->parsed()) {
      const auto out = report_from_dir(rep_dir);
      std::ofstream(fs::path(rep_dir) / "results.csv") << render_csv(out.rows);
      std::ofstream(fs::path(rep_dir) / "results.txt") << render_text(out.rows);
      std::cout << render_text(out.rows);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
