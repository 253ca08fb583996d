#include "imbpos/harness.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <deque>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>
#include <tuple>

#include "imbpos/classic.hpp"
#include "imbpos/error.hpp"
#include "imbpos/generative.hpp"
#include "imbpos/rng.hpp"

namespace imbpos {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Method m) {
  switch (m) {
    case Method::None: return "none";
    case Method::Smote: return "smote";
    case Method::Adasyn: return "adasyn";
    case Method::Vae: return "vae";
    case Method::Cvae: return "cvae";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  std::string t = s;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (t == "none") return Method::None;
  if (t == "smote") return Method::Smote;
  if (t == "adasyn") return Method::Adasyn;
  if (t == "vae") return Method::Vae;
  if (t == "cvae") return Method::Cvae;
  throw Error(ErrorCode::ConfigError, "unknown method '" + s + "'");
}

// ---------------------------------------------------------------------------
// Plan

ExperimentPlan plan_from_json(const json& j) {
  ExperimentPlan p;
  p.spaces = j.value("spaces", p.spaces);
  if (j.contains("minority_counts")) p.minority_counts = j["minority_counts"].get<std::vector<std::size_t>>();
  p.trials = j.value("trials", p.trials);
  p.ratio = j.value("ratio", p.ratio);
  p.seed = j.value("seed", p.seed);
  if (j.contains("methods")) {
    p.methods.clear();
    for (const auto& m : j["methods"]) p.methods.push_back(method_from_string(m.get<std::string>()));
  }
  if (j.contains("pinned")) {
    p.pinned.clear();
    for (const auto& [key, sets] : j["pinned"].items()) {
      auto& dst = p.pinned[std::stoul(key)];
      for (const auto& s : sets) dst.push_back(s.get<std::set<Label>>());
    }
  }
  p.epochs = j.value("epochs", p.epochs);
  p.scale = j.value("scale", p.scale);
  p.train_fraction = j.value("train_fraction", p.train_fraction);
  p.neighbors = j.value("neighbors", p.neighbors);
  if (j.contains("averaging")) {
    const auto a = j["averaging"].get<std::string>();
    if (a == "macro") p.averaging = Averaging::Macro;
    else if (a == "micro") p.averaging = Averaging::Micro;
    else throw Error(ErrorCode::ConfigError, "averaging must be macro or micro");
  }
  if (j.contains("svm")) {
    const auto& s = j["svm"];
    p.svm.c = s.value("c", p.svm.c);
    if (s.contains("gamma") && !s["gamma"].is_null()) p.svm.gamma = s["gamma"].get<double>();
    p.svm.tolerance = s.value("tolerance", p.svm.tolerance);
    p.svm.max_iterations = s.value("max_iterations", p.svm.max_iterations);
    p.svm.cache_mb = s.value("cache_mb", p.svm.cache_mb);
  }
  p.jobs = j.value("jobs", p.jobs);
  p.save_models = j.value("save_models", p.save_models);
  if (j.contains("corpus") && !j["corpus"].is_null()) p.corpus = j["corpus"].get<std::string>();
  if (j.contains("generator")) p.generator = generator_config_from_json(j["generator"]);
  if (p.trials == 0) throw Error(ErrorCode::ConfigError, "trials must be positive");
  if (p.ratio < 1) throw Error(ErrorCode::ConfigError, "ratio must be at least 1");
  return p;
}

json to_json(const ExperimentPlan& p) {
  json j;
  j["spaces"] = p.spaces;
  j["minority_counts"] = p.minority_counts;
  j["trials"] = p.trials;
  j["ratio"] = p.ratio;
  j["seed"] = p.seed;
  j["methods"] = json::array();
  for (Method m : p.methods) j["methods"].push_back(to_string(m));
  j["pinned"] = json::object();
  for (const auto& [count, sets] : p.pinned) j["pinned"][std::to_string(count)] = sets;
  j["epochs"] = p.epochs;
  j["scale"] = p.scale;
  j["train_fraction"] = p.train_fraction;
  j["neighbors"] = p.neighbors;
  j["averaging"] = p.averaging == Averaging::Macro ? "macro" : "micro";
  j["svm"] = {{"c", p.svm.c},
              {"gamma", p.svm.gamma ? json(*p.svm.gamma) : json(nullptr)},
              {"tolerance", p.svm.tolerance},
              {"max_iterations", p.svm.max_iterations},
              {"cache_mb", p.svm.cache_mb}};
  j["jobs"] = p.jobs;
  j["save_models"] = p.save_models;
  j["corpus"] = p.corpus.empty() ? json(nullptr) : json(p.corpus.string());
  j["generator"] = to_json(p.generator);
  return j;
}

// ---------------------------------------------------------------------------
// Minority sets

namespace {

void subsets(int spaces, std::size_t count, int start, std::set<Label>& cur, std::vector<std::set<Label>>& out) {
  if (cur.size() == count) {
    out.push_back(cur);
    return;
  }
  for (int l = start; l < spaces; ++l) {
    cur.insert(l);
    subsets(spaces, count, l + 1, cur, out);
    cur.erase(l);
  }
}

}  // namespace

std::vector<std::set<Label>> pick_minority_sets(std::size_t count, std::size_t trials, int spaces,
                                                std::uint64_t seed, const std::vector<std::set<Label>>& pinned) {
  if (spaces < 2) throw Error(ErrorCode::ConfigError, "need at least two spaces");
  if (count == 0 || count >= static_cast<std::size_t>(spaces)) {
    throw Error(ErrorCode::ConfigError, "minority count must be in [1, spaces - 1]");
  }
  std::vector<std::set<Label>> all;
  std::set<Label> cur;
  subsets(spaces, count, 0, cur, all);
  if (trials > all.size()) {
    throw Error(ErrorCode::TooManyTrials, std::to_string(trials) + " trials but only " + std::to_string(all.size()) +
                                              " distinct minority sets of size " + std::to_string(count));
  }

  std::vector<std::set<Label>> out;
  for (const auto& s : pinned) {
    if (out.size() == trials) break;
    if (s.size() != count) throw Error(ErrorCode::ConfigError, "pinned minority set has the wrong size");
    for (Label l : s) {
      if (l < 0 || l >= spaces) throw Error(ErrorCode::LabelOutOfRange, "pinned label " + std::to_string(l));
    }
    if (std::find(out.begin(), out.end(), s) != out.end()) {
      throw Error(ErrorCode::ConfigError, "pinned minority sets repeat");
    }
    out.push_back(s);
  }
  std::vector<std::set<Label>> rest;
  for (const auto& s : all) {
    if (std::find(out.begin(), out.end(), s) == out.end()) rest.push_back(s);
  }
  Rng rng(seed);
  rng.shuffle(rest);
  for (std::size_t i = 0; out.size() < trials; ++i) out.push_back(rest[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Data preparation

PreparedData prepare(const std::vector<RawFingerprint>& corpus, std::size_t per_class, double train_fraction,
                     std::uint64_t seed) {
  if (corpus.empty()) throw Error(ErrorCode::EmptyInput, "empty corpus");
  const std::vector<RawFingerprint> rows =
      per_class == 0 ? corpus : cap_per_class(corpus, per_class, derive_seed(seed, "cap"));
  std::vector<Label> labels(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) labels[i] = rows[i].label;
  const auto [tr, te] = stratified_split_indices(labels, train_fraction, derive_seed(seed, "split"));

  std::vector<RawFingerprint> train_raw;
  train_raw.reserve(tr.size());
  for (std::size_t i : tr) train_raw.push_back(rows[i]);

  PreparedData out;
  out.scaling = fit_scaling(train_raw);
  out.train.reserve(tr.size());
  out.test.reserve(te.size());
  for (std::size_t i : tr) out.train.add(to_recurrence_plot(standardize(rows[i], out.scaling)));
  for (std::size_t i : te) out.test.add(to_recurrence_plot(standardize(rows[i], out.scaling)));
  return out;
}

// ---------------------------------------------------------------------------
// Trials

std::array<std::optional<double>, 9> relative_changes(const GroupReport& value, const GroupReport& baseline) {
  const auto v = flatten(value);
  const auto b = flatten(baseline);
  std::array<std::optional<double>, 9> out;
  for (std::size_t i = 0; i < 9; ++i) {
    if (b[i] != 0.0) out[i] = relative_change(v[i], b[i]);
  }
  return out;
}

namespace {

std::size_t target_count(const LabeledSet& set) {
  std::size_t target = 0;
  for (const auto& [label, n] : set.class_counts()) target = std::max(target, n);
  return target;
}

std::vector<RecurrencePlot> plots_of(const LabeledSet& set, Label label) {
  std::vector<RecurrencePlot> out;
  for (const auto& p : set.plots()) {
    if (p.label == label) out.push_back(p);
  }
  return out;
}

json loss_json(const GenerativeModel& m) {
  if (m.training_log.empty()) return nullptr;
  const auto& first = m.training_log.front();
  const auto& last = m.training_log.back();
  return {{"first_loss", first.total}, {"final_loss", last.total}, {"final_bce", last.bce}, {"final_kl", last.kl}};
}

void check_side(const LabeledSet& set, const Architecture& arch) {
  if (set.plot_side() != arch.side) {
    throw Error(ErrorCode::ShapeMismatch, "generative models expect " + std::to_string(arch.side) + "x" +
                                              std::to_string(arch.side) + " plots, got side " +
                                              std::to_string(set.plot_side()));
  }
}

}  // namespace

LabeledSet rebalance(const LabeledSet& imbalanced, Method method, const TrialSettings& settings,
                     std::uint64_t seed, json* log) {
  switch (method) {
    case Method::None:
      return imbalanced;
    case Method::Smote:
    case Method::Adasyn:
      return oversample(imbalanced, method == Method::Smote ? ClassicMethod::Smote : ClassicMethod::Adasyn,
                        balance_request(imbalanced, seed, settings.neighbors));
    case Method::Vae:
    case Method::Cvae:
      break;
  }

  const std::size_t target = target_count(imbalanced);
  LabeledSet out = imbalanced;

  if (method == Method::Vae) {
    const Architecture arch = vae_architecture();
    check_side(imbalanced, arch);
    for (const auto& [label, n] : imbalanced.class_counts()) {
      if (n >= target) continue;
      TrainConfig cfg = default_train_config(ModelKind::Vae);
      cfg.epochs = settings.epochs;
      cfg.seed = derive_seed(seed, "vae", static_cast<std::uint64_t>(label));
      const auto samples = plots_of(imbalanced, label);
      const GenerativeModel model = train(arch, samples, {}, cfg);
      if (settings.model_dir) save_model(*settings.model_dir / ("vae_" + std::to_string(label) + ".imb"), model);
      const auto gen = generate(model, target - n, std::nullopt,
                                derive_seed(seed, "generate", static_cast<std::uint64_t>(label)), label);
      for (const auto& p : gen) out.add(p);
      if (log) (*log)["vae_" + std::to_string(label)] = loss_json(model);
    }
    return out;
  }

  Label max_label = 0;
  bool deficit = false;
  for (const auto& [label, n] : imbalanced.class_counts()) {
    max_label = std::max(max_label, label);
    deficit = deficit || n < target;
  }
  if (!deficit) return out;
  const Architecture arch = cvae_architecture(static_cast<std::size_t>(max_label) + 1);
  check_side(imbalanced, arch);
  TrainConfig cfg = default_train_config(ModelKind::Cvae);
  cfg.epochs = settings.epochs;
  cfg.seed = derive_seed(seed, "cvae");
  std::vector<Label> labels;
  labels.reserve(imbalanced.size());
  for (const auto& p : imbalanced.plots()) labels.push_back(p.label);
  const GenerativeModel model = train(arch, imbalanced.plots(), labels, cfg);
  if (settings.model_dir) save_model(*settings.model_dir / "cvae.imb", model);
  for (const auto& [label, n] : imbalanced.class_counts()) {
    if (n >= target) continue;
    const auto gen = generate(model, target - n, label, derive_seed(seed, "generate", static_cast<std::uint64_t>(label)));
    for (const auto& p : gen) out.add(p);
  }
  if (log) (*log)["cvae"] = loss_json(model);
  return out;
}

namespace {

GroupReport evaluate(const LabeledSet& train, const LabeledSet& test, const std::set<Label>& minority,
                     const TrialSettings& settings) {
  const SvmModel model = fit(train, settings.svm);
  const auto predicted = predict(model, test);
  std::vector<Label> truth;
  truth.reserve(test.size());
  Label max_label = 0;
  for (const auto& p : test.plots()) {
    truth.push_back(p.label);
    max_label = std::max(max_label, p.label);
  }
  for (Label l : model.classes) max_label = std::max(max_label, l);
  const auto cm = confusion(truth, predicted, static_cast<std::size_t>(max_label) + 1);
  return group_report(cm, minority, settings.averaging);
}

}  // namespace

TrialResult run_trial(const LabeledSet& train, const LabeledSet& test, const std::set<Label>& minority,
                      const std::vector<Method>& methods, const TrialSettings& settings) {
  TrialResult r;
  r.minority = minority;
  r.seeds["trial"] = settings.seed;
  const std::uint64_t imbalance_seed = derive_seed(settings.seed, "imbalance");
  r.seeds["imbalance"] = imbalance_seed;

  const LabeledSet imbalanced = make_imbalanced(train, minority, settings.ratio, imbalance_seed);
  r.imbalanced_counts = imbalanced.class_counts();
  r.baseline = evaluate(imbalanced, test, minority, settings);

  r.seeds["methods"] = json::object();
  r.seeds["training"] = json::object();
  for (Method m : methods) {
    MethodOutcome o;
    o.method = m;
    const std::string name = to_string(m);
    std::uint64_t seed = derive_seed(settings.seed, "method", static_cast<std::uint64_t>(m));
    r.seeds["methods"][name] = seed;
    json log = json::object();
    std::optional<LabeledSet> balanced;
    for (int attempt = 0; attempt < 2 && !balanced; ++attempt) {
      try {
        balanced = rebalance(imbalanced, m, settings, seed, &log);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NonFiniteLoss) throw;
        o.error = e.what();
        seed = derive_seed(seed, "retry");
        r.seeds["methods"][name + "_retry"] = seed;
      }
    }
    if (!balanced) {
      o.failed = true;
    } else {
      o.error.clear();
      o.synthetic = balanced->size() - imbalanced.size();
      o.report = evaluate(*balanced, test, minority, settings);
    }
    if (!log.empty()) r.seeds["training"][name] = log;
    r.outcomes.push_back(std::move(o));
  }
  return r;
}

json to_json(const TrialResult& r) {
  json j;
  j["minority_count"] = r.minority_count;
  j["trial"] = r.trial;
  j["minority"] = r.minority;
  j["imbalanced_counts"] = json::object();
  for (const auto& [label, n] : r.imbalanced_counts) j["imbalanced_counts"][std::to_string(label)] = n;
  j["baseline"] = to_json(r.baseline);
  j["outcomes"] = json::array();
  for (const auto& o : r.outcomes) {
    json oj{{"method", to_string(o.method)}, {"failed", o.failed}, {"synthetic", o.synthetic}};
    if (!o.error.empty()) oj["error"] = o.error;
    if (!o.failed) {
      oj["report"] = to_json(o.report);
      const auto ch = relative_changes(o.report, r.baseline);
      json cj = json::object();
      for (std::size_t i = 0; i < 9; ++i) cj[kReportColumns[i]] = ch[i] ? json(*ch[i]) : json(nullptr);
      oj["relative_change"] = cj;
    }
    j["outcomes"].push_back(oj);
  }
  j["seeds"] = r.seeds;
  return j;
}

TrialResult trial_from_json(const json& j) {
  TrialResult r;
  r.minority_count = j.at("minority_count").get<std::size_t>();
  r.trial = j.at("trial").get<std::size_t>();
  r.minority = j.at("minority").get<std::set<Label>>();
  for (const auto& [key, n] : j.at("imbalanced_counts").items()) r.imbalanced_counts[std::stoi(key)] = n.get<std::size_t>();
  r.baseline = group_report_from_json(j.at("baseline"));
  for (const auto& oj : j.at("outcomes")) {
    MethodOutcome o;
    o.method = method_from_string(oj.at("method").get<std::string>());
    o.failed = oj.at("failed").get<bool>();
    o.synthetic = oj.value("synthetic", std::size_t{0});
    o.error = oj.value("error", std::string{});
    if (!o.failed) o.report = group_report_from_json(oj.at("report"));
    r.outcomes.push_back(std::move(o));
  }
  r.seeds = j.value("seeds", json::object());
  return r;
}

// ---------------------------------------------------------------------------
// Tables

std::vector<TableRow> aggregate(const std::vector<TrialResult>& trials, const std::vector<Method>& methods) {
  std::set<std::size_t> counts;
  for (const auto& t : trials) counts.insert(t.minority_count);
  std::vector<TableRow> rows;
  for (std::size_t count : counts) {
    for (Method m : methods) {
      TableRow row;
      row.minority_count = count;
      row.method = m;
      std::array<double, 9> sum{};
      std::array<bool, 9> defined;
      defined.fill(true);
      for (const auto& t : trials) {
        if (t.minority_count != count) continue;
        for (const auto& o : t.outcomes) {
          if (o.method != m) continue;
          if (o.failed) {
            ++row.failed;
            continue;
          }
          ++row.trials;
          const auto ch = relative_changes(o.report, t.baseline);
          for (std::size_t i = 0; i < 9; ++i) {
            if (ch[i]) sum[i] += *ch[i];
            else defined[i] = false;
          }
        }
      }
      for (std::size_t i = 0; i < 9; ++i) {
        if (row.trials > 0 && defined[i]) row.mean_change[i] = sum[i] / static_cast<double>(row.trials);
      }
      rows.push_back(row);
    }
  }
  return rows;
}

namespace {

// Cells whose baseline is 0 in some trial.
constexpr const char* kUndefined = "\u2014";

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  std::string s = os.str();
  if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') s.erase(0, 1);
  return s;
}

}  // namespace

std::string render_csv(const std::vector<TableRow>& rows) {
  std::ostringstream os;
  os << "minority_count,method";
  for (const char* c : kReportColumns) os << ',' << c;
  os << ",trials,failed\n";
  for (const auto& r : rows) {
    os << r.minority_count << ',' << to_string(r.method);
    for (const auto& v : r.mean_change) os << ',' << (v ? fixed(*v, 6) : std::string(kUndefined));
    os << ',' << r.trials << ',' << r.failed << '\n';
  }
  return os.str();
}

std::string render_text(const std::vector<TableRow>& rows) {
  static const char* const groups[3] = {"minority", "majority", "overall"};
  static const char* const cells[3] = {"P", "R", "F1"};
  constexpr int w = 9;
  std::ostringstream os;
  os << "Mean relative change over trials (percent)\n\n";
  os << std::left << std::setw(5) << "m" << std::setw(8) << "method";
  for (const char* g : groups) os << std::right << std::setw(3 * w) << g;
  os << '\n' << std::left << std::setw(13) << "";
  for (int g = 0; g < 3; ++g) {
    for (const char* c : cells) os << std::right << std::setw(w) << c;
  }
  os << '\n' << std::string(13 + 9 * w, '-') << '\n';
  std::size_t last = 0;
  for (const auto& r : rows) {
    if (last != 0 && r.minority_count != last) os << '\n';
    last = r.minority_count;
    os << std::left << std::setw(5) << r.minority_count << std::setw(8) << to_string(r.method);
    for (const auto& v : r.mean_change) {
      std::string s = v ? fixed(*v * 100.0, 2) : std::string(kUndefined);
      if (v && *v > 0) s = "+" + s;
      os << std::right << std::setw(w) << s;
    }
    if (r.failed > 0) os << "  (" << r.failed << " failed)";
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Plan execution

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  f << text;
  if (!f) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

std::string trial_file(std::size_t count, std::size_t trial) {
  return "m" + std::to_string(count) + "_t" + std::to_string(trial) + ".json";
}

struct Job {
  std::size_t count;
  std::size_t trial;
  std::set<Label> minority;
  std::uint64_t seed;
};

}  // namespace

PlanOutput run_plan(const ExperimentPlan& plan, const fs::path& out_dir, ProgressFn progress) {
  std::vector<RawFingerprint> corpus;
  if (!plan.corpus.empty()) {
    CsvSchema schema;
    schema.spaces = plan.spaces;
    corpus = load_csv(plan.corpus, schema);
  } else {
    corpus = synth_corpus(plan.generator, derive_seed(plan.seed, "corpus"));
  }
  const PreparedData data = prepare(corpus, plan.scale, plan.train_fraction, derive_seed(plan.seed, "prepare"));

  std::vector<Job> jobs;
  for (std::size_t count : plan.minority_counts) {
    const auto pinned = plan.pinned.count(count) ? plan.pinned.at(count) : std::vector<std::set<Label>>{};
    const auto sets = pick_minority_sets(count, plan.trials, plan.spaces, derive_seed(plan.seed, "minority", count),
                                         pinned);
    const std::uint64_t count_seed = derive_seed(plan.seed, "experiment", count);
    for (std::size_t t = 0; t < sets.size(); ++t) jobs.push_back({count, t, sets[t], derive_seed(count_seed, "trial", t)});
  }

  if (!out_dir.empty()) {
    fs::create_directories(out_dir / "trials");
    json pj = to_json(plan);
    pj["train_size"] = data.train.size();
    pj["test_size"] = data.test.size();
    pj["trials_run"] = json::array();
    for (const auto& j : jobs) {
      pj["trials_run"].push_back({{"minority_count", j.count}, {"trial", j.trial}, {"minority", j.minority}, {"seed", j.seed}});
    }
    write_text(out_dir / "plan.json", pj.dump(2) + "\n");
  }

  std::vector<TrialResult> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::size_t> finished;
  std::size_t running = 0;
  std::exception_ptr failure;

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) break;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (failure) break;
      }
      const Job& job = jobs[i];
      try {
        TrialSettings s;
        s.ratio = plan.ratio;
        s.epochs = plan.epochs;
        s.neighbors = plan.neighbors;
        s.averaging = plan.averaging;
        s.svm = plan.svm;
        s.seed = job.seed;
        if (plan.save_models && !out_dir.empty()) {
          s.model_dir = out_dir / "models" / ("m" + std::to_string(job.count) + "_t" + std::to_string(job.trial));
          fs::create_directories(*s.model_dir);
        }
        TrialResult r = run_trial(data.train, data.test, job.minority, plan.methods, s);
        r.minority_count = job.count;
        r.trial = job.trial;
        std::lock_guard<std::mutex> lock(mu);
        results[i] = std::move(r);
        finished.push_back(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!failure) failure = std::current_exception();
        break;
      }
      cv.notify_one();
    }
    std::lock_guard<std::mutex> lock(mu);
    --running;
    cv.notify_one();
  };

  // The calling thread is the single writer of per-trial files.
  auto collect = [&](std::size_t i) {
    const TrialResult& r = results[i];
    if (!out_dir.empty()) write_text(out_dir / "trials" / trial_file(r.minority_count, r.trial), to_json(r).dump(2) + "\n");
    if (progress) {
      std::string msg = "minority_count=" + std::to_string(r.minority_count) + " trial=" + std::to_string(r.trial) +
                        " minority={";
      bool first = true;
      for (Label l : r.minority) {
        msg += (first ? "" : ",") + std::to_string(l);
        first = false;
      }
      progress(msg + "} done");
    }
  };

  const std::size_t n_workers = std::max<std::size_t>(1, std::min(plan.jobs, jobs.size()));
  running = n_workers;
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < n_workers; ++w) threads.emplace_back(worker);
  for (;;) {
    std::unique_lock<std::mutex> lock(mu);
    cv.wait(lock, [&] { return !finished.empty() || running == 0; });
    if (finished.empty()) break;
    const std::size_t i = finished.front();
    finished.pop_front();
    lock.unlock();
    try {
      collect(i);
    } catch (...) {
      std::lock_guard<std::mutex> guard(mu);
      if (!failure) failure = std::current_exception();
    }
  }
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);

  PlanOutput out;
  out.trials = std::move(results);
  out.rows = aggregate(out.trials, plan.methods);
  if (!out_dir.empty()) {
    write_text(out_dir / "results.csv", render_csv(out.rows));
    write_text(out_dir / "results.txt", render_text(out.rows));
  }
  return out;
}

PlanOutput report_from_dir(const fs::path& out_dir) {
  std::ifstream pf(out_dir / "plan.json");
  if (!pf) throw Error(ErrorCode::IoError, "cannot read " + (out_dir / "plan.json").string());
  const json pj = json::parse(pf);
  std::vector<Method> methods;
  for (const auto& m : pj.at("methods")) methods.push_back(method_from_string(m.get<std::string>()));

  PlanOutput out;
  const fs::path dir = out_dir / "trials";
  if (fs::exists(dir)) {
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.path().extension() != ".json") continue;
      std::ifstream f(entry.path());
      out.trials.push_back(trial_from_json(json::parse(f)));
    }
  }
  std::sort(out.trials.begin(), out.trials.end(), [](const TrialResult& a, const TrialResult& b) {
    return std::tie(a.minority_count, a.trial) < std::tie(b.minority_count, b.trial);
  });
  out.rows = aggregate(out.trials, methods);
  return out;
}

}  // namespace imbpos
