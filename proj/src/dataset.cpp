#include "imbpos/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "imbpos/container.hpp"
#include "imbpos/error.hpp"
#include "imbpos/rng.hpp"

namespace imbpos {

void LabeledSet::add(RecurrencePlot plot) {
  if (!plots_.empty() && plot.n != plots_.front().n) {
    throw Error(ErrorCode::ShapeMismatch, "plot side differs from the rest of the set");
  }
  ++counts_[plot.label];
  plots_.push_back(std::move(plot));
}

std::size_t LabeledSet::count(Label label) const {
  auto it = counts_.find(label);
  return it == counts_.end() ? 0 : it->second;
}

std::set<Label> LabeledSet::labels() const {
  std::set<Label> out;
  for (const auto& [label, n] : counts_) out.insert(label);
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

bool parse_double(const std::string& text, double& out) {
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

}  // namespace

std::vector<RawFingerprint> load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) {
    throw Error(ErrorCode::EmptyFile, path.string() + " has no header");
  }
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_fields(line);

  std::vector<std::size_t> rss_col(schema.beacons, header.size());
  std::size_t label_col = header.size();
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string name = trim(header[c]);
    if (name == schema.label_column) {
      label_col = c;
      continue;
    }
    if (name.rfind(schema.rss_prefix, 0) == 0) {
      std::size_t idx = 0;
      const std::string digits = name.substr(schema.rss_prefix.size());
      auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), idx);
      if (ec == std::errc() && ptr == digits.data() + digits.size() && idx < schema.beacons) {
        rss_col[idx] = c;
      }
    }
  }
  if (label_col == header.size()) {
    throw Error(ErrorCode::MalformedRow, "header lacks column '" + schema.label_column + "'");
  }
  for (std::size_t i = 0; i < schema.beacons; ++i) {
    if (rss_col[i] == header.size()) {
      throw Error(ErrorCode::MalformedRow,
                  "header lacks column '" + schema.rss_prefix + std::to_string(i) + "'");
    }
  }

  std::vector<RawFingerprint> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (fields.size() != header.size()) {
      throw Error(ErrorCode::MalformedRow, where + " has " + std::to_string(fields.size()) +
                                               " columns, expected " + std::to_string(header.size()));
    }
    RawFingerprint row;
    row.rss.resize(schema.beacons);
    for (std::size_t i = 0; i < schema.beacons; ++i) {
      const std::string cell = trim(fields[rss_col[i]]);
      if (cell.empty()) {
        row.rss[i] = schema.sentinel;
      } else if (!parse_double(cell, row.rss[i])) {
        throw Error(ErrorCode::MalformedRow, where + " has non-numeric RSS '" + cell + "'");
      }
    }
    const std::string label_text = trim(fields[label_col]);
    long long label = 0;
    auto [ptr, ec] = std::from_chars(label_text.data(), label_text.data() + label_text.size(), label);
    if (ec != std::errc() || ptr != label_text.data() + label_text.size()) {
      throw Error(ErrorCode::MalformedRow, where + " has non-integer label '" + label_text + "'");
    }
    if (label < 0 || label >= schema.spaces) {
      throw Error(ErrorCode::UnknownLabel, where + " label " + label_text + " outside [0, " +
                                               std::to_string(schema.spaces - 1) + "]");
    }
    row.label = static_cast<Label>(label);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(ErrorCode::EmptyFile, path.string() + " has no data rows");
  return rows;
}

void write_csv(const std::filesystem::path& path, std::span<const RawFingerprint> rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  const std::size_t n = rows.empty() ? 0 : rows.front().rss.size();
  for (std::size_t i = 0; i < n; ++i) out << "rss_" << i << ',';
  out << "label\n";
  out << std::setprecision(17);
  for (const auto& row : rows) {
    for (double v : row.rss) out << v << ',';
    out << row.label << '\n';
  }
}

// ---------------------------------------------------------------------------
// Scaling and recurrence plots

ScalingParams fit_scaling(std::span<const RawFingerprint> train) {
  if (train.empty()) throw Error(ErrorCode::EmptyInput, "fit_scaling needs at least one row");
  const std::size_t n = train.front().rss.size();
  ScalingParams p{train.front().rss, train.front().rss};
  for (const auto& row : train) {
    if (row.rss.size() != n) throw Error(ErrorCode::ShapeMismatch, "rows differ in beacon count");
    for (std::size_t i = 0; i < n; ++i) {
      p.min[i] = std::min(p.min[i], row.rss[i]);
      p.max[i] = std::max(p.max[i], row.rss[i]);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (p.max[i] == p.min[i]) p.max[i] = p.min[i] + 1.0;
  }
  return p;
}

Fingerprint standardize(const RawFingerprint& raw, const ScalingParams& p) {
  if (raw.rss.size() != p.min.size()) {
    throw Error(ErrorCode::ShapeMismatch, "fingerprint and scaling differ in beacon count");
  }
  Fingerprint f;
  f.label = raw.label;
  f.x.resize(raw.rss.size());
  for (std::size_t i = 0; i < raw.rss.size(); ++i) {
    f.x[i] = std::clamp((raw.rss[i] - p.min[i]) / (p.max[i] - p.min[i]), 0.0, 1.0);
  }
  return f;
}

RecurrencePlot to_recurrence_plot(const Fingerprint& f) {
  const std::size_t n = f.x.size();
  for (double v : f.x) {
    if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorCode::DomainError, "fingerprint component outside [0, 1]");
  }
  RecurrencePlot plot;
  plot.n = n;
  plot.label = f.label;
  plot.r.resize(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) plot.r[i * n + j] = std::abs(f.x[i] - f.x[j]);
  }
  return plot;
}

// ---------------------------------------------------------------------------
// Splitting and imbalancing

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split_indices(
    std::span<const Label> labels, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(ErrorCode::ConfigError, "train_fraction must lie in (0, 1)");
  }
  std::map<Label, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

  Rng rng(seed);
  std::vector<std::size_t> train, test;
  for (auto& [label, idx] : by_class) {
    if (idx.size() < 2) {
      throw Error(ErrorCode::ClassTooSmall, "class " + std::to_string(label) + " has fewer than 2 samples");
    }
    rng.shuffle(idx);
    const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(idx.size()) * train_fraction));
    train.insert(train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    test.insert(test.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  }
  return {std::move(train), std::move(test)};
}

std::pair<LabeledSet, LabeledSet> split_train_test(std::span<const RecurrencePlot> plots,
                                                   double train_fraction, std::uint64_t seed) {
  std::vector<Label> labels;
  labels.reserve(plots.size());
  for (const auto& p : plots) labels.push_back(p.label);
  auto [train_idx, test_idx] = stratified_split_indices(labels, train_fraction, seed);
  LabeledSet train(Role::Train), test(Role::Test);
  train.reserve(train_idx.size());
  test.reserve(test_idx.size());
  for (std::size_t i : train_idx) train.add(plots[i]);
  for (std::size_t i : test_idx) test.add(plots[i]);
  return {std::move(train), std::move(test)};
}

LabeledSet make_imbalanced(const LabeledSet& train, const std::set<Label>& minority, int ratio,
                           std::uint64_t seed) {
  if (ratio < 1) throw Error(ErrorCode::ConfigError, "imbalance ratio must be >= 1");
  const auto labels = train.labels();
  if (minority.empty() || minority.size() >= labels.size()) {
    throw Error(ErrorCode::ConfigError, "minority must be a proper nonempty subset of the labels");
  }
  std::size_t majority_count = 0;
  for (Label m : minority) {
    if (!labels.contains(m)) {
      throw Error(ErrorCode::LabelOutOfRange, "minority label " + std::to_string(m) + " absent from set");
    }
  }
  for (const auto& [label, count] : train.class_counts()) {
    if (!minority.contains(label)) majority_count = std::max(majority_count, count);
  }
  const std::size_t keep = majority_count / static_cast<std::size_t>(ratio);
  if (keep == 0) {
    throw Error(ErrorCode::RatioTooLarge, "ratio " + std::to_string(ratio) + " leaves no minority samples");
  }

  // Choose `keep` positions per minority class by partial Fisher-Yates, then
  // emit in the original order.
  std::vector<char> retain(train.size(), 1);
  Rng rng(seed);
  for (Label m : minority) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < train.size(); ++i) {
      if (train.plots()[i].label == m) idx.push_back(i);
    }
    const std::size_t take = std::min(keep, idx.size());
    for (std::size_t i = 0; i < take; ++i) {
      std::size_t j = i + rng.below(idx.size() - i);
      std::swap(idx[i], idx[j]);
    }
    for (std::size_t i = take; i < idx.size(); ++i) retain[idx[i]] = 0;
  }
  LabeledSet out(train.role());
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (retain[i]) out.add(train.plots()[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  try {
    for (const auto& s : j.at("spaces")) {
      if (s.is_array()) {
        c.spaces.push_back({s.at(0).get<double>(), s.at(1).get<double>(), s.at(2).get<double>(),
                            s.at(3).get<double>()});
      } else {
        c.spaces.push_back({s.at("x0").get<double>(), s.at("y0").get<double>(), s.at("x1").get<double>(),
                            s.at("y1").get<double>()});
      }
    }
    for (const auto& b : j.at("beacons")) c.beacons.push_back({b.at(0).get<double>(), b.at(1).get<double>()});
    c.samples_per_space = j.value("samples_per_space", c.samples_per_space);
    c.eta = j.value("eta", c.eta);
    c.sigma_db = j.value("sigma_db", c.sigma_db);
    c.p0_dbm = j.value("p0_dbm", c.p0_dbm);
    c.d0_m = j.value("d0_m", c.d0_m);
    c.n_beacons = j.value("n_beacons", std::size_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("generator config: ") + e.what());
  }
  return c;
}

nlohmann::json to_json(const GeneratorConfig& c) {
  nlohmann::json j;
  j["spaces"] = nlohmann::json::array();
  for (const auto& s : c.spaces) j["spaces"].push_back({s.x0, s.y0, s.x1, s.y1});
  j["beacons"] = c.beacons;
  j["samples_per_space"] = c.samples_per_space;
  j["eta"] = c.eta;
  j["sigma_db"] = c.sigma_db;
  j["p0_dbm"] = c.p0_dbm;
  j["d0_m"] = c.d0_m;
  if (c.n_beacons != 0) j["n_beacons"] = c.n_beacons;
  return j;
}

GeneratorConfig desk_generator_config() {
  GeneratorConfig c;
  constexpr double side = 10.0;
  constexpr double gap = 4.0;
  for (int row = 0; row < 2; ++row) {
    for (int col = 0; col < 3; ++col) {
      const double x0 = col * (side + gap);
      const double y0 = row * (side + gap);
      c.spaces.push_back({x0, y0, x0 + side, y0 + side});
      c.beacons.push_back({x0 + 1.0, y0 + 1.0});
      c.beacons.push_back({x0 + side - 1.0, y0 + 1.0});
      c.beacons.push_back({x0 + 1.0, y0 + side - 1.0});
      c.beacons.push_back({x0 + side - 1.0, y0 + side - 1.0});
      c.beacons.push_back({x0 + side / 2, y0 + side / 2});
    }
  }
  c.samples_per_space = 600;
  c.eta = 2.5;
  c.sigma_db = 3.5;
  c.p0_dbm = -59.0;
  c.d0_m = 1.0;
  c.n_beacons = kDefaultBeacons;
  return c;
}

double path_loss_rss(const GeneratorConfig& c, double distance_m) {
  const double d = std::max(distance_m, c.d0_m);
  return c.p0_dbm - 10.0 * c.eta * std::log10(d / c.d0_m);
}

std::vector<RawFingerprint> synth_corpus(const GeneratorConfig& config, std::uint64_t seed) {
  if (config.spaces.empty()) throw Error(ErrorCode::BadGeometry, "no spaces");
  if (config.beacons.empty()) throw Error(ErrorCode::BadGeometry, "no beacons");
  if (config.n_beacons != 0 && config.beacons.size() != config.n_beacons) {
    throw Error(ErrorCode::BadGeometry, "beacon count " + std::to_string(config.beacons.size()) +
                                            " != n = " + std::to_string(config.n_beacons));
  }
  for (const auto& s : config.spaces) {
    if (!(s.x1 > s.x0 && s.y1 > s.y0)) throw Error(ErrorCode::BadGeometry, "empty space rectangle");
  }
  if (!(config.d0_m > 0.0) || config.sigma_db < 0.0) {
    throw Error(ErrorCode::BadGeometry, "d0 must be positive and sigma non-negative");
  }

  Rng rng(seed);
  std::vector<RawFingerprint> out;
  out.reserve(config.spaces.size() * config.samples_per_space);
  for (std::size_t k = 0; k < config.spaces.size(); ++k) {
    const Rect& s = config.spaces[k];
    for (std::size_t t = 0; t < config.samples_per_space; ++t) {
      const double px = s.x0 + rng.uniform() * (s.x1 - s.x0);
      const double py = s.y0 + rng.uniform() * (s.y1 - s.y0);
      RawFingerprint f;
      f.label = static_cast<Label>(k);
      f.rss.reserve(config.beacons.size());
      for (const auto& b : config.beacons) {
        const double d = std::hypot(px - b[0], py - b[1]);
        const double rss = path_loss_rss(config, d) + config.sigma_db * rng.normal();
        f.rss.push_back(std::clamp(rss, kMissingRssDbm, kMaxRssDbm));
      }
      out.push_back(std::move(f));
    }
  }
  return out;
}

std::vector<RawFingerprint> cap_per_class(std::span<const RawFingerprint> rows, std::size_t per_class,
                                          std::uint64_t seed) {
  std::map<Label, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < rows.size(); ++i) by_class[rows[i].label].push_back(i);
  std::vector<char> keep(rows.size(), 0);
  Rng rng(seed);
  for (auto& [label, idx] : by_class) {
    if (idx.size() <= per_class) {
      for (std::size_t i : idx) keep[i] = 1;
      continue;
    }
    rng.shuffle(idx);
    for (std::size_t i = 0; i < per_class; ++i) keep[idx[i]] = 1;
  }
  std::vector<RawFingerprint> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (keep[i]) out.push_back(rows[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

void save_labeled_set(const std::filesystem::path& path, const LabeledSet& set) {
  Container c;
  const std::size_t n = set.plot_side();
  c.manifest["kind"] = "labeled_set";
  c.manifest["role"] = set.role() == Role::Train ? "train" : "test";
  c.manifest["n"] = n;
  nlohmann::json counts = nlohmann::json::object();
  for (const auto& [label, count] : set.class_counts()) counts[std::to_string(label)] = count;
  c.manifest["class_counts"] = counts;

  Blob plots{{set.size(), n, n}, {}};
  Blob labels{{set.size()}, {}};
  Blob synthetic{{set.size()}, {}};
  plots.data.reserve(set.size() * n * n);
  for (const auto& p : set.plots()) {
    plots.data.insert(plots.data.end(), p.r.begin(), p.r.end());
    labels.data.push_back(p.label);
    synthetic.data.push_back(p.synthetic ? 1.0 : 0.0);
  }
  c.blobs["plots"] = std::move(plots);
  c.blobs["labels"] = std::move(labels);
  c.blobs["synthetic"] = std::move(synthetic);
  write_container(path, c);
}

LabeledSet load_labeled_set(const std::filesystem::path& path) {
  const Container c = read_container(path);
  if (c.manifest.value("kind", "") != "labeled_set") {
    throw Error(ErrorCode::IoError, path.string() + " does not hold a labeled set");
  }
  const auto n = c.manifest.at("n").get<std::size_t>();
  LabeledSet set(c.manifest.at("role").get<std::string>() == "train" ? Role::Train : Role::Test);
  const auto& plots = c.blobs.at("plots").data;
  const auto& labels = c.blobs.at("labels").data;
  const auto& synthetic = c.blobs.at("synthetic").data;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    RecurrencePlot p;
    p.n = n;
    p.label = static_cast<Label>(labels[i]);
    p.synthetic = synthetic[i] != 0.0;
    p.r.assign(plots.begin() + static_cast<std::ptrdiff_t>(i * n * n),
               plots.begin() + static_cast<std::ptrdiff_t>((i + 1) * n * n));
    set.add(std::move(p));
  }
  return set;
}

}  // namespace imbpos
