#include "imbpos/svm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <list>
#include <map>
#include <unordered_map>

#include "imbpos/container.hpp"
#include "imbpos/error.hpp"
#include "imbpos/kernels.hpp"

namespace imbpos {

double rbf(std::span<const double> u, std::span<const double> v, double gamma) {
  if (u.size() != v.size()) throw Error(ErrorCode::ShapeMismatch, "rbf: dimension mismatch");
  double d2 = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double d = u[i] - v[i];
    d2 += d * d;
  }
  return std::exp(-gamma * d2);
}

double scale_gamma(const FeatureMatrix& x) {
  if (x.data.empty()) throw Error(ErrorCode::EmptyInput, "no training data");
  double mean = 0.0;
  for (double v : x.data) mean += v;
  mean /= static_cast<double>(x.data.size());
  double var = 0.0;
  for (double v : x.data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.data.size());
  if (!(var > 0.0)) throw Error(ErrorCode::ConfigError, "training matrix is constant; gamma undefined");
  return 1.0 / (static_cast<double>(x.cols) * var);
}

namespace {

// Rows of the RBF Gram matrix. When the whole matrix fits in the budget it is
// computed up front; otherwise rows are kept in an LRU cache.
class KernelRows {
 public:
  KernelRows(const FeatureMatrix& x, double gamma, std::size_t budget_bytes) : x_(x), gamma_(gamma) {
    const std::size_t l = x.rows;
    const std::size_t row_bytes = std::max<std::size_t>(l * sizeof(double), 1);
    if (l * row_bytes <= budget_bytes) {
      full_.resize(l * l);
      kernels::omp::rbf_matrix(l, l, x.cols, gamma, x.data, x.data, full_);
    } else {
      capacity_ = std::max<std::size_t>(budget_bytes / row_bytes, 2);
    }
  }

  std::span<const double> row(std::size_t i) {
    const std::size_t l = x_.rows;
    if (!full_.empty()) return {full_.data() + i * l, l};
    auto it = index_.find(i);
    if (it != index_.end()) {
      lru_.splice(lru_.begin(), lru_, it->second);
      return it->second->second;
    }
    if (lru_.size() >= capacity_) {
      index_.erase(lru_.back().first);
      lru_.pop_back();
    }
    std::vector<double> r(l);
    kernels::omp::rbf_matrix(1, l, x_.cols, gamma_, x_.row(i), x_.data, r);
    lru_.emplace_front(i, std::move(r));
    index_[i] = lru_.begin();
    return lru_.front().second;
  }

 private:
  const FeatureMatrix& x_;
  double gamma_;
  std::vector<double> full_;
  std::size_t capacity_ = 0;
  std::list<std::pair<std::size_t, std::vector<double>>> lru_;
  std::unordered_map<std::size_t, decltype(lru_)::iterator> index_;
};

constexpr double kTau = 1e-12;

}  // namespace

BinarySolution solve_binary(const FeatureMatrix& x, std::span<const int> y, double gamma, const SvmConfig& config) {
  const std::size_t l = x.rows;
  if (y.size() != l) throw Error(ErrorCode::LengthMismatch, "labels and rows differ");
  if (!(config.c > 0.0) || !(gamma >= 0.0)) throw Error(ErrorCode::ConfigError, "C must be positive, gamma >= 0");
  const bool has_pos = std::find(y.begin(), y.end(), 1) != y.end();
  const bool has_neg = std::find(y.begin(), y.end(), -1) != y.end();
  if (!has_pos || !has_neg) throw Error(ErrorCode::SingleClass, "binary problem needs both classes");

  const double c = config.c;
  KernelRows kernel(x, gamma, config.cache_mb << 20);
  std::vector<double> qd(l);
  for (std::size_t t = 0; t < l; ++t) qd[t] = kernel.row(t)[t];

  BinarySolution sol;
  sol.alpha.assign(l, 0.0);
  std::vector<double>& a = sol.alpha;
  std::vector<double> grad(l, -1.0);  // Q a - e
  const std::size_t max_iter = config.max_iterations ? config.max_iterations : std::max<std::size_t>(10'000'000, 100 * l);

  auto upper = [&](std::size_t t) { return a[t] >= c; };
  auto lower = [&](std::size_t t) { return a[t] <= 0.0; };

  sol.converged = false;
  for (sol.iterations = 0; sol.iterations < max_iter; ++sol.iterations) {
    double gmax = -std::numeric_limits<double>::infinity();
    std::size_t i = l;
    for (std::size_t t = 0; t < l; ++t) {
      if (y[t] == 1) {
        if (!upper(t) && -grad[t] >= gmax) {
          gmax = -grad[t];
          i = t;
        }
      } else if (!lower(t) && grad[t] >= gmax) {
        gmax = grad[t];
        i = t;
      }
    }
    if (i == l) {
      sol.converged = true;
      break;
    }
    const auto ki = kernel.row(i);
    double gmax2 = -std::numeric_limits<double>::infinity();
    double best = std::numeric_limits<double>::infinity();
    std::size_t j = l;
    for (std::size_t t = 0; t < l; ++t) {
      const double qit = y[i] * y[t] * ki[t];
      if (y[t] == 1) {
        if (lower(t)) continue;
        const double diff = gmax + grad[t];
        gmax2 = std::max(gmax2, grad[t]);
        if (diff > 0.0) {
          double quad = qd[i] + qd[t] - 2.0 * y[i] * qit;
          if (quad <= 0.0) quad = kTau;
          const double obj = -(diff * diff) / quad;
          if (obj <= best) {
            best = obj;
            j = t;
          }
        }
      } else {
        if (upper(t)) continue;
        const double diff = gmax - grad[t];
        gmax2 = std::max(gmax2, -grad[t]);
        if (diff > 0.0) {
          double quad = qd[i] + qd[t] + 2.0 * y[i] * qit;
          if (quad <= 0.0) quad = kTau;
          const double obj = -(diff * diff) / quad;
          if (obj <= best) {
            best = obj;
            j = t;
          }
        }
      }
    }
    if (gmax + gmax2 < config.tolerance || j == l) {
      sol.converged = true;
      break;
    }

    const auto kj = kernel.row(j);
    const double qij = y[i] * y[j] * ki[j];
    const double old_ai = a[i], old_aj = a[j];
    if (y[i] != y[j]) {
      double quad = qd[i] + qd[j] + 2.0 * qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (-grad[i] - grad[j]) / quad;
      const double diff = a[i] - a[j];
      a[i] += delta;
      a[j] += delta;
      if (diff > 0.0) {
        if (a[j] < 0.0) {
          a[j] = 0.0;
          a[i] = diff;
        }
      } else if (a[i] < 0.0) {
        a[i] = 0.0;
        a[j] = -diff;
      }
      if (diff > 0.0) {
        if (a[i] > c) {
          a[i] = c;
          a[j] = c - diff;
        }
      } else if (a[j] > c) {
        a[j] = c;
        a[i] = c + diff;
      }
    } else {
      double quad = qd[i] + qd[j] - 2.0 * qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (grad[i] - grad[j]) / quad;
      const double sum = a[i] + a[j];
      a[i] -= delta;
      a[j] += delta;
      if (sum > c) {
        if (a[i] > c) {
          a[i] = c;
          a[j] = sum - c;
        }
      } else if (a[j] < 0.0) {
        a[j] = 0.0;
        a[i] = sum;
      }
      if (sum > c) {
        if (a[j] > c) {
          a[j] = c;
          a[i] = sum - c;
        }
      } else if (a[i] < 0.0) {
        a[i] = 0.0;
        a[j] = sum;
      }
    }
    const double dai = a[i] - old_ai, daj = a[j] - old_aj;
    for (std::size_t t = 0; t < l; ++t) {
      grad[t] += y[i] * y[t] * ki[t] * dai + y[j] * y[t] * kj[t] * daj;
    }
  }

  // Bias from free vectors, else the midpoint of the feasible interval.
  double sum_free = 0.0, ub = std::numeric_limits<double>::infinity(), lb = -ub;
  std::size_t n_free = 0;
  for (std::size_t t = 0; t < l; ++t) {
    const double yg = y[t] * grad[t];
    if (upper(t)) {
      if (y[t] == -1) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else if (lower(t)) {
      if (y[t] == 1) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else {
      ++n_free;
      sum_free += yg;
    }
  }
  const double rho = n_free > 0 ? sum_free / static_cast<double>(n_free) : (ub + lb) / 2.0;
  sol.bias = -rho;

  double obj = 0.0;
  for (std::size_t t = 0; t < l; ++t) obj += a[t] * (grad[t] - 1.0);
  sol.objective = obj / 2.0;
  return sol;
}

SvmModel fit(const LabeledSet& train, const SvmConfig& config) {
  const auto labels = train.labels();
  if (labels.size() < 2) throw Error(ErrorCode::SingleClass, "fit needs at least two classes");
  const FeatureMatrix x = features_of(train, -1);
  SvmModel model;
  model.classes.assign(labels.begin(), labels.end());
  model.gamma = config.gamma ? *config.gamma : scale_gamma(x);
  model.c = config.c;

  std::map<Label, std::vector<std::size_t>> rows_of;
  for (std::size_t i = 0; i < train.size(); ++i) rows_of[train.plots()[i].label].push_back(i);

  std::map<std::size_t, std::size_t> sv_slot;  // training row -> support vector row
  std::vector<std::size_t> sv_rows;
  for (std::size_t a = 0; a < model.classes.size(); ++a) {
    for (std::size_t b = a + 1; b < model.classes.size(); ++b) {
      const auto& ra = rows_of[model.classes[a]];
      const auto& rb = rows_of[model.classes[b]];
      FeatureMatrix sub(ra.size() + rb.size(), x.cols);
      std::vector<int> y;
      std::vector<std::size_t> origin;
      for (const auto* group : {&ra, &rb}) {
        for (std::size_t r : *group) {
          std::copy(x.row(r).begin(), x.row(r).end(), sub.row(origin.size()).begin());
          origin.push_back(r);
          y.push_back(group == &ra ? 1 : -1);
        }
      }
      const BinarySolution sol = solve_binary(sub, y, model.gamma, config);
      PairwiseSvm pair;
      pair.positive = model.classes[a];
      pair.negative = model.classes[b];
      pair.bias = sol.bias;
      pair.objective = sol.objective;
      pair.iterations = sol.iterations;
      pair.converged = sol.converged;
      for (std::size_t t = 0; t < sol.alpha.size(); ++t) {
        if (sol.alpha[t] <= 0.0) continue;
        auto [it, inserted] = sv_slot.emplace(origin[t], sv_rows.size());
        if (inserted) sv_rows.push_back(origin[t]);
        pair.support.push_back(it->second);
        pair.coef.push_back(sol.alpha[t] * y[t]);
      }
      model.converged = model.converged && sol.converged;
      model.pairs.push_back(std::move(pair));
    }
  }
  model.support_vectors = FeatureMatrix(sv_rows.size(), x.cols);
  for (std::size_t s = 0; s < sv_rows.size(); ++s) {
    std::copy(x.row(sv_rows[s]).begin(), x.row(sv_rows[s]).end(), model.support_vectors.row(s).begin());
  }
  return model;
}

std::vector<double> decision_values(const SvmModel& model, const FeatureMatrix& x) {
  const std::size_t nsv = model.support_vectors.rows;
  if (x.rows > 0 && x.cols != model.support_vectors.cols) {
    throw Error(ErrorCode::ShapeMismatch, "feature width differs from the model");
  }
  const std::size_t np = model.pairs.size();
  std::vector<double> out(x.rows * np, 0.0);
  // Kernel blocks of at most 512 rows keep memory bounded.
  constexpr std::size_t block = 512;
  std::vector<double> k;
  for (std::size_t start = 0; start < x.rows; start += block) {
    const std::size_t rows = std::min(block, x.rows - start);
    k.assign(rows * nsv, 0.0);
    if (nsv > 0) {
      kernels::omp::rbf_matrix(rows, nsv, x.cols, model.gamma,
                               std::span<const double>(x.data).subspan(start * x.cols, rows * x.cols),
                               model.support_vectors.data, k);
    }
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t p = 0; p < np; ++p) {
        const auto& pair = model.pairs[p];
        double f = pair.bias;
        for (std::size_t s = 0; s < pair.support.size(); ++s) f += pair.coef[s] * k[r * nsv + pair.support[s]];
        out[(start + r) * np + p] = f;
      }
    }
  }
  return out;
}

Label vote(std::span<const double> decisions, std::span<const Label> classes) {
  const std::size_t k = classes.size();
  if (decisions.size() != k * (k - 1) / 2) throw Error(ErrorCode::ShapeMismatch, "wrong number of decisions");
  std::vector<std::size_t> votes(k, 0);
  std::vector<double> strength(k, 0.0);
  std::size_t p = 0;
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = a + 1; b < k; ++b, ++p) {
      const std::size_t winner = decisions[p] > 0.0 ? a : b;
      ++votes[winner];
      strength[winner] += std::abs(decisions[p]);
    }
  }
  std::size_t best = 0;
  for (std::size_t c = 1; c < k; ++c) {
    if (votes[c] > votes[best] || (votes[c] == votes[best] && strength[c] > strength[best])) best = c;
  }
  return classes[best];
}

std::vector<Label> predict(const SvmModel& model, const FeatureMatrix& x) {
  const auto dec = decision_values(model, x);
  const std::size_t np = model.pairs.size();
  std::vector<Label> out(x.rows);
  for (std::size_t r = 0; r < x.rows; ++r) {
    out[r] = vote(std::span<const double>(dec).subspan(r * np, np), model.classes);
  }
  return out;
}

std::vector<Label> predict(const SvmModel& model, const LabeledSet& set) {
  return predict(model, features_of(set, -1));
}

void save_svm(const std::filesystem::path& path, const SvmModel& model) {
  Container c;
  c.manifest["kind"] = "svm_model";
  c.manifest["classes"] = model.classes;
  c.manifest["gamma"] = model.gamma;
  c.manifest["c"] = model.c;
  c.manifest["converged"] = model.converged;
  c.blobs["support_vectors"] = Blob{{model.support_vectors.rows, model.support_vectors.cols}, model.support_vectors.data};
  for (std::size_t p = 0; p < model.pairs.size(); ++p) {
    const auto& pair = model.pairs[p];
    c.manifest["pairs"].push_back({{"positive", pair.positive}, {"negative", pair.negative}, {"bias", pair.bias},
                                   {"objective", pair.objective}, {"iterations", pair.iterations},
                                   {"converged", pair.converged}, {"support", pair.support}});
    c.blobs["coef." + std::to_string(p)] = Blob{{pair.coef.size()}, pair.coef};
  }
  write_container(path, c);
}

SvmModel load_svm(const std::filesystem::path& path) {
  const Container c = read_container(path);
  if (c.manifest.value("kind", "") != "svm_model") throw Error(ErrorCode::IoError, path.string() + " is not an SVM");
  SvmModel m;
  m.classes = c.manifest.at("classes").get<std::vector<Label>>();
  m.gamma = c.manifest.at("gamma").get<double>();
  m.c = c.manifest.at("c").get<double>();
  m.converged = c.manifest.at("converged").get<bool>();
  const Blob& sv = c.blobs.at("support_vectors");
  m.support_vectors.rows = sv.shape.at(0);
  m.support_vectors.cols = sv.shape.at(1);
  m.support_vectors.data = sv.data;
  std::size_t p = 0;
  for (const auto& j : c.manifest.at("pairs")) {
    PairwiseSvm pair;
    pair.positive = j.at("positive").get<Label>();
    pair.negative = j.at("negative").get<Label>();
    pair.bias = j.at("bias").get<double>();
    pair.objective = j.at("objective").get<double>();
    pair.iterations = j.at("iterations").get<std::size_t>();
    pair.converged = j.at("converged").get<bool>();
    pair.support = j.at("support").get<std::vector<std::size_t>>();
    pair.coef = c.blobs.at("coef." + std::to_string(p++)).data;
    m.pairs.push_back(std::move(pair));
  }
  return m;
}

}  // namespace imbpos
