#include "ulab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include <spdlog/spdlog.h>

namespace ulab {

namespace {

constexpr int kSvmIterations = 2000;
constexpr double kSvmC = 1.0;

std::vector<int> predictions(const ModelSpec& spec, const ParamVector& theta, const LabeledBatch& b) {
  return predict(spec, theta, b.inputs);
}

void require_nonempty(const LabeledBatch& b, const char* what) {
  if (b.empty()) throw std::invalid_argument(std::string(what) + ": empty batch");
}

Matrix subsample_rows(const Matrix& x, Eigen::Index count, std::mt19937_64& rng) {
  if (count >= x.rows()) return x;
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(x.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  Matrix out(count, x.cols());
  for (Eigen::Index i = 0; i < count; ++i) out.row(i) = x.row(idx[static_cast<std::size_t>(i)]);
  return out;
}

struct LinearRule {
  Eigen::VectorXd w;
  double b = 0.0;
};

// Deterministic subgradient descent on
//   lambda/2 |w|^2 + mean_i max(0, 1 - y_i (w.x_i + b)),  lambda = 1 / (C n),
// which has the same minimizer as the usual 1/2 |w|^2 + C sum hinge form.
// Step 1/sqrt(t); the iterate with the lowest objective is kept.
LinearRule fit_hinge(const Matrix& x, const Eigen::VectorXd& y) {
  const auto n = static_cast<double>(x.rows());
  const double lambda = 1.0 / (kSvmC * n);
  LinearRule cur{Eigen::VectorXd::Zero(x.cols()), 0.0};
  LinearRule best = cur;
  double best_obj = std::numeric_limits<double>::infinity();
  for (int t = 1; t <= kSvmIterations; ++t) {
    const Eigen::VectorXd margin = y.cwiseProduct((x * cur.w).array().matrix() +
                                                  Eigen::VectorXd::Constant(x.rows(), cur.b));
    const Eigen::ArrayXd slack = (1.0 - margin.array()).max(0.0);
    const double obj = 0.5 * lambda * cur.w.squaredNorm() + slack.sum() / n;
    if (obj < best_obj) {
      best_obj = obj;
      best = cur;
    }
    const Eigen::VectorXd coef = (slack > 0.0).cast<double>().matrix().cwiseProduct(y);
    const Eigen::VectorXd gw = lambda * cur.w - x.transpose() * coef / n;
    const double gb = -coef.sum() / n;
    const double eta = 1.0 / std::sqrt(static_cast<double>(t));
    cur.w -= eta * gw;
    cur.b -= eta * gb;
  }
  return best;
}

std::string fmt12(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

}  // namespace

double accuracy(const ModelSpec& spec, const ParamVector& theta, const LabeledBatch& batch) {
  require_nonempty(batch, "accuracy");
  const auto pred = predictions(spec, theta, batch);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == batch.labels[i] ? 1 : 0;
  return 100.0 * static_cast<double>(hit) / static_cast<double>(pred.size());
}

double rua(const ModelSpec& spec, const ParamVector& theta_unlearned, const ParamVector& theta_ideal,
           const LabeledBatch& forget) {
  require_nonempty(forget, "rua");
  return accuracy(spec, theta_unlearned, forget) - accuracy(spec, theta_ideal, forget);
}

double fidelity(const ModelSpec& spec, const ParamVector& theta_unlearned,
                const ParamVector& theta_ideal, const LabeledBatch& forget) {
  require_nonempty(forget, "fidelity");
  const auto a = predictions(spec, theta_unlearned, forget);
  const auto b = predictions(spec, theta_ideal, forget);
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i] ? 1 : 0;
  return 100.0 * static_cast<double>(same) / static_cast<double>(a.size());
}

std::string_view to_string(MiaFeature f) {
  switch (f) {
    case MiaFeature::correctness: return "correctness";
    case MiaFeature::confidence: return "confidence";
    case MiaFeature::logits: return "logits";
    case MiaFeature::entropy: return "entropy";
    case MiaFeature::mix_entropy: return "mix_entropy";
  }
  return "?";
}

MiaFeature parse_mia_feature(std::string_view s) {
  for (auto f : kAllMiaFeatures) {
    if (to_string(f) == s) return f;
  }
  throw std::invalid_argument("unknown MIA feature '" + std::string(s) + "'");
}

Matrix mia_features(const ModelSpec& spec, const ParamVector& theta, const LabeledBatch& batch,
                    MiaFeature kind) {
  const Matrix logits = forward(spec, theta, batch.inputs);
  if (kind == MiaFeature::logits) return logits;
  const Matrix lp = log_softmax(logits);
  const auto n = logits.rows();
  const auto k = logits.cols();
  Matrix out(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = batch.labels[static_cast<std::size_t>(i)];
    switch (kind) {
      case MiaFeature::correctness: {
        Eigen::Index arg = 0;
        for (Eigen::Index j = 1; j < k; ++j) {
          if (logits(i, j) > logits(i, arg)) arg = j;
        }
        out(i, 0) = arg == y ? 1.0 : 0.0;
        break;
      }
      case MiaFeature::confidence:
        out(i, 0) = std::exp(lp(i, y));
        break;
      case MiaFeature::entropy: {
        double h = 0.0;
        for (Eigen::Index j = 0; j < k; ++j) h -= std::exp(lp(i, j)) * lp(i, j);
        out(i, 0) = std::max(0.0, h);
        break;
      }
      case MiaFeature::mix_entropy: {
        // ln(1 - p_j) = logsumexp over the other classes, minus the full logsumexp.
        const double mx = logits.row(i).maxCoeff();
        const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
        double h = 0.0;
        for (Eigen::Index j = 0; j < k; ++j) {
          double others = 0.0;
          for (Eigen::Index l = 0; l < k; ++l) {
            if (l != j) others += std::exp(logits(i, l) - mx);
          }
          const double log_one_minus = mx + std::log(others) - lse;
          const double pj = std::exp(lp(i, j));
          if (j == y) {
            h -= std::exp(log_one_minus) * lp(i, j);
          } else {
            h -= pj * log_one_minus;
          }
        }
        out(i, 0) = std::max(0.0, h);
        break;
      }
      case MiaFeature::logits:
        break;
    }
  }
  return out;
}

MiaOutcome mia_attack_on_features(const Matrix& members, const Matrix& nonmembers,
                                  const Matrix& targets, std::uint64_t seed) {
  if (members.rows() == 0 || nonmembers.rows() == 0) {
    throw std::invalid_argument("mia_attack: member and non-member pools must be nonempty");
  }
  if (members.cols() != nonmembers.cols() || members.cols() != targets.cols()) {
    throw std::invalid_argument("mia_attack: feature width mismatch");
  }
  std::mt19937_64 rng(seed);
  const auto m = std::min(members.rows(), nonmembers.rows());
  const Matrix pos = subsample_rows(members, m, rng);
  const Matrix neg = subsample_rows(nonmembers, m, rng);

  Matrix x(2 * m, members.cols());
  x << pos, neg;
  Eigen::VectorXd y(2 * m);
  y << Eigen::VectorXd::Ones(m), -Eigen::VectorXd::Ones(m);

  const Eigen::RowVectorXd mean = x.colwise().mean();
  Eigen::RowVectorXd scale(x.cols());
  bool any_variance = false;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double var = (x.col(j).array() - mean[j]).square().mean();
    if (var > 0.0) {
      scale[j] = 1.0 / std::sqrt(var);
      any_variance = true;
    } else {
      scale[j] = 0.0;
    }
  }
  MiaOutcome out;
  if (!any_variance) {
    spdlog::warn("mia_attack: features have no variance; using the constant 1/2 rule");
    out.degenerate = true;
    return out;
  }
  auto standardize = [&](const Matrix& a) -> Matrix {
    return ((a.rowwise() - mean).array().rowwise() * scale.array()).matrix();
  };
  const Matrix xs = standardize(x);
  const LinearRule rule = fit_hinge(xs, y);

  const Eigen::VectorXd train_dec = xs * rule.w;
  double correct = 0.0;
  for (Eigen::Index i = 0; i < xs.rows(); ++i) {
    const double pred = train_dec[i] + rule.b > 0.0 ? 1.0 : -1.0;
    correct += pred == y[i] ? 1.0 : 0.0;
  }
  out.train_accuracy = correct / static_cast<double>(xs.rows());

  if (targets.rows() == 0) throw std::invalid_argument("mia_attack: empty target set");
  const Eigen::VectorXd dec = standardize(targets) * rule.w;
  double member = 0.0;
  for (Eigen::Index i = 0; i < dec.size(); ++i) member += dec[i] + rule.b > 0.0 ? 1.0 : 0.0;
  out.score = member / static_cast<double>(dec.size());
  return out;
}

double mia_attack(const ModelSpec& spec, const ParamVector& theta, const DatasetSplit& split,
                  MiaFeature kind, std::uint64_t seed) {
  if (split.retain.empty() || split.test.empty()) {
    throw std::invalid_argument("mia_attack: retain and test must be nonempty");
  }
  require_nonempty(split.forget, "mia_attack");
  return mia_attack_on_features(mia_features(spec, theta, split.retain, kind),
                                mia_features(spec, theta, split.test, kind),
                                mia_features(spec, theta, split.forget, kind), seed)
      .score;
}

MetricsReport report(const ReportInputs& in) {
  if (!in.spec || !in.theta || !in.theta_ideal || !in.split) {
    throw std::invalid_argument("report: missing input");
  }
  const auto& spec = *in.spec;
  const auto& split = *in.split;
  MetricsReport r;
  r.epoch = in.epoch;
  r.ua = accuracy(spec, *in.theta, split.forget);
  r.ra = accuracy(spec, *in.theta, split.retain);
  r.ta = accuracy(spec, *in.theta, split.test);
  r.rua = r.ua - accuracy(spec, *in.theta_ideal, split.forget);
  r.fid = fidelity(spec, *in.theta, *in.theta_ideal, split.forget);
  for (std::size_t i = 0; i < kAllMiaFeatures.size(); ++i) {
    const auto f = kAllMiaFeatures[i];
    r.mia[std::string(to_string(f))] = mia_attack(spec, *in.theta, split, f, derive_seed(in.seed, i));
  }
  r.rte_seconds = in.rte_seconds;
  return r;
}

std::string metrics_csv_header() {
  return "run_id,seed,method,addon,epoch,ua,ra,ta,rua,fid,mia_correctness,mia_confidence,"
         "mia_logits,mia_entropy,mia_mix_entropy,rte_seconds";
}

std::string metrics_csv_line(const MetricsRow& row) {
  const auto& r = row.report;
  auto mia = [&](MiaFeature f) {
    const auto it = r.mia.find(std::string(to_string(f)));
    return it == r.mia.end() ? std::string("nan") : fmt12(it->second);
  };
  std::ostringstream os;
  os << row.run_id << ',' << row.seed << ',' << row.method << ',' << row.addon << ',' << r.epoch
     << ',' << fmt12(r.ua) << ',' << fmt12(r.ra) << ',' << fmt12(r.ta) << ',' << fmt12(r.rua) << ','
     << fmt12(r.fid);
  for (auto f : kAllMiaFeatures) os << ',' << mia(f);
  os << ',' << fmt12(r.rte_seconds);
  return os.str();
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << metrics_csv_header() << '\n';
  for (const auto& row : rows) out << metrics_csv_line(row) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != metrics_csv_header()) {
    throw std::runtime_error(path.string() + ": unexpected metrics header");
  }
  std::vector<MetricsRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 16) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 16 fields");
    }
    MetricsRow row;
    row.run_id = cells[0];
    row.seed = std::stoull(cells[1]);
    row.method = cells[2];
    row.addon = cells[3];
    auto& r = row.report;
    r.epoch = std::stoi(cells[4]);
    r.ua = std::stod(cells[5]);
    r.ra = std::stod(cells[6]);
    r.ta = std::stod(cells[7]);
    r.rua = std::stod(cells[8]);
    r.fid = std::stod(cells[9]);
    for (std::size_t i = 0; i < kAllMiaFeatures.size(); ++i) {
      r.mia[std::string(to_string(kAllMiaFeatures[i]))] = std::stod(cells[10 + i]);
    }
    r.rte_seconds = std::stod(cells[15]);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace ulab
