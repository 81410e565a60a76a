#include "ulab/masks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ulab {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;

void check_same_length(const ParamVector& a, const ParamVector& b) {
  if (a.size() != b.size()) throw std::invalid_argument("gradient length mismatch");
}

double standardized(double g, double sigma2, double eps) {
  if (g == 0.0) return 0.0;
  const double s = std::sqrt(sigma2 + eps);
  if (s == 0.0) return g > 0.0 ? std::numeric_limits<double>::infinity()
                               : -std::numeric_limits<double>::infinity();
  return g / s;
}

// 2 * f - 1, the centered agreement probability in [-1, 1].
Eigen::VectorXd agreement_margin(const GradientPair& pair, double eps) {
  validate(pair);
  if (!(eps >= 0.0)) throw std::invalid_argument("eps must be nonnegative");
  const auto n = pair.g_u.size();
  Eigen::VectorXd c(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double zu = standardized(pair.g_u[i], pair.sigma2_u[i], eps);
    const double zc = standardized(pair.g_c[i], pair.sigma2_c[i], eps);
    c[i] = std::erf(zu * kInvSqrt2) * std::erf(zc * kInvSqrt2);
  }
  return c;
}

}  // namespace

void validate(const GradientPair& pair) {
  const auto n = pair.g_u.size();
  if (pair.g_c.size() != n || pair.sigma2_u.size() != n || pair.sigma2_c.size() != n) {
    throw std::invalid_argument("GradientPair: all four vectors must have the same length");
  }
  if ((pair.sigma2_u.array() < 0.0).any() || (pair.sigma2_c.array() < 0.0).any()) {
    throw std::invalid_argument("GradientPair: variances must be nonnegative");
  }
}

std::string_view to_string(MaskKind k) {
  switch (k) {
    case MaskKind::none: return "none";
    case MaskKind::salun: return "salun";
    case MaskKind::and_mask: return "and";
    case MaskKind::prob: return "prob";
    case MaskKind::bernoulli: return "bernoulli";
    case MaskKind::focus: return "focus";
  }
  return "?";
}

MaskKind parse_mask_kind(std::string_view s) {
  for (auto k : {MaskKind::none, MaskKind::salun, MaskKind::and_mask, MaskKind::prob,
                 MaskKind::bernoulli, MaskKind::focus}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown add-on '" + std::string(s) + "'");
}

std::int64_t MaskOrFocus::support() const { return (weights.array() != 0.0).count(); }

std::string_view to_string(AggKind k) { return k == AggKind::linear ? "linear" : "abs_min"; }

AggKind parse_agg_kind(std::string_view s) {
  if (s == "linear") return AggKind::linear;
  if (s == "abs_min") return AggKind::abs_min;
  throw std::invalid_argument("unknown aggregation '" + std::string(s) + "'");
}

void validate(const AggSpec& spec) {
  if (spec.kind != AggKind::linear) return;
  if (spec.alpha < 0.0 || spec.beta < 0.0 || !(spec.alpha + spec.beta > 0.0)) {
    throw std::invalid_argument("linear aggregation needs alpha, beta >= 0 and alpha + beta > 0");
  }
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

ParamVector agg(const AggSpec& spec, const ParamVector& g_u, const ParamVector& g_c) {
  validate(spec);
  check_same_length(g_u, g_c);
  if (spec.kind == AggKind::linear) return spec.alpha * g_u + spec.beta * g_c;
  ParamVector out(g_u.size());
  for (Eigen::Index i = 0; i < g_u.size(); ++i) {
    out[i] = std::abs(g_c[i]) < std::abs(g_u[i]) ? g_c[i] : g_u[i];
  }
  return out;
}

MaskOrFocus mask_and(const ParamVector& g_u, const ParamVector& g_c) {
  check_same_length(g_u, g_c);
  MaskOrFocus m{Eigen::VectorXd::Zero(g_u.size()), MaskKind::and_mask};
  // Sign comparison instead of the product: same predicate, no underflow.
  for (Eigen::Index i = 0; i < g_u.size(); ++i) {
    const bool agree = (g_u[i] > 0.0 && g_c[i] > 0.0) || (g_u[i] < 0.0 && g_c[i] < 0.0);
    m.weights[i] = agree ? 1.0 : 0.0;
  }
  return m;
}

Eigen::VectorXd agree_prob(const GradientPair& pair, double eps) {
  return (0.5 + 0.5 * agreement_margin(pair, eps).array()).matrix();
}

MaskOrFocus mask_prob(const GradientPair& pair, double p, double eps) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("mask_prob: p must lie in (0, 1)");
  // f > p  <=>  2f - 1 > 2p - 1; comparing margins avoids rounding 1/2 + tiny to 1/2.
  const Eigen::VectorXd c = agreement_margin(pair, eps);
  const double threshold = 2.0 * p - 1.0;
  MaskOrFocus m{Eigen::VectorXd::Zero(c.size()), MaskKind::prob};
  for (Eigen::Index i = 0; i < c.size(); ++i) m.weights[i] = c[i] > threshold ? 1.0 : 0.0;
  return m;
}

MaskOrFocus mask_bernoulli(const GradientPair& pair, double eps, std::uint64_t seed) {
  const Eigen::VectorXd f = agree_prob(pair, eps);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  MaskOrFocus m{Eigen::VectorXd::Zero(f.size()), MaskKind::bernoulli};
  for (Eigen::Index i = 0; i < f.size(); ++i) m.weights[i] = u(rng) < f[i] ? 1.0 : 0.0;
  return m;
}

MaskOrFocus focus_vector(const GradientPair& pair, double eps) {
  return {agree_prob(pair, eps), MaskKind::focus};
}

MaskOrFocus mask_salun(const ParamVector& g_forget) {
  if (g_forget.size() == 0) throw std::invalid_argument("mask_salun: empty gradient");
  std::vector<double> mags(g_forget.data(), g_forget.data() + g_forget.size());
  for (auto& x : mags) x = std::abs(x);
  const auto n = mags.size();
  const auto mid = mags.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(mags.begin(), mid, mags.end());
  double median = *mid;
  if (n % 2 == 0) median = 0.5 * (median + *std::max_element(mags.begin(), mid));
  MaskOrFocus m{Eigen::VectorXd::Zero(g_forget.size()), MaskKind::salun};
  for (Eigen::Index i = 0; i < g_forget.size(); ++i) {
    m.weights[i] = std::abs(g_forget[i]) >= median ? 1.0 : 0.0;
  }
  return m;
}

ParamVector update_direction(const MaskOrFocus& mask, const AggSpec& spec, const ParamVector& g_u,
                             const ParamVector& g_c) {
  if (mask.weights.size() != g_u.size()) throw std::invalid_argument("mask length mismatch");
  return -mask.weights.cwiseProduct(agg(spec, g_u, g_c));
}

void write_mask_csv(const std::filesystem::path& path, const Eigen::VectorXd& weights) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "index,weight\n";
  char buf[48];
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%lld,%.17g\n", static_cast<long long>(i), weights[i]);
    out << buf;
  }
}

Eigen::VectorXd read_mask_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "index,weight") throw std::runtime_error(path.string() + ": bad mask header");
  std::vector<double> w;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw std::runtime_error(path.string() + ": bad mask row");
    if (std::stoll(line.substr(0, comma)) != static_cast<long long>(w.size())) {
      throw std::runtime_error(path.string() + ": mask rows out of order");
    }
    w.push_back(std::stod(line.substr(comma + 1)));
  }
  return Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
}

}  // namespace ulab
