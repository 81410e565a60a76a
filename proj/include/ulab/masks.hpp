#pragma once

// Parameter selection for feasible unlearning updates.
//
// Given the gradient of the unlearning objective (g_u) and of the utility
// constraint (g_c), an update direction is feasible when it is negatively
// aligned with both. Restricting the update to components where the two
// gradients share a sign and combining them with a sign-invariant
// aggregation yields such a direction:
//
//     delta = -weights (.) agg(g_u, g_c)
//
// With batch gradients the signs are only estimates. Modelling each batch
// gradient as the true gradient plus independent Gaussian noise with
// per-component variance sigma2 gives the posterior probability that the
// true components agree in sign:
//
//     phi = Phi(g / sqrt(sigma2 + eps)),
//     f   = phi_u * phi_c + (1 - phi_u) * (1 - phi_c).
//
// `f` is thresholded (mask_prob), sampled (mask_bernoulli), or used directly
// as soft weights (focus_vector).

#include <cstdint>
#include <filesystem>
#include <string_view>

#include "ulab/nn.hpp"

namespace ulab {

struct GradientPair {
  ParamVector g_u;
  ParamVector g_c;
  ParamVector sigma2_u;
  ParamVector sigma2_c;
};

// Throws std::invalid_argument on length mismatch or negative variance.
void validate(const GradientPair& pair);

enum class MaskKind { none, salun, and_mask, prob, bernoulli, focus };

std::string_view to_string(MaskKind k);
MaskKind parse_mask_kind(std::string_view s);

struct MaskOrFocus {
  Eigen::VectorXd weights;  // in [0, 1]; binary for every kind except focus
  MaskKind kind = MaskKind::none;

  // Number of nonzero weights.
  std::int64_t support() const;
};

enum class AggKind { linear, abs_min };

struct AggSpec {
  AggKind kind = AggKind::linear;
  double alpha = 0.05;
  double beta = 0.95;
};

std::string_view to_string(AggKind k);
AggKind parse_agg_kind(std::string_view s);
void validate(const AggSpec& spec);

// Standard normal CDF, 0.5 * erfc(-x / sqrt(2)) using the C library erfc
// (glibc's implementation is accurate to about one ulp, well inside the
// 1e-12 absolute error budget).
double normal_cdf(double x);

// Componentwise aggregation. linear: alpha * g_u + beta * g_c.
// abs_min: the argument of smaller magnitude; on |x| == |y| the g_u
// component is returned.
ParamVector agg(const AggSpec& spec, const ParamVector& g_u, const ParamVector& g_c);

// 1 where g_u and g_c are both nonzero with the same sign. Zero components
// are always masked out.
MaskOrFocus mask_and(const ParamVector& g_u, const ParamVector& g_c);

// Posterior probability of sign agreement of the true gradients, per
// component.
//
// Evaluated as f = 1/2 + erf(z_u / sqrt 2) * erf(z_c / sqrt 2) / 2, which is
// algebraically identical to phi_u * phi_c + (1 - phi_u)(1 - phi_c) since
// 2 * Phi(z) - 1 = erf(z / sqrt 2). This form keeps the sign of f - 1/2
// exact: it is positive iff z_u and z_c are nonzero with equal signs.
// A component with g = 0 has z = 0 regardless of the variance, and
// sigma2 + eps == 0 with g != 0 gives z = +-inf.
Eigen::VectorXd agree_prob(const GradientPair& pair, double eps);

// 1 iff agree_prob > p (strict). At p = 1/2 this reproduces mask_and on the
// batch gradients exactly.
MaskOrFocus mask_prob(const GradientPair& pair, double p, double eps);

// Independent Bernoulli(agree_prob_i) draws.
MaskOrFocus mask_bernoulli(const GradientPair& pair, double eps, std::uint64_t seed);

// Soft weights equal to agree_prob.
MaskOrFocus focus_vector(const GradientPair& pair, double eps);

// 1 iff |g_i| >= median(|g|) (mean of the two middle values for even length).
MaskOrFocus mask_salun(const ParamVector& g_forget);

// -weights (.) agg(g_u, g_c)
ParamVector update_direction(const MaskOrFocus& mask, const AggSpec& spec, const ParamVector& g_u,
                             const ParamVector& g_c);

// CSV with header "index,weight", one row per component.
void write_mask_csv(const std::filesystem::path& path, const Eigen::VectorXd& weights);
Eigen::VectorXd read_mask_csv(const std::filesystem::path& path);

}  // namespace ulab
