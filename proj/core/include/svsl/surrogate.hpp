#pragma once

#include <span>
#include <stdexcept>

#include "svsl/prob.hpp"

namespace svsl {

/// R(x) = -1/2 x^T F x + x^T f + f0, with F symmetric.
struct QuadModel {
  Matrix F;
  Vector f;
  double f0 = 0.0;

  [[nodiscard]] double operator()(const Vector& x) const { return -0.5 * x.dot(F * x) + x.dot(f) + f0; }
};

/// R(theta, c) = -1/2 theta^T F_tt theta + theta^T (L c + f_t) + g(c),
/// g(c) = -1/2 c^T F_cc c + c^T f_c + f0.
struct CtxQuadModel {
  Matrix F_tt;
  Matrix L;
  Vector f_t;
  Matrix F_cc;
  Vector f_c;
  double f0 = 0.0;

  [[nodiscard]] double operator()(const Vector& theta, const Vector& c) const {
    return -0.5 * theta.dot(F_tt * theta) + theta.dot(L * c + f_t) - 0.5 * c.dot(F_cc * c) + c.dot(f_c) + f0;
  }
};

struct TrustRegionConfig {
  double epsilon = 0.1;  ///< KL bound per update (nats)
  double omega = 0.0;    ///< entropy coefficient
  double ridge = 1e-8;   ///< surrogate regularization on whitened features
  double eta_min = 1e-8;
  double eta_max = 1e8;
  int max_iterations = 200;
};

/// Fewer samples than surrogate features.
class InsufficientSamples : public std::runtime_error {
 public:
  InsufficientSamples(std::size_t required, std::size_t got);
  std::size_t required;
  std::size_t got;
};

/// No admissible temperature makes the updated precision positive definite.
class TrustRegionInfeasible : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The temperature search could not bracket or localize the KL bound.
class DualNonConvergence : public std::runtime_error {
 public:
  DualNonConvergence(const std::string& what, double lo, double hi);
  double eta_lo;
  double eta_hi;
};

/// Number of features [upper(x x^T), x, 1] for a `dim`-dimensional quadratic.
std::size_t quadratic_feature_count(std::size_t dim);

/// Ridge least-squares quadratic fit on whitened inputs and standardized targets.
QuadModel fit_quadratic(std::span<const Vector> xs, std::span<const double> ys, double ridge);

/// Joint quadratic in (theta, c); context-only terms are kept in g(c).
CtxQuadModel fit_contextual_quadratic(std::span<const Vector> cs, std::span<const Vector> thetas,
                                      std::span<const double> ys, double ridge);

struct GaussianUpdate {
  Gaussian dist;
  double eta = 0.0;
  double kl = 0.0;
};

struct LinCondUpdate {
  LinCondGaussian dist;
  double eta = 0.0;
  double kl = 0.0;  ///< mean KL over the supplied contexts
};

struct CategoricalUpdate {
  Categorical dist;
  double eta = 0.0;
  double kl = 0.0;
};

/// argmax E[R] + omega H subject to KL(pi || q) <= epsilon, for a Gaussian pi.
GaussianUpdate more_gauss_update(const Gaussian& q, const QuadModel& quad, const TrustRegionConfig& cfg);

/// Contextual version: the KL bound applies to the average over `contexts`.
LinCondUpdate more_lincond_update(const LinCondGaussian& q, const CtxQuadModel& quad,
                                  std::span<const Vector> contexts, const TrustRegionConfig& cfg);

/// Entropy-regularized REPS step for a categorical distribution.
CategoricalUpdate reps_categorical_update(const Categorical& p_old, const Vector& advantages,
                                          const TrustRegionConfig& cfg);

}  // namespace svsl
