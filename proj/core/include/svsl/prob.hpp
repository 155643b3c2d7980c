#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace svsl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Random engine used throughout. Always owned by the caller.
using Rng = std::mt19937_64;

/// A covariance (or precision) failed its Cholesky factorization.
class NotPositiveDefinite : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Throws std::invalid_argument when `got != expected`.
void require_dim(std::size_t expected, std::size_t got, const char* what);

/// Cholesky factor of a symmetric matrix; throws NotPositiveDefinite otherwise.
Matrix cholesky_lower(const Matrix& sym, const char* what = "covariance");

/// log(sum(exp(v))) with max subtraction. Returns -inf for an all -inf input.
double log_sum_exp(const Vector& v);

/// Multivariate normal stored as mean + lower Cholesky factor of the covariance.
class Gaussian {
 public:
  Gaussian() = default;
  /// `cov_factor` must be lower triangular with strictly positive diagonal.
  Gaussian(Vector mean, Matrix cov_factor);

  static Gaussian from_covariance(Vector mean, const Matrix& cov);
  static Gaussian standard(std::size_t dim);

  [[nodiscard]] std::size_t dim() const { return static_cast<std::size_t>(mean_.size()); }
  [[nodiscard]] const Vector& mean() const { return mean_; }
  [[nodiscard]] const Matrix& cov_factor() const { return factor_; }
  [[nodiscard]] Matrix covariance() const;
  [[nodiscard]] Matrix precision() const;
  [[nodiscard]] double log_det_cov() const;

 private:
  Vector mean_;
  Matrix factor_;
};

/// pi(theta | c) = N(theta; gain * c + bias, factor * factor^T).
class LinCondGaussian {
 public:
  LinCondGaussian() = default;
  LinCondGaussian(Matrix gain, Vector bias, Matrix cov_factor);

  static LinCondGaussian from_covariance(Matrix gain, Vector bias, const Matrix& cov);

  [[nodiscard]] std::size_t param_dim() const { return static_cast<std::size_t>(bias_.size()); }
  [[nodiscard]] std::size_t context_dim() const { return static_cast<std::size_t>(gain_.cols()); }
  [[nodiscard]] const Matrix& gain() const { return gain_; }
  [[nodiscard]] const Vector& bias() const { return bias_; }
  [[nodiscard]] const Matrix& cov_factor() const { return factor_; }
  [[nodiscard]] Matrix covariance() const { return factor_ * factor_.transpose(); }

  [[nodiscard]] Vector conditional_mean(const Vector& c) const;

 private:
  Matrix gain_;
  Vector bias_;
  Matrix factor_;
};

/// Distribution over component indices. Entries below 1e-15 are clamped to 0.
class Categorical {
 public:
  Categorical() = default;
  explicit Categorical(Vector probs);

  static Categorical uniform(std::size_t n);

  [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(probs_.size()); }
  [[nodiscard]] const Vector& probs() const { return probs_; }
  [[nodiscard]] double operator[](std::size_t i) const { return probs_(static_cast<Eigen::Index>(i)); }
  [[nodiscard]] Vector log_probs() const;

 private:
  Vector probs_;
};

double log_density(const Gaussian& g, const Vector& x);
double entropy(const Gaussian& g);
/// KL(p || q).
double kl(const Gaussian& p, const Gaussian& q);

Gaussian condition(const LinCondGaussian& lc, const Vector& c);
/// Entropy of pi(theta | c); independent of c.
double entropy(const LinCondGaussian& lc);
/// Mean over `contexts` of KL(p(.|c) || q(.|c)).
double mean_kl(const LinCondGaussian& p, const LinCondGaussian& q, std::span<const Vector> contexts);

double entropy(const Categorical& w);
double kl(const Categorical& p, const Categorical& q);

Vector sample(const Gaussian& g, Rng& rng);
Vector sample(const LinCondGaussian& lc, const Vector& c, Rng& rng);
std::size_t sample(const Categorical& w, Rng& rng);
/// Draw from a probability vector that sums to one.
std::size_t sample_index(const Vector& probs, Rng& rng);

Vector standard_normal(std::size_t dim, Rng& rng);

}  // namespace svsl
