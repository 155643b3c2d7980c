#include "svsl/prob.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace svsl {
namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // ln(2 pi)
constexpr double kCategoricalFloor = 1e-15;

void require_factor(const Matrix& factor, std::size_t dim, const char* what) {
  if (static_cast<std::size_t>(factor.rows()) != dim || static_cast<std::size_t>(factor.cols()) != dim) {
    throw std::invalid_argument(std::string(what) + ": covariance factor must be " + std::to_string(dim) + "x" +
                                std::to_string(dim));
  }
  for (Eigen::Index i = 0; i < factor.rows(); ++i) {
    if (!(factor(i, i) > 0.0) || !std::isfinite(factor(i, i))) {
      throw NotPositiveDefinite(std::string(what) + ": covariance factor diagonal must be positive and finite");
    }
    for (Eigen::Index j = i + 1; j < factor.cols(); ++j) {
      if (factor(i, j) != 0.0) throw std::invalid_argument(std::string(what) + ": factor must be lower triangular");
    }
  }
}

// Squared Mahalanobis norm of `diff` under covariance factor*factor^T.
double mahalanobis_sq(const Matrix& factor, const Vector& diff) {
  const Vector z = factor.triangularView<Eigen::Lower>().solve(diff);
  return z.squaredNorm();
}

double log_det_from_factor(const Matrix& factor) {
  return 2.0 * factor.diagonal().array().log().sum();
}

}  // namespace

void require_dim(std::size_t expected, std::size_t got, const char* what) {
  if (expected != got) {
    throw std::invalid_argument(std::string(what) + ": dimension mismatch (expected " + std::to_string(expected) +
                                ", got " + std::to_string(got) + ")");
  }
}

Matrix cholesky_lower(const Matrix& sym, const char* what) {
  if (sym.rows() != sym.cols()) throw std::invalid_argument(std::string(what) + ": matrix must be square");
  if (!sym.allFinite()) throw NotPositiveDefinite(std::string(what) + ": non-finite entries");
  const Matrix symmetric = 0.5 * (sym + sym.transpose());
  Eigen::LLT<Matrix> llt(symmetric);
  if (llt.info() != Eigen::Success) throw NotPositiveDefinite(std::string(what) + ": not positive definite");
  Matrix l = llt.matrixL();
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    if (!(l(i, i) > 0.0) || !std::isfinite(l(i, i))) {
      throw NotPositiveDefinite(std::string(what) + ": not positive definite");
    }
  }
  return l;
}

double log_sum_exp(const Vector& v) {
  if (v.size() == 0) return -std::numeric_limits<double>::infinity();
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

// ---------------------------------------------------------------- Gaussian

Gaussian::Gaussian(Vector mean, Matrix cov_factor) : mean_(std::move(mean)), factor_(std::move(cov_factor)) {
  require_factor(factor_, dim(), "Gaussian");
  if (!mean_.allFinite()) throw std::invalid_argument("Gaussian: mean must be finite");
}

Gaussian Gaussian::from_covariance(Vector mean, const Matrix& cov) {
  require_dim(static_cast<std::size_t>(mean.size()), static_cast<std::size_t>(cov.rows()), "Gaussian::from_covariance");
  return {std::move(mean), cholesky_lower(cov, "Gaussian covariance")};
}

Gaussian Gaussian::standard(std::size_t dim) {
  const auto n = static_cast<Eigen::Index>(dim);
  return {Vector::Zero(n), Matrix::Identity(n, n)};
}

Matrix Gaussian::covariance() const { return factor_ * factor_.transpose(); }

Matrix Gaussian::precision() const {
  const auto n = factor_.rows();
  const Matrix inv_factor = factor_.triangularView<Eigen::Lower>().solve(Matrix::Identity(n, n));
  return inv_factor.transpose() * inv_factor;
}

double Gaussian::log_det_cov() const { return log_det_from_factor(factor_); }

// --------------------------------------------------------- LinCondGaussian

LinCondGaussian::LinCondGaussian(Matrix gain, Vector bias, Matrix cov_factor)
    : gain_(std::move(gain)), bias_(std::move(bias)), factor_(std::move(cov_factor)) {
  require_dim(param_dim(), static_cast<std::size_t>(gain_.rows()), "LinCondGaussian gain rows");
  require_factor(factor_, param_dim(), "LinCondGaussian");
  if (!gain_.allFinite() || !bias_.allFinite()) throw std::invalid_argument("LinCondGaussian: non-finite parameters");
}

LinCondGaussian LinCondGaussian::from_covariance(Matrix gain, Vector bias, const Matrix& cov) {
  require_dim(static_cast<std::size_t>(bias.size()), static_cast<std::size_t>(cov.rows()),
              "LinCondGaussian::from_covariance");
  return {std::move(gain), std::move(bias), cholesky_lower(cov, "expert covariance")};
}

Vector LinCondGaussian::conditional_mean(const Vector& c) const {
  require_dim(context_dim(), static_cast<std::size_t>(c.size()), "LinCondGaussian::conditional_mean");
  return gain_ * c + bias_;
}

// ------------------------------------------------------------- Categorical

Categorical::Categorical(Vector probs) : probs_(std::move(probs)) {
  if (probs_.size() == 0) throw std::invalid_argument("Categorical: empty probability vector");
  for (Eigen::Index i = 0; i < probs_.size(); ++i) {
    if (!std::isfinite(probs_(i)) || probs_(i) < 0.0) {
      throw std::invalid_argument("Categorical: probabilities must be finite and non-negative");
    }
    if (probs_(i) < kCategoricalFloor) probs_(i) = 0.0;
  }
  const double total = probs_.sum();
  if (!(total > 0.0)) throw std::invalid_argument("Categorical: probabilities sum to zero");
  probs_ /= total;
}

Categorical Categorical::uniform(std::size_t n) {
  const auto k = static_cast<Eigen::Index>(n);
  return Categorical(Vector::Constant(k, 1.0 / static_cast<double>(n)));
}

Vector Categorical::log_probs() const { return probs_.array().log(); }

// -------------------------------------------------------------- densities

double log_density(const Gaussian& g, const Vector& x) {
  require_dim(g.dim(), static_cast<std::size_t>(x.size()), "log_density");
  const double d = static_cast<double>(g.dim());
  return -0.5 * (d * kLog2Pi + g.log_det_cov() + mahalanobis_sq(g.cov_factor(), x - g.mean()));
}

double entropy(const Gaussian& g) {
  const double d = static_cast<double>(g.dim());
  return 0.5 * (d * (1.0 + kLog2Pi) + g.log_det_cov());
}

double kl(const Gaussian& p, const Gaussian& q) {
  require_dim(q.dim(), p.dim(), "kl");
  const auto& lq = q.cov_factor();
  // tr(Sq^-1 Sp) = ||Lq^-1 Lp||_F^2
  const Matrix m = lq.triangularView<Eigen::Lower>().solve(p.cov_factor());
  const double trace = m.squaredNorm();
  const double maha = mahalanobis_sq(lq, q.mean() - p.mean());
  const double value =
      0.5 * (trace + maha - static_cast<double>(p.dim()) + q.log_det_cov() - p.log_det_cov());
  return std::max(value, 0.0);
}

Gaussian condition(const LinCondGaussian& lc, const Vector& c) {
  return {lc.conditional_mean(c), lc.cov_factor()};
}

double entropy(const LinCondGaussian& lc) {
  const double d = static_cast<double>(lc.param_dim());
  return 0.5 * (d * (1.0 + kLog2Pi) + log_det_from_factor(lc.cov_factor()));
}

double mean_kl(const LinCondGaussian& p, const LinCondGaussian& q, std::span<const Vector> contexts) {
  if (contexts.empty()) throw std::invalid_argument("mean_kl: no contexts");
  double total = 0.0;
  for (const auto& c : contexts) total += kl(condition(p, c), condition(q, c));
  return total / static_cast<double>(contexts.size());
}

double entropy(const Categorical& w) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < w.probs().size(); ++i) {
    const double p = w.probs()(i);
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

double kl(const Categorical& p, const Categorical& q) {
  require_dim(q.size(), p.size(), "kl");
  double value = 0.0;
  for (Eigen::Index i = 0; i < p.probs().size(); ++i) {
    const double pi = p.probs()(i);
    if (pi == 0.0) continue;
    const double qi = q.probs()(i);
    if (qi == 0.0) return std::numeric_limits<double>::infinity();
    value += pi * (std::log(pi) - std::log(qi));
  }
  return std::max(value, 0.0);
}

// --------------------------------------------------------------- sampling

Vector standard_normal(std::size_t dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector z(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
  return z;
}

Vector sample(const Gaussian& g, Rng& rng) {
  return g.mean() + g.cov_factor().triangularView<Eigen::Lower>() * standard_normal(g.dim(), rng);
}

Vector sample(const LinCondGaussian& lc, const Vector& c, Rng& rng) {
  return lc.conditional_mean(c) + lc.cov_factor().triangularView<Eigen::Lower>() * standard_normal(lc.param_dim(), rng);
}

std::size_t sample_index(const Vector& probs, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng);
  double cum = 0.0;
  std::size_t last_nonzero = 0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    if (probs(i) <= 0.0) continue;
    last_nonzero = static_cast<std::size_t>(i);
    cum += probs(i);
    if (u < cum) return last_nonzero;
  }
  return last_nonzero;
}

std::size_t sample(const Categorical& w, Rng& rng) { return sample_index(w.probs(), rng); }

}  // namespace svsl
