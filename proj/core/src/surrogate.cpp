#include "svsl/surrogate.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <string>

namespace svsl {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Full whitening z = transform * (x - mean). Decorrelating the inputs matters for the
// contextual fit, where theta tracks the context almost linearly late in training.
struct Whitening {
  Vector mean;
  Matrix transform;
};

Whitening whitening_of(std::span<const Vector> xs) {
  const auto d = xs.front().size();
  Vector mean = Vector::Zero(d);
  for (const auto& x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  Matrix cov = Matrix::Zero(d, d);
  for (const auto& x : xs) cov.noalias() += (x - mean) * (x - mean).transpose();
  cov /= static_cast<double>(xs.size());
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  const double top = std::max(es.eigenvalues().maxCoeff(), 0.0);
  Vector inv_sd(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double lam = es.eigenvalues()(i);
    // degenerate directions stay unscaled and are left to the ridge
    inv_sd(i) = lam > 1e-24 * (1.0 + top) ? 1.0 / std::sqrt(lam) : 1.0;
  }
  return {std::move(mean), inv_sd.asDiagonal() * es.eigenvectors().transpose()};
}

// Returns the smallest eta such that eta * precision + F is positive semi-definite,
// computed from the eigenvalues of factor^T F factor (factor: covariance Cholesky).
double eta_floor(const Matrix& cov_factor, const Matrix& F) {
  const Matrix m = cov_factor.transpose() * (0.5 * (F + F.transpose())) * cov_factor;
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  return std::max(0.0, -es.eigenvalues().minCoeff());
}

// Finds the smallest eta in [lo, cfg.eta_max] whose candidate satisfies the KL bound.
// `kl_at` returns +inf when the candidate is not a valid distribution.
template <class KlAt>
double search_eta(KlAt&& kl_at, double floor, const TrustRegionConfig& cfg) {
  if (floor >= cfg.eta_max) {
    throw TrustRegionInfeasible("trust region infeasible: required temperature " + std::to_string(floor) +
                                " exceeds search range");
  }
  double lo = std::max(cfg.eta_min, floor * (1.0 + 1e-8) + 1e-14);
  double hi = cfg.eta_max;
  const double kl_lo = kl_at(lo);
  if (kl_lo <= cfg.epsilon) return lo;
  if (!(kl_at(hi) <= cfg.epsilon)) {
    throw DualNonConvergence("dual search: KL bound not met at the upper temperature", lo, hi);
  }
  // invariant: kl(lo) > epsilon >= kl(hi)
  for (int it = 0; it < cfg.max_iterations; ++it) {
    if (std::log(hi / lo) < 1e-10) return hi;
    const double mid = std::sqrt(lo * hi);
    if (kl_at(mid) <= cfg.epsilon) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  throw DualNonConvergence("dual search did not converge within the iteration limit", lo, hi);
}

std::optional<Gaussian> gauss_candidate(const Matrix& prec_q, const Vector& lin_q, const QuadModel& quad, double eta,
                                        double omega) {
  const Matrix a = eta * prec_q + quad.F;
  const Vector b = eta * lin_q + quad.f;
  Eigen::LLT<Matrix> llt(0.5 * (a + a.transpose()));
  if (llt.info() != Eigen::Success) return std::nullopt;
  const Matrix cov = (eta + omega) * llt.solve(Matrix::Identity(a.rows(), a.cols()));
  const Vector mean = llt.solve(b);
  try {
    return Gaussian::from_covariance(mean, cov);
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::optional<LinCondGaussian> lincond_candidate(const Matrix& prec_q, const LinCondGaussian& q,
                                                 const CtxQuadModel& quad, double eta, double omega) {
  const Matrix a = eta * prec_q + quad.F_tt;
  Eigen::LLT<Matrix> llt(0.5 * (a + a.transpose()));
  if (llt.info() != Eigen::Success) return std::nullopt;
  const Matrix gain = llt.solve(eta * prec_q * q.gain() + quad.L);
  const Vector bias = llt.solve(eta * prec_q * q.bias() + quad.f_t);
  const Matrix cov = (eta + omega) * llt.solve(Matrix::Identity(a.rows(), a.cols()));
  try {
    return LinCondGaussian::from_covariance(gain, bias, cov);
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

Vector categorical_logits(const Vector& log_p, const Vector& adv, double eta, double omega) {
  const double temp = eta + omega;
  Vector logits(adv.size());
  for (Eigen::Index i = 0; i < adv.size(); ++i) {
    const double prior = eta > 0.0 ? (eta / temp) * log_p(i) : 0.0;
    logits(i) = prior + adv(i) / temp;
  }
  return logits.array() - log_sum_exp(logits);
}

Vector probs_from_logits(const Vector& logits) { return logits.array().exp(); }

double categorical_kl_logits(const Vector& log_pi, const Vector& log_p) {
  double v = 0.0;
  for (Eigen::Index i = 0; i < log_pi.size(); ++i) {
    if (!std::isfinite(log_pi(i))) continue;
    if (!std::isfinite(log_p(i))) return kInf;
    v += std::exp(log_pi(i)) * (log_pi(i) - log_p(i));
  }
  return std::max(v, 0.0);
}

}  // namespace

InsufficientSamples::InsufficientSamples(std::size_t required_, std::size_t got_)
    : std::runtime_error("insufficient samples for surrogate fit: need at least " + std::to_string(required_) +
                         ", got " + std::to_string(got_)),
      required(required_),
      got(got_) {}

DualNonConvergence::DualNonConvergence(const std::string& what, double lo, double hi)
    : std::runtime_error(what + " (bracket [" + std::to_string(lo) + ", " + std::to_string(hi) + "])"),
      eta_lo(lo),
      eta_hi(hi) {}

std::size_t quadratic_feature_count(std::size_t dim) { return dim * (dim + 3) / 2 + 1; }

QuadModel fit_quadratic(std::span<const Vector> xs, std::span<const double> ys, double ridge) {
  if (xs.size() != ys.size()) throw std::invalid_argument("fit_quadratic: xs and ys differ in length");
  if (ridge < 0.0) throw std::invalid_argument("fit_quadratic: ridge must be non-negative");
  if (xs.empty()) throw InsufficientSamples(1, 0);
  const auto d = xs.front().size();
  const std::size_t n_feat = quadratic_feature_count(static_cast<std::size_t>(d));
  if (xs.size() < n_feat) throw InsufficientSamples(n_feat, xs.size());
  for (const auto& x : xs) require_dim(static_cast<std::size_t>(d), static_cast<std::size_t>(x.size()), "fit_quadratic");

  const Whitening w = whitening_of(xs);
  const auto n = static_cast<Eigen::Index>(xs.size());
  // standardized targets keep the ridge negligible whatever the reward scale
  const Eigen::Map<const Vector> yv(ys.data(), n);
  const double y_mean = yv.mean();
  const double y_sd = std::sqrt((yv.array() - y_mean).square().mean());
  const double y_scale = y_sd > 0.0 ? y_sd : 1.0;
  const auto p = static_cast<Eigen::Index>(n_feat);

  // rows 0..n-1 data, rows n..n+p-2 ridge on every non-constant feature
  Matrix design = Matrix::Zero(n + p - 1, p);
  Vector target = Vector::Zero(n + p - 1);
  for (Eigen::Index r = 0; r < n; ++r) {
    const Vector z = w.transform * (xs[static_cast<std::size_t>(r)] - w.mean);
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = i; j < d; ++j) design(r, k++) = z(i) * z(j);
    for (Eigen::Index i = 0; i < d; ++i) design(r, k++) = z(i);
    design(r, k) = 1.0;
    target(r) = (ys[static_cast<std::size_t>(r)] - y_mean) / y_scale;
  }
  const double s = std::sqrt(ridge);
  for (Eigen::Index k = 0; k + 1 < p; ++k) design(n + k, k) = s;

  const Vector coef = y_scale * design.colPivHouseholderQr().solve(target);

  Matrix Fw = Matrix::Zero(d, d);
  Vector fw(d);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = i; j < d; ++j) {
      if (i == j) {
        Fw(i, i) = -2.0 * coef(k);
      } else {
        Fw(i, j) = -coef(k);
        Fw(j, i) = -coef(k);
      }
      ++k;
    }
  }
  for (Eigen::Index i = 0; i < d; ++i) fw(i) = coef(k++);
  const double f0w = coef(k) + y_mean;

  QuadModel out;
  out.F = w.transform.transpose() * Fw * w.transform;
  out.F = 0.5 * (out.F + out.F.transpose());
  const Vector g = w.transform.transpose() * fw;
  out.f = out.F * w.mean + g;
  out.f0 = f0w - 0.5 * w.mean.dot(out.F * w.mean) - w.mean.dot(g);
  return out;
}

CtxQuadModel fit_contextual_quadratic(std::span<const Vector> cs, std::span<const Vector> thetas,
                                      std::span<const double> ys, double ridge) {
  if (cs.size() != thetas.size() || cs.size() != ys.size()) {
    throw std::invalid_argument("fit_contextual_quadratic: input lengths differ");
  }
  if (cs.empty()) throw InsufficientSamples(1, 0);
  const auto dt = thetas.front().size();
  const auto dc = cs.front().size();
  const std::size_t n_feat = quadratic_feature_count(static_cast<std::size_t>(dt + dc));
  if (cs.size() < n_feat) throw InsufficientSamples(n_feat, cs.size());

  std::vector<Vector> joint;
  joint.reserve(cs.size());
  for (std::size_t i = 0; i < cs.size(); ++i) {
    require_dim(static_cast<std::size_t>(dt), static_cast<std::size_t>(thetas[i].size()), "fit_contextual_quadratic");
    require_dim(static_cast<std::size_t>(dc), static_cast<std::size_t>(cs[i].size()), "fit_contextual_quadratic");
    Vector z(dt + dc);
    z << thetas[i], cs[i];
    joint.push_back(std::move(z));
  }
  const QuadModel q = fit_quadratic(joint, ys, ridge);

  CtxQuadModel out;
  out.F_tt = q.F.topLeftCorner(dt, dt);
  out.L = -q.F.topRightCorner(dt, dc);
  out.f_t = q.f.head(dt);
  out.F_cc = q.F.bottomRightCorner(dc, dc);
  out.f_c = q.f.tail(dc);
  out.f0 = q.f0;
  return out;
}

GaussianUpdate more_gauss_update(const Gaussian& q, const QuadModel& quad, const TrustRegionConfig& cfg) {
  require_dim(q.dim(), static_cast<std::size_t>(quad.f.size()), "more_gauss_update");
  if (!(cfg.epsilon > 0.0) || cfg.omega < 0.0) throw std::invalid_argument("more_gauss_update: invalid config");
  const Matrix prec_q = q.precision();
  const Vector lin_q = prec_q * q.mean();
  const double floor = eta_floor(q.cov_factor(), quad.F);

  auto kl_at = [&](double eta) {
    const auto cand = gauss_candidate(prec_q, lin_q, quad, eta, cfg.omega);
    return cand ? kl(*cand, q) : kInf;
  };

  if (cfg.omega > 0.0 && floor == 0.0) {
    if (auto free = gauss_candidate(prec_q, lin_q, quad, 0.0, cfg.omega)) {
      const double k = kl(*free, q);
      if (k <= cfg.epsilon) return {std::move(*free), 0.0, k};
    }
  }
  const double eta = search_eta(kl_at, floor, cfg);
  auto cand = gauss_candidate(prec_q, lin_q, quad, eta, cfg.omega);
  if (!cand) throw TrustRegionInfeasible("more_gauss_update: selected temperature gives a non-PD precision");
  const double k = kl(*cand, q);
  return {std::move(*cand), eta, k};
}

LinCondUpdate more_lincond_update(const LinCondGaussian& q, const CtxQuadModel& quad,
                                  std::span<const Vector> contexts, const TrustRegionConfig& cfg) {
  if (contexts.empty()) throw std::invalid_argument("more_lincond_update: no contexts");
  require_dim(q.param_dim(), static_cast<std::size_t>(quad.f_t.size()), "more_lincond_update");
  require_dim(q.context_dim(), static_cast<std::size_t>(quad.L.cols()), "more_lincond_update");
  if (!(cfg.epsilon > 0.0) || cfg.omega < 0.0) throw std::invalid_argument("more_lincond_update: invalid config");
  const Gaussian q_cov(Vector::Zero(static_cast<Eigen::Index>(q.param_dim())), q.cov_factor());
  const Matrix prec_q = q_cov.precision();
  const double floor = eta_floor(q.cov_factor(), quad.F_tt);

  auto kl_at = [&](double eta) {
    const auto cand = lincond_candidate(prec_q, q, quad, eta, cfg.omega);
    return cand ? mean_kl(*cand, q, contexts) : kInf;
  };

  if (cfg.omega > 0.0 && floor == 0.0) {
    if (auto free = lincond_candidate(prec_q, q, quad, 0.0, cfg.omega)) {
      const double k = mean_kl(*free, q, contexts);
      if (k <= cfg.epsilon) return {std::move(*free), 0.0, k};
    }
  }
  const double eta = search_eta(kl_at, floor, cfg);
  auto cand = lincond_candidate(prec_q, q, quad, eta, cfg.omega);
  if (!cand) throw TrustRegionInfeasible("more_lincond_update: selected temperature gives a non-PD precision");
  const double k = mean_kl(*cand, q, contexts);
  return {std::move(*cand), eta, k};
}

CategoricalUpdate reps_categorical_update(const Categorical& p_old, const Vector& advantages,
                                          const TrustRegionConfig& cfg) {
  require_dim(p_old.size(), static_cast<std::size_t>(advantages.size()), "reps_categorical_update");
  if (!advantages.allFinite()) throw std::invalid_argument("reps_categorical_update: advantages must be finite");
  if (!(cfg.epsilon > 0.0) || cfg.omega < 0.0) throw std::invalid_argument("reps_categorical_update: invalid config");
  const Vector log_p = p_old.log_probs();

  auto kl_at = [&](double eta) { return categorical_kl_logits(categorical_logits(log_p, advantages, eta, cfg.omega), log_p); };

  double eta = 0.0;
  if (cfg.omega > 0.0 && kl_at(0.0) <= cfg.epsilon) {
    eta = 0.0;
  } else {
    eta = search_eta(kl_at, 0.0, cfg);
  }
  const Vector logits = categorical_logits(log_p, advantages, eta, cfg.omega);
  Categorical dist(probs_from_logits(logits));
  const double k = kl(dist, p_old);
  return {std::move(dist), eta, k};
}

}  // namespace svsl
