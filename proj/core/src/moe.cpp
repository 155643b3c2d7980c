#include "svsl/moe.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "svsl/diagnostics.hpp"

namespace svsl {
namespace {

void require_nonempty(const MoEPolicy& m, const char* what) {
  if (m.empty()) throw InvalidOperation(std::string(what) + ": model has no components");
}

}  // namespace

MoEPolicy::MoEPolicy(std::size_t context_dim, std::size_t param_dim)
    : context_dim_(context_dim), param_dim_(param_dim) {
  if (context_dim == 0 || param_dim == 0) throw std::invalid_argument("MoEPolicy: dimensions must be positive");
}

void MoEPolicy::check_context(const Gaussian& g) const { require_dim(context_dim_, g.dim(), "context component"); }

void MoEPolicy::check_expert(const LinCondGaussian& e) const {
  require_dim(param_dim_, e.param_dim(), "expert parameter dim");
  require_dim(context_dim_, e.context_dim(), "expert context dim");
}

void MoEPolicy::add_component(Gaussian context, LinCondGaussian expert) {
  check_context(context);
  check_expert(expert);
  contexts_.push_back(std::move(context));
  experts_.push_back(std::move(expert));
  weights_ = Categorical::uniform(experts_.size());
}

void MoEPolicy::remove_component(std::size_t o) {
  if (o >= size()) throw std::out_of_range("remove_component: index " + std::to_string(o) + " out of range");
  if (size() < 2) throw InvalidOperation("remove_component: cannot remove the last component");
  Vector w(static_cast<Eigen::Index>(size() - 1));
  for (std::size_t i = 0, j = 0; i < size(); ++i) {
    if (i != o) w(static_cast<Eigen::Index>(j++)) = weights_[i];
  }
  contexts_.erase(contexts_.begin() + static_cast<std::ptrdiff_t>(o));
  experts_.erase(experts_.begin() + static_cast<std::ptrdiff_t>(o));
  if (w.sum() <= 0.0) w.setConstant(1.0);
  weights_ = Categorical(w);
}

void MoEPolicy::set_weights(Categorical w) {
  require_dim(size(), w.size(), "set_weights");
  weights_ = std::move(w);
}

void MoEPolicy::set_context(std::size_t o, Gaussian g) {
  check_context(g);
  contexts_.at(o) = std::move(g);
}

void MoEPolicy::set_expert(std::size_t o, LinCondGaussian e) {
  check_expert(e);
  experts_.at(o) = std::move(e);
}

VariationalSnapshot snapshot(const MoEPolicy& m) { return VariationalSnapshot(m); }

Vector log_gating(const MoEPolicy& m, const Vector& c) {
  require_nonempty(m, "gating");
  require_dim(m.context_dim(), static_cast<std::size_t>(c.size()), "gating");
  const auto n = static_cast<Eigen::Index>(m.size());
  Vector logits(n);
  const Vector log_w = m.weights().log_probs();
  for (Eigen::Index o = 0; o < n; ++o) {
    logits(o) = log_w(o) + log_density(m.context(static_cast<std::size_t>(o)), c);
  }
  const double lse = log_sum_exp(logits);
  if (!std::isfinite(lse)) {
    warn(Warning::GatingUnderflow, "all context densities underflow; falling back to prior weights");
    return log_w;
  }
  return logits.array() - lse;
}

Vector gating(const MoEPolicy& m, const Vector& c) { return log_gating(m, c).array().exp(); }

Vector log_responsibilities(const MoEPolicy& m, const Vector& c, const Vector& theta) {
  require_dim(m.param_dim(), static_cast<std::size_t>(theta.size()), "responsibilities");
  const Vector lg = log_gating(m, c);
  Vector logits(lg.size());
  for (Eigen::Index o = 0; o < lg.size(); ++o) {
    logits(o) = lg(o) + log_density(condition(m.expert(static_cast<std::size_t>(o)), c), theta);
  }
  const double lse = log_sum_exp(logits);
  if (!std::isfinite(lse)) {
    warn(Warning::ResponsibilityUnderflow, "all expert densities underflow; falling back to gating");
    return lg;
  }
  return logits.array() - lse;
}

Vector responsibilities(const MoEPolicy& m, const Vector& c, const Vector& theta) {
  return log_responsibilities(m, c, theta).array().exp();
}

double marginal_context_log_density(const MoEPolicy& m, const Vector& c) {
  require_nonempty(m, "marginal_context_log_density");
  require_dim(m.context_dim(), static_cast<std::size_t>(c.size()), "marginal_context_log_density");
  const auto n = static_cast<Eigen::Index>(m.size());
  Vector terms(n);
  const Vector log_w = m.weights().log_probs();
  for (Eigen::Index o = 0; o < n; ++o) terms(o) = log_w(o) + log_density(m.context(static_cast<std::size_t>(o)), c);
  return log_sum_exp(terms);
}

double policy_log_density(const MoEPolicy& m, const Vector& c, const Vector& theta) {
  require_dim(m.param_dim(), static_cast<std::size_t>(theta.size()), "policy_log_density");
  const Vector lg = log_gating(m, c);
  Vector terms(lg.size());
  for (Eigen::Index o = 0; o < lg.size(); ++o) {
    terms(o) = lg(o) + log_density(condition(m.expert(static_cast<std::size_t>(o)), c), theta);
  }
  return log_sum_exp(terms);
}

PolicyDraw policy_sample(const MoEPolicy& m, const Vector& c, Rng& rng) {
  const Vector g = gating(m, c);
  const std::size_t o = sample_index(g, rng);
  return {o, sample(m.expert(o), c, rng)};
}

double mixture_entropy_at(const MoEPolicy& m, const Vector& c, std::size_t n_samples, Rng& rng) {
  if (n_samples == 0) throw std::invalid_argument("mixture entropy: n_samples must be >= 1");
  const Vector g = gating(m, c);
  const Vector lg = g.array().log();
  std::vector<Gaussian> conditionals;
  conditionals.reserve(m.size());
  for (const auto& e : m.experts()) conditionals.push_back(condition(e, c));

  Vector terms(static_cast<Eigen::Index>(m.size()));
  double acc = 0.0;
  for (std::size_t j = 0; j < n_samples; ++j) {
    const std::size_t o = sample_index(g, rng);
    const Vector theta = sample(conditionals[o], rng);
    for (Eigen::Index k = 0; k < terms.size(); ++k) {
      terms(k) = lg(k) + log_density(conditionals[static_cast<std::size_t>(k)], theta);
    }
    acc -= log_sum_exp(terms);
  }
  return acc / static_cast<double>(n_samples);
}

double expected_mixture_entropy(const MoEPolicy& m, std::span<const Vector> contexts, std::size_t n_samples,
                                Rng& rng) {
  if (contexts.empty()) throw std::invalid_argument("expected_mixture_entropy: no contexts");
  double total = 0.0;
  for (const auto& c : contexts) total += mixture_entropy_at(m, c, n_samples, rng);
  return total / static_cast<double>(contexts.size());
}

}  // namespace svsl
