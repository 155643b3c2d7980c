#include "svsl/objective.hpp"

#include <cmath>
#include <stdexcept>

namespace svsl {
namespace {

double categorical_kl_from_logs(const Vector& log_p, const Vector& log_q) {
  double v = 0.0;
  for (Eigen::Index i = 0; i < log_p.size(); ++i) {
    if (!std::isfinite(log_p(i))) continue;
    v += std::exp(log_p(i)) * (log_p(i) - log_q(i));
  }
  return v;
}

}  // namespace

std::vector<JointSample> sample_joint(const MoEPolicy& m, std::size_t n, Rng& rng) {
  std::vector<JointSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t o = sample(m.weights(), rng);
    Vector c = sample(m.context(o), rng);
    Vector theta = sample(m.expert(o), c, rng);
    out.push_back({o, std::move(c), std::move(theta)});
  }
  return out;
}

Estimate mean_and_error(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("mean_and_error: empty input");
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0) / n)};
}

std::vector<double> joint_objective_terms(const MoEPolicy& m, const RewardFn& reward, double alpha, double beta,
                                          std::span<const JointSample> samples) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    out.push_back(reward(s.theta, s.c) - alpha * policy_log_density(m, s.c, s.theta) -
                  beta * marginal_context_log_density(m, s.c));
  }
  return out;
}

std::vector<double> decomposed_objective_terms(const MoEPolicy& m, const VariationalSnapshot& aux,
                                               const RewardFn& reward, double alpha, double beta,
                                               std::span<const JointSample> samples) {
  std::vector<double> out;
  out.reserve(samples.size());
  const Vector log_w = m.weights().log_probs();
  for (const auto& s : samples) {
    const auto o = static_cast<Eigen::Index>(s.component);
    const double aux_resp = log_responsibilities(aux, s.c, s.theta)(o);
    const double aux_gate = log_gating(aux, s.c)(o);
    const double log_expert = log_density(condition(m.expert(s.component), s.c), s.theta);
    const double log_ctx = log_density(m.context(s.component), s.c);
    out.push_back(reward(s.theta, s.c) + alpha * aux_resp + (beta - alpha) * aux_gate - alpha * log_expert -
                  beta * log_ctx - beta * log_w(o));
  }
  return out;
}

std::vector<double> auxiliary_kl_terms(const MoEPolicy& m, const VariationalSnapshot& aux, double alpha, double beta,
                                       std::span<const JointSample> samples) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    const double kl_resp =
        categorical_kl_from_logs(log_responsibilities(m, s.c, s.theta), log_responsibilities(aux, s.c, s.theta));
    const double kl_gate = categorical_kl_from_logs(log_gating(m, s.c), log_gating(aux, s.c));
    out.push_back(alpha * kl_resp + (beta - alpha) * kl_gate);
  }
  return out;
}

}  // namespace svsl
