#pragma once

#include <memory>
#include <span>
#include <vector>

#include "svsl/prob.hpp"

namespace svsl {

/// Raised for structural edits that would leave the model invalid.
class InvalidOperation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Mixture of linear-conditional experts with per-component context Gaussians.
///
///   pi(theta | c) = sum_o  pi(c|o) pi(o) / pi(c) * pi(theta | c, o)
///
/// The three per-component lists always have the same length.
class MoEPolicy {
 public:
  MoEPolicy(std::size_t context_dim, std::size_t param_dim);

  [[nodiscard]] std::size_t size() const { return experts_.size(); }
  [[nodiscard]] bool empty() const { return experts_.empty(); }
  [[nodiscard]] std::size_t context_dim() const { return context_dim_; }
  [[nodiscard]] std::size_t param_dim() const { return param_dim_; }

  [[nodiscard]] const Categorical& weights() const { return weights_; }
  [[nodiscard]] const Gaussian& context(std::size_t o) const { return contexts_.at(o); }
  [[nodiscard]] const LinCondGaussian& expert(std::size_t o) const { return experts_.at(o); }
  [[nodiscard]] const std::vector<Gaussian>& contexts() const { return contexts_; }
  [[nodiscard]] const std::vector<LinCondGaussian>& experts() const { return experts_; }

  /// Appends a component and resets the weights to uniform 1/O.
  void add_component(Gaussian context, LinCondGaussian expert);
  /// Removes component `o` and renormalizes the remaining weights.
  void remove_component(std::size_t o);

  void set_weights(Categorical w);
  void set_context(std::size_t o, Gaussian g);
  void set_expert(std::size_t o, LinCondGaussian e);

 private:
  void check_context(const Gaussian& g) const;
  void check_expert(const LinCondGaussian& e) const;

  std::size_t context_dim_;
  std::size_t param_dim_;
  Categorical weights_;
  std::vector<Gaussian> contexts_;
  std::vector<LinCondGaussian> experts_;
};

/// Frozen copy of a policy; supplies the auxiliary gating and responsibilities.
class VariationalSnapshot {
 public:
  explicit VariationalSnapshot(const MoEPolicy& m) : policy_(std::make_shared<const MoEPolicy>(m)) {}

  [[nodiscard]] const MoEPolicy& policy() const { return *policy_; }

 private:
  std::shared_ptr<const MoEPolicy> policy_;
};

VariationalSnapshot snapshot(const MoEPolicy& m);

/// log pi(o | c) for every o.
Vector log_gating(const MoEPolicy& m, const Vector& c);
Vector gating(const MoEPolicy& m, const Vector& c);
inline Vector log_gating(const VariationalSnapshot& s, const Vector& c) { return log_gating(s.policy(), c); }
inline Vector gating(const VariationalSnapshot& s, const Vector& c) { return gating(s.policy(), c); }

/// log pi(o | c, theta) for every o.
Vector log_responsibilities(const MoEPolicy& m, const Vector& c, const Vector& theta);
Vector responsibilities(const MoEPolicy& m, const Vector& c, const Vector& theta);
inline Vector log_responsibilities(const VariationalSnapshot& s, const Vector& c, const Vector& theta) {
  return log_responsibilities(s.policy(), c, theta);
}
inline Vector responsibilities(const VariationalSnapshot& s, const Vector& c, const Vector& theta) {
  return responsibilities(s.policy(), c, theta);
}

/// log pi(c) = logsumexp_o [log pi(o) + log pi(c|o)].
double marginal_context_log_density(const MoEPolicy& m, const Vector& c);

/// log pi(theta | c), the mixture marginal over components.
double policy_log_density(const MoEPolicy& m, const Vector& c, const Vector& theta);

struct PolicyDraw {
  std::size_t component;
  Vector theta;
};

/// o ~ pi(o|c), theta ~ pi(theta|c,o).
PolicyDraw policy_sample(const MoEPolicy& m, const Vector& c, Rng& rng);

/// Monte-Carlo estimate of H[pi(theta|c)] at one context.
double mixture_entropy_at(const MoEPolicy& m, const Vector& c, std::size_t n_samples, Rng& rng);

/// Average over `contexts` of the Monte-Carlo mixture entropy at each context.
double expected_mixture_entropy(const MoEPolicy& m, std::span<const Vector> contexts, std::size_t n_samples,
                                Rng& rng);

}  // namespace svsl
