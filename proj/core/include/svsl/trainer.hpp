#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "svsl/envs.hpp"
#include "svsl/moe.hpp"
#include "svsl/surrogate.hpp"

namespace svsl {

/// One episode: component o executed parameters theta in context c.
struct Rollout {
  std::size_t component = 0;
  Vector c;
  Vector theta;
  double reward = 0.0;
};

/// Fixed-capacity FIFO; the oldest rollout is evicted first.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Rollout r);
  void clear() { entries_.clear(); }

  [[nodiscard]] std::size_t capacity() const { return capacity_; }
  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  [[nodiscard]] bool empty() const { return entries_.empty(); }
  [[nodiscard]] const std::deque<Rollout>& entries() const { return entries_; }
  [[nodiscard]] auto begin() const { return entries_.begin(); }
  [[nodiscard]] auto end() const { return entries_.end(); }

 private:
  std::size_t capacity_;
  std::deque<Rollout> entries_;
};

struct HyperParams {
  double alpha = 1e-4;   ///< policy entropy scale
  double beta = 1.0;     ///< context entropy scale; must be >= alpha
  double beta_w = 1.0;   ///< weight entropy scale
  std::size_t n_components = 60;
  std::size_t iters_per_component = 350;
  std::size_t finetune_every = 50;
  std::size_t samples_per_iter = 50;
  std::size_t buffer_capacity = 200;
  double deletion_weight_threshold = 1e-5;
  bool deletion_check_enabled = false;
  double epsilon_expert = 0.1;
  double epsilon_context = 0.05;
  double epsilon_weights = 0.5;
  double ridge = 1e-8;
  double nw_bandwidth_factor = 0.5;
  std::size_t weight_update_iters = 10;
  std::size_t metrics_entropy_contexts = 8;
  std::size_t metrics_entropy_samples = 32;
  bool zero_aux = false;  ///< ablation: drop both log-auxiliary reward terms
  std::uint64_t seed = 0;
  std::size_t threads = 1;  ///< rollout evaluation workers

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct IterationMetrics {
  std::size_t iter = 0;
  std::uint64_t env_samples = 0;
  std::uint64_t rejected_samples = 0;
  std::size_t n_components = 0;
  double mean_reward = 0.0;
  double expected_entropy = 0.0;
  double mean_ctx_kl = 0.0;
  double mean_expert_kl = 0.0;
};

/// Post-hoc record of one applied trust-region update.
struct UpdateRecord {
  enum class Kind { Expert, Context, Weights };
  Kind kind;
  std::size_t iter;
  std::size_t component;
  double epsilon;
  double kl;  ///< recomputed from the old and new distributions after the update
};

struct TrainState {
  TrainState(HyperParams hp, std::size_t context_dim, std::size_t param_dim);

  HyperParams hp;
  Rng rng;
  MoEPolicy policy;
  VariationalSnapshot snapshot;
  std::vector<ReplayBuffer> buffers;
  std::size_t iteration = 0;
  std::uint64_t env_samples = 0;
  std::uint64_t rejected_samples = 0;
  std::vector<IterationMetrics> metrics;
  std::vector<UpdateRecord> audit;
};

/// r.reward + alpha * log pi~(o | c, theta); the log term is floored at -709.
double augmented_expert_target(const Rollout& r, const VariationalSnapshot& snap, double alpha, bool use_aux = true);

/// Single-sample L_c(o, c) + (beta - alpha) log pi~(o | c), with the expert entropy
/// taken analytically from the current model.
double context_target(const Rollout& r, const MoEPolicy& m, const VariationalSnapshot& snap, double alpha,
                      double beta, bool use_aux = true);

/// Nadaraya-Watson estimate of the per-context value.
class ValueBaseline {
 public:
  ValueBaseline(std::vector<Vector> contexts, std::vector<double> targets, double bandwidth);

  [[nodiscard]] double operator()(const Vector& c) const;
  [[nodiscard]] const std::vector<double>& targets() const { return targets_; }
  [[nodiscard]] double bandwidth() const { return bandwidth_; }

 private:
  std::vector<Vector> contexts_;
  std::vector<double> targets_;
  double bandwidth_;
};

/// Targets are importance-weighted rewards gating(m)/gating(pre), ratio clipped to [1e-6, 1e6].
ValueBaseline value_baseline(std::span<const Rollout> samples, const MoEPolicy& m, const VariationalSnapshot& pre_gating,
                             double bandwidth);

/// Median of all pairwise Euclidean distances (strided subsample above `max_points`).
double median_pairwise_distance(std::span<const Vector> points, std::size_t max_points = 1000);

/// Linear-interpolated percentile, q in [0, 100].
double percentile(std::vector<double> values, double q);

/// Empty policy sized for `env`.
TrainState make_train_state(const HyperParams& hp, const EnvSpec& env);

/// Appends a randomly initialized component and an empty buffer; weights become uniform.
void add_random_component(TrainState& s, const EnvSpec& env);

/// Samples `n` rollouts of component o, evaluates them and pushes them into its buffer.
std::vector<Rollout> collect_rollouts(TrainState& s, std::size_t o, const EnvSpec& env, std::size_t n);

struct UpdateOutcome {
  bool applied = false;  ///< false when the surrogate fit was skipped (warm-up)
  double kl = 0.0;
  std::vector<Rollout> batch;
};

UpdateOutcome update_expert(TrainState& s, std::size_t o, const EnvSpec& env);
/// Uses the rollouts already in buffer o.
UpdateOutcome update_context_dist(TrainState& s, std::size_t o);

void tighten(TrainState& s);

/// Advantage A(o) = mean_buffer[context_target - V(c)] + beta H[pi(c|o)].
Vector weight_advantages(const TrainState& s, const ValueBaseline& v);
/// One entropy-regularized REPS step on the weights against `pre_gating`'s value baseline.
Categorical update_weights(TrainState& s, const VariationalSnapshot& pre_gating);

/// True iff component o should be deleted as a local optimum.
bool deletion_check(const TrainState& s, std::size_t o);
void remove_component(TrainState& s, std::size_t o);

/// Drops components with weight below the threshold; keeps the argmax if all are below.
void final_prune(TrainState& s);

/// Refills every buffer with `buffer_capacity` fresh rollouts.
void resample_buffers(TrainState& s, const EnvSpec& env);

/// Resample, iterate the weight update, then prune.
void finalize_weights(TrainState& s, const EnvSpec& env);

using IterationCallback = std::function<void(const TrainState&)>;

/// Full incremental training procedure.
TrainState run(const HyperParams& hp, const EnvSpec& env, const IterationCallback& on_iteration = {});

}  // namespace svsl
