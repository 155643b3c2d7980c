#include "svsl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>

#include "svsl/diagnostics.hpp"

namespace svsl {
namespace {

constexpr double kLogFloor = -709.0;
constexpr double kRatioMin = 1e-6;
constexpr double kRatioMax = 1e6;

double floored(double log_value) { return std::max(log_value, kLogFloor); }

void require_component(const TrainState& s, std::size_t o, const char* what) {
  if (o >= s.policy.size()) {
    throw std::out_of_range(std::string(what) + ": component " + std::to_string(o) + " does not exist");
  }
}

std::size_t worker_count(const HyperParams& hp, std::size_t jobs) {
  std::size_t n = hp.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : hp.threads;
  return std::max<std::size_t>(1, std::min(n, jobs));
}

// Evaluates rewards in parallel; results land at their own index so ordering is fixed.
std::vector<EvalResult> evaluate_batch(const EnvSpec& env, const std::vector<Vector>& thetas,
                                       const std::vector<Vector>& cs, std::size_t workers) {
  std::vector<EvalResult> out(thetas.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) out[i] = env.evaluate(thetas[i], cs[i]);
  };
  if (workers <= 1) {
    work(0, thetas.size());
    return out;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (thetas.size() + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t b = w * chunk;
    const std::size_t e = std::min(thetas.size(), b + chunk);
    if (b >= e) break;
    pool.emplace_back(work, b, e);
  }
  for (auto& t : pool) t.join();
  return out;
}

std::string with_context(const TrainState& s, std::size_t o, const std::exception& e) {
  return "iteration " + std::to_string(s.iteration) + ", component " + std::to_string(o) + ": " + e.what();
}

std::vector<Vector> uniform_box_points(const Box& box, std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<Vector> pts;
  pts.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vector u(static_cast<Eigen::Index>(box.dim()));
    for (Eigen::Index k = 0; k < u.size(); ++k) u(k) = unif(rng);
    pts.push_back(box.lower + box.width().cwiseProduct(u));
  }
  return pts;
}

}  // namespace

// ------------------------------------------------------------ ReplayBuffer

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::push(Rollout r) {
  if (!std::isfinite(r.reward)) throw std::invalid_argument("ReplayBuffer: reward must be finite");
  if (entries_.size() == capacity_) entries_.pop_front();
  entries_.push_back(std::move(r));
}

// ------------------------------------------------------------ HyperParams

void HyperParams::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument("hyperparams." + field + ": " + why);
  };
  if (!(alpha >= 0.0)) fail("alpha", "must be >= 0");
  if (!(beta >= alpha)) fail("beta", "must be >= alpha so the decomposition stays a lower bound");
  if (!(beta_w >= 0.0)) fail("beta_w", "must be >= 0");
  if (n_components < 1) fail("n_components", "must be >= 1");
  if (iters_per_component < 1) fail("iters_per_component", "must be >= 1");
  if (finetune_every < 1) fail("finetune_every", "must be >= 1");
  if (samples_per_iter < 1) fail("samples_per_iter", "must be >= 1");
  if (buffer_capacity < samples_per_iter) fail("buffer_capacity", "must be >= samples_per_iter");
  if (!(deletion_weight_threshold >= 0.0 && deletion_weight_threshold < 1.0)) {
    fail("deletion_weight_threshold", "must be in [0, 1)");
  }
  if (!(epsilon_expert > 0.0)) fail("epsilon_expert", "must be > 0");
  if (!(epsilon_context > 0.0)) fail("epsilon_context", "must be > 0");
  if (!(epsilon_weights > 0.0)) fail("epsilon_weights", "must be > 0");
  if (!(ridge >= 0.0)) fail("ridge", "must be >= 0");
  if (!(nw_bandwidth_factor > 0.0)) fail("nw_bandwidth_factor", "must be > 0");
}

TrainState::TrainState(HyperParams hp_, std::size_t context_dim, std::size_t param_dim)
    : hp(std::move(hp_)), rng(hp.seed), policy(context_dim, param_dim), snapshot(policy) {}

// --------------------------------------------------------------- targets

double augmented_expert_target(const Rollout& r, const VariationalSnapshot& snap, double alpha, bool use_aux) {
  if (!use_aux || alpha == 0.0) return r.reward;
  const Vector lr = log_responsibilities(snap, r.c, r.theta);
  return r.reward + alpha * floored(lr(static_cast<Eigen::Index>(r.component)));
}

double context_target(const Rollout& r, const MoEPolicy& m, const VariationalSnapshot& snap, double alpha, double beta,
                      bool use_aux) {
  double t = augmented_expert_target(r, snap, alpha, use_aux) + alpha * entropy(m.expert(r.component));
  if (use_aux && beta != alpha) {
    const Vector lg = log_gating(snap, r.c);
    t += (beta - alpha) * floored(lg(static_cast<Eigen::Index>(r.component)));
  }
  return t;
}

// ---------------------------------------------------------- value baseline

ValueBaseline::ValueBaseline(std::vector<Vector> contexts, std::vector<double> targets, double bandwidth)
    : contexts_(std::move(contexts)), targets_(std::move(targets)), bandwidth_(bandwidth) {
  if (contexts_.empty()) throw std::invalid_argument("ValueBaseline: no samples");
  if (contexts_.size() != targets_.size()) throw std::invalid_argument("ValueBaseline: size mismatch");
  if (!(bandwidth_ > 0.0)) throw std::invalid_argument("ValueBaseline: bandwidth must be positive");
}

double ValueBaseline::operator()(const Vector& c) const {
  const double inv_h2 = 1.0 / (bandwidth_ * bandwidth_);
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < contexts_.size(); ++i) {
    const double k = std::exp(-0.5 * (c - contexts_[i]).squaredNorm() * inv_h2);
    num += k * targets_[i];
    den += k;
  }
  if (den > 0.0) return num / den;
  warn(Warning::KernelUnderflow, "all kernel weights underflow; using the mean target");
  double mean = 0.0;
  for (double t : targets_) mean += t;
  return mean / static_cast<double>(targets_.size());
}

ValueBaseline value_baseline(std::span<const Rollout> samples, const MoEPolicy& m, const VariationalSnapshot& pre_gating,
                             double bandwidth) {
  if (samples.empty()) throw std::invalid_argument("value_baseline: no samples");
  std::vector<Vector> cs;
  std::vector<double> ts;
  cs.reserve(samples.size());
  ts.reserve(samples.size());
  for (const auto& r : samples) {
    const auto o = static_cast<Eigen::Index>(r.component);
    const double num = gating(m, r.c)(o);
    const double den = gating(pre_gating, r.c)(o);
    double ratio = den > 0.0 ? num / den : kRatioMax;
    ratio = std::clamp(ratio, kRatioMin, kRatioMax);
    cs.push_back(r.c);
    ts.push_back(ratio * r.reward);
  }
  return {std::move(cs), std::move(ts), bandwidth};
}

double median_pairwise_distance(std::span<const Vector> points, std::size_t max_points) {
  if (points.size() < 2) return 0.0;
  const std::size_t stride = (points.size() + max_points - 1) / max_points;
  std::vector<const Vector*> sub;
  for (std::size_t i = 0; i < points.size(); i += stride) sub.push_back(&points[i]);
  std::vector<double> d;
  d.reserve(sub.size() * (sub.size() - 1) / 2);
  for (std::size_t i = 0; i < sub.size(); ++i)
    for (std::size_t j = i + 1; j < sub.size(); ++j) d.push_back((*sub[i] - *sub[j]).norm());
  if (d.empty()) return 0.0;
  return percentile(std::move(d), 50.0);
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile: empty input");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

// ------------------------------------------------------------- structure

TrainState make_train_state(const HyperParams& hp, const EnvSpec& env) {
  hp.validate();
  env.validate();
  return TrainState(hp, env.context_dim, env.param_dim);
}

void add_random_component(TrainState& s, const EnvSpec& env) {
  const Box& box = env.context_box;
  const auto dc = static_cast<Eigen::Index>(env.context_dim);
  const auto dt = static_cast<Eigen::Index>(env.param_dim);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Vector ctx_mean(dc);
  for (Eigen::Index i = 0; i < dc; ++i) ctx_mean(i) = box.lower(i) + unif(s.rng) * (box.upper(i) - box.lower(i));
  const Matrix ctx_factor = (0.3 * box.width()).asDiagonal();
  const double scale = env.parameter_scale;
  const Vector bias = env.init_center() + 0.1 * scale * standard_normal(env.param_dim, s.rng);
  const Matrix expert_factor = scale * Matrix::Identity(dt, dt);
  s.policy.add_component(Gaussian(ctx_mean, ctx_factor), LinCondGaussian(Matrix::Zero(dt, dc), bias, expert_factor));
  s.buffers.emplace_back(s.hp.buffer_capacity);
}

void remove_component(TrainState& s, std::size_t o) {
  require_component(s, o, "remove_component");
  s.policy.remove_component(o);
  s.buffers.erase(s.buffers.begin() + static_cast<std::ptrdiff_t>(o));
  tighten(s);
}

std::vector<Rollout> collect_rollouts(TrainState& s, std::size_t o, const EnvSpec& env, std::size_t n) {
  require_component(s, o, "collect_rollouts");
  std::vector<Vector> cs;
  std::vector<Vector> thetas;
  cs.reserve(n);
  thetas.reserve(n);
  const auto& ctx = s.policy.context(o);
  const auto& ex = s.policy.expert(o);
  for (std::size_t i = 0; i < n; ++i) {
    cs.push_back(sample(ctx, s.rng));
    thetas.push_back(sample(ex, cs.back(), s.rng));
  }
  const auto results = evaluate_batch(env, thetas, cs, worker_count(s.hp, n));
  std::vector<Rollout> batch;
  batch.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (results[i].executed) {
      ++s.env_samples;
    } else {
      ++s.rejected_samples;
    }
    Rollout r{o, std::move(cs[i]), std::move(thetas[i]), results[i].reward};
    s.buffers[o].push(r);
    batch.push_back(std::move(r));
  }
  return batch;
}

// --------------------------------------------------------------- updates

UpdateOutcome update_expert(TrainState& s, std::size_t o, const EnvSpec& env) {
  require_component(s, o, "update_expert");
  UpdateOutcome out;
  out.batch = collect_rollouts(s, o, env, s.hp.samples_per_iter);

  const auto& buf = s.buffers[o];
  std::vector<Vector> cs;
  std::vector<Vector> thetas;
  std::vector<double> ys;
  for (const auto& r : buf) {
    cs.push_back(r.c);
    thetas.push_back(r.theta);
    ys.push_back(augmented_expert_target(r, s.snapshot, s.hp.alpha, !s.hp.zero_aux));
  }
  CtxQuadModel quad;
  try {
    quad = fit_contextual_quadratic(cs, thetas, ys, s.hp.ridge);
  } catch (const InsufficientSamples& e) {
    warn(Warning::SurrogateSkipped, "expert " + std::to_string(o) + ": " + e.what());
    return out;
  }
  TrustRegionConfig cfg;
  cfg.epsilon = s.hp.epsilon_expert;
  cfg.omega = s.hp.alpha;
  cfg.ridge = s.hp.ridge;
  const LinCondGaussian old = s.policy.expert(o);
  auto upd = more_lincond_update(old, quad, cs, cfg);
  const double post_kl = mean_kl(upd.dist, old, cs);
  s.policy.set_expert(o, std::move(upd.dist));
  s.audit.push_back({UpdateRecord::Kind::Expert, s.iteration, o, cfg.epsilon, post_kl});
  out.applied = true;
  out.kl = post_kl;
  return out;
}

UpdateOutcome update_context_dist(TrainState& s, std::size_t o) {
  require_component(s, o, "update_context_dist");
  UpdateOutcome out;
  const auto& buf = s.buffers[o];
  std::vector<Vector> cs;
  std::vector<double> ys;
  for (const auto& r : buf) {
    cs.push_back(r.c);
    ys.push_back(context_target(r, s.policy, s.snapshot, s.hp.alpha, s.hp.beta, !s.hp.zero_aux));
  }
  QuadModel quad;
  try {
    quad = fit_quadratic(cs, ys, s.hp.ridge);
  } catch (const InsufficientSamples& e) {
    warn(Warning::SurrogateSkipped, "context " + std::to_string(o) + ": " + e.what());
    return out;
  }
  TrustRegionConfig cfg;
  cfg.epsilon = s.hp.epsilon_context;
  cfg.omega = s.hp.beta;
  cfg.ridge = s.hp.ridge;
  const Gaussian old = s.policy.context(o);
  auto upd = more_gauss_update(old, quad, cfg);
  const double post_kl = kl(upd.dist, old);
  s.policy.set_context(o, std::move(upd.dist));
  s.audit.push_back({UpdateRecord::Kind::Context, s.iteration, o, cfg.epsilon, post_kl});
  out.applied = true;
  out.kl = post_kl;
  return out;
}

void tighten(TrainState& s) { s.snapshot = snapshot(s.policy); }

Vector weight_advantages(const TrainState& s, const ValueBaseline& v) {
  const auto n = static_cast<Eigen::Index>(s.policy.size());
  Vector adv(n);
  for (Eigen::Index o = 0; o < n; ++o) {
    const auto& buf = s.buffers[static_cast<std::size_t>(o)];
    if (buf.empty()) throw std::runtime_error("update_weights: buffer of component " + std::to_string(o) + " is empty");
    double acc = 0.0;
    for (const auto& r : buf) {
      acc += context_target(r, s.policy, s.snapshot, s.hp.alpha, s.hp.beta, !s.hp.zero_aux) - v(r.c);
    }
    adv(o) = acc / static_cast<double>(buf.size()) + s.hp.beta * entropy(s.policy.context(static_cast<std::size_t>(o)));
  }
  return adv;
}

Categorical update_weights(TrainState& s, const VariationalSnapshot& pre_gating) {
  std::vector<Rollout> all;
  for (const auto& b : s.buffers) {
    if (b.empty()) throw std::runtime_error("update_weights: empty buffer");
    all.insert(all.end(), b.begin(), b.end());
  }
  std::vector<Vector> cs;
  cs.reserve(all.size());
  for (const auto& r : all) cs.push_back(r.c);
  double h = s.hp.nw_bandwidth_factor * median_pairwise_distance(cs);
  if (!(h > 0.0)) h = 1.0;
  const ValueBaseline v = value_baseline(all, s.policy, pre_gating, h);
  const Vector adv = weight_advantages(s, v);

  TrustRegionConfig cfg;
  cfg.epsilon = s.hp.epsilon_weights;
  cfg.omega = s.hp.beta_w;
  const Categorical old = s.policy.weights();
  auto upd = reps_categorical_update(old, adv, cfg);
  s.audit.push_back({UpdateRecord::Kind::Weights, s.iteration, 0, cfg.epsilon, kl(upd.dist, old)});
  s.policy.set_weights(upd.dist);
  return upd.dist;
}

bool deletion_check(const TrainState& s, std::size_t o) {
  require_component(s, o, "deletion_check");
  if (!s.hp.deletion_check_enabled || s.policy.size() < 2) return false;
  auto expected_aug = [&](std::size_t k) {
    const auto& buf = s.buffers[k];
    if (buf.empty()) return -std::numeric_limits<double>::infinity();
    double acc = 0.0;
    for (const auto& r : buf) acc += augmented_expert_target(r, s.snapshot, s.hp.alpha, !s.hp.zero_aux);
    return acc / static_cast<double>(buf.size());
  };
  std::vector<double> other_rewards;
  std::vector<double> other_entropies;
  for (std::size_t k = 0; k < s.policy.size(); ++k) {
    if (k == o) continue;
    other_rewards.push_back(expected_aug(k));
    other_entropies.push_back(entropy(s.policy.expert(k)));
  }
  const bool poor_reward = expected_aug(o) < percentile(other_rewards, 10.0);
  const bool collapsed = entropy(s.policy.expert(o)) < percentile(other_entropies, 50.0) - 2.0;
  return poor_reward && collapsed;
}

void final_prune(TrainState& s) {
  const Vector w = s.policy.weights().probs();
  std::vector<std::size_t> keep;
  for (Eigen::Index o = 0; o < w.size(); ++o) {
    if (w(o) >= s.hp.deletion_weight_threshold) keep.push_back(static_cast<std::size_t>(o));
  }
  if (keep.empty()) {
    Eigen::Index best = 0;
    w.maxCoeff(&best);
    keep.push_back(static_cast<std::size_t>(best));
    warn(Warning::PruneFallback, "every weight is below the pruning threshold; keeping the largest");
  }
  for (std::size_t o = s.policy.size(); o-- > 0;) {
    if (std::find(keep.begin(), keep.end(), o) == keep.end()) {
      s.policy.remove_component(o);
      s.buffers.erase(s.buffers.begin() + static_cast<std::ptrdiff_t>(o));
    }
  }
  tighten(s);
}

void resample_buffers(TrainState& s, const EnvSpec& env) {
  for (std::size_t o = 0; o < s.policy.size(); ++o) {
    s.buffers[o].clear();
    collect_rollouts(s, o, env, s.hp.buffer_capacity);
  }
}

void finalize_weights(TrainState& s, const EnvSpec& env) {
  resample_buffers(s, env);
  tighten(s);
  const VariationalSnapshot pre = s.snapshot;
  for (std::size_t it = 0; it < s.hp.weight_update_iters; ++it) {
    update_weights(s, pre);
    tighten(s);
  }
  final_prune(s);
}

// ------------------------------------------------------------------- run

TrainState run(const HyperParams& hp, const EnvSpec& env, const IterationCallback& on_iteration) {
  TrainState s = make_train_state(hp, env);
  Rng metric_rng(hp.seed ^ 0x5eedULL);
  const auto metric_contexts = uniform_box_points(env.context_box, hp.metrics_entropy_contexts, metric_rng);

  for (std::size_t k = 1; k <= hp.n_components; ++k) {
    add_random_component(s, env);
    tighten(s);
    const std::size_t newest = s.policy.size() - 1;

    for (std::size_t i = 1; i <= hp.iters_per_component; ++i) {
      ++s.iteration;
      std::vector<std::size_t> targets;
      if (i % hp.finetune_every == 0 && s.policy.size() > 1) {
        for (std::size_t o = 0; o < s.policy.size(); ++o) targets.push_back(o);
      } else {
        targets.push_back(newest);
      }

      double reward_sum = 0.0;
      std::size_t reward_n = 0;
      double expert_kl = 0.0;
      double ctx_kl = 0.0;
      std::size_t expert_n = 0;
      std::size_t ctx_n = 0;
      for (auto o : targets) {
        try {
          auto e = update_expert(s, o, env);
          for (const auto& r : e.batch) reward_sum += r.reward;
          reward_n += e.batch.size();
          if (e.applied) {
            expert_kl += e.kl;
            ++expert_n;
          }
        } catch (const std::exception& ex) {
          throw std::runtime_error(with_context(s, o, ex));
        }
      }
      for (auto o : targets) {
        try {
          auto c = update_context_dist(s, o);
          if (c.applied) {
            ctx_kl += c.kl;
            ++ctx_n;
          }
        } catch (const std::exception& ex) {
          throw std::runtime_error(with_context(s, o, ex));
        }
      }
      tighten(s);

      IterationMetrics m;
      m.iter = s.iteration;
      m.env_samples = s.env_samples;
      m.rejected_samples = s.rejected_samples;
      m.n_components = s.policy.size();
      m.mean_reward = reward_n ? reward_sum / static_cast<double>(reward_n) : 0.0;
      if (!metric_contexts.empty() && hp.metrics_entropy_samples > 0) {
        Rng ent_rng(hp.seed + 0x9e3779b97f4a7c15ULL * s.iteration);
        m.expected_entropy = expected_mixture_entropy(s.policy, metric_contexts, hp.metrics_entropy_samples, ent_rng);
      } else {
        m.expected_entropy = std::numeric_limits<double>::quiet_NaN();
      }
      m.mean_ctx_kl = ctx_n ? ctx_kl / static_cast<double>(ctx_n) : 0.0;
      m.mean_expert_kl = expert_n ? expert_kl / static_cast<double>(expert_n) : 0.0;
      s.metrics.push_back(m);
      if (on_iteration) on_iteration(s);
    }

    if (deletion_check(s, newest)) remove_component(s, newest);
  }
  finalize_weights(s, env);
  return s;
}

}  // namespace svsl
