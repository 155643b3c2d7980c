#include <gtest/gtest.h>

#include <cmath>

#include "svsl/diagnostics.hpp"
#include "svsl/model_io.hpp"
#include "svsl/trainer.hpp"
#include "test_support.hpp"

namespace svsl {
namespace {

EnvSpec quadratic_env(double half_width = 1.0) {
  QuadraticToyConfig cfg;
  cfg.A = (Matrix(2, 2) << 1.0, 0.5, -0.5, 1.0).finished();
  cfg.a = (Vector(2) << 0.5, -0.25).finished();
  cfg.context_box = Box{-half_width * Vector::Ones(2), half_width * Vector::Ones(2)};
  return make_quadratic_toy(cfg);
}

// 1-D context task with a reward peak near the upper context corner.
EnvSpec corner_env() {
  EnvSpec env;
  env.name = "corner";
  env.context_dim = 1;
  env.param_dim = 1;
  env.context_box = Box{Vector::Constant(1, -1.0), Vector::Constant(1, 1.0)};
  env.reward = [](const Vector& th, const Vector& c) { return -5.0 * (c(0) - 0.9) * (c(0) - 0.9) - th(0) * th(0); };
  return env;
}

EnvSpec flat_env() {
  EnvSpec env = corner_env();
  env.name = "flat";
  env.reward = [](const Vector&, const Vector&) { return 0.0; };
  return env;
}

void add_component(TrainState& s, Gaussian ctx, LinCondGaussian ex) {
  s.policy.add_component(std::move(ctx), std::move(ex));
  s.buffers.emplace_back(s.hp.buffer_capacity);
}

Rollout random_rollout(const MoEPolicy& m, std::size_t o, Rng& rng) {
  Rollout r;
  r.component = o;
  r.c = sample(m.context(o), rng);
  r.theta = sample(m.expert(o), r.c, rng);
  r.reward = testing::random_vector(1, rng)(0);
  return r;
}

TEST(ReplayBuffer, EvictsOldestFirst) {
  ReplayBuffer b(3);
  for (int i = 0; i < 5; ++i) b.push({0, Vector::Zero(1), Vector::Zero(1), static_cast<double>(i)});
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b.entries().front().reward, 2.0);
  EXPECT_EQ(b.entries().back().reward, 4.0);
  EXPECT_THROW(ReplayBuffer(0), std::invalid_argument);
}

TEST(HyperParams, ValidationNamesField) {
  HyperParams hp;
  hp.alpha = 2.0;
  hp.beta = 1.0;
  try {
    hp.validate();
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("hyperparams.beta"), std::string::npos);
  }
  hp = HyperParams{};
  hp.samples_per_iter = 0;
  EXPECT_THROW(hp.validate(), std::invalid_argument);
  EXPECT_NO_THROW(HyperParams{}.validate());
}

TEST(AugmentedExpertTarget, SingleComponentAndZeroAlpha) {
  Rng rng(1);
  const MoEPolicy one = testing::random_policy(1, 2, 3, rng);
  const Rollout r = random_rollout(one, 0, rng);
  EXPECT_NEAR(augmented_expert_target(r, snapshot(one), 0.7), r.reward, 1e-15);
  const MoEPolicy two = testing::random_policy(2, 2, 3, rng);
  const Rollout r2 = random_rollout(two, 1, rng);
  EXPECT_EQ(augmented_expert_target(r2, snapshot(two), 0.0), r2.reward);
  EXPECT_EQ(augmented_expert_target(r2, snapshot(two), 0.5, false), r2.reward);
}

TEST(AugmentedExpertTarget, MatchesResponsibilityOracle) {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const MoEPolicy m = testing::random_policy(2, 2, 3, rng);
    const Rollout r = random_rollout(m, t % 2, rng);
    const double resp = responsibilities(m, r.c, r.theta)(static_cast<Eigen::Index>(r.component));
    EXPECT_NEAR(augmented_expert_target(r, snapshot(m), 0.3), r.reward + 0.3 * std::log(resp), 1e-10);
  }
}

TEST(AugmentedExpertTarget, LogFloor) {
  MoEPolicy m(1, 1);
  const Gaussian ctx = Gaussian::standard(1);
  m.add_component(ctx, LinCondGaussian(Matrix::Zero(1, 1), Vector::Zero(1), 0.01 * Matrix::Identity(1, 1)));
  m.add_component(ctx, LinCondGaussian(Matrix::Zero(1, 1), Vector::Constant(1, 100), 0.01 * Matrix::Identity(1, 1)));
  const Rollout r{1, Vector::Zero(1), Vector::Zero(1), 0.0};
  EXPECT_NEAR(augmented_expert_target(r, snapshot(m), 2.0), -2.0 * 709.0, 1e-9);
}

TEST(ContextTarget, Cases) {
  Rng rng(3);
  const MoEPolicy one = testing::random_policy(1, 2, 3, rng);
  const Rollout r = random_rollout(one, 0, rng);
  EXPECT_NEAR(context_target(r, one, snapshot(one), 0.0, 1.0), r.reward, 1e-15);

  const MoEPolicy m = testing::random_policy(2, 2, 3, rng);
  const VariationalSnapshot snap = snapshot(m);
  const Rollout r2 = random_rollout(m, 1, rng);
  const double lc = augmented_expert_target(r2, snap, 0.4) + 0.4 * entropy(m.expert(1));
  EXPECT_NEAR(context_target(r2, m, snap, 0.4, 0.4), lc, 1e-12);

  const double resp = responsibilities(m, r2.c, r2.theta)(1);
  const double gate = gating(m, r2.c)(1);
  const double oracle =
      r2.reward + 0.2 * std::log(resp) + 0.2 * entropy(condition(m.expert(1), r2.c)) + (1.5 - 0.2) * std::log(gate);
  EXPECT_NEAR(context_target(r2, m, snap, 0.2, 1.5), oracle, 1e-10);
}

TEST(ValueBaseline, ConstantAndSingle) {
  Rng rng(4);
  const MoEPolicy m = testing::random_policy(3, 2, 1, rng);
  std::vector<Rollout> rs;
  for (int i = 0; i < 30; ++i) {
    Rollout r = random_rollout(m, i % 3, rng);
    r.reward = 2.5;
    rs.push_back(r);
  }
  const auto v = value_baseline(rs, m, snapshot(m), 0.7);
  for (int t = 0; t < 10; ++t) EXPECT_NEAR(v(testing::random_vector(2, rng)), 2.5, 1e-12);

  const ValueBaseline single({Vector::Zero(2)}, {3.0}, 0.5);
  EXPECT_NEAR(single(Vector::Constant(2, 1.0)), 3.0, 1e-15);
}

TEST(ValueBaseline, MatchesDirectSummation) {
  Rng rng(5);
  const MoEPolicy m = testing::random_policy(3, 2, 1, rng);
  MoEPolicy pre = m;
  pre.set_weights(testing::random_categorical(3, rng));
  std::vector<Rollout> rs;
  for (int i = 0; i < 40; ++i) rs.push_back(random_rollout(m, i % 3, rng));
  const double h = 0.8;
  const auto v = value_baseline(rs, m, snapshot(pre), h);
  for (int t = 0; t < 10; ++t) {
    const Vector c = testing::random_vector(2, rng);
    double num = 0, den = 0;
    for (const auto& r : rs) {
      const auto o = static_cast<Eigen::Index>(r.component);
      const double ratio = std::clamp(gating(m, r.c)(o) / gating(pre, r.c)(o), 1e-6, 1e6);
      const double k = std::exp(-0.5 * (c - r.c).squaredNorm() / (h * h));
      num += k * ratio * r.reward;
      den += k;
    }
    EXPECT_NEAR(v(c), num / den, 1e-12);
  }
}

TEST(ValueBaseline, KernelUnderflowFallsBackToMean) {
  const ValueBaseline v({Vector::Zero(1), Vector::Ones(1)}, {1.0, 3.0}, 1e-3);
  const auto before = warning_count(Warning::KernelUnderflow);
  EXPECT_NEAR(v(Vector::Constant(1, 1e3)), 2.0, 1e-15);
  EXPECT_EQ(warning_count(Warning::KernelUnderflow), before + 1);
}

TEST(Percentile, Interpolates) {
  EXPECT_DOUBLE_EQ(percentile({1, 2, 3, 4, 5}, 50), 3.0);
  EXPECT_DOUBLE_EQ(percentile({1, 2, 3, 4}, 50), 2.5);
  EXPECT_DOUBLE_EQ(percentile({0, 10}, 10), 1.0);
  std::vector<Vector> pts = {Vector::Zero(1), Vector::Ones(1), Vector::Constant(1, 3.0)};
  EXPECT_DOUBLE_EQ(median_pairwise_distance(pts), 2.0);
}

HyperParams expert_hp() {
  HyperParams hp;
  hp.alpha = 0.0;
  hp.beta = 1.0;
  hp.epsilon_expert = 2.0;
  hp.samples_per_iter = 50;
  hp.buffer_capacity = 50;
  hp.seed = 3;
  return hp;
}

TEST(UpdateExpert, ConvergesToPlantedOptimum) {
  // wide box: the out-of-box penalty is not quadratic and would bias the fit
  const EnvSpec env = quadratic_env(10.0);
  TrainState s = make_train_state(expert_hp(), env);
  add_component(s, Gaussian(Vector::Zero(2), 0.5 * Matrix::Identity(2, 2)),
                LinCondGaussian(Matrix::Zero(2, 2), Vector::Zero(2), Matrix::Identity(2, 2)));
  tighten(s);
  for (int i = 0; i < 30; ++i) {
    const auto out = update_expert(s, 0, env);
    EXPECT_TRUE(out.applied);
    tighten(s);
  }
  const auto& ex = s.policy.expert(0);
  const Matrix A = (Matrix(2, 2) << 1.0, 0.5, -0.5, 1.0).finished();
  const Vector a = (Vector(2) << 0.5, -0.25).finished();
  EXPECT_LT((ex.gain() - A).cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_LT((ex.bias() - a).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(UpdateExpert, DeterministicAndWithinTrustRegion) {
  const EnvSpec env = quadratic_env();
  auto once = [&] {
    HyperParams hp = expert_hp();
    hp.epsilon_expert = 0.1;
    TrainState s = make_train_state(hp, env);
    add_random_component(s, env);
    tighten(s);
    for (int i = 0; i < 10; ++i) {
      update_expert(s, 0, env);
      tighten(s);
    }
    return s;
  };
  const TrainState a = once(), b = once();
  EXPECT_EQ(a.policy.expert(0).gain(), b.policy.expert(0).gain());
  EXPECT_EQ(a.policy.expert(0).bias(), b.policy.expert(0).bias());
  EXPECT_EQ(a.policy.expert(0).cov_factor(), b.policy.expert(0).cov_factor());
  ASSERT_FALSE(a.audit.empty());
  for (const auto& u : a.audit) EXPECT_LE(u.kl, u.epsilon * 1.001);
}

TEST(UpdateExpert, SkipsUntilEnoughSamples) {
  const EnvSpec env = quadratic_env();
  HyperParams hp = expert_hp();
  hp.samples_per_iter = 10;  // 2+2 dims need 15 samples
  TrainState s = make_train_state(hp, env);
  add_random_component(s, env);
  tighten(s);
  const auto before = warning_count(Warning::SurrogateSkipped);
  EXPECT_FALSE(update_expert(s, 0, env).applied);
  EXPECT_TRUE(update_expert(s, 0, env).applied);
  EXPECT_EQ(warning_count(Warning::SurrogateSkipped), before + 1);
}

TEST(UpdateContext, MovesTowardRewardPeak) {
  const EnvSpec env = corner_env();
  HyperParams hp;
  hp.alpha = 0.0;
  hp.beta = 0.05;
  hp.epsilon_context = 0.1;
  TrainState s = make_train_state(hp, env);
  add_component(s, Gaussian(Vector::Zero(1), 0.3 * Matrix::Identity(1, 1)),
                LinCondGaussian(Matrix::Zero(1, 1), Vector::Zero(1), 0.3 * Matrix::Identity(1, 1)));
  tighten(s);
  double dist = std::abs(s.policy.context(0).mean()(0) - 0.9);
  int non_monotone = 0;
  for (int i = 0; i < 10; ++i) {
    update_expert(s, 0, env);
    const auto out = update_context_dist(s, 0);
    ASSERT_TRUE(out.applied);
    EXPECT_LE(out.kl, hp.epsilon_context * 1.001);
    tighten(s);
    const double d = std::abs(s.policy.context(0).mean()(0) - 0.9);
    if (d > dist) ++non_monotone;
    dist = d;
  }
  EXPECT_LE(non_monotone, 2);
  EXPECT_LT(dist, 0.9);
}

TEST(UpdateContext, FlatRewardGrowsCovariance) {
  const EnvSpec env = flat_env();
  HyperParams hp;
  hp.alpha = 0.0;
  hp.beta = 5.0;
  TrainState s = make_train_state(hp, env);
  add_component(s, Gaussian(Vector::Zero(1), 0.3 * Matrix::Identity(1, 1)),
                LinCondGaussian(Matrix::Zero(1, 1), Vector::Zero(1), Matrix::Identity(1, 1)));
  tighten(s);
  collect_rollouts(s, 0, env, 50);
  const double before = s.policy.context(0).covariance().determinant();
  ASSERT_TRUE(update_context_dist(s, 0).applied);
  EXPECT_GE(s.policy.context(0).covariance().determinant(), before);
}

TEST(Tighten, Idempotent) {
  const EnvSpec env = quadratic_env();
  TrainState s = make_train_state(expert_hp(), env);
  add_random_component(s, env);
  add_random_component(s, env);
  tighten(s);
  const Vector c = Vector::Constant(2, 0.2);
  const Vector g1 = gating(s.snapshot, c);
  tighten(s);
  EXPECT_EQ(gating(s.snapshot, c), g1);
}

TEST(UpdateWeights, DuplicatesStayUniform) {
  const EnvSpec env = corner_env();
  HyperParams hp;
  hp.alpha = 0.1;
  hp.beta = 1.0;
  TrainState s = make_train_state(hp, env);
  const Gaussian ctx(Vector::Zero(1), 0.4 * Matrix::Identity(1, 1));
  const LinCondGaussian ex(Matrix::Zero(1, 1), Vector::Zero(1), 0.5 * Matrix::Identity(1, 1));
  add_component(s, ctx, ex);
  add_component(s, ctx, ex);
  // identical buffers so the estimates are exactly symmetric
  Rng rng(6);
  for (int i = 0; i < 50; ++i) {
    Rollout r{0, sample(ctx, rng), Vector::Zero(1), 0.0};
    r.theta = sample(ex, r.c, rng);
    r.reward = env.reward(r.theta, r.c);
    s.buffers[0].push(r);
    r.component = 1;
    s.buffers[1].push(r);
  }
  tighten(s);
  const VariationalSnapshot pre = s.snapshot;
  const Categorical w = update_weights(s, pre);
  EXPECT_NEAR(w[0], 0.5, 1e-10);
  EXPECT_NEAR(w[1], 0.5, 1e-10);
}

TEST(UpdateWeights, MatchesRepsOnComputedAdvantages) {
  const EnvSpec env = corner_env();
  HyperParams hp;
  hp.alpha = 0.1;
  hp.beta = 0.5;
  hp.beta_w = 0.7;
  hp.epsilon_weights = 0.2;
  hp.seed = 9;
  TrainState s = make_train_state(hp, env);
  for (int k = 0; k < 3; ++k) add_random_component(s, env);
  s.policy.set_weights(Categorical((Vector(3) << 0.2, 0.3, 0.5).finished()));
  tighten(s);
  resample_buffers(s, env);
  const VariationalSnapshot pre = s.snapshot;

  std::vector<Rollout> all;
  std::vector<Vector> cs;
  for (const auto& b : s.buffers)
    for (const auto& r : b) {
      all.push_back(r);
      cs.push_back(r.c);
    }
  const auto v = value_baseline(all, s.policy, pre, hp.nw_bandwidth_factor * median_pairwise_distance(cs));
  const Vector adv = weight_advantages(s, v);
  TrustRegionConfig cfg;
  cfg.epsilon = hp.epsilon_weights;
  cfg.omega = hp.beta_w;
  const auto expected = reps_categorical_update(s.policy.weights(), adv, cfg);
  const Categorical got = update_weights(s, pre);
  EXPECT_LT((got.probs() - expected.dist.probs()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(UpdateWeights, GreedyLimitIsNearOneHot) {
  EnvSpec env = corner_env();
  env.reward = [](const Vector& th, const Vector&) { return -10.0 * th(0) * th(0); };
  HyperParams hp;
  hp.alpha = 0.0;
  hp.beta = 0.0;
  hp.beta_w = 1e-6;
  hp.epsilon_weights = 1e6;
  TrainState s = make_train_state(hp, env);
  const Gaussian ctx(Vector::Zero(1), 0.4 * Matrix::Identity(1, 1));
  add_component(s, ctx, LinCondGaussian(Matrix::Zero(1, 1), Vector::Zero(1), 0.1 * Matrix::Identity(1, 1)));
  add_component(s, ctx, LinCondGaussian(Matrix::Zero(1, 1), Vector::Constant(1, 2.0), 0.1 * Matrix::Identity(1, 1)));
  tighten(s);
  resample_buffers(s, env);
  const Categorical w = update_weights(s, s.snapshot);
  EXPECT_GT(w[0], 1 - 1e-9);
}

TEST(UpdateWeights, EmptyBufferThrows) {
  const EnvSpec env = corner_env();
  TrainState s = make_train_state(HyperParams{}, env);
  add_random_component(s, env);
  EXPECT_THROW(update_weights(s, s.snapshot), std::runtime_error);
}

TEST(DeletionCheck, TrivialKeeps) {
  const EnvSpec env = corner_env();
  HyperParams hp;
  hp.deletion_check_enabled = true;
  TrainState s = make_train_state(hp, env);
  add_random_component(s, env);
  resample_buffers(s, env);
  EXPECT_FALSE(deletion_check(s, 0));
  hp.deletion_check_enabled = false;
  TrainState d = make_train_state(hp, env);
  for (int k = 0; k < 3; ++k) add_random_component(d, env);
  resample_buffers(d, env);
  for (std::size_t o = 0; o < 3; ++o) EXPECT_FALSE(deletion_check(d, o));
}

TEST(DeletionCheck, CollapsedComponentInUnreachableRegionIsDeleted) {
  EnvSpec env = corner_env();
  env.reward = [](const Vector& th, const Vector& c) {
    return -(th(0) - c(0)) * (th(0) - c(0)) - (c(0) > 1.5 ? 50.0 : 0.0);
  };
  HyperParams hp;
  hp.alpha = 0.0;
  hp.deletion_check_enabled = true;
  TrainState s = make_train_state(hp, env);
  for (int k = 0; k < 5; ++k) {
    add_component(s, Gaussian(Vector::Constant(1, -0.8 + 0.4 * k), 0.2 * Matrix::Identity(1, 1)),
                  LinCondGaussian(Matrix::Ones(1, 1), Vector::Zero(1), 0.5 * Matrix::Identity(1, 1)));
  }
  add_component(s, Gaussian(Vector::Constant(1, 3.0), 0.1 * Matrix::Identity(1, 1)),
                LinCondGaussian(Matrix::Zero(1, 1), Vector::Zero(1), 0.01 * Matrix::Identity(1, 1)));
  tighten(s);
  resample_buffers(s, env);
  EXPECT_TRUE(deletion_check(s, 5));
  for (std::size_t o = 0; o < 5; ++o) EXPECT_FALSE(deletion_check(s, o));
}

TEST(FinalPrune, RemovesTinyWeights) {
  const EnvSpec env = corner_env();
  TrainState s = make_train_state(HyperParams{}, env);
  for (int k = 0; k < 3; ++k) add_random_component(s, env);
  s.policy.set_weights(Categorical((Vector(3) << 0.5, 0.5 - 1e-7, 1e-7).finished()));
  final_prune(s);
  EXPECT_EQ(s.policy.size(), 2u);
  EXPECT_EQ(s.buffers.size(), 2u);
  EXPECT_NEAR(s.policy.weights().probs().sum(), 1.0, 1e-12);
  final_prune(s);
  EXPECT_EQ(s.policy.size(), 2u);
}

TEST(FinalPrune, AllBelowKeepsArgmax) {
  const EnvSpec env = corner_env();
  HyperParams hp;
  hp.deletion_weight_threshold = 0.9;
  TrainState s = make_train_state(hp, env);
  for (int k = 0; k < 3; ++k) add_random_component(s, env);
  s.policy.set_weights(Categorical((Vector(3) << 0.2, 0.5, 0.3).finished()));
  const Vector keep_mean = s.policy.context(1).mean();
  const auto before = warning_count(Warning::PruneFallback);
  final_prune(s);
  ASSERT_EQ(s.policy.size(), 1u);
  EXPECT_EQ(s.policy.context(0).mean(), keep_mean);
  EXPECT_EQ(warning_count(Warning::PruneFallback), before + 1);
}

HyperParams small_run_hp() {
  HyperParams hp;
  hp.alpha = 0.5;
  hp.beta = 1.0;
  hp.n_components = 2;
  hp.iters_per_component = 12;
  hp.finetune_every = 5;
  hp.samples_per_iter = 20;
  hp.buffer_capacity = 40;
  hp.weight_update_iters = 2;
  hp.seed = 4;
  return hp;
}

TEST(Run, SampleAccounting) {
  const EnvSpec env = make_bimodal();
  const HyperParams hp = small_run_hp();
  std::uint64_t last = 0;
  std::size_t checked = 0;
  const TrainState s = run(hp, env, [&](const TrainState& st) {
    const std::size_t i = (st.iteration - 1) % hp.iters_per_component + 1;
    const bool finetune = i % hp.finetune_every == 0 && st.policy.size() > 1;
    const std::uint64_t expected = finetune ? st.policy.size() * hp.samples_per_iter : hp.samples_per_iter;
    EXPECT_EQ(st.env_samples - last, expected) << "iteration " << st.iteration;
    last = st.env_samples;
    ++checked;
  });
  EXPECT_EQ(checked, hp.n_components * hp.iters_per_component);
  EXPECT_EQ(s.metrics.size(), checked);
  EXPECT_EQ(s.rejected_samples, 0u);
}

TEST(Run, DeterministicSerialization) {
  const EnvSpec env = make_bimodal();
  const auto a = model_to_json(run(small_run_hp(), env).policy, 0.5, 1.0).dump();
  const auto b = model_to_json(run(small_run_hp(), env).policy, 0.5, 1.0).dump();
  EXPECT_EQ(a, b);
}

TEST(Run, ThreadCountDoesNotChangeResult) {
  const EnvSpec env = make_bimodal();
  HyperParams hp = small_run_hp();
  const auto a = model_to_json(run(hp, env).policy, 0.5, 1.0).dump();
  hp.threads = 3;
  const auto b = model_to_json(run(hp, env).policy, 0.5, 1.0).dump();
  EXPECT_EQ(a, b);
}

TEST(Run, ErrorsCarryIterationContext) {
  EnvSpec env = make_bimodal();
  env.reward = [](const Vector&, const Vector&) { return std::nan(""); };
  try {
    run(small_run_hp(), env);
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("iteration 1, component 0"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace svsl
