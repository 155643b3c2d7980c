#pragma once

#include <span>
#include <vector>

#include "svsl/envs.hpp"
#include "svsl/moe.hpp"

namespace svsl {

/// A draw (o, c, theta) from the joint pi(o) pi(c|o) pi(theta|c,o).
struct JointSample {
  std::size_t component;
  Vector c;
  Vector theta;
};

std::vector<JointSample> sample_joint(const MoEPolicy& m, std::size_t n, Rng& rng);

struct Estimate {
  double mean = 0.0;
  double std_error = 0.0;
};

Estimate mean_and_error(std::span<const double> values);

/// Per-sample integrand of the curriculum max-entropy objective:
///   R - alpha log pi(theta|c) - beta log pi(c)
/// (the uniform task density contributes a constant and is dropped).
std::vector<double> joint_objective_terms(const MoEPolicy& m, const RewardFn& reward, double alpha, double beta,
                                          std::span<const JointSample> samples);

/// Per-sample integrand of the decomposed objective with auxiliary distributions from `aux`:
///   R + alpha log aux(o|c,theta) + (beta - alpha) log aux(o|c)
///     - alpha log pi(theta|c,o) - beta log pi(c|o) - beta log pi(o)
std::vector<double> decomposed_objective_terms(const MoEPolicy& m, const VariationalSnapshot& aux,
                                               const RewardFn& reward, double alpha, double beta,
                                               std::span<const JointSample> samples);

/// Per-sample alpha KL(resp || aux resp) + (beta - alpha) KL(gating || aux gating),
/// summed exactly over components at each sampled (c, theta).
std::vector<double> auxiliary_kl_terms(const MoEPolicy& m, const VariationalSnapshot& aux, double alpha, double beta,
                                       std::span<const JointSample> samples);

}  // namespace svsl
