#pragma once

#include <functional>
#include <string>
#include <vector>

#include "svsl/prob.hpp"

namespace svsl {

/// Axis-aligned box; doubles as the support of the uniform task distribution p(c).
struct Box {
  Vector lower;
  Vector upper;

  [[nodiscard]] std::size_t dim() const { return static_cast<std::size_t>(lower.size()); }
  [[nodiscard]] bool contains(const Vector& x) const;
  [[nodiscard]] Vector width() const { return upper - lower; }
  [[nodiscard]] double volume() const { return width().prod(); }
};

/// Outcome of one episode request.
struct EvalResult {
  double reward = 0.0;
  bool executed = true;  ///< false when the environment rejected the context without running it
};

using RewardFn = std::function<double(const Vector& theta, const Vector& c)>;
using SuccessFn = std::function<bool(const Vector& theta, const Vector& c)>;

/// Episodic environment contract. Reward functions include the context penalty.
struct EnvSpec {
  std::string name;
  std::size_t context_dim = 0;
  std::size_t param_dim = 0;
  Box context_box;
  double parameter_scale = 1.0;  ///< typical magnitude of theta, used by component initialization
  Vector parameter_center;       ///< centre for initial expert biases; zero when empty
  RewardFn reward;
  SuccessFn success;  ///< optional
  bool rejects_invalid = false;

  /// Evaluates one rollout. A rejecting environment reports out-of-box contexts as not executed.
  [[nodiscard]] EvalResult evaluate(const Vector& theta, const Vector& c) const;
  [[nodiscard]] Vector init_center() const;
  /// Throws std::invalid_argument if dimensions or the box are inconsistent.
  void validate() const;
};

inline constexpr double kContextPenalty = 10.0;

// ------------------------------------------------------------ planar reacher

struct Rect {
  Eigen::Vector2d center;
  Eigen::Vector2d half_extents;
};

struct PlanarReacherConfig {
  std::vector<double> link_lengths = std::vector<double>(10, 1.0);
  std::vector<Rect> obstacles = {{{5.5, 3.5}, {0.6, 1.2}}, {{5.5, -3.5}, {0.6, 1.2}}};
  Box context_box{Eigen::Vector2d(4.5, -6.0), Eigen::Vector2d(7.0, 6.0)};
  double goal_weight = 2.0;
  double action_weight = 1.0;
  double context_penalty = kContextPenalty;
  double obstacle_penalty = 3.0;
  double success_tolerance = 0.25;

  [[nodiscard]] std::size_t n_links() const { return link_lengths.size(); }
};

/// Wraps an angle into [-pi, pi].
double normalize_angle(double a);
Vector normalize_angles(const Vector& theta);

/// Joint positions from the base (origin) to the tip; n_links + 1 points.
std::vector<Eigen::Vector2d> forward_kinematics(const Vector& theta, const std::vector<double>& link_lengths);

/// Closed segment vs closed rectangle; touching counts.
bool segment_intersects_rect(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Rect& r);

bool collides(const Vector& theta, const PlanarReacherConfig& cfg);
double reacher_reward(const Vector& theta, const Vector& c, const PlanarReacherConfig& cfg);
bool reacher_success(const Vector& theta, const Vector& c, const PlanarReacherConfig& cfg);

EnvSpec make_planar_reacher(PlanarReacherConfig cfg);

// ------------------------------------------------------------------ bimodal

/// Two symmetric optimal branches theta = +-(c + 2), both with reward 0.
double bimodal_reward(const Vector& theta, const Vector& c);

struct BimodalConfig {
  double parameter_scale = 0.5;
  double parameter_center = 0.5;
  double success_tolerance = 0.2;
};

/// Context box [-1, 1]; out-of-box contexts cost kContextPenalty.
EnvSpec make_bimodal(const BimodalConfig& cfg = {});

// ---------------------------------------------------------- quadratic toy

/// R = -||theta - (A c + a)||^2 - penalty, so the optimum map is theta*(c) = A c + a.
struct QuadraticToyConfig {
  Matrix A;
  Vector a;
  Box context_box;
  double parameter_scale = 1.0;
  double success_tolerance = 0.1;
};

EnvSpec make_quadratic_toy(QuadraticToyConfig cfg);

}  // namespace svsl
