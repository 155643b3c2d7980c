#include "svsl/envs.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>

namespace svsl {

bool Box::contains(const Vector& x) const {
  require_dim(dim(), static_cast<std::size_t>(x.size()), "Box::contains");
  return (x.array() >= lower.array()).all() && (x.array() <= upper.array()).all();
}

EvalResult EnvSpec::evaluate(const Vector& theta, const Vector& c) const {
  const bool executed = !(rejects_invalid && !context_box.contains(c));
  return {reward(theta, c), executed};
}

Vector EnvSpec::init_center() const {
  if (parameter_center.size() == 0) return Vector::Zero(static_cast<Eigen::Index>(param_dim));
  return parameter_center;
}

void EnvSpec::validate() const {
  if (context_dim == 0 || param_dim == 0) throw std::invalid_argument("env '" + name + "': dimensions must be positive");
  require_dim(context_dim, context_box.dim(), "env context box");
  require_dim(context_dim, static_cast<std::size_t>(context_box.upper.size()), "env context box");
  if (!(context_box.lower.array() < context_box.upper.array()).all()) {
    throw std::invalid_argument("env '" + name + "': context box lower must be < upper");
  }
  if (parameter_center.size() != 0) require_dim(param_dim, static_cast<std::size_t>(parameter_center.size()), "env centre");
  if (!(parameter_scale > 0.0)) throw std::invalid_argument("env '" + name + "': parameter scale must be positive");
  if (!reward) throw std::invalid_argument("env '" + name + "': missing reward function");
}

// ------------------------------------------------------------ planar reacher

double normalize_angle(double a) {
  constexpr double pi = std::numbers::pi;
  double r = std::remainder(a, 2.0 * pi);  // in [-pi, pi]
  if (r < -pi) r += 2.0 * pi;
  if (r > pi) r -= 2.0 * pi;
  return r;
}

Vector normalize_angles(const Vector& theta) { return theta.unaryExpr([](double a) { return normalize_angle(a); }); }

std::vector<Eigen::Vector2d> forward_kinematics(const Vector& theta, const std::vector<double>& link_lengths) {
  require_dim(link_lengths.size(), static_cast<std::size_t>(theta.size()), "forward_kinematics");
  std::vector<Eigen::Vector2d> points;
  points.reserve(link_lengths.size() + 1);
  points.emplace_back(0.0, 0.0);
  double heading = 0.0;
  for (std::size_t j = 0; j < link_lengths.size(); ++j) {
    heading += normalize_angle(theta(static_cast<Eigen::Index>(j)));
    points.push_back(points.back() + link_lengths[j] * Eigen::Vector2d(std::cos(heading), std::sin(heading)));
  }
  return points;
}

bool segment_intersects_rect(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Rect& r) {
  // Liang-Barsky clipping against the closed box.
  const Eigen::Vector2d lo = r.center - r.half_extents;
  const Eigen::Vector2d hi = r.center + r.half_extents;
  const Eigen::Vector2d d = b - a;
  double t0 = 0.0;
  double t1 = 1.0;
  for (int i = 0; i < 2; ++i) {
    if (d(i) == 0.0) {
      if (a(i) < lo(i) || a(i) > hi(i)) return false;
      continue;
    }
    double ta = (lo(i) - a(i)) / d(i);
    double tb = (hi(i) - a(i)) / d(i);
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  return true;
}

bool collides(const Vector& theta, const PlanarReacherConfig& cfg) {
  if (cfg.obstacles.empty()) return false;
  const auto pts = forward_kinematics(theta, cfg.link_lengths);
  for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
    for (const auto& rect : cfg.obstacles) {
      if (segment_intersects_rect(pts[k], pts[k + 1], rect)) return true;
    }
  }
  return false;
}

double reacher_reward(const Vector& theta, const Vector& c, const PlanarReacherConfig& cfg) {
  require_dim(2, static_cast<std::size_t>(c.size()), "reacher_reward context");
  const Vector th = normalize_angles(theta);
  const auto pts = forward_kinematics(th, cfg.link_lengths);
  const Eigen::Vector2d goal(c(0), c(1));
  double r = -cfg.action_weight * th.squaredNorm() - cfg.goal_weight * (pts.back() - goal).squaredNorm();
  if (!cfg.context_box.contains(c)) r -= cfg.context_penalty;
  if (collides(th, cfg)) r -= cfg.obstacle_penalty;
  return r;
}

bool reacher_success(const Vector& theta, const Vector& c, const PlanarReacherConfig& cfg) {
  const auto pts = forward_kinematics(theta, cfg.link_lengths);
  const Eigen::Vector2d goal(c(0), c(1));
  return (pts.back() - goal).norm() <= cfg.success_tolerance && !collides(theta, cfg) && cfg.context_box.contains(c);
}

EnvSpec make_planar_reacher(PlanarReacherConfig cfg) {
  if (cfg.link_lengths.empty()) throw std::invalid_argument("planar_reacher: needs at least one link");
  if (cfg.context_penalty < 0.0 || cfg.obstacle_penalty < 0.0) {
    throw std::invalid_argument("planar_reacher: penalties must be non-negative");
  }
  EnvSpec env;
  env.name = "planar_reacher";
  env.context_dim = 2;
  env.param_dim = cfg.n_links();
  env.context_box = cfg.context_box;
  env.parameter_scale = 1.0;
  auto shared = std::make_shared<const PlanarReacherConfig>(std::move(cfg));
  env.reward = [shared](const Vector& th, const Vector& c) { return reacher_reward(th, c, *shared); };
  env.success = [shared](const Vector& th, const Vector& c) { return reacher_success(th, c, *shared); };
  env.rejects_invalid = false;
  env.validate();
  return env;
}

// ------------------------------------------------------------------ bimodal

double bimodal_reward(const Vector& theta, const Vector& c) {
  require_dim(1, static_cast<std::size_t>(theta.size()), "bimodal_reward theta");
  require_dim(1, static_cast<std::size_t>(c.size()), "bimodal_reward context");
  const double t = theta(0);
  const double m = c(0) + 2.0;
  return std::max(-(t - m) * (t - m), -(t + m) * (t + m));
}

EnvSpec make_bimodal(const BimodalConfig& cfg) {
  EnvSpec env;
  env.name = "bimodal";
  env.context_dim = 1;
  env.param_dim = 1;
  env.context_box = Box{Vector::Constant(1, -1.0), Vector::Constant(1, 1.0)};
  env.parameter_scale = cfg.parameter_scale;
  env.parameter_center = Vector::Constant(1, cfg.parameter_center);
  const Box box = env.context_box;
  env.reward = [box](const Vector& th, const Vector& c) {
    return bimodal_reward(th, c) - (box.contains(c) ? 0.0 : kContextPenalty);
  };
  const double tol = cfg.success_tolerance;
  env.success = [box, tol](const Vector& th, const Vector& c) {
    return box.contains(c) && std::abs(std::abs(th(0)) - (c(0) + 2.0)) <= tol;
  };
  env.validate();
  return env;
}

// ---------------------------------------------------------- quadratic toy

EnvSpec make_quadratic_toy(QuadraticToyConfig cfg) {
  require_dim(static_cast<std::size_t>(cfg.a.size()), static_cast<std::size_t>(cfg.A.rows()), "quadratic_toy A rows");
  require_dim(cfg.context_box.dim(), static_cast<std::size_t>(cfg.A.cols()), "quadratic_toy A cols");
  EnvSpec env;
  env.name = "quadratic_toy";
  env.context_dim = cfg.context_box.dim();
  env.param_dim = static_cast<std::size_t>(cfg.a.size());
  env.context_box = cfg.context_box;
  env.parameter_scale = cfg.parameter_scale;
  auto shared = std::make_shared<const QuadraticToyConfig>(std::move(cfg));
  env.reward = [shared](const Vector& th, const Vector& c) {
    const double r = -(th - (shared->A * c + shared->a)).squaredNorm();
    return r - (shared->context_box.contains(c) ? 0.0 : kContextPenalty);
  };
  env.success = [shared](const Vector& th, const Vector& c) {
    return shared->context_box.contains(c) && (th - (shared->A * c + shared->a)).norm() <= shared->success_tolerance;
  };
  env.validate();
  return env;
}

}  // namespace svsl
