#include "dnrl/reward.hpp"

#include <cmath>
#include <stdexcept>

namespace dnrl {

void RewardWeights::validate() const {
  const double ks[] = {k_accel, k_velocity, k_goal, k_progress, k_jerk, k_obstacle, k_hover};
  for (double k : ks) {
    if (!(k >= 0.0)) throw std::invalid_argument("reward weights k_* must be non-negative");
  }
  if (!(collision_penalty <= 0.0)) throw std::invalid_argument("reward.collision_penalty must be <= 0");
  if (!(safety_distance > 0.0)) throw std::invalid_argument("reward.safety_distance must be > 0");
  if (!(hover_radius > 0.0)) throw std::invalid_argument("reward.hover_radius must be > 0");
  if (!(v_min >= 0.0 && v_max > v_min)) throw std::invalid_argument("reward.v_max > reward.v_min >= 0 required");
}

double velocity_reward(const Vec2& v, const RewardWeights& w) {
  const double speed = v.norm();
  const double over = speed > w.v_max ? std::exp(speed - w.v_max) - 1.0 : 0.0;
  const double under = speed < w.v_min ? std::exp(w.v_min - speed) - 1.0 : 0.0;
  return over + under;
}

double progress_reward(double goal_dist_now, double goal_dist_prev) {
  return std::expm1(goal_dist_now - goal_dist_prev);
}

double jerk_reward(const Vec2& accel_now, const Vec2& accel_prev) {
  return std::expm1((accel_now - accel_prev).norm());
}

double static_obstacle_reward(double distance, const RewardWeights& w) {
  return distance <= w.safety_distance ? std::expm1(w.safety_distance - distance) : 0.0;
}

double hovering_reward(double goal_dist, const RewardWeights& w) {
  return goal_dist <= w.hover_radius ? std::expm1(w.hover_radius - goal_dist) : 0.0;
}

double dilation_ratio(const Vec2& obstacle_velocity, double theta, double clearance) {
  if (!(theta >= 0.0 && theta <= kPi)) throw std::invalid_argument("included angle must lie in [0, pi]");
  if (!(clearance >= 0.0)) throw std::invalid_argument("clearance must be non-negative");
  if (theta > kPi / 2.0) return 1.0;
  return 1.0 + obstacle_velocity.norm() * (1.0 - 2.0 * theta / kPi) * std::exp(1.0 / (1.0 + clearance));
}

DynamicGeometry dynamic_geometry(const Vec2& quad_pos, const DynamicObstacle& obs, double quad_radius) {
  DynamicGeometry g;
  const Vec2 to_quad = quad_pos - obs.center;
  g.distance = std::max(to_quad.norm() - obs.radius - quad_radius, 0.0);
  const double speed = obs.velocity.norm();
  if (speed == 0.0) {
    g.moving = false;
    g.theta = kPi;  // falls in the k = 1 branch
    g.clearance = 0.0;
    return g;
  }
  const double along = dot(obs.velocity, to_quad);
  const double across = cross(obs.velocity, to_quad);
  g.theta = std::atan2(std::abs(across), along);
  g.clearance = std::abs(across) / speed;
  return g;
}

double dynamic_term_reward(double distance, double dilation, const RewardWeights& w) {
  const double scaled = distance / dilation;
  return scaled <= w.safety_distance ? std::expm1(w.safety_distance - scaled) : 0.0;
}

std::vector<DynamicTerm> dynamic_obstacle_terms(const Vec2& quad_pos, const std::vector<DynamicObstacle>& dynamics,
                                                double quad_radius, const RewardWeights& w, DynamicRewardMode mode) {
  std::vector<DynamicTerm> terms;
  terms.reserve(dynamics.size());
  for (const auto& obs : dynamics) {
    const DynamicGeometry g = dynamic_geometry(quad_pos, obs, quad_radius);
    DynamicTerm t;
    t.theta = g.theta;
    t.clearance = g.clearance;
    t.dilation = (mode == DynamicRewardMode::Dilated && g.moving) ? dilation_ratio(obs.velocity, g.theta, g.clearance)
                                                                  : 1.0;
    t.reward = dynamic_term_reward(g.distance, t.dilation, w);
    terms.push_back(t);
  }
  return terms;
}

double dynamic_obstacle_reward(const Vec2& quad_pos, const std::vector<DynamicObstacle>& dynamics, double quad_radius,
                               const RewardWeights& w, DynamicRewardMode mode) {
  double sum = 0.0;
  for (const auto& t : dynamic_obstacle_terms(quad_pos, dynamics, quad_radius, w, mode)) sum += t.reward;
  return sum;
}

double combine_reward(const RewardBreakdown& b, const RewardWeights& w) {
  double r = w.base - w.k_accel * b.accel_norm - w.k_velocity * b.r_v - w.k_goal * b.goal_dist -
             w.k_progress * b.r_p - w.k_jerk * b.r_j - w.k_obstacle * (b.r_o + b.r_d) + w.k_hover * b.r_h;
  if (b.collided) r += w.collision_penalty;
  return r;
}

RewardBreakdown total_reward(const WorldState& before, const StepOutcome& outcome, const SimConfig& sim,
                             const RewardWeights& w, DynamicRewardMode mode) {
  const WorldState& now = outcome.next;
  const Vec2 goal = now.arena.goal;
  RewardBreakdown b;
  b.goal_dist = (goal - now.quad.position).norm();
  b.accel_norm = now.quad.prev_accel.norm();
  b.r_v = velocity_reward(now.quad.velocity, w);
  b.r_p = progress_reward(b.goal_dist, (goal - before.quad.position).norm());
  b.r_j = jerk_reward(now.quad.prev_accel, before.quad.prev_accel);
  b.r_o = static_obstacle_reward(nearest_obstacle_distance(now, sim).distance, w);
  b.dynamic = dynamic_obstacle_terms(now.quad.position, now.arena.dynamics, sim.quad_radius, w, mode);
  for (const auto& t : b.dynamic) b.r_d += t.reward;
  b.r_h = hovering_reward(b.goal_dist, w);
  b.collided = outcome.collided;
  b.total = combine_reward(b, w);
  return b;
}

}  // namespace dnrl
