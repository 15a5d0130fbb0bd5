#pragma once

// Shaped navigation reward: velocity band, goal progress, jerk, static
// proximity, dilation-weighted dynamic proximity and goal hovering, combined
// with a per-step base reward and a collision penalty.

#include <vector>

#include "dnrl/vec2.hpp"
#include "dnrl/world_sim.hpp"

namespace dnrl {

struct RewardWeights {
  double base = 0.01;          // r_b
  double k_accel = 0.01;       // k_a
  double k_velocity = 0.1;     // k_v
  double k_goal = 0.001;       // k_g
  double k_progress = 0.5;     // k_p
  double k_jerk = 0.05;        // k_j
  double k_obstacle = 1.0;     // k_o
  double k_hover = 0.1;        // k_h
  double collision_penalty = -10.0;
  double safety_distance = 1.0;  // d_s
  double hover_radius = 1.0;     // g_h
  double v_max = 5.0;
  double v_min = 0.3;

  void validate() const;
};

/// How dynamic obstacles are penalized: with the velocity-aware dilation
/// ratio, or with the plain static proximity formula (k = 1).
enum class DynamicRewardMode { Dilated, StaticFormula };

double velocity_reward(const Vec2& v, const RewardWeights& w);
double progress_reward(double goal_dist_now, double goal_dist_prev);
double jerk_reward(const Vec2& accel_now, const Vec2& accel_prev);
double static_obstacle_reward(double distance, const RewardWeights& w);
double hovering_reward(double goal_dist, const RewardWeights& w);

/// k = 1 + |v| (1 - 2 theta / pi) e^(1 / (1 + c)) for theta <= pi/2, else 1.
/// Throws std::invalid_argument for theta outside [0, pi] or negative c.
double dilation_ratio(const Vec2& obstacle_velocity, double theta, double clearance);

struct DynamicGeometry {
  double distance = 0.0;   // surface-to-surface, clamped at 0
  double theta = 0.0;      // angle between obstacle velocity and obstacle->quad, [0, pi]
  double clearance = 0.0;  // quad distance to the obstacle's velocity line
  bool moving = true;      // false when the obstacle velocity is zero
};

DynamicGeometry dynamic_geometry(const Vec2& quad_pos, const DynamicObstacle& obs, double quad_radius);

struct DynamicTerm {
  double dilation = 1.0;  // k^i
  double theta = 0.0;
  double clearance = 0.0;
  double reward = 0.0;  // r_d^i
};

/// r_d^i = e^(d_s - d/k) - 1 when d/k <= d_s.
double dynamic_term_reward(double distance, double dilation, const RewardWeights& w);

/// Per-obstacle terms; `mode` selects dilation or the static formula.
std::vector<DynamicTerm> dynamic_obstacle_terms(const Vec2& quad_pos, const std::vector<DynamicObstacle>& dynamics,
                                                double quad_radius, const RewardWeights& w,
                                                DynamicRewardMode mode = DynamicRewardMode::Dilated);

double dynamic_obstacle_reward(const Vec2& quad_pos, const std::vector<DynamicObstacle>& dynamics, double quad_radius,
                               const RewardWeights& w, DynamicRewardMode mode = DynamicRewardMode::Dilated);

struct RewardBreakdown {
  double r_v = 0.0;
  double r_p = 0.0;
  double r_j = 0.0;
  double r_o = 0.0;
  double r_d = 0.0;
  double r_h = 0.0;
  double accel_norm = 0.0;  // |a(t)|
  double goal_dist = 0.0;   // g(t)
  bool collided = false;
  double total = 0.0;
  std::vector<DynamicTerm> dynamic;
};

/// Weighted sum of the components (plus collision penalty when collided).
double combine_reward(const RewardBreakdown& b, const RewardWeights& w);

/// Reward for the transition `before` -> `outcome.next`.
RewardBreakdown total_reward(const WorldState& before, const StepOutcome& outcome, const SimConfig& sim,
                             const RewardWeights& w, DynamicRewardMode mode = DynamicRewardMode::Dilated);

}  // namespace dnrl
