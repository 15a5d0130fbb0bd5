#pragma once

// Deterministic planar world: walled square arena, rotated-rectangle static
// obstacles, disc-shaped dynamic obstacles, a double-integrator quadrotor and
// a wedge-scanning lidar.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dnrl/lidar_encoding.hpp"
#include "dnrl/rng.hpp"
#include "dnrl/vec2.hpp"

namespace dnrl {

struct QuadState {
  Vec2 position;
  Vec2 velocity;
  Vec2 prev_accel;  // last applied (clamped) command
  double altitude = 1.0;
};

struct StaticObstacle {
  Vec2 center;
  Vec2 half_extents;
  double rotation = 0.0;  // radians
};

struct DynamicObstacle {
  Vec2 center;
  double radius = 0.1;
  Vec2 velocity;
};

struct Arena {
  double side = 10.0;
  std::vector<StaticObstacle> statics;
  std::vector<DynamicObstacle> dynamics;
  Vec2 goal;
  Vec2 start;
  std::uint64_t seed = 0;
};

/// Where dynamic obstacles appear and what happens when they reach a wall.
/// Edge: spawn on the perimeter, respawn on wall contact (training arenas).
/// Interior: spawn anywhere inside, reflect off walls (benchmark arenas).
enum class DynamicSpawn { Edge, Interior };

struct SimConfig {
  double dt = 0.05;
  double max_accel = 6.0;
  double quad_radius = 0.15;
  int step_limit = 2000;
  double altitude = 1.0;

  double side_min = 10.0;
  double side_max = 20.0;
  int static_count_min = 6;
  int static_count_max = 14;
  double static_half_min = 0.05;
  double static_half_max = 1.0;
  double goal_clearance = 1.0;
  double start_clearance = 1.0;
  double min_start_goal_distance = 0.0;

  int dynamic_count = 5;
  double dynamic_radius_min = 0.05;
  double dynamic_radius_max = 0.5;
  double dynamic_speed_min = 1.0;
  double dynamic_speed_max = 6.0;
  double aim_probability = 0.5;
  DynamicSpawn dynamic_spawn = DynamicSpawn::Edge;
  double retarget_period = 0.0;  // seconds; 0 disables re-randomization

  double lidar_wedge = kPi / 2.0;
  double lidar_range = 10.0;
  double ray_spacing = kPi / 180.0;

  bool walls_in_proximity = true;

  void validate() const;
};

struct WorldState {
  QuadState quad;
  Arena arena;
  std::int64_t tick = 0;
  double wedge_start = 0.0;
};

struct StepOutcome {
  WorldState next;
  bool collided = false;
  bool reached_step_limit = false;
  PointFrame frame;

  bool terminal() const { return collided || reached_step_limit; }
};

class ArenaGenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SimError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

Arena generate_arena(Rng& rng, const SimConfig& cfg);

/// Initial world for an arena: quadrotor at rest at the start position.
WorldState make_world(const Arena& arena, const SimConfig& cfg);

/// Euclidean distance from p to the rectangle (0 inside).
double point_rect_distance(const Vec2& p, const StaticObstacle& rect);

/// Distance from p to the nearest arena wall (negative outside).
double wall_distance(const Vec2& p, double side);

struct ObstacleRef {
  enum class Kind { None, Static, Wall, Dynamic };
  Kind kind = Kind::None;
  int index = -1;
  bool operator==(const ObstacleRef&) const = default;
};

struct NearestObstacle {
  double distance = 0.0;
  ObstacleRef which;
};

/// Nearest static obstacle (and wall, when configured) surface distance minus
/// the quadrotor radius, clamped at 0. Without any candidate the distance is
/// 10 * lidar_range.
NearestObstacle nearest_obstacle_distance(const WorldState& state, const SimConfig& cfg);

/// True when the quadrotor disc overlaps any obstacle or leaves the walls.
bool in_collision(const WorldState& state, const SimConfig& cfg);

/// One tick of the transition kernel. Actions above max_accel are clamped
/// radially; non-finite actions throw SimError.
StepOutcome step(const WorldState& state, const Vec2& action, const SimConfig& cfg, Rng& rng);

/// Fresh dynamic obstacle: with probability aim_probability it heads
/// straight at quad_pos, otherwise in a random inward direction.
DynamicObstacle reset_dynamic_obstacle(const Vec2& quad_pos, const Arena& arena, const SimConfig& cfg, Rng& rng);

/// Same as reset_dynamic_obstacle with the aim branch fixed.
DynamicObstacle spawn_dynamic_obstacle(const Vec2& quad_pos, const Arena& arena, const SimConfig& cfg, Rng& rng,
                                       bool aim);

/// Ray range to the first surface along `direction` (unit) from `origin`,
/// or nullopt when nothing is hit within max_range.
std::optional<double> cast_ray(const WorldState& state, const Vec2& origin, const Vec2& direction, double max_range);

/// Rays every cfg.ray_spacing radians across [wedge_start, wedge_start +
/// wedge_width); each hit within lidar_range becomes a point at the quadrotor
/// altitude. frame_id is the state tick.
PointFrame lidar_scan(const WorldState& state, double wedge_start, double wedge_width, const SimConfig& cfg);

nlohmann::json arena_to_json(const Arena& arena);
Arena arena_from_json(const nlohmann::json& j);

}  // namespace dnrl
