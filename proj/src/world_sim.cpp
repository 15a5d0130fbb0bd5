#include "dnrl/world_sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <nlohmann/json.hpp>

namespace dnrl {

void SimConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
  };
  require(dt > 0.0, "sim.dt must be > 0");
  require(max_accel > 0.0, "sim.max_accel must be > 0");
  require(quad_radius > 0.0, "sim.quad_radius must be > 0");
  require(step_limit >= 1, "sim.step_limit must be >= 1");
  require(side_min > 0.0 && side_max >= side_min, "sim.side_min/side_max must satisfy 0 < min <= max");
  require(static_count_min >= 0 && static_count_max >= static_count_min,
          "sim.static_count_min/max must satisfy 0 <= min <= max");
  require(static_half_min > 0.0 && static_half_max >= static_half_min,
          "sim.static_half_min/max must satisfy 0 < min <= max");
  require(goal_clearance >= 0.0, "sim.goal_clearance must be >= 0");
  require(start_clearance >= 0.0, "sim.start_clearance must be >= 0");
  require(dynamic_count >= 0, "sim.dynamic_count must be >= 0");
  require(dynamic_radius_min > 0.0 && dynamic_radius_max >= dynamic_radius_min,
          "sim.dynamic_radius_min/max must satisfy 0 < min <= max");
  require(dynamic_speed_min >= 0.0 && dynamic_speed_max >= dynamic_speed_min,
          "sim.dynamic_speed_min/max must satisfy 0 <= min <= max");
  require(aim_probability >= 0.0 && aim_probability <= 1.0, "sim.aim_probability must be in [0, 1]");
  require(retarget_period >= 0.0, "sim.retarget_period must be >= 0");
  require(lidar_wedge > 0.0 && lidar_wedge <= kTwoPi + 1e-12, "sim.lidar_wedge must be in (0, 2*pi]");
  require(lidar_range > 0.0, "sim.lidar_range must be > 0");
  require(ray_spacing > 0.0, "sim.ray_spacing must be > 0");
}

double point_rect_distance(const Vec2& p, const StaticObstacle& rect) {
  const Vec2 local = rotated(p - rect.center, -rect.rotation);
  const double qx = std::abs(local.x) - rect.half_extents.x;
  const double qy = std::abs(local.y) - rect.half_extents.y;
  const double ox = std::max(qx, 0.0);
  const double oy = std::max(qy, 0.0);
  return std::sqrt(ox * ox + oy * oy);
}

double wall_distance(const Vec2& p, double side) {
  return std::min({p.x, side - p.x, p.y, side - p.y});
}

namespace {

double clearance_to_statics(const Vec2& p, const std::vector<StaticObstacle>& statics) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : statics) best = std::min(best, point_rect_distance(p, s));
  return best;
}

Vec2 sample_point(Rng& rng, double lo, double hi) {
  const double x = rng.uniform(lo, hi);
  const double y = rng.uniform(lo, hi);
  return {x, y};
}

constexpr int kMaxResamples = 1000;

}  // namespace

Arena generate_arena(Rng& rng, const SimConfig& cfg) {
  Arena arena;
  arena.side = cfg.side_min == cfg.side_max ? cfg.side_min : rng.uniform(cfg.side_min, cfg.side_max);
  const auto count = rng.uniform_int(cfg.static_count_min, cfg.static_count_max);
  arena.statics.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    StaticObstacle s;
    s.center = sample_point(rng, 0.0, arena.side);
    s.half_extents = {rng.uniform(cfg.static_half_min, cfg.static_half_max),
                      rng.uniform(cfg.static_half_min, cfg.static_half_max)};
    s.rotation = rng.uniform(0.0, kPi);
    arena.statics.push_back(s);
  }

  const double wall_margin = std::min(1.0, arena.side / 4.0);
  bool placed = false;
  for (int attempt = 0; attempt < kMaxResamples && !placed; ++attempt) {
    arena.start = sample_point(rng, wall_margin, arena.side - wall_margin);
    placed = clearance_to_statics(arena.start, arena.statics) >= cfg.start_clearance + cfg.quad_radius;
  }
  if (!placed) throw ArenaGenerationError("no collision-free start position after 1000 resamples");

  placed = false;
  for (int attempt = 0; attempt < kMaxResamples && !placed; ++attempt) {
    arena.goal = sample_point(rng, wall_margin, arena.side - wall_margin);
    placed = clearance_to_statics(arena.goal, arena.statics) >= cfg.goal_clearance &&
             (arena.goal - arena.start).norm() >= cfg.min_start_goal_distance;
  }
  if (!placed) throw ArenaGenerationError("no valid goal position after 1000 resamples (arena too dense)");

  arena.dynamics.reserve(static_cast<std::size_t>(cfg.dynamic_count));
  for (int i = 0; i < cfg.dynamic_count; ++i) {
    if (cfg.dynamic_spawn == DynamicSpawn::Edge) {
      arena.dynamics.push_back(reset_dynamic_obstacle(arena.start, arena, cfg, rng));
      continue;
    }
    // interior spawns keep clear of the start so trials do not begin in contact
    DynamicObstacle d;
    placed = false;
    for (int attempt = 0; attempt < kMaxResamples && !placed; ++attempt) {
      d = spawn_dynamic_obstacle(arena.start, arena, cfg, rng, false);
      placed = (d.center - arena.start).norm() - d.radius >= cfg.start_clearance + cfg.quad_radius;
    }
    if (!placed) throw ArenaGenerationError("no dynamic obstacle spawn clear of the start");
    arena.dynamics.push_back(d);
  }
  return arena;
}

WorldState make_world(const Arena& arena, const SimConfig& cfg) {
  WorldState w;
  w.arena = arena;
  w.quad.position = arena.start;
  w.quad.altitude = cfg.altitude;
  return w;
}

DynamicObstacle spawn_dynamic_obstacle(const Vec2& quad_pos, const Arena& arena, const SimConfig& cfg, Rng& rng,
                                       bool aim) {
  DynamicObstacle d;
  d.radius = rng.uniform(cfg.dynamic_radius_min, cfg.dynamic_radius_max);
  const double speed = rng.uniform(cfg.dynamic_speed_min, cfg.dynamic_speed_max);
  const double side = arena.side;
  const double inset = d.radius + 1e-3;
  const double lo = std::min(inset, side / 2.0);
  const double hi = std::max(side - inset, side / 2.0);

  Vec2 inward;
  if (cfg.dynamic_spawn == DynamicSpawn::Interior) {
    d.center = {rng.uniform(lo, hi), rng.uniform(lo, hi)};
    inward = {};
  } else {
    // uniform over the perimeter, then pulled inside by the radius
    const double s = rng.uniform(0.0, 4.0 * side);
    const int edge = std::min(static_cast<int>(s / side), 3);
    const double along = s - edge * side;
    switch (edge) {
      case 0: d.center = {along, 0.0}; inward = {0.0, 1.0}; break;
      case 1: d.center = {side, along}; inward = {-1.0, 0.0}; break;
      case 2: d.center = {side - along, side}; inward = {0.0, -1.0}; break;
      default: d.center = {0.0, side - along}; inward = {1.0, 0.0}; break;
    }
    d.center = {std::clamp(d.center.x, lo, hi), std::clamp(d.center.y, lo, hi)};
  }

  Vec2 dir;
  if (aim) {
    dir = normalized(quad_pos - d.center);
  }
  if (!aim || dir.squared_norm() == 0.0) {
    if (cfg.dynamic_spawn == DynamicSpawn::Edge) {
      // random direction within the inward half-plane
      const double a = rng.uniform(-kPi / 2.0, kPi / 2.0);
      dir = rotated(inward, a);
    } else {
      const double a = rng.uniform(0.0, kTwoPi);
      dir = {std::cos(a), std::sin(a)};
    }
  }
  d.velocity = dir * speed;
  return d;
}

DynamicObstacle reset_dynamic_obstacle(const Vec2& quad_pos, const Arena& arena, const SimConfig& cfg, Rng& rng) {
  const bool aim = rng.bernoulli(cfg.aim_probability);
  return spawn_dynamic_obstacle(quad_pos, arena, cfg, rng, aim);
}

NearestObstacle nearest_obstacle_distance(const WorldState& state, const SimConfig& cfg) {
  NearestObstacle best{std::numeric_limits<double>::infinity(), {}};
  const Vec2 p = state.quad.position;
  for (std::size_t i = 0; i < state.arena.statics.size(); ++i) {
    const double d = point_rect_distance(p, state.arena.statics[i]);
    if (d < best.distance) best = {d, {ObstacleRef::Kind::Static, static_cast<int>(i)}};
  }
  if (cfg.walls_in_proximity) {
    const double d = std::max(wall_distance(p, state.arena.side), 0.0);
    if (d < best.distance) best = {d, {ObstacleRef::Kind::Wall, -1}};
  }
  if (best.which.kind == ObstacleRef::Kind::None) {
    best.distance = 10.0 * cfg.lidar_range;
    return best;
  }
  best.distance = std::max(best.distance - cfg.quad_radius, 0.0);
  return best;
}

bool in_collision(const WorldState& state, const SimConfig& cfg) {
  const Vec2 p = state.quad.position;
  const double r = cfg.quad_radius;
  if (wall_distance(p, state.arena.side) < r) return true;
  for (const auto& s : state.arena.statics) {
    if (point_rect_distance(p, s) < r) return true;
  }
  for (const auto& d : state.arena.dynamics) {
    const double reach = d.radius + r;
    if ((p - d.center).squared_norm() < reach * reach) return true;
  }
  return false;
}

namespace {

std::optional<double> ray_circle(const Vec2& o, const Vec2& dir, const Vec2& c, double r) {
  const Vec2 oc = o - c;
  const double b = dot(dir, oc);
  const double cc = oc.squared_norm() - r * r;
  if (cc <= 0.0) return 0.0;  // origin inside
  const double disc = b * b - cc;
  if (disc < 0.0) return std::nullopt;
  const double t = -b - std::sqrt(disc);
  if (t < 0.0) return std::nullopt;
  return t;
}

std::optional<double> ray_rect(const Vec2& o, const Vec2& dir, const StaticObstacle& rect) {
  const Vec2 lo = rotated(o - rect.center, -rect.rotation);
  const Vec2 ld = rotated(dir, -rect.rotation);
  double t_enter = -std::numeric_limits<double>::infinity();
  double t_exit = std::numeric_limits<double>::infinity();
  const double origin[2] = {lo.x, lo.y};
  const double d[2] = {ld.x, ld.y};
  const double half[2] = {rect.half_extents.x, rect.half_extents.y};
  for (int axis = 0; axis < 2; ++axis) {
    if (d[axis] == 0.0) {
      if (std::abs(origin[axis]) > half[axis]) return std::nullopt;
      continue;
    }
    double t1 = (-half[axis] - origin[axis]) / d[axis];
    double t2 = (half[axis] - origin[axis]) / d[axis];
    if (t1 > t2) std::swap(t1, t2);
    t_enter = std::max(t_enter, t1);
    t_exit = std::min(t_exit, t2);
  }
  if (t_exit < t_enter || t_exit < 0.0) return std::nullopt;
  return std::max(t_enter, 0.0);
}

double ray_walls(const Vec2& o, const Vec2& dir, double side) {
  double t = std::numeric_limits<double>::infinity();
  if (dir.x > 0.0) t = std::min(t, (side - o.x) / dir.x);
  if (dir.x < 0.0) t = std::min(t, -o.x / dir.x);
  if (dir.y > 0.0) t = std::min(t, (side - o.y) / dir.y);
  if (dir.y < 0.0) t = std::min(t, -o.y / dir.y);
  return std::max(t, 0.0);
}

}  // namespace

std::optional<double> cast_ray(const WorldState& state, const Vec2& origin, const Vec2& direction, double max_range) {
  double best = ray_walls(origin, direction, state.arena.side);
  for (const auto& s : state.arena.statics) {
    // cheap reject: bounding circle
    const double reach = s.half_extents.norm();
    const Vec2 oc = s.center - origin;
    const double along = dot(oc, direction);
    if (along + reach < 0.0 || along - reach > best) continue;
    if (std::abs(cross(direction, oc)) > reach) continue;
    if (auto t = ray_rect(origin, direction, s)) best = std::min(best, *t);
  }
  for (const auto& d : state.arena.dynamics) {
    if (auto t = ray_circle(origin, direction, d.center, d.radius)) best = std::min(best, *t);
  }
  if (best > max_range) return std::nullopt;
  return best;
}

PointFrame lidar_scan(const WorldState& state, double wedge_start, double wedge_width, const SimConfig& cfg) {
  PointFrame frame;
  frame.frame_id = state.tick;
  const int rays = std::max(1, static_cast<int>(std::lround(wedge_width / cfg.ray_spacing)));
  frame.points.reserve(static_cast<std::size_t>(rays));
  const Vec2 o = state.quad.position;
  for (int i = 0; i < rays; ++i) {
    const double a = wedge_start + i * cfg.ray_spacing;
    const Vec2 dir{std::cos(a), std::sin(a)};
    if (auto t = cast_ray(state, o, dir, cfg.lidar_range)) {
      const Vec2 hit = o + dir * *t;
      frame.points.push_back({hit.x, hit.y, state.quad.altitude});
    }
  }
  return frame;
}

StepOutcome step(const WorldState& state, const Vec2& action, const SimConfig& cfg, Rng& rng) {
  if (!action.finite()) throw SimError("non-finite action");
  Vec2 a = action;
  const double mag = a.norm();
  if (mag > cfg.max_accel) a *= cfg.max_accel / mag;

  StepOutcome out;
  out.next = state;
  WorldState& w = out.next;
  w.quad.velocity += a * cfg.dt;
  w.quad.position += w.quad.velocity * cfg.dt;
  w.quad.prev_accel = a;
  w.tick = state.tick + 1;

  const double side = w.arena.side;
  const bool retarget = cfg.retarget_period > 0.0 &&
                        w.tick % std::max<std::int64_t>(1, std::llround(cfg.retarget_period / cfg.dt)) == 0;
  for (auto& d : w.arena.dynamics) {
    if (retarget) {
      const double heading = rng.uniform(0.0, kTwoPi);
      const double speed = rng.uniform(cfg.dynamic_speed_min, cfg.dynamic_speed_max);
      d.velocity = Vec2{std::cos(heading), std::sin(heading)} * speed;
    }
    d.center += d.velocity * cfg.dt;
    const bool out_x = d.center.x - d.radius < 0.0 || d.center.x + d.radius > side;
    const bool out_y = d.center.y - d.radius < 0.0 || d.center.y + d.radius > side;
    if (!out_x && !out_y) continue;
    if (cfg.dynamic_spawn == DynamicSpawn::Edge) {
      d = reset_dynamic_obstacle(w.quad.position, w.arena, cfg, rng);
    } else {
      if (out_x) d.velocity.x = -d.velocity.x;
      if (out_y) d.velocity.y = -d.velocity.y;
      d.center.x = std::clamp(d.center.x, d.radius, side - d.radius);
      d.center.y = std::clamp(d.center.y, d.radius, side - d.radius);
    }
  }

  out.collided = in_collision(w, cfg);
  out.reached_step_limit = w.tick >= cfg.step_limit;
  out.frame = lidar_scan(w, w.wedge_start, cfg.lidar_wedge, cfg);
  w.wedge_start = std::fmod(w.wedge_start + cfg.lidar_wedge, kTwoPi);
  return out;
}

nlohmann::json arena_to_json(const Arena& arena) {
  using nlohmann::json;
  json statics = json::array();
  for (const auto& s : arena.statics) {
    statics.push_back({{"center", {s.center.x, s.center.y}},
                       {"half_extents", {s.half_extents.x, s.half_extents.y}},
                       {"rotation", s.rotation}});
  }
  json dynamics = json::array();
  for (const auto& d : arena.dynamics) {
    dynamics.push_back(
        {{"center", {d.center.x, d.center.y}}, {"radius", d.radius}, {"velocity", {d.velocity.x, d.velocity.y}}});
  }
  return {{"side", arena.side},       {"seed", arena.seed},
          {"start", {arena.start.x, arena.start.y}}, {"goal", {arena.goal.x, arena.goal.y}},
          {"statics", statics},       {"dynamics", dynamics}};
}

Arena arena_from_json(const nlohmann::json& j) {
  auto vec = [](const nlohmann::json& v) { return Vec2{v.at(0).get<double>(), v.at(1).get<double>()}; };
  Arena a;
  a.side = j.at("side").get<double>();
  a.seed = j.value("seed", std::uint64_t{0});
  a.start = vec(j.at("start"));
  a.goal = vec(j.at("goal"));
  for (const auto& s : j.at("statics")) {
    a.statics.push_back({vec(s.at("center")), vec(s.at("half_extents")), s.at("rotation").get<double>()});
  }
  for (const auto& d : j.at("dynamics")) {
    a.dynamics.push_back({vec(d.at("center")), d.at("radius").get<double>(), vec(d.at("velocity"))});
  }
  return a;
}

}  // namespace dnrl
