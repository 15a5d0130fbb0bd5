#include "dnrl/nav_env.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dnrl {

const char* to_string(InputMode mode) {
  return mode == InputMode::EncodedMap ? "encoded_map" : "raw_lidar";
}

InputMode input_mode_from_string(const std::string& s) {
  if (s == "encoded_map") return InputMode::EncodedMap;
  if (s == "raw_lidar") return InputMode::RawLidar;
  throw std::invalid_argument("unknown input mode '" + s + "' (expected encoded_map or raw_lidar)");
}

const char* to_string(DynamicRewardMode mode) {
  return mode == DynamicRewardMode::Dilated ? "dilated" : "static_formula";
}

DynamicRewardMode reward_mode_from_string(const std::string& s) {
  if (s == "dilated") return DynamicRewardMode::Dilated;
  if (s == "static_formula") return DynamicRewardMode::StaticFormula;
  throw std::invalid_argument("unknown dynamic reward mode '" + s + "' (expected dilated or static_formula)");
}

void EnvConfig::validate() const {
  sim.validate();
  encoder.validate();
  reward.validate();
}

namespace {

float clip_unit(double v) { return static_cast<float>(std::clamp(v, -1.0, 1.0)); }

}  // namespace

void fill_state_and_command(const QuadState& quad, const Vec2& goal, const EnvConfig& cfg, Observation& obs) {
  const double v_max = cfg.reward.v_max;
  const double a_max = cfg.sim.max_accel;
  const double d_max = cfg.encoder.max_range;
  obs.state = {clip_unit(quad.velocity.x / v_max), clip_unit(quad.velocity.y / v_max),
               clip_unit(quad.prev_accel.x / a_max), clip_unit(quad.prev_accel.y / a_max)};
  const Vec2 offset = goal - quad.position;
  obs.command = {clip_unit(offset.x / d_max), clip_unit(offset.y / d_max)};
}

void rasterize_raw_lidar(const ScanWindow& window, const Point3& quad, const EncoderConfig& cfg,
                         std::vector<float>& out) {
  const int n = cfg.sectors;
  const int m = cfg.history;
  out.assign(static_cast<std::size_t>(n) * m, 0.0f);
  const double bin = cfg.max_range / m;
  for (const auto& frame : window.frames()) {
    for (const auto& p : frame.points) {
      if (p.z < quad.z - cfg.altitude_band || p.z > quad.z + cfg.altitude_band) continue;
      const Point3 rel{p.x - quad.x, p.y - quad.y, 0.0};
      if (rel.x == 0.0 && rel.y == 0.0) continue;
      const double dist = std::hypot(rel.x, rel.y);
      if (!(dist < cfg.max_range)) continue;
      const int s = sector_of(rel, n) - 1;
      const int r = std::min(m - 1, static_cast<int>(dist / bin));
      out[static_cast<std::size_t>(s) * m + r] = 1.0f;
    }
  }
}

NavEnv::NavEnv(EnvConfig cfg)
    : cfg_(std::move(cfg)), window_(cfg_.encoder.window_frames), map_(cfg_.encoder.sectors, cfg_.encoder.history) {
  cfg_.validate();
}

const Observation& NavEnv::reset(std::uint64_t arena_seed) {
  Rng rng(arena_seed);
  Arena arena = generate_arena(rng, cfg_.sim);
  arena.seed = arena_seed;
  return reset(arena, rng.fork_seed());
}

const Observation& NavEnv::reset(const Arena& arena, std::uint64_t sim_seed) {
  world_ = make_world(arena, cfg_.sim);
  sim_rng_ = Rng(sim_seed);
  window_.clear();
  map_.reset();
  steps_ = 0;
  return_ = 0.0;
  reached_ = (arena.goal - arena.start).norm() <= cfg_.reward.hover_radius;

  // Prime the window with one full revolution taken at rest so the first
  // observation is not blind. Ids stay below the first stepped tick.
  const int frames = cfg_.encoder.window_frames;
  for (int f = 0; f < frames; ++f) {
    PointFrame frame = lidar_scan(world_, world_.wedge_start, cfg_.sim.lidar_wedge, cfg_.sim);
    frame.frame_id = world_.tick - (frames - 1) + f;
    window_.push(std::move(frame));
    world_.wedge_start = std::fmod(world_.wedge_start + cfg_.sim.lidar_wedge, kTwoPi);
  }
  perceive();
  return obs_;
}

void NavEnv::perceive() {
  const auto t0 = std::chrono::steady_clock::now();
  const Point3 quad{world_.quad.position.x, world_.quad.position.y, world_.quad.altitude};
  const std::size_t cells = static_cast<std::size_t>(cfg_.encoder.sectors) * cfg_.encoder.history;
  if (cfg_.input == InputMode::EncodedMap) {
    const DistanceVector column = encode_window(window_, quad, cfg_.encoder);
    map_.push_column(column);
    obs_.map.resize(cells);
    const auto grid = map_.data();
    std::transform(grid.begin(), grid.end(), obs_.map.begin(), [](double v) { return static_cast<float>(v); });
  } else {
    rasterize_raw_lidar(window_, quad, cfg_.encoder, obs_.map);
  }
  fill_state_and_command(world_.quad, world_.arena.goal, cfg_, obs_);
  perception_seconds_ = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

EnvStep NavEnv::step(const Vec2& action) {
  StepOutcome outcome = dnrl::step(world_, action, cfg_.sim, sim_rng_);
  EnvStep result;
  result.reward = total_reward(world_, outcome, cfg_.sim, cfg_.reward, cfg_.reward_mode);
  result.collided = outcome.collided;
  result.truncated = outcome.reached_step_limit && !outcome.collided;
  window_.push(std::move(outcome.frame));
  world_ = std::move(outcome.next);
  ++steps_;
  return_ += result.reward.total;
  result.at_goal = result.reward.goal_dist <= cfg_.reward.hover_radius;
  if (result.at_goal && !result.collided) reached_ = true;
  if (build_obs_) {
    perceive();
  } else {
    perception_seconds_ = 0.0;
  }
  return result;
}

}  // namespace dnrl
