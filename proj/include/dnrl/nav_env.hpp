#pragma once

// Gym-style navigation environment: wraps the simulator, the lidar window and
// obstacle-map encoder, the observation builder and the shaped reward.

#include <cstdint>
#include <vector>

#include "dnrl/lidar_encoding.hpp"
#include "dnrl/policy_net.hpp"
#include "dnrl/reward.hpp"
#include "dnrl/rng.hpp"
#include "dnrl/world_sim.hpp"

namespace dnrl {

/// What the network sees as its map: the encoded min-distance history, or the
/// latest window rasterized into a polar occupancy grid of the same shape.
enum class InputMode { EncodedMap, RawLidar };

const char* to_string(InputMode mode);
InputMode input_mode_from_string(const std::string& s);
const char* to_string(DynamicRewardMode mode);
DynamicRewardMode reward_mode_from_string(const std::string& s);

struct EnvConfig {
  SimConfig sim;
  EncoderConfig encoder;
  RewardWeights reward;
  DynamicRewardMode reward_mode = DynamicRewardMode::Dilated;
  InputMode input = InputMode::EncodedMap;

  void validate() const;
};

/// Velocity over v_max and previous acceleration over max_accel (clipped to
/// [-1, 1]); goal offset clipped per axis to +-max_range, over max_range.
void fill_state_and_command(const QuadState& quad, const Vec2& goal, const EnvConfig& cfg, Observation& obs);

/// Polar occupancy grid: row = bearing sector, column = range bin of width
/// max_range / history; 1 where any in-band window point falls, else 0.
void rasterize_raw_lidar(const ScanWindow& window, const Point3& quad, const EncoderConfig& cfg,
                         std::vector<float>& out);

struct EnvStep {
  RewardBreakdown reward;
  bool collided = false;
  bool truncated = false;     // step limit reached without collision
  bool at_goal = false;       // within hover radius after this step
  bool done() const { return collided || truncated; }
};

class NavEnv {
 public:
  explicit NavEnv(EnvConfig cfg);

  /// Starts an episode on `arena`. `sim_seed` drives dynamic-obstacle
  /// respawns during the episode.
  const Observation& reset(const Arena& arena, std::uint64_t sim_seed);

  /// Starts an episode on an arena generated from `arena_seed`.
  const Observation& reset(std::uint64_t arena_seed);

  EnvStep step(const Vec2& action);

  const Observation& observation() const { return obs_; }
  const WorldState& state() const { return world_; }
  const EnvConfig& config() const { return cfg_; }
  const ObstacleMap& map() const { return map_; }

  int episode_steps() const { return steps_; }
  double episode_return() const { return return_; }
  bool goal_reached() const { return reached_; }
  /// Wall time spent encoding the window and building the observation on the
  /// most recent reset/step, in seconds.
  double last_perception_seconds() const { return perception_seconds_; }

  /// When false, step() skips the perception pipeline (for planners that
  /// read the world state directly).
  void set_build_observations(bool on) { build_obs_ = on; }

 private:
  void perceive();

  EnvConfig cfg_;
  WorldState world_;
  Rng sim_rng_;
  ScanWindow window_;
  ObstacleMap map_;
  Observation obs_;
  int steps_ = 0;
  double return_ = 0.0;
  bool reached_ = false;
  bool build_obs_ = true;
  double perception_seconds_ = 0.0;
};

}  // namespace dnrl
