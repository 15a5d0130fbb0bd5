#pragma once

// Per-tick episode log: `tick,px,py,vx,vy,ax,ay,reward,collided`, optionally
// followed by reward-breakdown columns. Row 0 is the initial state.

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <vector>

#include "dnrl/reward.hpp"
#include "dnrl/vec2.hpp"
#include "dnrl/world_sim.hpp"

namespace dnrl {

struct EpisodeLogRow {
  std::int64_t tick = 0;
  Vec2 position;
  Vec2 velocity;
  Vec2 accel;
  double reward = 0.0;
  bool collided = false;
  // breakdown, written after the required columns
  double r_v = 0.0, r_p = 0.0, r_j = 0.0, r_o = 0.0, r_d = 0.0, r_h = 0.0;
};

class LogFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

EpisodeLogRow make_log_row(const WorldState& state, const RewardBreakdown* reward);

void write_episode_log(std::ostream& out, const std::vector<EpisodeLogRow>& rows);

/// Reads the required columns (extra trailing columns are ignored). Errors
/// name the 1-based line.
std::vector<EpisodeLogRow> read_episode_log(std::istream& in);

}  // namespace dnrl
