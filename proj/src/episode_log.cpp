#include "dnrl/episode_log.hpp"

#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

namespace dnrl {

EpisodeLogRow make_log_row(const WorldState& state, const RewardBreakdown* reward) {
  EpisodeLogRow row;
  row.tick = state.tick;
  row.position = state.quad.position;
  row.velocity = state.quad.velocity;
  row.accel = state.quad.prev_accel;
  if (reward != nullptr) {
    row.reward = reward->total;
    row.collided = reward->collided;
    row.r_v = reward->r_v;
    row.r_p = reward->r_p;
    row.r_j = reward->r_j;
    row.r_o = reward->r_o;
    row.r_d = reward->r_d;
    row.r_h = reward->r_h;
  }
  return row;
}

void write_episode_log(std::ostream& out, const std::vector<EpisodeLogRow>& rows) {
  out << "tick,px,py,vx,vy,ax,ay,reward,collided,r_v,r_p,r_j,r_o,r_d,r_h\n";
  char line[512];
  for (const auto& r : rows) {
    // %.17g keeps positions exact through a write/read round trip
    std::snprintf(line, sizeof line, "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                  static_cast<long long>(r.tick), r.position.x, r.position.y, r.velocity.x, r.velocity.y, r.accel.x,
                  r.accel.y, r.reward, r.collided ? 1 : 0, r.r_v, r.r_p, r.r_j, r.r_o, r.r_d, r.r_h);
    out << line;
  }
}

std::vector<EpisodeLogRow> read_episode_log(std::istream& in) {
  std::vector<EpisodeLogRow> rows;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) -> void {
    throw LogFormatError("line " + std::to_string(lineno) + ": " + msg);
  };
  if (!std::getline(in, line)) {
    lineno = 1;
    fail("missing header");
  }
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.rfind("tick,px,py,vx,vy,ax,ay,reward,collided", 0) != 0) {
    fail("expected header starting with tick,px,py,vx,vy,ax,ay,reward,collided");
  }
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 9) fail("expected at least 9 columns, got " + std::to_string(cells.size()));
    EpisodeLogRow r;
    try {
      std::size_t used = 0;
      r.tick = std::stoll(cells[0], &used);
      if (used != cells[0].size()) fail("bad tick '" + cells[0] + "'");
      double v[7];
      for (int k = 0; k < 7; ++k) {
        v[k] = std::stod(cells[static_cast<std::size_t>(k + 1)], &used);
        if (used != cells[static_cast<std::size_t>(k + 1)].size()) fail("bad number '" + cells[static_cast<std::size_t>(k + 1)] + "'");
      }
      r.position = {v[0], v[1]};
      r.velocity = {v[2], v[3]};
      r.accel = {v[4], v[5]};
      r.reward = v[6];
    } catch (const std::invalid_argument&) {
      fail("non-numeric field");
    } catch (const std::out_of_range&) {
      fail("number out of range");
    }
    if (cells[8] != "0" && cells[8] != "1") fail("collided must be 0 or 1");
    r.collided = cells[8] == "1";
    rows.push_back(r);
  }
  return rows;
}

}  // namespace dnrl
