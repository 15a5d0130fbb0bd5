#include "dnrl/lidar_encoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "dnrl/vec2.hpp"

namespace dnrl {

BodyRotation BodyRotation::yaw(double angle) {
  return from_euler(angle, 0.0, 0.0);
}

BodyRotation BodyRotation::from_euler(double yaw, double pitch, double roll) {
  const double cy = std::cos(yaw), sy = std::sin(yaw);
  const double cp = std::cos(pitch), sp = std::sin(pitch);
  const double cr = std::cos(roll), sr = std::sin(roll);
  BodyRotation r;
  r.m = {{{cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr},
          {sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr},
          {-sp, cp * sr, cp * cr}}};
  return r;
}

void EncoderConfig::validate() const {
  if (sectors < 1) throw std::invalid_argument("encoder.sectors must be >= 1");
  if (!(max_range > 0.0)) throw std::invalid_argument("encoder.max_range must be > 0");
  if (!(altitude_band > 0.0)) throw std::invalid_argument("encoder.altitude_band must be > 0");
  if (window_frames < 1) throw std::invalid_argument("encoder.window_frames must be >= 1");
  if (history < 1) throw std::invalid_argument("encoder.history must be >= 1");
  if (!(tick_duration > 0.0)) throw std::invalid_argument("encoder.tick_duration must be > 0");
}

std::vector<Point3> transform_to_world(std::span<const Point3> points, const BodyRotation& rotation) {
  const auto& m = rotation.m;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double rtr = 0.0;
      for (int k = 0; k < 3; ++k) rtr += m[k][i] * m[k][j];
      const double expected = i == j ? 1.0 : 0.0;
      if (!std::isfinite(rtr) || std::abs(rtr - expected) > 1e-6) {
        throw EncodingError("rotation is not orthonormal");
      }
    }
  }
  const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                     m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                     m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  if (det < 0.0) throw EncodingError("rotation has determinant -1 (reflection)");

  std::vector<Point3> out;
  out.reserve(points.size());
  for (const auto& p : points) {
    out.push_back({m[0][0] * p.x + m[0][1] * p.y + m[0][2] * p.z,
                   m[1][0] * p.x + m[1][1] * p.y + m[1][2] * p.z,
                   m[2][0] * p.x + m[2][1] * p.y + m[2][2] * p.z});
  }
  return out;
}

namespace {

// Sector index (0-based) of a bearing direction; (dx, dy) must be nonzero.
inline int sector_index(double dx, double dy, int sectors) {
  double theta = std::atan2(dy, dx);
  if (theta < 0.0) theta += kTwoPi;
  // atan2 of a tiny negative dy can round up to exactly 2*pi after the shift
  int s = static_cast<int>(theta / kTwoPi * sectors);
  return std::min(s, sectors - 1);
}

}  // namespace

int sector_of(const Point3& point, int sectors) {
  if (sectors < 1) throw EncodingError("sector count must be >= 1");
  if (point.x == 0.0 && point.y == 0.0) throw EncodingError("point at origin has no bearing");
  return sector_index(point.x, point.y, sectors) + 1;
}

ScanWindow::ScanWindow(int capacity) : capacity_(capacity) {
  if (capacity < 1) throw EncodingError("window capacity must be >= 1");
}

void ScanWindow::push(PointFrame frame) {
  if (!frames_.empty() && frame.frame_id <= frames_.back().frame_id) {
    throw EncodingError("frame id " + std::to_string(frame.frame_id) +
                        " does not follow newest id " + std::to_string(frames_.back().frame_id));
  }
  frames_.push_back(std::move(frame));
  while (frames_.size() > static_cast<std::size_t>(capacity_)) frames_.pop_front();
}

DistanceVector encode_window(const ScanWindow& window, const Point3& quad, const EncoderConfig& cfg) {
  const int n = cfg.sectors;
  DistanceVector nearest(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  const double z_lo = quad.z - cfg.altitude_band;
  const double z_hi = quad.z + cfg.altitude_band;
  for (const auto& frame : window.frames()) {
    for (const auto& p : frame.points) {
      if (p.z < z_lo || p.z > z_hi) continue;
      const double dx = p.x - quad.x;
      const double dy = p.y - quad.y;
      if (dx == 0.0 && dy == 0.0) continue;  // no bearing
      const double dist = std::sqrt(dx * dx + dy * dy);
      if (!(dist < cfg.max_range)) continue;
      auto& slot = nearest[static_cast<std::size_t>(sector_index(dx, dy, n))];
      slot = std::min(slot, dist);
    }
  }
  for (auto& v : nearest) v = std::isinf(v) ? 1.0 : v / cfg.max_range;
  return nearest;
}

ObstacleMap::ObstacleMap(int sectors, int history)
    : sectors_(sectors), history_(history),
      grid_(static_cast<std::size_t>(sectors) * static_cast<std::size_t>(history), 1.0) {
  if (sectors < 1 || history < 1) throw EncodingError("obstacle map dimensions must be >= 1");
}

void ObstacleMap::push_column(std::span<const double> column) {
  if (column.size() != static_cast<std::size_t>(sectors_)) {
    throw EncodingError("distance vector has " + std::to_string(column.size()) + " entries, map expects " +
                        std::to_string(sectors_));
  }
  for (int s = 0; s < sectors_; ++s) {
    double* row = grid_.data() + static_cast<std::size_t>(s) * history_;
    std::copy_backward(row, row + history_ - 1, row + history_);
    row[0] = column[static_cast<std::size_t>(s)];
  }
  ++pushes_;
}

void ObstacleMap::reset() {
  std::fill(grid_.begin(), grid_.end(), 1.0);
  pushes_ = 0;
}

std::string export_map_image(const ObstacleMap& map) {
  std::string out = "P5\n" + std::to_string(map.history()) + " " + std::to_string(map.sectors()) + "\n255\n";
  out.reserve(out.size() + map.data().size());
  for (double v : map.data()) {
    const double c = std::clamp(v, 0.0, 1.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * (1.0 - c)))));
  }
  return out;
}

std::vector<PointFrame> read_point_log(std::istream& in) {
  std::vector<PointFrame> frames;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  auto fail = [&](const std::string& why) {
    throw EncodingError("line " + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header_seen) {
      header_seen = true;
      if (line != "frame_id,x,y,z") fail("expected header 'frame_id,x,y,z'");
      continue;
    }
    std::array<std::string, 4> cells;
    std::size_t start = 0;
    for (std::size_t c = 0; c < 4; ++c) {
      const auto comma = line.find(',', start);
      if (c < 3 && comma == std::string::npos) fail("expected 4 columns");
      if (c == 3 && comma != std::string::npos) fail("expected 4 columns");
      cells[c] = line.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      start = comma + 1;
    }
    std::int64_t id = 0;
    Point3 p;
    try {
      std::size_t used = 0;
      id = std::stoll(cells[0], &used);
      if (used != cells[0].size()) fail("bad frame_id '" + cells[0] + "'");
      double* dst[3] = {&p.x, &p.y, &p.z};
      for (int k = 0; k < 3; ++k) {
        *dst[k] = std::stod(cells[k + 1], &used);
        if (used != cells[k + 1].size()) fail("bad coordinate '" + cells[k + 1] + "'");
      }
    } catch (const EncodingError&) {
      throw;
    } catch (const std::exception&) {
      fail("unparsable row '" + line + "'");
    }
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) fail("non-finite coordinate");
    if (frames.empty() || frames.back().frame_id != id) {
      if (!frames.empty() && id < frames.back().frame_id) fail("frame ids must ascend and be contiguous");
      frames.push_back({id, {}});
    }
    frames.back().points.push_back(p);
  }
  return frames;
}

}  // namespace dnrl
