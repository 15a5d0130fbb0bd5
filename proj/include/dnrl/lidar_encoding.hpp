#pragma once

// Point-cloud to obstacle-map encoding.
//
// A sliding window of recent lidar frames (already rotated into the
// horizontal world frame) is collapsed into one normalized nearest-distance
// value per bearing sector. Successive distance vectors are stacked into an
// n x m image whose rows are sectors and whose columns are frame ages
// (column 0 newest).

#include <array>
#include <cstdint>
#include <deque>
#include <istream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dnrl {

struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  bool operator==(const Point3&) const = default;
};

struct PointFrame {
  std::int64_t frame_id = 0;
  std::vector<Point3> points;
};

/// Body-to-world rotation, row-major.
struct BodyRotation {
  std::array<std::array<double, 3>, 3> m{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};

  static BodyRotation yaw(double angle);
  /// Yaw-pitch-roll (Z-Y-X) composition.
  static BodyRotation from_euler(double yaw, double pitch, double roll);
};

struct EncoderConfig {
  int sectors = 36;           // n
  double max_range = 10.0;    // d_max, meters
  double altitude_band = 1.0; // h, meters
  int window_frames = 4;      // j
  int history = 36;           // m
  double tick_duration = 0.05;

  /// Throws std::invalid_argument naming the first bad field.
  void validate() const;
};

class EncodingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Rotates body-frame points into the world frame. Rejects rotations whose
/// R^T R deviates from identity by more than 1e-6 or whose determinant is
/// not +1.
std::vector<Point3> transform_to_world(std::span<const Point3> points, const BodyRotation& rotation);

/// 1-based bearing sector of (x, y): bearing atan2(y, x) mapped to [0, 2*pi),
/// sector s covers [2*pi*(s-1)/n, 2*pi*s/n). Throws at the origin.
int sector_of(const Point3& point, int sectors);

/// Sliding window holding at most `capacity` frames with strictly
/// increasing ids.
class ScanWindow {
 public:
  explicit ScanWindow(int capacity);

  void push(PointFrame frame);
  void clear() { frames_.clear(); }

  int capacity() const { return capacity_; }
  std::size_t size() const { return frames_.size(); }
  bool empty() const { return frames_.empty(); }
  const std::deque<PointFrame>& frames() const { return frames_; }

 private:
  int capacity_;
  std::deque<PointFrame> frames_;
};

using DistanceVector = std::vector<double>;

/// Per-sector nearest horizontal distance (relative to `quad`) over the
/// window's points inside the altitude band, normalized by max_range.
/// Empty sectors read 1.0.
DistanceVector encode_window(const ScanWindow& window, const Point3& quad, const EncoderConfig& cfg);

/// Rolling n x m history of distance vectors; unfilled columns are 1.0.
class ObstacleMap {
 public:
  ObstacleMap(int sectors, int history);

  void push_column(std::span<const double> column);
  void reset();

  int sectors() const { return sectors_; }
  int history() const { return history_; }
  std::size_t pushes() const { return pushes_; }

  double at(int sector_row, int age_col) const {
    return grid_[static_cast<std::size_t>(sector_row) * history_ + age_col];
  }
  /// Row-major [sector][age].
  std::span<const double> data() const { return grid_; }

 private:
  int sectors_;
  int history_;
  std::size_t pushes_ = 0;
  std::vector<double> grid_;
};

/// Binary PGM (P5): width = history, height = sectors,
/// pixel = round(255 * (1 - value)).
std::string export_map_image(const ObstacleMap& map);

/// Parses a `frame_id,x,y,z` log. Rows of a frame must be contiguous and
/// frame ids ascending. Errors carry the 1-based line number.
std::vector<PointFrame> read_point_log(std::istream& in);

}  // namespace dnrl
