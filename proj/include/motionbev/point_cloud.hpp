#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace motionbev {

/// A LiDAR return in meters. The homogeneous coordinate is implicit.
struct Point {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double intensity = 0.0;

  bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
  friend bool operator==(const Point&, const Point&) = default;
};

/// One scan. Point order is significant: labels are matched by position.
struct PointCloud {
  std::vector<Point> points;
  std::int64_t frame_index = 0;
  bool has_intensity = false;

  std::size_t size() const noexcept { return points.size(); }
  bool empty() const noexcept { return points.empty(); }
  friend bool operator==(const PointCloud&, const PointCloud&) = default;
};

}  // namespace motionbev
