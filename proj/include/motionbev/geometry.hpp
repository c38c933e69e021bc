#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "motionbev/error.hpp"
#include "motionbev/point_cloud.hpp"
#include "motionbev/pose.hpp"

namespace motionbev {

/// Polar BEV lattice and temporal-window parameters.
///
/// `h` counts angular bins (rows), `w` radial bins (columns). `window` is
/// the total temporal window length N; each half-window holds N/2 frames.
struct GridConfig {
  int h = 360;
  int w = 480;
  double rho_min = 0.0;
  double rho_max = 50.0;
  double theta_min = -std::numbers::pi;
  double theta_max = std::numbers::pi;
  double z_min = -4.0;
  double z_max = 2.0;
  double d_min = 0.4;
  double d_max = 4.0;
  int min_points = 5;
  int window = 8;

  std::size_t cells() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }

  void validate() const {
    if (h < 1) throw ConfigError("h", "must be >= 1");
    if (w < 1) throw ConfigError("w", "must be >= 1");
    if (!(rho_max > rho_min)) throw ConfigError("rho_max", "must exceed rho_min");
    if (rho_min < 0) throw ConfigError("rho_min", "must be >= 0");
    if (!(theta_max > theta_min)) throw ConfigError("theta_max", "must exceed theta_min");
    if (!(z_max > z_min)) throw ConfigError("z_max", "must exceed z_min");
    if (!(d_min > 0)) throw ConfigError("d_min", "must be > 0");
    if (!(d_max > d_min)) throw ConfigError("d_max", "must exceed d_min");
    if (min_points < 1) throw ConfigError("min_points", "must be >= 1");
    if (window < 0) throw ConfigError("window", "must be >= 0");
    if (window % 2 != 0) throw ConfigError("window", "must be even (two equal half-windows)");
  }

  friend bool operator==(const GridConfig&, const GridConfig&) = default;
};

struct PolarPoint {
  double rho = 0.0;
  double theta = 0.0;
  double z = 0.0;
};

/// 0-based cell coordinates: `u` radial column, `v` angular row.
struct GridIndex {
  int u = 0;
  int v = 0;
  friend bool operator==(const GridIndex&, const GridIndex&) = default;
};

inline PolarPoint cart_to_polar(const Point& p) {
  PolarPoint out;
  out.rho = std::sqrt(p.x * p.x + p.y * p.y);
  out.theta = (p.x == 0.0 && p.y == 0.0) ? 0.0 : std::atan2(p.y, p.x);
  out.z = p.z;
  return out;
}

/// Half-open bin lookup on [lo, hi) split into `count` equal bins.
///
/// The returned bin b satisfies width*b <= value-lo < width*(b+1) with
/// width = (hi-lo)/count evaluated in double. value == hi lands in the last
/// bin; anything below lo or above hi has no bin.
inline std::optional<int> bin_of(double value, double lo, double hi, int count) {
  if (!(value >= lo) || value > hi) return std::nullopt;
  const int last = count - 1;
  if (value == hi) return last;
  const double offset = value - lo;
  const double range = hi - lo;
  const double width = range / count;
  int b = static_cast<int>(std::floor(offset / range * count));
  b = std::clamp(b, 0, last);
  // floor() of the scaled value can be one off from the edge test near
  // bin boundaries; settle on the bin whose edges bracket the offset.
  while (b > 0 && width * b > offset) --b;
  while (b < last && width * (b + 1) <= offset) ++b;
  return b;
}

inline std::optional<GridIndex> grid_index(const PolarPoint& pp, const GridConfig& cfg) {
  const auto u = bin_of(pp.rho, cfg.rho_min, cfg.rho_max, cfg.w);
  if (!u) return std::nullopt;
  const auto v = bin_of(pp.theta, cfg.theta_min, cfg.theta_max, cfg.h);
  if (!v) return std::nullopt;
  return GridIndex{*u, *v};
}

/// Linear cell id (v * w + u), or -1 when the point falls outside the grid.
inline std::int32_t cell_id(const Point& p, const GridConfig& cfg) {
  const auto g = grid_index(cart_to_polar(p), cfg);
  return g ? g->v * cfg.w + g->u : -1;
}

/// Center of a cell in polar coordinates.
inline PolarPoint cell_center(const GridIndex& g, const GridConfig& cfg) {
  const double wr = (cfg.rho_max - cfg.rho_min) / cfg.w;
  const double wt = (cfg.theta_max - cfg.theta_min) / cfg.h;
  return {cfg.rho_min + (g.u + 0.5) * wr, cfg.theta_min + (g.v + 0.5) * wt, 0.0};
}

/// Assignment of a cloud's points to polar cells.
///
/// Cell membership is stored in compressed form: the points of cell c are
/// `members[offsets[c] .. offsets[c+1])`, in input order.
class Partition {
 public:
  Partition() = default;

  Partition(int h, int w, std::int64_t frame_index, std::vector<std::int32_t> cell_of_point)
      : h_(h), w_(w), frame_index_(frame_index), cell_of_point_(std::move(cell_of_point)) {
    const std::size_t ncell = static_cast<std::size_t>(h) * w;
    offsets_.assign(ncell + 1, 0);
    for (auto c : cell_of_point_)
      if (c >= 0) ++offsets_[static_cast<std::size_t>(c) + 1];
    for (std::size_t c = 0; c < ncell; ++c) offsets_[c + 1] += offsets_[c];
    members_.resize(offsets_[ncell]);
    std::vector<std::uint32_t> cursor(offsets_.begin(), offsets_.end() - 1);
    for (std::size_t i = 0; i < cell_of_point_.size(); ++i) {
      const auto c = cell_of_point_[i];
      if (c >= 0) members_[cursor[static_cast<std::size_t>(c)]++] = static_cast<std::uint32_t>(i);
    }
  }

  int h() const noexcept { return h_; }
  int w() const noexcept { return w_; }
  std::int64_t frame_index() const noexcept { return frame_index_; }
  std::size_t point_count() const noexcept { return cell_of_point_.size(); }
  std::size_t cell_count() const noexcept { return static_cast<std::size_t>(h_) * w_; }

  std::span<const std::uint32_t> cell(std::size_t id) const {
    return std::span<const std::uint32_t>(members_).subspan(offsets_[id], offsets_[id + 1] - offsets_[id]);
  }
  std::span<const std::uint32_t> cell(const GridIndex& g) const {
    return cell(static_cast<std::size_t>(g.v) * w_ + g.u);
  }

  std::optional<GridIndex> assignment(std::size_t point) const {
    const auto c = cell_of_point_.at(point);
    if (c < 0) return std::nullopt;
    return GridIndex{c % w_, c / w_};
  }

  std::span<const std::int32_t> cell_of_point() const noexcept { return cell_of_point_; }

  std::size_t out_of_range_count() const {
    return cell_of_point_.size() - members_.size();
  }

 private:
  int h_ = 0;
  int w_ = 0;
  std::int64_t frame_index_ = 0;
  std::vector<std::int32_t> cell_of_point_;
  std::vector<std::uint32_t> offsets_;
  std::vector<std::uint32_t> members_;
};

inline Partition partition(const PointCloud& cloud, const GridConfig& cfg) {
  std::vector<std::int32_t> cells(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) cells[i] = cell_id(cloud.points[i], cfg);
  return Partition(cfg.h, cfg.w, cloud.frame_index, std::move(cells));
}

inline PointCloud transform_cloud(const PointCloud& cloud, const PoseSE3& t) {
  PointCloud out;
  out.frame_index = cloud.frame_index;
  out.has_intensity = cloud.has_intensity;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.push_back(t.apply(p));
  return out;
}

/// Transform taking frame (i - n) coordinates into frame i coordinates,
/// given world poses of every frame: W_i^-1 * W_{i-n}.
inline PoseSE3 compose_between(std::span<const PoseSE3> world, std::int64_t to, std::int64_t from) {
  const auto n = static_cast<std::int64_t>(world.size());
  if (to < 0 || to >= n || from < 0 || from >= n)
    throw IndexError("frame index out of range: " + std::to_string(to) + ", " +
                     std::to_string(from) + " with " + std::to_string(n) + " poses");
  if (to == from) return PoseSE3::identity();
  return world[static_cast<std::size_t>(to)].inverse() * world[static_cast<std::size_t>(from)];
}

inline PoseSE3 compose_relative(std::span<const PoseSE3> world, std::int64_t i, std::int64_t n) {
  if (n < 0) throw IndexError("negative lookback " + std::to_string(n));
  return compose_between(world, i, i - n);
}

enum class MosClass : std::uint8_t { Static = 0, Moving = 1, Unlabeled = 2 };

/// Per-point classes from a per-cell class map (row-major h x w).
/// Points outside the grid are static.
inline std::vector<MosClass> back_project(std::span<const MosClass> grid_pred, const Partition& part) {
  if (grid_pred.size() != part.cell_count())
    throw ShapeError("grid prediction has " + std::to_string(grid_pred.size()) +
                     " cells, partition has " + std::to_string(part.cell_count()));
  std::vector<MosClass> out(part.point_count(), MosClass::Static);
  const auto cells = part.cell_of_point();
  for (std::size_t i = 0; i < out.size(); ++i)
    if (cells[i] >= 0) out[i] = grid_pred[static_cast<std::size_t>(cells[i])];
  return out;
}

}  // namespace motionbev
