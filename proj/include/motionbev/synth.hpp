#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "motionbev/error.hpp"
#include "motionbev/geometry.hpp"
#include "motionbev/ingest.hpp"
#include "motionbev/motion.hpp"

namespace motionbev::synth {

/// Axis-aligned (in its own frame) box resting on the ground.
struct BoxObject {
  std::array<double, 3> size{4.0, 2.0, 1.5};  // length, width, height (m)
  double x = 10.0, y = 0.0, yaw = 0.0;         // initial world pose
  double vx = 0.0, vy = 0.0;                   // m/frame, world frame

  bool moving() const { return std::hypot(vx, vy) > 0.0; }
};

enum class EgoPath { Static, Line, Arc };

struct EgoMotion {
  EgoPath path = EgoPath::Static;
  double speed = 0.0;     // m/frame
  double heading = 0.0;   // rad, initial yaw
  double yaw_rate = 0.0;  // rad/frame, Arc only
};

struct SceneSpec {
  std::uint64_t seed = 0;
  int frames = 24;
  EgoMotion ego;
  double ground_z = -1.7;
  // Ground is stratified over a world-fixed square lattice, so a static
  // surface yields the same xy samples from every pose; only the points
  // within sample_rho_max of the sensor are returned.
  int ground_points_per_cell = 3;
  double ground_spacing = 0.6;
  double sample_rho_max = 32.0;
  double surface_spacing = 0.25;
  std::vector<BoxObject> objects;
  double noise = 0.02;       // sigma of the z measurement noise
  double pose_noise = 0.0;   // sigma of the reported-pose perturbation
  std::uint32_t ground_code = 40;
  std::uint32_t parked_code = 10;
  std::uint32_t moving_code = 251;

  void validate() const {
    if (frames < 0) throw ValidationError("scene frame count must be >= 0");
    if (!(ground_spacing > 0) || !(sample_rho_max > 0))
      throw ValidationError("ground spacing and sampling range must be > 0");
    if (ground_points_per_cell < 0) throw ValidationError("ground points per cell must be >= 0");
    if (!(surface_spacing > 0)) throw ValidationError("surface spacing must be > 0");
    if (noise < 0 || pose_noise < 0) throw ValidationError("noise levels must be >= 0");
    for (const auto& o : objects) {
      if (std::hypot(o.x, o.y) >= sample_rho_max) throw ValidationError("object starts outside sampling range");
      if (o.size[0] <= 0 || o.size[1] <= 0 || o.size[2] <= 0) throw ValidationError("object size must be positive");
    }
  }
};

struct Frame {
  PointCloud cloud;
  PoseSE3 pose;                      // reported world pose
  std::vector<std::uint32_t> labels; // raw label codes, one per point
};

using Sequence = std::vector<Frame>;

namespace detail {
// splitmix64 finalizer
inline std::uint64_t mix(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}
}  // namespace detail

inline PoseSE3 ego_pose(const EgoMotion& ego, int t) {
  double x = 0, y = 0, yaw = ego.heading;
  switch (ego.path) {
    case EgoPath::Static:
      break;
    case EgoPath::Line:
      x = t * ego.speed * std::cos(ego.heading);
      y = t * ego.speed * std::sin(ego.heading);
      break;
    case EgoPath::Arc:
      for (int k = 0; k < t; ++k) {
        x += ego.speed * std::cos(yaw);
        y += ego.speed * std::sin(yaw);
        yaw += ego.yaw_rate;
      }
      break;
  }
  return PoseSE3::from_yaw_translation(yaw, x, y, 0.0);
}

/// World pose of an object's footprint center at frame t (z at ground).
inline PoseSE3 object_pose(const BoxObject& o, int t, double ground_z) {
  return PoseSE3::from_yaw_translation(o.yaw, o.x + o.vx * t, o.y + o.vy * t, ground_z);
}

/// Fixed surface samples of a box in its own frame (top plus four sides,
/// bottom edge at z = 0).
inline std::vector<Point> box_surface(const BoxObject& o, double spacing) {
  std::vector<Point> pts;
  const double l = o.size[0], wd = o.size[1], ht = o.size[2];
  const int nl = std::max(1, static_cast<int>(std::round(l / spacing)));
  const int nw = std::max(1, static_cast<int>(std::round(wd / spacing)));
  const int nh = std::max(1, static_cast<int>(std::round(ht / spacing)));
  for (int i = 0; i <= nl; ++i)
    for (int j = 0; j <= nw; ++j) pts.push_back({-l / 2 + l * i / nl, -wd / 2 + wd * j / nw, ht, 0.0});
  for (int k = 0; k < nh; ++k) {
    const double z = ht * k / nh;
    for (int i = 0; i <= nl; ++i) {
      pts.push_back({-l / 2 + l * i / nl, -wd / 2, z, 0.0});
      pts.push_back({-l / 2 + l * i / nl, wd / 2, z, 0.0});
    }
    for (int j = 1; j < nw; ++j) {
      pts.push_back({-l / 2, -wd / 2 + wd * j / nw, z, 0.0});
      pts.push_back({l / 2, -wd / 2 + wd * j / nw, z, 0.0});
    }
  }
  return pts;
}

inline bool inside_footprint(const BoxObject& o, const PoseSE3& world_to_obj, const Point& world_pt) {
  const Point local = world_to_obj.apply(world_pt);
  return std::abs(local.x) <= o.size[0] / 2 && std::abs(local.y) <= o.size[1] / 2;
}

inline Frame generate_frame(const SceneSpec& spec, int t) {
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed & 0xFFFFFFFFu), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(t), 0x5eedu};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> noise(0.0, 1.0);

  const PoseSE3 world = ego_pose(spec.ego, t);
  const PoseSE3 world_inv = world.inverse();
  std::vector<PoseSE3> obj_world, obj_inv;
  for (const auto& o : spec.objects) {
    obj_world.push_back(object_pose(o, t, spec.ground_z));
    obj_inv.push_back(obj_world.back().inverse());
  }

  Frame f;
  f.cloud.frame_index = t;
  const double ds = spec.ground_spacing, reach = spec.sample_rho_max;
  const double ex = world.matrix()(0, 3), ey = world.matrix()(1, 3);
  const auto ix0 = static_cast<std::int64_t>(std::floor((ex - reach) / ds));
  const auto ix1 = static_cast<std::int64_t>(std::floor((ex + reach) / ds));
  const auto iy0 = static_cast<std::int64_t>(std::floor((ey - reach) / ds));
  const auto iy1 = static_cast<std::int64_t>(std::floor((ey + reach) / ds));
  for (auto ix = ix0; ix <= ix1; ++ix)
    for (auto iy = iy0; iy <= iy1; ++iy)
      for (int k = 0; k < spec.ground_points_per_cell; ++k) {
        // jitter depends on the lattice cell only, never on the frame
        const auto h = detail::mix(spec.seed ^ detail::mix(static_cast<std::uint64_t>(ix) * 0x9E3779B97F4A7C15ull ^
                                                           static_cast<std::uint64_t>(iy) * 0xC2B2AE3D27D4EB4Full ^
                                                           static_cast<std::uint64_t>(k)));
        const double jx = static_cast<double>(h >> 40) / 16777216.0;
        const double jy = static_cast<double>((h >> 16) & 0xFFFFFFu) / 16777216.0;
        const Point pw{(static_cast<double>(ix) + jx) * ds, (static_cast<double>(iy) + jy) * ds, spec.ground_z, 0.0};
        if (std::hypot(pw.x - ex, pw.y - ey) > reach) continue;
        bool hidden = false;
        for (std::size_t o = 0; o < spec.objects.size() && !hidden; ++o)
          hidden = inside_footprint(spec.objects[o], obj_inv[o], pw);
        if (hidden) continue;
        Point p = world_inv.apply(pw);
        p.z += spec.noise * noise(rng);
        f.cloud.points.push_back(p);
        f.labels.push_back(spec.ground_code);
      }
  for (std::size_t o = 0; o < spec.objects.size(); ++o) {
    const PoseSE3 to_sensor = world_inv * obj_world[o];
    const auto code = spec.objects[o].moving() ? spec.moving_code : spec.parked_code;
    for (auto p : box_surface(spec.objects[o], spec.surface_spacing)) {
      Point q = to_sensor.apply(p);
      q.z += spec.noise * noise(rng);
      f.cloud.points.push_back(q);
      f.labels.push_back(code);
    }
  }
  f.pose = world;
  if (spec.pose_noise > 0) {
    const double s = spec.pose_noise;
    f.pose = world * PoseSE3::from_yaw_translation(s * noise(rng), s * noise(rng), s * noise(rng), 0.0);
  }
  return f;
}

inline Sequence generate(const SceneSpec& spec) {
  spec.validate();
  Sequence seq;
  seq.reserve(static_cast<std::size_t>(spec.frames));
  for (int t = 0; t < spec.frames; ++t) seq.push_back(generate_frame(spec, t));
  return seq;
}

/// Scene with randomly placed car-sized boxes, some driving and some parked.
inline SceneSpec random_scene(std::uint64_t seed, int frames, int moving, int parked, double rho_max = 32.0) {
  std::mt19937_64 rng(seed * 7919u + 17u);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * unit(rng); };
  SceneSpec s;
  s.seed = seed;
  s.frames = frames;
  s.sample_rho_max = rho_max;
  const double pick = unit(rng);
  s.ego.heading = uni(-std::numbers::pi, std::numbers::pi);
  if (pick < 1.0 / 3) {
    s.ego.path = EgoPath::Static;
  } else if (pick < 2.0 / 3) {
    s.ego.path = EgoPath::Line;
    s.ego.speed = uni(0.2, 0.8);
  } else {
    s.ego.path = EgoPath::Arc;
    s.ego.speed = uni(0.2, 0.8);
    s.ego.yaw_rate = uni(-0.03, 0.03);
  }
  // Rejection-sample objects so every box stays inside the grid annulus
  // around the ego and no two boxes (or the ego) come within reach of each
  // other at any frame.
  const int total = moving + parked;
  std::vector<PoseSE3> ego(static_cast<std::size_t>(std::max(frames, 1)));
  for (int t = 0; t < static_cast<int>(ego.size()); ++t) ego[static_cast<std::size_t>(t)] = ego_pose(s.ego, t);
  auto center = [](const BoxObject& o, int t) { return std::array<double, 2>{o.x + o.vx * t, o.y + o.vy * t}; };
  for (int i = 0, tries = 0; i < total && tries < 20000; ++tries) {
    BoxObject o;
    const double r = uni(0.25, 0.7) * rho_max;
    const double th = uni(-std::numbers::pi, std::numbers::pi);
    const auto& e0 = ego.front();
    o.x = e0(0, 3) + r * std::cos(th);
    o.y = e0(1, 3) + r * std::sin(th);
    o.yaw = uni(-std::numbers::pi, std::numbers::pi);
    o.size = {uni(3.5, 4.6), uni(1.6, 2.0), uni(1.3, 1.9)};
    if (i < moving) {
      const double v = uni(0.4, 0.9);
      o.vx = v * std::cos(o.yaw);
      o.vy = v * std::sin(o.yaw);
    }
    bool ok = true;
    for (int t = 0; t < static_cast<int>(ego.size()) && ok; ++t) {
      const auto c = center(o, t);
      const auto& e = ego[static_cast<std::size_t>(t)];
      const double d = std::hypot(c[0] - e(0, 3), c[1] - e(1, 3));
      ok = d > 5.0 && d < 0.85 * rho_max - 3.0;
      for (const auto& q : s.objects) {
        const auto cq = center(q, t);
        ok = ok && std::hypot(c[0] - cq[0], c[1] - cq[1]) > 7.0;
      }
    }
    if (!ok) continue;
    s.objects.push_back(o);
    ++i;
  }
  return s;
}

/// Motion features of frame j recomputed from scratch, without any window
/// state: channel k uses frames j+k-N+1 .. j+k aligned to frame j. Channels
/// whose window would start before frame 0 are left at zero.
inline MotionFeatures oracle_motion_features(std::span<const PointCloud> clouds, std::span<const PoseSE3> world,
                                             const GridConfig& cfg, std::int64_t j) {
  const auto n = static_cast<std::int64_t>(cfg.window);
  const auto len = static_cast<std::int64_t>(clouds.size());
  if (n < 2) throw ConfigError("N", "temporal window needs at least 2 frames");
  if (static_cast<std::int64_t>(world.size()) != len) throw ShapeError("cloud/pose count mismatch");
  if (j < 0 || j + n - 1 >= len)
    throw StateError("frame " + std::to_string(j) + " needs frames up to " + std::to_string(j + n - 1) + ", have " +
                     std::to_string(len));
  const auto half = n / 2;
  MotionFeatures mf;
  mf.frame_index = clouds[static_cast<std::size_t>(j)].frame_index;
  mf.data = Tensor({static_cast<std::size_t>(n), static_cast<std::size_t>(cfg.h), static_cast<std::size_t>(cfg.w)});
  const PoseSE3 target_inv = world[static_cast<std::size_t>(j)].inverse();
  for (std::int64_t k = 0; k < n; ++k) {
    const std::int64_t newest = j + k, oldest = j + k - n + 1;
    if (oldest < 0) continue;
    std::vector<PointCloud> q1, q2;
    for (std::int64_t m = newest; m >= oldest; --m) {
      const PoseSE3 rel = target_inv * world[static_cast<std::size_t>(m)];
      auto aligned = transform_cloud(clouds[static_cast<std::size_t>(m)], rel);
      (newest - m < half ? q1 : q2).push_back(std::move(aligned));
    }
    const auto i1 = height_image(q1, cfg, 1, mf.frame_index);
    const auto i2 = height_image(q2, cfg, 2, mf.frame_index);
    const auto d = residual(i1, i2, k < half ? ResidualSign::Q1MinusQ2 : ResidualSign::Q2MinusQ1, cfg);
    std::copy(d.begin(), d.end(), mf.data.channel(static_cast<std::size_t>(k)).begin());
    mf.written_mask |= 1u << k;
  }
  return mf;
}

inline MotionFeatures oracle_motion_features(const Sequence& seq, const GridConfig& cfg, std::int64_t j) {
  std::vector<PointCloud> clouds;
  std::vector<PoseSE3> poses;
  for (const auto& f : seq) {
    clouds.push_back(f.cloud);
    poses.push_back(f.pose);
  }
  return oracle_motion_features(clouds, poses, cfg, j);
}

// ---------------------------------------------------------------------------
// JSON scene specs and on-disk export.

inline SceneSpec scene_from_json(const nlohmann::json& j) {
  SceneSpec s;
  s.seed = j.value("seed", std::uint64_t{0});
  s.frames = j.value("frames", 24);
  s.ground_z = j.value("ground_z", -1.7);
  s.ground_points_per_cell = j.value("ground_points_per_cell", 3);
  s.ground_spacing = j.value("ground_spacing", 0.6);
  s.sample_rho_max = j.value("sample_rho_max", 32.0);
  s.surface_spacing = j.value("surface_spacing", 0.25);
  s.noise = j.value("noise", 0.02);
  s.pose_noise = j.value("pose_noise", 0.0);
  if (j.contains("ego")) {
    const auto& e = j.at("ego");
    const auto path = e.value("path", std::string("static"));
    if (path == "static") s.ego.path = EgoPath::Static;
    else if (path == "line") s.ego.path = EgoPath::Line;
    else if (path == "arc") s.ego.path = EgoPath::Arc;
    else throw ConfigError("ego.path", "expected static, line or arc");
    s.ego.speed = e.value("speed", 0.0);
    s.ego.heading = e.value("heading", 0.0);
    s.ego.yaw_rate = e.value("yaw_rate", 0.0);
  }
  for (const auto& o : j.value("objects", nlohmann::json::array())) {
    BoxObject b;
    if (o.contains("size")) b.size = o.at("size").get<std::array<double, 3>>();
    const auto pos = o.value("position", std::array<double, 2>{10.0, 0.0});
    b.x = pos[0];
    b.y = pos[1];
    b.yaw = o.value("yaw", 0.0);
    const auto vel = o.value("velocity", std::array<double, 2>{0.0, 0.0});
    b.vx = vel[0];
    b.vy = vel[1];
    s.objects.push_back(b);
  }
  s.validate();
  return s;
}

/// Writes scans, labels and poses in the KITTI-style layout:
/// dir/velodyne/NNNNNN.bin, dir/labels/NNNNNN.label, dir/poses.txt.
inline void export_sequence(const Sequence& seq, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "velodyne");
  fs::create_directories(dir / "labels");
  std::vector<PoseSE3> poses;
  char name[32];
  for (const auto& f : seq) {
    std::snprintf(name, sizeof(name), "%06lld", static_cast<long long>(f.cloud.frame_index));
    write_scan(f.cloud, dir / "velodyne" / (std::string(name) + ".bin"));
    write_label_codes(f.labels, dir / "labels" / (std::string(name) + ".label"));
    poses.push_back(f.pose);
  }
  write_poses(poses, dir / "poses.txt");
}

}  // namespace motionbev::synth
