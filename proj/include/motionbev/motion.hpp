#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <future>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "motionbev/container.hpp"
#include "motionbev/error.hpp"
#include "motionbev/geometry.hpp"
#include "motionbev/tensor.hpp"

namespace motionbev {

/// Per-cell vertical extent (max z - min z) of the in-band points of one
/// temporal window, plus the in-band point count used by the sparsity rule.
struct HeightImage {
  int h = 0;
  int w = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> valid;
  std::vector<int> counts;
  int window_id = 1;
  std::int64_t reference_frame = 0;
};

namespace detail {

struct HeightAccumulator {
  std::vector<double> lo, hi;
  std::vector<int> counts;

  explicit HeightAccumulator(std::size_t cells)
      : lo(cells, std::numeric_limits<double>::infinity()),
        hi(cells, -std::numeric_limits<double>::infinity()),
        counts(cells, 0) {}

  void add(const Point& p, const GridConfig& cfg) {
    if (!(p.z > cfg.z_min && p.z < cfg.z_max)) return;
    const auto c = cell_id(p, cfg);
    if (c < 0) return;
    const auto i = static_cast<std::size_t>(c);
    lo[i] = std::min(lo[i], p.z);
    hi[i] = std::max(hi[i], p.z);
    ++counts[i];
  }

  HeightImage finish(const GridConfig& cfg, int window_id, std::int64_t ref) && {
    HeightImage img;
    img.h = cfg.h;
    img.w = cfg.w;
    img.window_id = window_id;
    img.reference_frame = ref;
    img.values.assign(counts.size(), 0.0);
    img.valid.assign(counts.size(), 0);
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (counts[i] > 0) {
        img.values[i] = hi[i] - lo[i];
        img.valid[i] = 1;
      }
    }
    img.counts = std::move(counts);
    return img;
  }
};

}  // namespace detail

/// Height image of clouds already expressed in the reference frame.
inline HeightImage height_image(std::span<const PointCloud> clouds, const GridConfig& cfg, int window_id = 1,
                                std::int64_t reference_frame = 0) {
  detail::HeightAccumulator acc(cfg.cells());
  for (const auto& cloud : clouds)
    for (const auto& p : cloud.points) acc.add(p, cfg);
  return std::move(acc).finish(cfg, window_id, reference_frame);
}

/// Height image of sensor-frame clouds, each moved into the reference
/// frame by its own transform. Same arithmetic as transform_cloud followed
/// by height_image.
inline HeightImage height_image_aligned(std::span<const PointCloud* const> clouds, std::span<const PoseSE3> to_ref,
                                        const GridConfig& cfg, int window_id, std::int64_t reference_frame) {
  if (clouds.size() != to_ref.size()) throw ShapeError("cloud/transform count mismatch");
  detail::HeightAccumulator acc(cfg.cells());
  for (std::size_t k = 0; k < clouds.size(); ++k)
    for (const auto& p : clouds[k]->points) acc.add(to_ref[k].apply(p), cfg);
  return std::move(acc).finish(cfg, window_id, reference_frame);
}

/// Keeps a residual only inside the inclusive band [d_min, d_max] and only
/// where both windows saw at least `min_points` in-band points.
inline double filter_residual(double raw, int count_q1, int count_q2, const GridConfig& cfg) {
  if (count_q1 < cfg.min_points || count_q2 < cfg.min_points) return 0.0;
  if (raw < cfg.d_min || raw > cfg.d_max) return 0.0;
  return raw;
}

enum class ResidualSign { Q1MinusQ2, Q2MinusQ1 };

inline std::vector<double> raw_residual(const HeightImage& i1, const HeightImage& i2, ResidualSign sign) {
  if (i1.h != i2.h || i1.w != i2.w || i1.values.size() != i2.values.size())
    throw ShapeError("height image dimensions differ");
  if (i1.reference_frame != i2.reference_frame)
    throw ValidationError("height images reference different frames (" + std::to_string(i1.reference_frame) +
                          " vs " + std::to_string(i2.reference_frame) + ")");
  std::vector<double> out(i1.values.size(), 0.0);
  for (std::size_t c = 0; c < out.size(); ++c) {
    if (!i1.valid[c] || !i2.valid[c]) continue;
    out[c] = sign == ResidualSign::Q1MinusQ2 ? i1.values[c] - i2.values[c] : i2.values[c] - i1.values[c];
  }
  return out;
}

inline std::vector<double> residual(const HeightImage& i1, const HeightImage& i2, ResidualSign sign,
                                    const GridConfig& cfg) {
  auto out = raw_residual(i1, i2, sign);
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = filter_residual(out[c], i1.counts[c], i2.counts[c], cfg);
  return out;
}

/// Height images of the two half-windows, aligned to `target` (a world pose).
/// `clouds`/`world` list the N window frames newest first; the first N/2
/// form Q1.
inline std::pair<HeightImage, HeightImage> window_height_images(std::span<const PointCloud* const> clouds,
                                                                std::span<const PoseSE3> world,
                                                                const PoseSE3& target, std::int64_t reference_frame,
                                                                const GridConfig& cfg) {
  const std::size_t n = clouds.size();
  if (n != world.size() || n % 2 != 0 || n == 0) throw ShapeError("window must hold an even, non-zero frame count");
  const PoseSE3 target_inv = target.inverse();
  std::vector<PoseSE3> to_ref(n);
  for (std::size_t k = 0; k < n; ++k) to_ref[k] = target_inv * world[k];
  const std::size_t half = n / 2;
  auto i1 = height_image_aligned(clouds.first(half), std::span<const PoseSE3>(to_ref).first(half), cfg, 1,
                                 reference_frame);
  auto i2 = height_image_aligned(clouds.subspan(half), std::span<const PoseSE3>(to_ref).subspan(half), cfg, 2,
                                 reference_frame);
  return {std::move(i1), std::move(i2)};
}

/// Filtered residual written into channel `k` of a frame whose pose is
/// `target`. Channels below N/2 use I1 - I2, the rest I2 - I1.
inline std::vector<double> window_channel(std::span<const PointCloud* const> clouds, std::span<const PoseSE3> world,
                                          const PoseSE3& target, std::int64_t reference_frame, int k,
                                          const GridConfig& cfg) {
  auto [i1, i2] = window_height_images(clouds, world, target, reference_frame, cfg);
  const auto sign = k < cfg.window / 2 ? ResidualSign::Q1MinusQ2 : ResidualSign::Q2MinusQ1;
  return residual(i1, i2, sign, cfg);
}

enum class FeatureMode { Complete, DelayFree };

struct MotionFeatures {
  Tensor data;  // (C, h, w)
  std::int64_t frame_index = 0;
  FeatureMode mode = FeatureMode::Complete;
  std::uint32_t written_mask = 0;  // bit k set when channel k was computed

  std::size_t channels() const { return data.rank() ? data.dim(0) : 0; }
  bool complete() const {
    const auto c = channels();
    return c > 0 && written_mask == (c >= 32 ? ~0u : ((1u << c) - 1u));
  }
};

/// Sliding pair of half-windows over a stream of scans.
///
/// In complete mode every push, once N frames are buffered, writes channel
/// k of the frame at window position k (k = 0 newest) and returns the
/// oldest frame, which has then passed through every position. Frames
/// that entered during warm-up keep zeros in the channels they missed.
/// In delay-free mode each push with N frames buffered returns channel 0
/// of the newest frame.
class WindowState {
 public:
  explicit WindowState(GridConfig cfg, FeatureMode mode = FeatureMode::Complete, unsigned workers = 1)
      : cfg_(std::move(cfg)), mode_(mode), workers_(std::max(1u, workers)) {
    cfg_.validate();
    if (cfg_.window < 2) throw ConfigError("N", "temporal window needs at least 2 frames");
    if (cfg_.window > 32) throw ConfigError("N", "temporal window above 32 frames is not supported");
  }

  const GridConfig& config() const noexcept { return cfg_; }
  FeatureMode mode() const noexcept { return mode_; }
  std::size_t size() const noexcept { return buf_.size(); }
  std::size_t capacity() const noexcept { return static_cast<std::size_t>(cfg_.window); }

  std::optional<MotionFeatures> push(PointCloud cloud, const PoseSE3& world_pose) {
    if (has_last_ && cloud.frame_index <= last_frame_)
      throw StateError("frame index " + std::to_string(cloud.frame_index) + " does not follow " +
                       std::to_string(last_frame_));
    has_last_ = true;
    last_frame_ = cloud.frame_index;

    const std::size_t n = capacity();
    if (buf_.size() == n) buf_.pop_front();
    Entry e;
    e.cloud = std::move(cloud);
    e.pose = world_pose;
    if (mode_ == FeatureMode::Complete)
      e.acc = Tensor({n, static_cast<std::size_t>(cfg_.h), static_cast<std::size_t>(cfg_.w)});
    buf_.push_back(std::move(e));
    if (buf_.size() < n) return std::nullopt;

    if (mode_ == FeatureMode::DelayFree) return delay_free();

    const auto [clouds, poses] = newest_first();
    auto write = [&, cl = clouds, po = poses](std::size_t k) {
      Entry& target = buf_[n - 1 - k];
      const auto ch = window_channel(cl, po, target.pose, target.cloud.frame_index, static_cast<int>(k), cfg_);
      std::copy(ch.begin(), ch.end(), target.acc.channel(k).begin());
      target.written |= 1u << k;
    };
    if (workers_ == 1) {
      for (std::size_t k = 0; k < n; ++k) write(k);
    } else {
      std::vector<std::future<void>> jobs;
      for (std::size_t k = 0; k < n; ++k) {
        jobs.push_back(std::async(std::launch::async, write, k));
        if (jobs.size() == workers_) {
          for (auto& j : jobs) j.get();
          jobs.clear();
        }
      }
      for (auto& j : jobs) j.get();
    }

    const Entry& oldest = buf_.front();
    MotionFeatures out;
    out.data = oldest.acc;
    out.frame_index = oldest.cloud.frame_index;
    out.mode = FeatureMode::Complete;
    out.written_mask = oldest.written;
    return out;
  }

  /// Channel 0 for the newest buffered frame, available without delay.
  MotionFeatures delay_free() const {
    if (buf_.size() < capacity())
      throw StateError("delay-free features need " + std::to_string(capacity()) + " buffered frames, have " +
                       std::to_string(buf_.size()));
    const auto [clouds, poses] = newest_first();
    const Entry& newest = buf_.back();
    const auto ch = window_channel(clouds, poses, newest.pose, newest.cloud.frame_index, 0, cfg_);
    MotionFeatures out;
    out.data = Tensor({1, static_cast<std::size_t>(cfg_.h), static_cast<std::size_t>(cfg_.w)});
    std::copy(ch.begin(), ch.end(), out.data.channel(0).begin());
    out.frame_index = newest.cloud.frame_index;
    out.mode = FeatureMode::DelayFree;
    out.written_mask = 1;
    return out;
  }

 private:
  struct Entry {
    PointCloud cloud;
    PoseSE3 pose;
    Tensor acc;
    std::uint32_t written = 0;
  };

  std::pair<std::vector<const PointCloud*>, std::vector<PoseSE3>> newest_first() const {
    std::vector<const PointCloud*> clouds;
    std::vector<PoseSE3> poses;
    for (auto it = buf_.rbegin(); it != buf_.rend(); ++it) {
      clouds.push_back(&it->cloud);
      poses.push_back(it->pose);
    }
    return {std::move(clouds), std::move(poses)};
  }

  GridConfig cfg_;
  FeatureMode mode_;
  unsigned workers_;
  std::deque<Entry> buf_;  // front = oldest
  bool has_last_ = false;
  std::int64_t last_frame_ = 0;
};

inline void write_motion_features(const MotionFeatures& mf, const std::filesystem::path& path) {
  auto rec = ContainerRecord::from_tensor(mf.data, static_cast<std::int32_t>(mf.frame_index));
  write_container(std::span<const ContainerRecord>(&rec, 1), path);
}

inline MotionFeatures read_motion_features(const std::filesystem::path& path) {
  const auto recs = read_container(path);
  if (recs.size() != 1) throw ParseError(path.string() + ": expected one MBEV record, found " + std::to_string(recs.size()));
  MotionFeatures mf;
  mf.data = recs[0].to_tensor();
  mf.frame_index = recs[0].tag;
  mf.mode = recs[0].channels == 1 ? FeatureMode::DelayFree : FeatureMode::Complete;
  mf.written_mask = recs[0].channels >= 32 ? ~0u : ((1u << recs[0].channels) - 1u);
  return mf;
}

}  // namespace motionbev
