#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "motionbev/motion.hpp"
#include "motionbev/synth.hpp"
#include "test_util.hpp"

using namespace motionbev;

namespace {

GridConfig small_grid(int n = 8) {
  GridConfig cfg;
  cfg.h = 32;
  cfg.w = 32;
  cfg.rho_max = 20.0;
  cfg.window = n;
  return cfg;
}

// Flat ground with `per_cell` points in every cell of `cfg`, z = -1.7.
PointCloud flat_ground(const GridConfig& cfg, int per_cell, std::int64_t frame) {
  PointCloud c;
  c.frame_index = frame;
  const double dr = (cfg.rho_max - cfg.rho_min) / cfg.w, dt = (cfg.theta_max - cfg.theta_min) / cfg.h;
  for (int v = 0; v < cfg.h; ++v)
    for (int u = 0; u < cfg.w; ++u)
      for (int k = 0; k < per_cell; ++k) {
        const double rho = cfg.rho_min + (u + (k + 1.0) / (per_cell + 1.0)) * dr;
        const double th = cfg.theta_min + (v + 0.5) * dt;
        c.points.push_back({rho * std::cos(th), rho * std::sin(th), -1.7, 0});
      }
  return c;
}

std::vector<MotionFeatures> run_complete(const std::vector<PointCloud>& clouds, const std::vector<PoseSE3>& poses,
                                         const GridConfig& cfg, std::vector<std::size_t>* emitted_at = nullptr) {
  WindowState ws(cfg);
  std::vector<MotionFeatures> out;
  for (std::size_t t = 0; t < clouds.size(); ++t)
    if (auto f = ws.push(clouds[t], poses[t])) {
      out.push_back(std::move(*f));
      if (emitted_at) emitted_at->push_back(t);
    }
  return out;
}

}  // namespace

TEST(HeightImage, MaxMinusMinInsideBand) {
  GridConfig cfg = small_grid();
  PointCloud c;
  c.points = {{5, 0, -1.0, 0}, {5, 0, 0.5, 0}, {5, 0, 1.9, 0}};
  const auto img = height_image(std::span<const PointCloud>(&c, 1), cfg);
  const auto cell = static_cast<std::size_t>(cell_id(c.points[0], cfg));
  EXPECT_DOUBLE_EQ(img.values[cell], 2.9);
  EXPECT_TRUE(img.valid[cell]);
  EXPECT_EQ(img.counts[cell], 3);
}

TEST(HeightImage, OutOfBandPointsAreDropped) {
  GridConfig cfg = small_grid();
  PointCloud c;
  c.points = {{5, 0, -5, 0}, {5, 0, 1, 0}, {5, 0, 2.0, 0}, {5, 0, -4.0, 0}};
  const auto img = height_image(std::span<const PointCloud>(&c, 1), cfg);
  const auto cell = static_cast<std::size_t>(cell_id(c.points[0], cfg));
  EXPECT_EQ(img.values[cell], 0.0);  // only z=1 survives; band is open
  EXPECT_TRUE(img.valid[cell]);
  EXPECT_EQ(img.counts[cell], 1);
}

TEST(HeightImage, EmptyCellsAreInvalidZero) {
  GridConfig cfg = small_grid();
  const auto img = height_image(std::span<const PointCloud>(), cfg);
  for (std::size_t i = 0; i < img.values.size(); ++i) {
    EXPECT_EQ(img.values[i], 0.0);
    EXPECT_FALSE(img.valid[i]);
  }
}

TEST(FilterResidual, Examples) {
  const GridConfig cfg;
  EXPECT_EQ(filter_residual(1.0, 10, 12, cfg), 1.0);
  EXPECT_EQ(filter_residual(1.0, 3, 12, cfg), 0.0);
  EXPECT_EQ(filter_residual(0.4, 5, 5, cfg), 0.4);
  EXPECT_EQ(filter_residual(4.0, 5, 5, cfg), 4.0);
  EXPECT_EQ(filter_residual(std::nextafter(0.4, 0.0), 5, 5, cfg), 0.0);
  EXPECT_EQ(filter_residual(std::nextafter(4.0, 5.0), 5, 5, cfg), 0.0);
  EXPECT_EQ(filter_residual(-1.5, 9, 9, cfg), 0.0);
}

TEST(Residual, SignAndKeepBand) {
  GridConfig cfg;
  cfg.h = 1;
  cfg.w = 1;
  auto img = [&](double v, int window) {
    HeightImage i;
    i.h = i.w = 1;
    i.values = {v};
    i.valid = {1};
    i.counts = {10};
    i.window_id = window;
    return i;
  };
  EXPECT_EQ(residual(img(2.0, 1), img(0.5, 2), ResidualSign::Q1MinusQ2, cfg)[0], 1.5);
  EXPECT_EQ(residual(img(0.5, 1), img(2.0, 2), ResidualSign::Q1MinusQ2, cfg)[0], 0.0);
  EXPECT_EQ(residual(img(0.5, 1), img(2.0, 2), ResidualSign::Q2MinusQ1, cfg)[0], 1.5);
  EXPECT_EQ(residual(img(6.0, 1), img(1.0, 2), ResidualSign::Q1MinusQ2, cfg)[0], 0.0);
  auto invalid = img(0.0, 2);
  invalid.valid = {0};
  invalid.counts = {0};
  EXPECT_EQ(raw_residual(img(2.0, 1), invalid, ResidualSign::Q1MinusQ2)[0], 0.0);
}

TEST(Residual, MismatchedImagesThrow) {
  GridConfig cfg = small_grid();
  auto a = height_image(std::span<const PointCloud>(), cfg, 1, 3);
  auto b = height_image(std::span<const PointCloud>(), cfg, 2, 4);
  EXPECT_THROW(residual(a, b, ResidualSign::Q1MinusQ2, cfg), ValidationError);
  GridConfig other = cfg;
  other.h = 8;
  auto c = height_image(std::span<const PointCloud>(), other, 2, 3);
  EXPECT_THROW(residual(a, c, ResidualSign::Q1MinusQ2, cfg), ShapeError);
}

TEST(WindowState, WarmUpReturnsNothing) {
  const auto cfg = small_grid();
  WindowState ws(cfg);
  for (int t = 0; t < cfg.window - 1; ++t) EXPECT_FALSE(ws.push(flat_ground(cfg, 1, t), PoseSE3::identity()));
  EXPECT_TRUE(ws.push(flat_ground(cfg, 1, cfg.window - 1), PoseSE3::identity()));
}

TEST(WindowState, RejectsNonIncreasingFrames) {
  const auto cfg = small_grid();
  WindowState ws(cfg);
  ws.push(flat_ground(cfg, 1, 3), PoseSE3::identity());
  EXPECT_THROW(ws.push(flat_ground(cfg, 1, 3), PoseSE3::identity()), StateError);
  EXPECT_THROW(ws.push(flat_ground(cfg, 1, 1), PoseSE3::identity()), StateError);
}

TEST(WindowState, StaticSceneGivesZeroFeatures) {
  const auto cfg = small_grid();
  std::vector<PointCloud> clouds;
  std::vector<PoseSE3> poses;
  for (int t = 0; t < 12; ++t) {
    auto c = flat_ground(cfg, 3, t);
    c.points.push_back({8, 3, -0.2, 0});  // a fixed pole
    clouds.push_back(c);
    poses.push_back(PoseSE3::identity());
  }
  const auto out = run_complete(clouds, poses, cfg);
  ASSERT_EQ(out.size(), 5u);
  for (const auto& f : out)
    for (auto v : f.data.values()) ASSERT_EQ(v, 0.0);
}

TEST(WindowState, DelayAccounting) {
  const auto cfg = small_grid();
  std::vector<PointCloud> clouds;
  std::vector<PoseSE3> poses;
  for (int t = 0; t < 20; ++t) {
    clouds.push_back(flat_ground(cfg, 1, t));
    poses.push_back(PoseSE3::identity());
  }
  std::vector<std::size_t> at;
  const auto out = run_complete(clouds, poses, cfg, &at);
  ASSERT_EQ(out.size(), 20u - cfg.window + 1);
  for (std::size_t i = 0; i < out.size(); ++i) {
    EXPECT_EQ(out[i].frame_index, static_cast<std::int64_t>(i));
    EXPECT_EQ(at[i], i + cfg.window - 1);
    // frames entering during warm-up miss their early channels
    EXPECT_EQ(out[i].complete(), i + 1 >= static_cast<std::size_t>(cfg.window));
  }
}

// Box (top at z = -0.2) over one cell from frame 4 onwards; frame 7 sees it
// in Q1 but not Q2 for channel 0, and in both windows for channels >= N/2.
TEST(WindowState, MovingBoxChannelValues) {
  const auto cfg = small_grid();
  const Point box_top{10.3, 0.05, -0.2, 0};
  std::vector<PointCloud> clouds;
  std::vector<PoseSE3> poses;
  for (int t = 0; t < 15; ++t) {
    auto c = flat_ground(cfg, 2, t);
    if (t >= 4)
      for (int k = 0; k < 3; ++k) c.points.push_back(box_top);
    clouds.push_back(std::move(c));
    poses.push_back(PoseSE3::identity());
  }
  const auto out = run_complete(clouds, poses, cfg);
  const auto& f7 = out.at(7);
  ASSERT_EQ(f7.frame_index, 7);
  const auto g = static_cast<std::size_t>(cell_id(box_top, cfg));
  // brute force: the cell's z extent in Q1 = {-1.7 ground, -0.2 box}; Q2 flat
  const double expect = -0.2 - (-1.7);
  EXPECT_EQ(f7.data.channel(0)[g], expect);
  EXPECT_NEAR(expect, 1.5, 1e-12);
  for (int k = cfg.window / 2; k < cfg.window; ++k) EXPECT_EQ(f7.data.channel(static_cast<std::size_t>(k))[g], 0.0);

  // delay-free on the same stream, at frame 7
  WindowState df(cfg, FeatureMode::DelayFree);
  std::optional<MotionFeatures> last;
  for (int t = 0; t <= 7; ++t) last = df.push(clouds[static_cast<std::size_t>(t)], poses[static_cast<std::size_t>(t)]);
  ASSERT_TRUE(last);
  EXPECT_EQ(last->frame_index, 7);
  EXPECT_EQ(last->channels(), 1u);
  for (std::size_t i = 0; i < cfg.cells(); ++i) ASSERT_EQ(last->data.channel(0)[i], f7.data.channel(0)[i]);
}

TEST(WindowState, DelayFreeNeedsFullWindow) {
  const auto cfg = small_grid();
  WindowState ws(cfg);
  for (int t = 0; t < cfg.window - 1; ++t) ws.push(flat_ground(cfg, 1, t), PoseSE3::identity());
  EXPECT_THROW(ws.delay_free(), StateError);
  ws.push(flat_ground(cfg, 1, 99), PoseSE3::identity());
  EXPECT_NO_THROW(ws.delay_free());
}

TEST(WindowState, MatchesBatchOracleOnSyntheticScenes) {
  GridConfig cfg = small_grid();
  cfg.rho_max = 32.0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    auto spec = synth::random_scene(seed, 14, 2, 1);
    spec.ground_spacing = 1.2;
    const auto seq = synth::generate(spec);
    std::vector<PointCloud> clouds;
    std::vector<PoseSE3> poses;
    for (const auto& f : seq) {
      clouds.push_back(f.cloud);
      poses.push_back(f.pose);
    }
    const auto out = run_complete(clouds, poses, cfg);
    ASSERT_EQ(out.size(), clouds.size() - cfg.window + 1);
    bool any_nonzero = false;
    for (const auto& f : out) {
      const auto ref = synth::oracle_motion_features(clouds, poses, cfg, f.frame_index);
      ASSERT_EQ(f.data, ref.data) << "frame " << f.frame_index;
      EXPECT_EQ(f.written_mask, ref.written_mask);
      for (auto v : f.data.values()) {
        ASSERT_TRUE(v == 0.0 || (v >= cfg.d_min && v <= cfg.d_max));
        any_nonzero |= v != 0.0;
      }
    }
    EXPECT_TRUE(any_nonzero);
  }
}

TEST(WindowState, WorkerPoolIsBitEqual) {
  GridConfig cfg = small_grid(4);
  cfg.rho_max = 32.0;
  const auto seq = synth::generate(synth::random_scene(4, 9, 2, 1));
  WindowState a(cfg), b(cfg, FeatureMode::Complete, 4);
  for (const auto& f : seq) {
    auto x = a.push(f.cloud, f.pose);
    auto y = b.push(f.cloud, f.pose);
    ASSERT_EQ(x.has_value(), y.has_value());
    if (x) {
      ASSERT_EQ(x->data, y->data);
    }
  }
}

TEST(WindowState, EgoMotionInvariance) {
  GridConfig cfg = small_grid();
  cfg.rho_max = 32.0;
  std::mt19937_64 rng(21);
  const auto seq = synth::generate(synth::random_scene(8, 12, 2, 1));
  const auto common = test::random_pose(rng, 100.0);
  WindowState a(cfg), b(cfg);
  for (const auto& f : seq) {
    auto x = a.push(f.cloud, f.pose);
    auto y = b.push(f.cloud, common * f.pose);
    if (!x) continue;
    for (std::size_t i = 0; i < x->data.size(); ++i) ASSERT_NEAR(x->data[i], y->data[i], 1e-9);
  }
}

TEST(WindowHeightImages, SwappingHalvesNegatesRawResidual) {
  GridConfig cfg = small_grid();
  cfg.rho_max = 32.0;
  const auto seq = synth::generate(synth::random_scene(5, 8, 2, 1));
  std::vector<const PointCloud*> fwd, swapped;
  std::vector<PoseSE3> pf, ps;
  for (int m = 7; m >= 0; --m) {
    fwd.push_back(&seq[static_cast<std::size_t>(m)].cloud);
    pf.push_back(seq[static_cast<std::size_t>(m)].pose);
  }
  for (int i = 0; i < 8; ++i) {
    const int src = (i + 4) % 8;
    swapped.push_back(fwd[static_cast<std::size_t>(src)]);
    ps.push_back(pf[static_cast<std::size_t>(src)]);
  }
  const PoseSE3 target = pf[0];
  const auto [a1, a2] = window_height_images(fwd, pf, target, 7, cfg);
  const auto [b1, b2] = window_height_images(swapped, ps, target, 7, cfg);
  const auto ra = raw_residual(a1, a2, ResidualSign::Q1MinusQ2);
  const auto rb = raw_residual(b1, b2, ResidualSign::Q1MinusQ2);
  for (std::size_t i = 0; i < ra.size(); ++i) ASSERT_EQ(ra[i], -rb[i]);
  // channel k of the swapped window equals channel k + N/2 of the original
  const auto ch0_swapped = window_channel(swapped, ps, target, 7, 0, cfg);
  const auto ch4_orig = window_channel(fwd, pf, target, 7, 4, cfg);
  EXPECT_EQ(ch0_swapped, ch4_orig);
}

TEST(MotionFeatureFile, RoundTrip) {
  test::TempDir dir;
  MotionFeatures mf;
  mf.frame_index = 12;
  mf.data = Tensor({8, 4, 5});
  for (std::size_t i = 0; i < mf.data.size(); ++i) mf.data[i] = (i % 7 == 0) ? 0.5 + 0.25 * (i % 5) : 0.0;
  write_motion_features(mf, dir / "000012.mbev");
  const auto back = read_motion_features(dir / "000012.mbev");
  EXPECT_EQ(back.frame_index, 12);
  EXPECT_EQ(back.data, mf.data);  // values exactly representable in float
}
