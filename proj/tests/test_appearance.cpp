#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "motionbev/appearance.hpp"
#include "motionbev/netcore.hpp"
#include "test_util.hpp"

using namespace motionbev;

namespace {

GridConfig grid8() {
  GridConfig cfg;
  cfg.h = 8;
  cfg.w = 8;
  cfg.rho_max = 16.0;
  return cfg;
}

PointInputs inputs_of(const PointCloud& c, const GridConfig& cfg) { return point_inputs(partition(c, cfg), c, cfg); }

Tensor pooled(const PointCloud& c, const MlpParams& p, const GridConfig& cfg) {
  return encode_appearance(partition(c, cfg), c, p, cfg).data;
}

}  // namespace

TEST(Descriptor, CenterPointHasZeroOffsets) {
  const auto cfg = grid8();
  const GridIndex g{3, 5};
  const auto c = cell_center(g, cfg);
  const Point p{c.rho * std::cos(c.theta), c.rho * std::sin(c.theta), 0.3, 0};
  const auto d = point_descriptor(p, g, cfg);
  EXPECT_NEAR(d[5], 0.0, 1e-12);
  EXPECT_NEAR(d[6], 0.0, 1e-12);
}

TEST(Descriptor, OriginPoint) {
  const auto cfg = grid8();
  const auto g = *grid_index(PolarPoint{0, 0, 0}, cfg);
  const auto d = point_descriptor({0, 0, 0, 0}, g, cfg);
  const auto c = cell_center(g, cfg);
  const Descriptor expect{0, 0, 0, 0, 0, -c.rho, -c.theta};
  EXPECT_EQ(d, expect);
}

TEST(Descriptor, PolarComponentsMatchCartesian) {
  const auto cfg = grid8();
  std::mt19937_64 rng(3);
  const auto cloud = test::random_cloud(rng, 200, 10.0);
  for (const auto& p : cloud.points) {
    if (cell_id(p, cfg) < 0) continue;
    const auto d = point_descriptor(p, *grid_index(cart_to_polar(p), cfg), cfg);
    const auto pp = cart_to_polar(Point{d[0], d[1], d[2], 0});
    EXPECT_EQ(d[3], pp.rho);
    EXPECT_EQ(d[4], pp.theta);
  }
}

TEST(EncodeAppearance, SinglePointIdentity) {
  const auto cfg = grid8();
  PointCloud c;
  c.points = {{3.1, 1.2, -0.4, 0}};
  const auto out = pooled(c, MlpParams::identity(kDescriptorDim), cfg);
  const auto cell = static_cast<std::size_t>(cell_id(c.points[0], cfg));
  const auto d = point_descriptor(c.points[0], *grid_index(cart_to_polar(c.points[0]), cfg), cfg);
  for (std::size_t k = 0; k < kDescriptorDim; ++k) EXPECT_EQ(out.channel(k)[cell], d[k]);
  for (std::size_t i = 0; i < cfg.cells(); ++i) {
    if (i == cell) continue;
    for (std::size_t k = 0; k < kDescriptorDim; ++k) ASSERT_EQ(out.channel(k)[i], 0.0);
  }
}

TEST(EncodeAppearance, TwoPointsComponentwiseMax) {
  const auto cfg = grid8();
  PointCloud c;
  c.points = {{5.0, 0.5, -1.0, 0}, {5.3, 0.4, 0.7, 0}};
  ASSERT_EQ(cell_id(c.points[0], cfg), cell_id(c.points[1], cfg));
  const auto out = pooled(c, MlpParams::identity(kDescriptorDim), cfg);
  const auto g = *grid_index(cart_to_polar(c.points[0]), cfg);
  const auto a = point_descriptor(c.points[0], g, cfg), b = point_descriptor(c.points[1], g, cfg);
  const auto cell = static_cast<std::size_t>(cell_id(c.points[0], cfg));
  for (std::size_t k = 0; k < kDescriptorDim; ++k) EXPECT_EQ(out.channel(k)[cell], std::max(a[k], b[k]));
}

TEST(EncodeAppearance, PermutationInvariant) {
  const auto cfg = grid8();
  std::mt19937_64 rng(11);
  auto cloud = test::random_cloud(rng, 400, 12.0);
  const std::size_t widths[] = {7, 12, 5};
  const auto params = MlpParams::random(widths, 4);
  const auto ref = pooled(cloud, params, cfg);
  for (int r = 0; r < 5; ++r) {
    std::shuffle(cloud.points.begin(), cloud.points.end(), rng);
    ASSERT_EQ(pooled(cloud, params, cfg), ref);
  }
}

TEST(EncodeAppearance, BruteForceMaxOverSmallCells) {
  const auto cfg = grid8();
  const std::size_t widths[] = {7, 9, 4};
  const auto params = MlpParams::random(widths, 8);
  std::mt19937_64 rng(5);
  for (int n = 1; n <= 5; ++n) {
    // n points scattered inside one cell
    const GridIndex g{4, 2};
    const auto c0 = cell_center(g, cfg);
    std::uniform_real_distribution<double> jitter(-0.3, 0.3), z(-2, 2);
    PointCloud c;
    for (int i = 0; i < n; ++i) {
      const double rho = c0.rho + jitter(rng), th = c0.theta + 0.1 * jitter(rng);
      c.points.push_back({rho * std::cos(th), rho * std::sin(th), z(rng), 0});
    }
    const auto out = pooled(c, params, cfg);
    const auto cell = static_cast<std::size_t>(g.v * cfg.w + g.u);
    for (std::size_t k = 0; k < 4; ++k) {
      double best = -1e300;
      for (const auto& p : c.points) {
        // forward by hand
        const auto d = point_descriptor(p, g, cfg);
        std::vector<double> a(d.begin(), d.end());
        for (std::size_t l = 0; l < params.layers.size(); ++l) {
          const auto& L = params.layers[l];
          std::vector<double> b(L.out());
          for (std::size_t o = 0; o < L.out(); ++o) {
            b[o] = L.bias[o];
            for (std::size_t i = 0; i < L.in(); ++i) b[o] += L.weight.at(o, i) * a[i];
            if (l + 1 < params.layers.size()) b[o] = std::max(0.0, b[o]);
          }
          a = std::move(b);
        }
        best = std::max(best, a[k]);
      }
      EXPECT_NEAR(out.channel(k)[cell], best, 1e-12);
    }
  }
}

TEST(EncodeAppearance, DimensionMismatchThrows) {
  const auto cfg = grid8();
  PointCloud c;
  c.points = {{3, 0, 0, 0}};
  EXPECT_THROW(pooled(c, MlpParams::identity(5), cfg), ShapeError);
}

TEST(EncodeAppearance, GradientMatchesFiniteDifferences) {
  const auto cfg = grid8();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    const auto cloud = test::random_cloud(rng, 60, 12.0);
    const auto in = inputs_of(cloud, cfg);
    const std::size_t widths[] = {7, 6, 3};
    auto params = MlpParams::random(widths, seed + 100);
    for (auto& L : params.layers) netcore::fill_uniform(L.bias, rng, -0.2, 0.2);
    Tensor up({3, 8, 8});
    netcore::fill_uniform(up, rng);
    AppearanceCache cache;
    encode_points(in, params, &cache);
    const auto grad = encode_points_backward(cache, params, up);
    auto f = [&] {
      const auto y = encode_points(in, params);
      double s = 0;
      for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * up[i];
      return s;
    };
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
      const auto nw = netcore::numeric_gradient(f, params.layers[l].weight);
      const auto nb = netcore::numeric_gradient(f, params.layers[l].bias);
      EXPECT_LE(netcore::relative_error(grad.layers[l].weight, nw), 1e-5) << "seed " << seed << " layer " << l;
      EXPECT_LE(netcore::relative_error(grad.layers[l].bias, nb), 1e-5) << "seed " << seed << " layer " << l;
    }
  }
}

TEST(MlpParams, RecordRoundTrip) {
  const std::size_t widths[] = {7, 5, 3};
  auto p = MlpParams::random(widths, 1);
  for (auto& L : p.layers)
    for (auto& v : L.weight.values()) v = static_cast<float>(v);
  const auto recs = mlp_records(p);
  ASSERT_EQ(recs.size(), 3u);
  const auto back = mlp_from_records(recs);
  ASSERT_EQ(back.layers.size(), 2u);
  EXPECT_EQ(back.layers[0].weight, p.layers[0].weight);
  EXPECT_EQ(back.layers[1].bias, p.layers[1].bias);
  EXPECT_TRUE(back.hidden_relu);
}

TEST(Augment, DeterministicUnderSeed) {
  std::mt19937_64 rng(2);
  const auto c = test::random_cloud(rng, 300);
  EXPECT_EQ(augment(c, 42).points, augment(c, 42).points);
  EXPECT_NE(augment(c, 42).points, augment(c, 43).points);
}

TEST(Augment, FlipIsInvolution) {
  std::mt19937_64 rng(6);
  const auto c = test::random_cloud(rng, 300);
  AugmentDraw d;
  d.flip = true;
  const auto twice = apply_augmentation(apply_augmentation(c, d), d);
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_NEAR(twice.points[i].x, c.points[i].x, 1e-12);
    EXPECT_NEAR(twice.points[i].y, c.points[i].y, 1e-12);
    EXPECT_NEAR(twice.points[i].z, c.points[i].z, 1e-12);
  }
}

TEST(Augment, RotationPreservesDistances) {
  std::mt19937_64 rng(9);
  const auto c = test::random_cloud(rng, 100);
  AugmentDraw d;
  d.yaw = 1.234;
  const auto r = apply_augmentation(c, d);
  auto dist = [](const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y, a.z - b.z); };
  for (std::size_t i = 0; i < c.size(); ++i)
    for (std::size_t j = i + 1; j < c.size(); ++j)
      ASSERT_NEAR(dist(r.points[i], r.points[j]), dist(c.points[i], c.points[j]), 1e-9);
}

TEST(Augment, DrawsStayInRange) {
  int flips = 0;
  for (std::uint64_t s = 0; s < 400; ++s) {
    const auto d = draw_augmentation(s);
    flips += d.flip;
    EXPECT_GE(d.yaw, -std::numbers::pi);
    EXPECT_LT(d.yaw, std::numbers::pi);
    for (double t : {d.tx, d.ty, d.tz}) {
      EXPECT_GE(t, -0.5);
      EXPECT_LT(t, 0.5);
    }
  }
  EXPECT_GT(flips, 150);
  EXPECT_LT(flips, 250);
}
