#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "motionbev/appearance.hpp"
#include "motionbev/geometry.hpp"
#include "motionbev/ingest.hpp"
#include "motionbev/motion.hpp"
#include "motionbev/netcore.hpp"
#include "motionbev/objective.hpp"
#include "motionbev/synth.hpp"

// Self-check suites shared by `motionbev check` and the acceptance run.
// Every entry reports the measured worst case against its tolerance.

namespace motionbev::checks {

struct CheckResult {
  std::string name;
  double measured = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  std::string detail;
};

inline CheckResult at_most(std::string name, double measured, double tol, std::string detail = {}) {
  return {std::move(name), measured, tol, std::isfinite(measured) && measured <= tol, std::move(detail)};
}

inline bool all_pass(const std::vector<CheckResult>& rs) {
  return std::all_of(rs.begin(), rs.end(), [](const CheckResult& r) { return r.pass; });
}

namespace detail {

// Scalar restatement of the polar binning: the bin b with
// lo + b*width <= value < lo + (b+1)*width, value == hi in the last bin.
inline int scan_bin(double value, double lo, double hi, int count) {
  const double width = (hi - lo) / count;
  if (value == hi) return count - 1;
  for (int b = 0; b < count; ++b)
    if (width * b <= value - lo && value - lo < width * (b + 1)) return b;
  return value >= lo && value <= hi ? count - 1 : -1;
}

inline std::int32_t oracle_cell(const Point& p, const GridConfig& cfg) {
  const double rho = std::sqrt(p.x * p.x + p.y * p.y);
  const double theta = (p.x == 0.0 && p.y == 0.0) ? 0.0 : std::atan2(p.y, p.x);
  if (rho < cfg.rho_min || rho > cfg.rho_max || theta < cfg.theta_min || theta > cfg.theta_max) return -1;
  const int u = scan_bin(rho, cfg.rho_min, cfg.rho_max, cfg.w);
  const int v = scan_bin(theta, cfg.theta_min, cfg.theta_max, cfg.h);
  if (u < 0 || v < 0) return -1;
  return v * cfg.w + u;
}

inline PointCloud random_points(std::mt19937_64& rng, std::size_t n, double extent) {
  std::uniform_real_distribution<double> xy(-extent, extent), z(-4.0, 3.0);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.points.push_back({xy(rng), xy(rng), z(rng), 0.0});
  return c;
}

inline PoseSE3 random_rigid(std::mt19937_64& rng, double trans) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::Quaterniond q(nd(rng), nd(rng), nd(rng), nd(rng));
  q.normalize();
  PoseSE3::Matrix m = PoseSE3::Matrix::Identity();
  m.topLeftCorner<3, 3>() = q.toRotationMatrix();
  std::uniform_real_distribution<double> t(-trans, trans);
  for (int i = 0; i < 3; ++i) m(i, 3) = t(rng);
  return PoseSE3::from_matrix(m);
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline Tensor uniform(std::vector<std::size_t> shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  netcore::fill_uniform(t, rng, -scale, scale);
  return t;
}

}  // namespace detail

// ---------------------------------------------------------------------------

inline std::vector<CheckResult> geometry_suite(std::uint64_t seed = 1, int trials = 20, std::size_t points = 10000) {
  std::vector<CheckResult> out;
  std::mt19937_64 rng(seed);
  GridConfig cfg;
  double mismatches = 0, cover_errors = 0;
  for (int t = 0; t < trials; ++t) {
    const auto cloud = detail::random_points(rng, points, 60.0);
    const auto part = partition(cloud, cfg);
    std::vector<int> seen(cloud.size(), 0);
    for (std::size_t c = 0; c < part.cell_count(); ++c)
      for (auto i : part.cell(c)) {
        ++seen[i];
        if (part.cell_of_point()[i] != static_cast<std::int32_t>(c)) ++cover_errors;
      }
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const auto expect = detail::oracle_cell(cloud.points[i], cfg);
      if (part.cell_of_point()[i] != expect) ++mismatches;
      if (seen[i] != (expect >= 0 ? 1 : 0)) ++cover_errors;
    }
  }
  out.push_back(at_most("partition.matches_scalar_oracle", mismatches, 0.0,
                        std::to_string(trials) + " trials x " + std::to_string(points) + " points"));
  out.push_back(at_most("partition.disjoint_cover", cover_errors, 0.0));

  double chain = 0, rigid = 0;
  for (int t = 0; t < trials; ++t) {
    std::vector<PoseSE3> world;
    for (int k = 0; k < 6; ++k) world.push_back(detail::random_rigid(rng, 20.0));
    for (std::size_t n = 1; n <= 5; ++n) {
      PoseSE3 acc = PoseSE3::identity();
      for (std::size_t k = 0; k < n; ++k) acc = acc * compose_between(world, k, k + 1);
      chain = std::max(chain, acc.max_abs_diff(compose_between(world, 0, n)));
    }
    const auto pts = detail::random_points(rng, 50, 30.0);
    const auto& cloud = pts;
    const auto moved = transform_cloud(cloud, world[0]);
    for (std::size_t i = 0; i + 1 < cloud.size(); ++i) {
      const auto& a = cloud.points[i];
      const auto& b = cloud.points[i + 1];
      const auto& c = moved.points[i];
      const auto& d = moved.points[i + 1];
      rigid = std::max(rigid, std::abs(std::hypot(a.x - b.x, a.y - b.y, a.z - b.z) -
                                       std::hypot(c.x - d.x, c.y - d.y, c.z - d.z)));
    }
  }
  out.push_back(at_most("compose.chain_consistency", chain, 1e-12));
  out.push_back(at_most("transform.rigidity", rigid, 1e-9));
  return out;
}

// ---------------------------------------------------------------------------

namespace detail {

struct Stream {
  std::vector<PointCloud> clouds;
  std::vector<PoseSE3> poses;
};

inline Stream stream_of(const synth::SceneSpec& spec) {
  Stream st;
  for (const auto& f : synth::generate(spec)) {
    st.clouds.push_back(f.cloud);
    st.poses.push_back(f.pose);
  }
  return st;
}

inline std::vector<synth::SceneSpec> default_scenes(GridConfig& cfg, std::uint64_t seed) {
  cfg.h = cfg.w = 64;
  cfg.rho_max = 32.0;
  std::vector<synth::SceneSpec> scenes;
  for (std::uint64_t s = 0; s < 3; ++s) scenes.push_back(synth::random_scene(seed * 100 + s, 24, 2, 2));
  return scenes;
}

}  // namespace detail

/// Streaming window vs. the batch oracle, and the frame each output is
/// emitted at.
inline std::vector<CheckResult> window_oracle_checks(const std::vector<synth::SceneSpec>& scenes,
                                                     const GridConfig& cfg) {
  double diff = 0, delay_errors = 0, frames = 0;
  for (const auto& spec : scenes) {
    const auto st = detail::stream_of(spec);
    WindowState ws(cfg);
    for (std::size_t t = 0; t < st.clouds.size(); ++t) {
      auto mf = ws.push(st.clouds[t], st.poses[t]);
      if (!mf) continue;
      ++frames;
      if (mf->frame_index + cfg.window - 1 != static_cast<std::int64_t>(t)) ++delay_errors;
      const auto ref = synth::oracle_motion_features(st.clouds, st.poses, cfg, mf->frame_index);
      for (std::size_t i = 0; i < ref.data.size(); ++i) diff = std::max(diff, std::abs(ref.data[i] - mf->data[i]));
      if (ref.written_mask != mf->written_mask) ++delay_errors;
    }
  }
  return {at_most("window.matches_batch_oracle", diff, 0.0,
                  std::to_string(static_cast<long>(frames)) + " frames over " + std::to_string(scenes.size()) +
                      " sequences"),
          at_most("window.delay_accounting", delay_errors, 0.0)};
}

/// Same scenes with one rigid transform applied to every pose.
inline CheckResult ego_motion_invariance_check(const std::vector<synth::SceneSpec>& scenes, const GridConfig& cfg,
                                               std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double invariance = 0;
  for (const auto& spec : scenes) {
    const auto st = detail::stream_of(spec);
    const PoseSE3 common = detail::random_rigid(rng, 50.0);
    WindowState ws(cfg), moved(cfg);
    for (std::size_t t = 0; t < st.clouds.size(); ++t) {
      auto mf = ws.push(st.clouds[t], st.poses[t]);
      auto mv = moved.push(st.clouds[t], common * st.poses[t]);
      if (mf)
        for (std::size_t i = 0; i < mf->data.size(); ++i)
          invariance = std::max(invariance, std::abs(mv->data[i] - mf->data[i]));
    }
  }
  return at_most("window.ego_motion_invariance", invariance, 1e-9);
}

inline CheckResult static_scene_check(const GridConfig& cfg, std::uint64_t seed) {
  double static_max = 0;
  for (std::uint64_t s = 0; s < 2; ++s) {
    const auto spec = synth::random_scene(seed * 100 + 50 + s, 2 * cfg.window, 0, 3, cfg.rho_max);
    WindowState ws(cfg);
    for (const auto& f : synth::generate(spec))
      if (auto mf = ws.push(f.cloud, f.pose))
        for (auto v : mf->data.values()) static_max = std::max(static_max, std::abs(v));
  }
  return at_most("window.static_scene_is_zero", static_max, 0.0);
}

/// keep iff 0.4 <= r <= 4 (r = i / 100) and both counts >= 5
inline CheckResult filter_table_check(const GridConfig& cfg) {
  GridConfig one = cfg;
  one.h = one.w = 1;
  double table_errors = 0;
  for (int i = 0; i <= 500; ++i)
    for (int c1 = 0; c1 <= 10; ++c1)
      for (int c2 = 0; c2 <= 10; ++c2) {
        const double r = i / 100.0;
        HeightImage a, b;
        a.h = a.w = b.h = b.w = 1;
        a.values = {r};
        b.values = {0.0};
        a.valid = {static_cast<std::uint8_t>(c1 > 0)};
        b.valid = {static_cast<std::uint8_t>(c2 > 0)};
        a.counts = {c1};
        b.counts = {c2};
        b.window_id = 2;
        const double got = residual(a, b, ResidualSign::Q1MinusQ2, one)[0];
        const bool keep = i >= 40 && i <= 400 && c1 >= 5 && c2 >= 5;
        if (got != (keep ? r : 0.0)) ++table_errors;
      }
  return at_most("filter.keep_discard_table", table_errors, 0.0, "501 residuals x 121 count pairs");
}

/// All window checks on the given scenes (random ones if empty).
inline std::vector<CheckResult> motion_suite(std::vector<synth::SceneSpec> scenes = {}, GridConfig cfg = {},
                                             std::uint64_t seed = 1) {
  if (scenes.empty()) scenes = detail::default_scenes(cfg, seed);
  auto out = window_oracle_checks(scenes, cfg);
  out.push_back(ego_motion_invariance_check(scenes, cfg, seed));
  out.push_back(static_scene_check(cfg, seed));
  out.push_back(filter_table_check(cfg));
  return out;
}

// ---------------------------------------------------------------------------

/// Streams synthetic scenes through the window: a moving box of height eta
/// leaves a channel-0 residual of at least eta/2 in the cells it newly
/// covers; a parked box under a moving ego leaves every feature at zero.
inline std::vector<CheckResult> synthetic_suite(int seeds = 10, std::uint64_t base_seed = 0) {
  GridConfig cfg;
  cfg.h = cfg.w = 64;
  cfg.rho_max = 32.0;
  const LabelMap lm;
  const int half = cfg.window / 2;
  double worst_ratio = std::numeric_limits<double>::infinity(), parked_max = 0;
  int seeds_without_cells = 0;
  std::size_t cells_checked = 0;
  for (int s = 0; s < seeds; ++s) {
    std::mt19937_64 rng(base_seed * 1000 + static_cast<std::uint64_t>(s));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double eta = 0.8 + 1.7 * u(rng);
    const double phi = 2 * std::numbers::pi * u(rng), dir = 2 * std::numbers::pi * u(rng);
    const double r0 = 9.0 + 4.0 * u(rng), speed = 0.8 + 0.4 * u(rng);

    synth::SceneSpec spec;
    spec.seed = rng();
    spec.frames = 2 * cfg.window;
    if (s % 2) {
      spec.ego.path = synth::EgoPath::Line;
      spec.ego.speed = 0.3;
      spec.ego.heading = dir;
    }
    synth::BoxObject box;
    box.size = {4.0, 2.0, eta};
    box.x = r0 * std::cos(phi);
    box.y = r0 * std::sin(phi);
    box.yaw = dir;
    box.vx = speed * std::cos(dir);
    box.vy = speed * std::sin(dir);
    spec.objects.push_back(box);
    const auto seq = synth::generate(spec);

    WindowState ws(cfg);
    std::size_t here = 0;
    for (std::size_t t = 0; t < seq.size(); ++t) {
      auto mf = ws.push(seq[t].cloud, seq[t].pose);
      if (!mf) continue;
      // channel 0 of frame j spans frames j-N+1 .. j
      const std::int64_t j = mf->frame_index;
      if (j < cfg.window - 1) continue;
      const auto target_inv = seq[static_cast<std::size_t>(j)].pose.inverse();
      std::vector<int> box_q1(cfg.cells()), ground_q1(cfg.cells()), box_q2(cfg.cells()), n1(cfg.cells()),
          n2(cfg.cells());
      for (std::int64_t m = j; m > j - cfg.window; --m) {
        const auto& f = seq[static_cast<std::size_t>(m)];
        const auto rel = target_inv * f.pose;
        const bool q1 = j - m < half;
        for (std::size_t i = 0; i < f.cloud.size(); ++i) {
          const auto p = rel.apply(f.cloud.points[i]);
          if (!(p.z > cfg.z_min && p.z < cfg.z_max)) continue;
          const auto c = cell_id(p, cfg);
          if (c < 0) continue;
          const auto ci = static_cast<std::size_t>(c);
          const bool moving = lm.classify(f.labels[i]) == MosClass::Moving;
          if (q1) ++(moving ? box_q1 : ground_q1)[ci];
          else if (moving) ++box_q2[ci];
          ++(q1 ? n1 : n2)[ci];
        }
      }
      for (std::size_t c = 0; c < cfg.cells(); ++c) {
        if (!box_q1[c] || !ground_q1[c] || box_q2[c] || n1[c] < cfg.min_points || n2[c] < cfg.min_points) continue;
        worst_ratio = std::min(worst_ratio, mf->data.channel(0)[c] / eta);
        ++here;
      }
    }
    if (here == 0) ++seeds_without_cells;
    cells_checked += here;

    // same seed, box parked, ego moving
    spec.objects[0].vx = spec.objects[0].vy = 0.0;
    spec.ego.path = synth::EgoPath::Line;
    spec.ego.speed = 0.5;
    WindowState still(cfg);
    for (const auto& f : synth::generate(spec))
      if (auto mf = still.push(f.cloud, f.pose))
        for (auto v : mf->data.values()) parked_max = std::max(parked_max, std::abs(v));
  }
  const std::string n = std::to_string(seeds) + " seeds, " + std::to_string(cells_checked) + " cells";
  std::vector<CheckResult> out;
  out.push_back({"synthetic.moving_box_residual_over_half_height", worst_ratio, 0.5,
                 seeds_without_cells == 0 && worst_ratio >= 0.5, n + " (min residual / eta)"});
  out.push_back(at_most("synthetic.parked_box_zero_features", parked_max, 0.0, std::to_string(seeds) + " seeds"));
  return out;
}

// ---------------------------------------------------------------------------

/// Analytic vs. central-difference gradients, worst case over `seeds`.
inline std::vector<CheckResult> gradients_suite(int seeds = 50, std::uint64_t base_seed = 0) {
  using netcore::numeric_gradient;
  using netcore::relative_error;
  std::vector<CheckResult> out;
  double conv = 0, gate = 0, attn = 0, amcm = 0, wce = 0, lovasz = 0, app = 0;
  for (int s = 0; s < seeds; ++s) {
    std::mt19937_64 rng(base_seed * 7777 + static_cast<std::uint64_t>(s));
    {
      auto x = detail::uniform({2, 4, 6}, rng), k = detail::uniform({2, 2, 3, 3}, rng), b = detail::uniform({2}, rng);
      const auto up = detail::uniform({2, 4, 6}, rng);
      const auto g = netcore::ring_conv2d_backward(x, k, up);
      auto f = [&] { return detail::dot(netcore::ring_conv2d(x, k, b), up); };
      conv = std::max({conv, relative_error(g.dx, numeric_gradient(f, x)), relative_error(g.dk, numeric_gradient(f, k)),
                       relative_error(g.db, numeric_gradient(f, b))});
    }
    auto fa = detail::uniform({2, 4, 6}, rng), fm = detail::uniform({2, 4, 6}, rng);
    auto p = netcore::AmcmParams<double>::random(2, 2, static_cast<std::uint64_t>(s), 1.5);
    netcore::fill_uniform(p.gate_b, rng);
    netcore::fill_uniform(p.spatial_b, rng);
    netcore::fill_uniform(p.channel_b, rng);
    const auto ua = detail::uniform({2, 4, 6}, rng), um = detail::uniform({2, 4, 6}, rng);
    {
      const auto gg = netcore::coattention_gate_backward(fa, fm, p, netcore::coattention_gate(fa, fm, p), ua, um);
      auto f = [&] {
        const auto r = netcore::coattention_gate(fa, fm, p);
        return detail::dot(r.G_a, ua) + detail::dot(r.G_m, um);
      };
      gate = std::max({gate, relative_error(gg.d_fa, numeric_gradient(f, fa)),
                       relative_error(gg.d_fm, numeric_gradient(f, fm)),
                       relative_error(gg.d_gate_k, numeric_gradient(f, p.gate_k)),
                       relative_error(gg.d_gate_b, numeric_gradient(f, p.gate_b))});
    }
    {
      const auto ag =
          netcore::motion_guided_attention_backward(fa, fm, p, netcore::motion_guided_attention(fa, fm, p), ua);
      auto f = [&] { return detail::dot(netcore::motion_guided_attention(fa, fm, p).out, ua); };
      attn = std::max({attn, relative_error(ag.d_ga, numeric_gradient(f, fa)),
                       relative_error(ag.d_gm, numeric_gradient(f, fm)),
                       relative_error(ag.params.spatial_k, numeric_gradient(f, p.spatial_k)),
                       relative_error(ag.params.spatial_b, numeric_gradient(f, p.spatial_b)),
                       relative_error(ag.params.channel_k, numeric_gradient(f, p.channel_k)),
                       relative_error(ag.params.channel_b, numeric_gradient(f, p.channel_b))});
    }
    {
      const auto g = netcore::amcm_backward(fa, fm, p, netcore::amcm_forward(fa, fm, p), ua);
      auto f = [&] { return detail::dot(netcore::amcm_forward(fa, fm, p).output(), ua); };
      amcm = std::max({amcm, relative_error(g.d_fa, numeric_gradient(f, fa)),
                       relative_error(g.d_fm, numeric_gradient(f, fm))});
      auto pt = p.tensors();
      const auto gt = g.params.tensors();
      for (std::size_t t = 0; t < pt.size(); ++t) amcm = std::max(amcm, relative_error(*gt[t], numeric_gradient(f, *pt[t])));
    }
    {
      const auto stats = ClassStats::from_frequencies({0.3, 0.7});
      auto logits = detail::uniform({2, 3, 3}, rng, 2.0);
      std::uniform_int_distribution<int> cls(0, 1);
      std::vector<int> y(9);
      for (auto& v : y) v = cls(rng);
      const auto r = weighted_ce(logits, y, stats);
      wce = std::max(wce, relative_error(r.grad, numeric_gradient([&] { return weighted_ce(logits, y, stats).loss; },
                                                                   logits)));
      // Lovasz through the softmax; resample until sorted errors are well separated
      for (int attempt = 0; attempt < 100; ++attempt) {
        const auto pr = softmax_channels(logits);
        double gap = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < 2; ++c) {
          std::vector<double> e(9);
          for (std::size_t i = 0; i < 9; ++i) e[i] = std::abs((y[i] == static_cast<int>(c) ? 1.0 : 0.0) - pr[c * 9 + i]);
          std::sort(e.begin(), e.end());
          for (std::size_t i = 1; i < 9; ++i) gap = std::min(gap, e[i] - e[i - 1]);
        }
        if (gap > 1e-3) break;
        netcore::fill_uniform(logits, rng, -2.0, 2.0);
      }
      const auto pr = softmax_channels(logits);
      const auto ls = lovasz_softmax(pr, y);
      Tensor analytic(logits.shape());
      for (std::size_t i = 0; i < 9; ++i) {
        const double dotp = ls.grad[i] * pr[i] + ls.grad[9 + i] * pr[9 + i];
        for (std::size_t c = 0; c < 2; ++c) analytic[c * 9 + i] = pr[c * 9 + i] * (ls.grad[c * 9 + i] - dotp);
      }
      lovasz = std::max(lovasz, relative_error(analytic, numeric_gradient(
                                                             [&] { return lovasz_softmax(softmax_channels(logits), y).loss; },
                                                             logits)));
    }
    {
      // appearance encoder: resample until no ReLU input or pooling margin is near a kink
      GridConfig g;
      g.h = g.w = 8;
      g.rho_max = 16.0;
      const std::size_t widths[] = {7, 6, 3};
      PointInputs in;
      MlpParams mp;
      for (int attempt = 0; attempt < 100; ++attempt) {
        const auto cloud = detail::random_points(rng, 40, 11.0);
        in = point_inputs(partition(cloud, g), cloud, g);
        mp = MlpParams::random(widths, rng());
        for (auto& L : mp.layers) netcore::fill_uniform(L.bias, rng, -0.2, 0.2);
        AppearanceCache c;
        encode_points(in, mp, &c);
        double margin = std::numeric_limits<double>::infinity();
        for (auto v : c.pre[0]) margin = std::min(margin, std::abs(v));
        for (std::size_t i = 0; i < c.n; ++i)
          for (std::size_t j = i + 1; j < c.n; ++j)
            if (in.cell[i] == in.cell[j])
              for (std::size_t k = 0; k < 3; ++k)
                margin = std::min(margin, std::abs(c.acts[2][i * 3 + k] - c.acts[2][j * 3 + k]));
        if (margin > 1e-3) break;
      }
      const auto up = detail::uniform({3, 8, 8}, rng);
      AppearanceCache cache;
      encode_points(in, mp, &cache);
      const auto grad = encode_points_backward(cache, mp, up);
      auto f = [&] { return detail::dot(encode_points(in, mp), up); };
      for (std::size_t l = 0; l < mp.layers.size(); ++l)
        app = std::max({app, relative_error(grad.layers[l].weight, numeric_gradient(f, mp.layers[l].weight)),
                        relative_error(grad.layers[l].bias, numeric_gradient(f, mp.layers[l].bias))});
    }
  }
  const std::string n = std::to_string(seeds) + " seeds";
  out.push_back(at_most("ring_conv2d", conv, 1e-5, n));
  out.push_back(at_most("coattention_gate", gate, 1e-5, n));
  out.push_back(at_most("motion_guided_attention", attn, 1e-5, n));
  out.push_back(at_most("amcm", amcm, 1e-5, n));
  out.push_back(at_most("weighted_ce", wce, 1e-5, n));
  out.push_back(at_most("lovasz_softmax", lovasz, 1e-4, n));
  out.push_back(at_most("appearance_encoder", app, 1e-5, n));

  // closed forms of the network blocks
  std::mt19937_64 rng(base_seed + 99);
  double zero_amcm = 0, weight_sum = 0;
  double gate_lo = 1.0, gate_hi = 0.0;
  for (int s = 0; s < 20; ++s) {
    const auto fa = detail::uniform({4, 5, 6}, rng, 3.0), fm = detail::uniform({3, 5, 6}, rng, 3.0);
    const auto z = netcore::amcm_forward(fa, fm, netcore::AmcmParams<double>::zeros(4, 3));
    for (std::size_t i = 0; i < fa.size(); ++i) zero_amcm = std::max(zero_amcm, std::abs(z.output()[i] - 0.75 * fa[i]));
    const auto r = netcore::amcm_forward(fa, fm, netcore::AmcmParams<double>::random(4, 3, rng(), 3.0));
    gate_lo = std::min({gate_lo, r.gate.g_a, r.gate.g_m});
    gate_hi = std::max({gate_hi, r.gate.g_a, r.gate.g_m});
    double sum = 0;
    for (auto w : r.attention.weights) sum += w;
    weight_sum = std::max(weight_sum, std::abs(sum - 4.0));
  }
  out.push_back(at_most("amcm.zero_params_three_quarters", zero_amcm, 1e-12));
  out.push_back({"amcm.gate_scores_open_unit_interval", gate_lo, 0.0, gate_lo > 0.0 && gate_hi < 1.0,
                 "min " + std::to_string(gate_lo) + ", max " + std::to_string(gate_hi)});
  out.push_back(at_most("amcm.channel_weights_sum", weight_sum, 1e-12));
  return out;
}

// ---------------------------------------------------------------------------

inline std::vector<CheckResult> loss_suite() {
  std::vector<CheckResult> out;
  {
    const Tensor logits({2, 1, 1}, std::vector<double>{0.3, 0.3});
    const std::vector<int> y{0};
    const double l = weighted_ce(logits, y, ClassStats::from_frequencies({0.25, 0.75})).loss;
    out.push_back(at_most("weighted_ce.hand_example", std::abs(l - 1.386294), 1e-6));
  }
  {
    const Tensor p({2, 1, 1}, std::vector<double>{0.7, 0.3});
    const std::vector<int> y{1};
    const double l = lovasz_softmax(p, y).loss;
    out.push_back({"lovasz.single_pixel_exact", std::abs(l - 0.7), 0.0, l == 0.7, ""});
  }
  {
    const Tensor p({2, 1, 3}, std::vector<double>{1, 0, 1, 0, 1, 0});
    const std::vector<int> y{0, 1, 0};
    out.push_back(at_most("lovasz.perfect_prediction", lovasz_softmax(p, y).loss, 0.0));
  }
  {
    double outside = 0;
    std::mt19937_64 rng(5);
    for (int s = 0; s < 50; ++s) {
      const auto pr = softmax_channels(detail::uniform({3, 4, 5}, rng, 5.0));
      std::uniform_int_distribution<int> cls(0, 2);
      std::vector<int> y(20);
      for (auto& v : y) v = cls(rng);
      const double l = lovasz_softmax(pr, y).loss;
      outside = std::max({outside, -l, l - 1.0});
    }
    out.push_back(at_most("lovasz.bounded_unit_interval", std::max(outside, 0.0), 0.0));
  }
  {
    const double v = iou({3, 1, 0, 0});
    out.push_back(at_most("iou.hand_example", std::abs(v - 0.75), 0.0));
    out.push_back(at_most("iou.empty_is_one", std::abs(iou({}) - 1.0), 0.0));
  }
  return out;
}

inline std::vector<CheckResult> run_suite(const std::string& name, std::uint64_t seed = 1) {
  if (name == "geometry") return geometry_suite(seed);
  if (name == "motion") return motion_suite({}, {}, seed);
  if (name == "gradients") return gradients_suite(50, seed);
  if (name == "loss") return loss_suite();
  if (name == "synthetic") return synthetic_suite(10, seed);
  if (name == "all") {
    std::vector<CheckResult> all;
    for (const char* s : {"geometry", "motion", "synthetic", "gradients", "loss"}) {
      auto r = run_suite(s, seed);
      all.insert(all.end(), r.begin(), r.end());
    }
    return all;
  }
  throw ValidationError("unknown check suite '" + name + "' (expected geometry, motion, synthetic, gradients, loss or all)");
}

}  // namespace motionbev::checks
