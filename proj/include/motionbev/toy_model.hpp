#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "motionbev/appearance.hpp"
#include "motionbev/container.hpp"
#include "motionbev/error.hpp"
#include "motionbev/geometry.hpp"
#include "motionbev/ingest.hpp"
#include "motionbev/motion.hpp"
#include "motionbev/netcore.hpp"
#include "motionbev/objective.hpp"

// Small dual-branch segmentation network used to exercise the whole
// pipeline on synthetic data:
//
//   points -> MLP + max-pool -> ring conv + ReLU x2 --+
//                                                     AMCM -> 1x1 conv -> 2 logits per cell
//   motion features -------> ring conv + ReLU x2 -----+

namespace motionbev::toy {

struct ToyConfig {
  std::size_t channels = 16;    // width of both branches
  std::size_t mlp_hidden = 16;
  int epochs = 30;
  std::size_t batch = 8;
  double lr = 0.02;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double lr_decay = 0.99;
  double grad_clip = 0.0;  // global gradient-norm limit per step, 0 disables
  bool augment = true;     // random whole-bin rotations and mirror flips of training frames
  std::uint64_t seed = 0;
  bool use_motion = true;  // false feeds zeros to the motion branch
};

/// One training or evaluation frame.
struct Sample {
  PointInputs inputs;              // descriptors already scaled for the network
  Tensor motion;                   // (N, h, w)
  std::vector<int> cell_labels;    // 0 static, 1 moving
  std::vector<std::uint8_t> ignore;  // cells without labeled points
  Partition part;
  std::vector<MosClass> point_gt;
  std::int64_t frame_index = 0;
  double theta_min = -std::numbers::pi, theta_max = std::numbers::pi;
};

/// Labeled frames of one sequence, in frame order.
struct LabeledSequence {
  std::vector<PointCloud> clouds;
  std::vector<PoseSE3> poses;
  std::vector<std::vector<MosClass>> labels;
};

inline void add_frame(LabeledSequence& seq, PointCloud cloud, const PoseSE3& pose,
                      std::span<const std::uint32_t> raw_labels, const LabelMap& map) {
  if (raw_labels.size() != cloud.size()) throw ShapeError("label count differs from point count");
  std::vector<MosClass> cls(raw_labels.size());
  for (std::size_t i = 0; i < cls.size(); ++i) cls[i] = map.classify(raw_labels[i]);
  seq.clouds.push_back(std::move(cloud));
  seq.poses.push_back(pose);
  seq.labels.push_back(std::move(cls));
}

inline Descriptor descriptor_scale(const GridConfig& cfg) {
  return {1.0 / cfg.rho_max,
          1.0 / cfg.rho_max,
          0.5,
          1.0 / cfg.rho_max,
          1.0 / std::numbers::pi,
          cfg.w / (cfg.rho_max - cfg.rho_min),
          cfg.h / (cfg.theta_max - cfg.theta_min)};
}

/// Per-cell majority vote over labeled points; ties go to moving, cells
/// with no labeled point are ignored.
inline void cell_labels(const Partition& part, std::span<const MosClass> gt, std::vector<int>& labels,
                        std::vector<std::uint8_t>& ignore) {
  labels.assign(part.cell_count(), 0);
  ignore.assign(part.cell_count(), 1);
  for (std::size_t c = 0; c < part.cell_count(); ++c) {
    int mv = 0, st = 0;
    for (auto i : part.cell(c)) {
      if (gt[i] == MosClass::Moving) ++mv;
      else if (gt[i] == MosClass::Static) ++st;
    }
    if (mv + st == 0) continue;
    ignore[c] = 0;
    labels[c] = mv >= st ? 1 : 0;
  }
}

/// Frames of a sequence that receive a full set of motion channels.
inline std::vector<Sample> build_samples(const LabeledSequence& seq, const GridConfig& cfg) {
  if (seq.clouds.size() != seq.poses.size() || seq.clouds.size() != seq.labels.size())
    throw ShapeError("sequence clouds, poses and labels differ in length");
  const auto scale = descriptor_scale(cfg);
  std::vector<Sample> out;
  WindowState ws(cfg);
  for (std::size_t t = 0; t < seq.clouds.size(); ++t) {
    auto mf = ws.push(seq.clouds[t], seq.poses[t]);
    if (!mf || !mf->complete()) continue;
    const auto idx = static_cast<std::size_t>(t + 1 - static_cast<std::size_t>(cfg.window));
    const auto& cloud = seq.clouds[idx];
    if (seq.labels[idx].size() != cloud.size()) throw ShapeError("label count differs from point count");
    Sample s;
    s.part = partition(cloud, cfg);
    s.inputs = point_inputs(s.part, cloud, cfg);
    for (auto& d : s.inputs.descriptors)
      for (std::size_t k = 0; k < kDescriptorDim; ++k) d[k] *= scale[k];
    s.motion = std::move(mf->data);
    s.point_gt = seq.labels[idx];
    cell_labels(s.part, s.point_gt, s.cell_labels, s.ignore);
    s.frame_index = cloud.frame_index;
    s.theta_min = cfg.theta_min;
    s.theta_max = cfg.theta_max;
    out.push_back(std::move(s));
  }
  return out;
}

/// Training copy of a sample rotated about z by `shift` angular bins and,
/// if `flip`, mirrored across the x axis first. Both act on the polar grid
/// as exact row permutations, so motion channels, labels and descriptors
/// stay consistent without re-featurizing. Rotation needs a full-circle
/// angular range and mirroring a symmetric one; otherwise they are skipped.
inline Sample augmented(const Sample& s, std::size_t shift, bool flip) {
  constexpr double pi = std::numbers::pi;
  const std::size_t h = s.inputs.h, w = s.inputs.w;
  const double span = s.theta_max - s.theta_min;
  if (std::abs(span - 2 * pi) > 1e-12) shift = 0;
  if (std::abs(s.theta_min + s.theta_max) > 1e-12) flip = false;
  auto row = [&](std::size_t v) { return ((flip ? h - 1 - v : v) + shift) % h; };
  const double phi = static_cast<double>(shift) * span / static_cast<double>(h);
  const double c = std::cos(phi), sn = std::sin(phi);

  Sample a;
  a.frame_index = s.frame_index;
  a.theta_min = s.theta_min;
  a.theta_max = s.theta_max;
  a.inputs.h = h;
  a.inputs.w = w;
  a.inputs.descriptors = s.inputs.descriptors;
  a.inputs.cell.resize(s.inputs.cell.size());
  for (std::size_t i = 0; i < s.inputs.cell.size(); ++i) {
    auto& d = a.inputs.descriptors[i];
    if (flip) {
      d[1] = -d[1];
      d[4] = -d[4];
      d[6] = -d[6];
    }
    if (shift) {
      const double x = d[0], y = d[1];
      d[0] = c * x - sn * y;
      d[1] = sn * x + c * y;
      d[4] += phi / pi;  // theta is stored divided by pi
      if (d[4] >= 1.0) d[4] -= 2.0;
    }
    const std::size_t cell = s.inputs.cell[i];
    a.inputs.cell[i] = static_cast<std::uint32_t>(row(cell / w) * w + cell % w);
  }
  a.motion = Tensor(s.motion.shape());
  a.cell_labels.resize(s.cell_labels.size());
  a.ignore.resize(s.ignore.size());
  const std::size_t nc = s.motion.dim(0);
  for (std::size_t v = 0; v < h; ++v) {
    const std::size_t r = row(v);
    for (std::size_t k = 0; k < nc; ++k)
      std::copy_n(&s.motion.at(k, v, 0), w, &a.motion.at(k, r, 0));
    std::copy_n(&s.cell_labels[v * w], w, &a.cell_labels[r * w]);
    std::copy_n(&s.ignore[v * w], w, &a.ignore[r * w]);
  }
  return a;
}

struct ToyParams {
  MlpParams mlp;
  Tensor ka1, ba1, ka2, ba2;  // appearance ring convs
  Tensor km1, bm1, km2, bm2;  // motion ring convs
  netcore::AmcmParams<double> amcm;
  Tensor kh, bh;  // 1x1 head, 2 classes

  static ToyParams init(std::size_t motion_channels, const ToyConfig& tc) {
    const std::size_t c = tc.channels;
    ToyParams p;
    const std::size_t widths[] = {kDescriptorDim, tc.mlp_hidden, c};
    p.mlp = MlpParams::random(widths, tc.seed * 31 + 1);
    std::mt19937_64 rng(tc.seed * 31 + 2);
    auto he = [&](std::vector<std::size_t> shape) {
      Tensor k(shape);
      const double fan_in = static_cast<double>(shape[1] * shape[2] * shape[3]);
      std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / fan_in));
      for (auto& v : k.values()) v = nd(rng);
      return k;
    };
    p.ka1 = he({c, c, 3, 3});
    p.ba1 = Tensor({c});
    p.ka2 = he({c, c, 3, 3});
    p.ba2 = Tensor({c});
    p.km1 = he({c, motion_channels, 3, 3});
    p.bm1 = Tensor({c});
    p.km2 = he({c, c, 3, 3});
    p.bm2 = Tensor({c});
    // the residual input is non-negative: a small positive bias keeps motion units from starting dead
    p.bm1.fill(0.1);
    p.bm2.fill(0.1);
    p.amcm = netcore::AmcmParams<double>::random(c, c, tc.seed * 31 + 3);
    // sharper initial motion attention; with a unit-scale kernel the spatial
    // map starts near 0.5 everywhere and training tends to settle on the
    // appearance-only solution
    p.amcm.spatial_k *= 4.0;
    p.kh = he({2, c, 1, 1});
    p.kh *= 0.5;
    p.bh = Tensor({2});
    return p;
  }

  ToyParams zeros_like() const {
    ToyParams z = *this;
    for (auto* t : z.tensors()) t->fill(0.0);
    return z;
  }

  /// Every parameter tensor in a fixed order (MLP layers first).
  std::vector<Tensor*> tensors() {
    std::vector<Tensor*> t;
    for (auto& L : mlp.layers) {
      t.push_back(&L.weight);
      t.push_back(&L.bias);
    }
    for (auto* x : {&ka1, &ba1, &ka2, &ba2, &km1, &bm1, &km2, &bm2}) t.push_back(x);
    for (auto* x : amcm.tensors()) t.push_back(x);
    t.push_back(&kh);
    t.push_back(&bh);
    return t;
  }
};

struct ForwardCache {
  AppearanceCache app;
  Tensor a0, a1, a2, m0, m1, m2;
  netcore::AmcmForward<double> amcm;
  Tensor logits;
};

inline Tensor motion_input(const Sample& s, const ToyConfig& tc) {
  if (tc.use_motion) return s.motion;
  return Tensor(s.motion.shape());
}

inline Tensor forward(const ToyParams& p, const Sample& s, const ToyConfig& tc, ForwardCache* cache = nullptr) {
  using netcore::relu;
  using netcore::ring_conv2d;
  ForwardCache local;
  ForwardCache& f = cache ? *cache : local;
  f.a0 = encode_points(s.inputs, p.mlp, cache ? &f.app : nullptr);
  f.a1 = relu(ring_conv2d(f.a0, p.ka1, p.ba1));
  f.a2 = relu(ring_conv2d(f.a1, p.ka2, p.ba2));
  f.m0 = motion_input(s, tc);
  f.m1 = relu(ring_conv2d(f.m0, p.km1, p.bm1));
  f.m2 = relu(ring_conv2d(f.m1, p.km2, p.bm2));
  f.amcm = netcore::amcm_forward(f.a2, f.m2, p.amcm);
  f.logits = ring_conv2d(f.amcm.output(), p.kh, p.bh);
  return f.logits;
}

/// Accumulates d(loss)/d(params) into `g` given d(loss)/d(logits).
inline void backward(const ToyParams& p, const ForwardCache& f, const Tensor& dlogits, ToyParams& g) {
  using netcore::relu_backward;
  using netcore::ring_conv2d_backward;
  auto add = [](Tensor& acc, const Tensor& v) { acc += v; };
  auto head = ring_conv2d_backward(f.amcm.output(), p.kh, dlogits);
  add(g.kh, head.dk);
  add(g.bh, head.db);
  auto am = netcore::amcm_backward(f.a2, f.m2, p.amcm, f.amcm, head.dx);
  auto gt = g.amcm.tensors();
  const auto at = am.params.tensors();
  for (std::size_t i = 0; i < gt.size(); ++i) add(*gt[i], *at[i]);

  auto dm2 = relu_backward(f.m2, std::move(am.d_fm));
  auto cm2 = ring_conv2d_backward(f.m1, p.km2, dm2);
  add(g.km2, cm2.dk);
  add(g.bm2, cm2.db);
  auto dm1 = relu_backward(f.m1, std::move(cm2.dx));
  auto cm1 = ring_conv2d_backward(f.m0, p.km1, dm1, false);
  add(g.km1, cm1.dk);
  add(g.bm1, cm1.db);

  auto da2 = relu_backward(f.a2, std::move(am.d_fa));
  auto ca2 = ring_conv2d_backward(f.a1, p.ka2, da2);
  add(g.ka2, ca2.dk);
  add(g.ba2, ca2.db);
  auto da1 = relu_backward(f.a1, std::move(ca2.dx));
  auto ca1 = ring_conv2d_backward(f.a0, p.ka1, da1);
  add(g.ka1, ca1.dk);
  add(g.ba1, ca1.db);
  const auto gm = encode_points_backward(f.app, p.mlp, ca1.dx);
  for (std::size_t l = 0; l < gm.layers.size(); ++l) {
    add(g.mlp.layers[l].weight, gm.layers[l].weight);
    add(g.mlp.layers[l].bias, gm.layers[l].bias);
  }
}

/// Per-cell classes from logits: moving where the moving logit is larger.
inline std::vector<MosClass> predict_cells(const Tensor& logits) {
  const std::size_t plane = logits.dim(1) * logits.dim(2);
  std::vector<MosClass> out(plane);
  for (std::size_t i = 0; i < plane; ++i)
    out[i] = logits[plane + i] > logits[i] ? MosClass::Moving : MosClass::Static;
  return out;
}

inline ConfusionCounts evaluate(const ToyParams& p, std::span<const Sample> samples, const ToyConfig& tc) {
  ConfusionCounts c;
  for (const auto& s : samples) {
    const auto cells = predict_cells(forward(p, s, tc));
    const auto pts = back_project(cells, s.part);
    accumulate(c, pts, s.point_gt);
  }
  return c;
}

inline ClassStats training_stats(std::span<const Sample> samples) {
  std::uint64_t counts[2] = {0, 0};
  for (const auto& s : samples)
    for (std::size_t i = 0; i < s.cell_labels.size(); ++i)
      if (!s.ignore[i]) ++counts[s.cell_labels[i]];
  return ClassStats::from_counts(counts);
}

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_iou = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  ToyParams params;
  std::vector<EpochRecord> history;
  ClassStats stats;
  double final_iou() const { return history.empty() ? 0.0 : history.back().val_iou; }
};

inline TrainResult toy_train(std::span<const Sample> train, std::span<const Sample> val, const ToyConfig& tc) {
  if (train.empty()) throw ValidationError("toy training needs at least one training frame");
  const std::size_t nm = train.front().motion.dim(0);
  TrainResult r{ToyParams::init(nm, tc), {}, training_stats(train)};
  auto& p = r.params;
  netcore::SgdState<double> opt;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int e = 0; e < tc.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(tc.seed * 1000003u + static_cast<std::uint64_t>(e));
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = netcore::decayed_lr(tc.lr, tc.lr_decay, e);
    double loss_sum = 0;
    for (std::size_t b = 0; b < order.size(); b += tc.batch) {
      const std::size_t end = std::min(order.size(), b + tc.batch);
      ToyParams g = p.zeros_like();
      for (std::size_t k = b; k < end; ++k) {
        Sample aug;
        if (tc.augment) {
          const auto shift = static_cast<std::size_t>(rng() % train[order[k]].inputs.h);
          aug = augmented(train[order[k]], shift, (rng() & 1u) != 0);
        }
        const auto& s = tc.augment ? aug : train[order[k]];
        ForwardCache f;
        forward(p, s, tc, &f);
        auto tl = total_loss(f.logits, s.cell_labels, r.stats, s.ignore);
        if (!std::isfinite(tl.loss))
          throw Error("toy training diverged at epoch " + std::to_string(e) + " (frame " +
                      std::to_string(s.frame_index) + ", wce " + std::to_string(tl.wce) + ", lovasz " +
                      std::to_string(tl.lovasz) + ", lr " + std::to_string(lr) + ")");
        loss_sum += tl.loss;
        backward(p, f, tl.grad, g);
      }
      const double inv = 1.0 / static_cast<double>(end - b);
      auto gt = g.tensors();
      for (auto* t : gt) *t *= inv;
      if (tc.grad_clip > 0) {
        double sq = 0;
        for (auto* t : gt)
          for (auto v : t->values()) sq += v * v;
        const double norm = std::sqrt(sq);
        if (norm > tc.grad_clip)
          for (auto* t : gt) *t *= tc.grad_clip / norm;
      }
      auto pt = p.tensors();
      std::vector<const Tensor*> cg(gt.begin(), gt.end());
      netcore::sgd_step<double>(pt, cg, opt, lr, tc.momentum, tc.weight_decay);
    }
    EpochRecord rec;
    rec.epoch = e + 1;
    rec.train_loss = loss_sum / static_cast<double>(train.size());
    rec.val_iou = iou(evaluate(p, val, tc));
    rec.lr = lr;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.history.push_back(rec);
  }
  return r;
}

// Model file: the MLP records (see mlp_records), then every other parameter
// tensor in ToyParams::tensors() order, tagged 100, 101, ...
inline void save_model(ToyParams& p, const std::filesystem::path& path) {
  auto recs = mlp_records(p.mlp);
  const auto all = p.tensors();
  const std::size_t skip = 2 * p.mlp.layers.size();
  for (std::size_t i = skip; i < all.size(); ++i)
    recs.push_back(ContainerRecord::from_tensor(*all[i], static_cast<std::int32_t>(100 + i - skip)));
  write_container(recs, path);
}

inline ToyParams load_model(const std::filesystem::path& path, std::size_t motion_channels, const ToyConfig& tc) {
  const auto recs = read_container(path);
  std::vector<ContainerRecord> mlp, rest;
  for (const auto& r : recs) (r.tag >= 100 ? rest : mlp).push_back(r);
  ToyParams p = ToyParams::init(motion_channels, tc);
  p.mlp = mlp_from_records(mlp);
  auto all = p.tensors();
  const std::size_t skip = 2 * p.mlp.layers.size();
  if (rest.size() + skip != all.size()) throw ParseError(path.string() + ": unexpected parameter record count");
  for (std::size_t i = 0; i < rest.size(); ++i) {
    auto* t = all[skip + i];
    if (rest[i].values.size() != t->size()) throw ParseError(path.string() + ": parameter size mismatch");
    for (std::size_t k = 0; k < t->size(); ++k) (*t)[k] = rest[i].values[k];
  }
  return p;
}

}  // namespace motionbev::toy
