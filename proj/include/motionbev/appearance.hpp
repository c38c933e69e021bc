#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "motionbev/container.hpp"
#include "motionbev/error.hpp"
#include "motionbev/geometry.hpp"
#include "motionbev/tensor.hpp"

namespace motionbev {

inline constexpr std::size_t kDescriptorDim = 7;
using Descriptor = std::array<double, kDescriptorDim>;

/// Per-point input to the appearance MLP:
/// (x, y, z, rho, theta, rho - rho_center, theta - theta_center).
inline Descriptor point_descriptor(const Point& p, const GridIndex& g, const GridConfig& cfg) {
  const auto pp = cart_to_polar(p);
  const auto c = cell_center(g, cfg);
  return {p.x, p.y, p.z, pp.rho, pp.theta, pp.rho - c.rho, pp.theta - c.theta};
}

struct DenseLayer {
  Tensor weight;  // (out, in)
  Tensor bias;    // (out)

  std::size_t in() const { return weight.dim(1); }
  std::size_t out() const { return weight.dim(0); }
};

/// Affine layers with max(0, .) between them and none after the last.
struct MlpParams {
  std::vector<DenseLayer> layers;
  bool hidden_relu = true;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().in(); }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().out(); }

  void validate() const {
    if (layers.empty()) throw ShapeError("MLP has no layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& L = layers[l];
      if (L.weight.rank() != 2 || L.bias.rank() != 1 || L.bias.dim(0) != L.out())
        throw ShapeError("MLP layer " + std::to_string(l) + " has inconsistent weight/bias shapes");
      if (l > 0 && L.in() != layers[l - 1].out())
        throw ShapeError("MLP layer " + std::to_string(l) + " input does not chain with previous output");
    }
  }

  /// He-style initialization for the given layer widths.
  static MlpParams random(std::span<const std::size_t> widths, std::uint64_t seed) {
    MlpParams p;
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      DenseLayer L{Tensor({widths[l + 1], widths[l]}), Tensor({widths[l + 1]})};
      std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / static_cast<double>(widths[l])));
      for (auto& v : L.weight.values()) v = nd(rng);
      p.layers.push_back(std::move(L));
    }
    return p;
  }

  static MlpParams identity(std::size_t dim) {
    MlpParams p;
    DenseLayer L{Tensor({dim, dim}), Tensor({dim})};
    for (std::size_t i = 0; i < dim; ++i) L.weight.at(i, i) = 1.0;
    p.layers.push_back(std::move(L));
    p.hidden_relu = false;
    return p;
  }
};

/// Per-point inputs of a frame: descriptor rows and the cell of each point.
struct PointInputs {
  std::vector<Descriptor> descriptors;  // one per in-range point
  std::vector<std::uint32_t> cell;      // matching cell id
  std::size_t h = 0, w = 0;
};

inline PointInputs point_inputs(const Partition& part, const PointCloud& cloud, const GridConfig& cfg) {
  if (part.point_count() != cloud.size()) throw ShapeError("partition was built from a different cloud");
  PointInputs in;
  in.h = static_cast<std::size_t>(part.h());
  in.w = static_cast<std::size_t>(part.w());
  for (std::size_t c = 0; c < part.cell_count(); ++c) {
    const GridIndex g{static_cast<int>(c % in.w), static_cast<int>(c / in.w)};
    for (auto i : part.cell(c)) {
      in.descriptors.push_back(point_descriptor(cloud.points[i], g, cfg));
      in.cell.push_back(static_cast<std::uint32_t>(c));
    }
  }
  return in;
}

/// Activations retained by a forward pass for the backward pass.
struct AppearanceCache {
  std::vector<std::vector<double>> acts;  // acts[l]: n_points x width_l (post-activation; acts[0] = inputs)
  std::vector<std::vector<double>> pre;   // pre[l]: n_points x out_l (pre-activation of layer l)
  std::vector<std::int64_t> argmax;       // C_a x cells, -1 for empty cells
  std::size_t n = 0;
};

/// MaxPool over per-point MLP outputs per cell; empty cells hold zeros.
/// Result is (C_a, h, w).
inline Tensor encode_points(const PointInputs& in, const MlpParams& params, AppearanceCache* cache = nullptr) {
  params.validate();
  if (params.input_dim() != kDescriptorDim)
    throw ShapeError("MLP input dim " + std::to_string(params.input_dim()) + " != descriptor dim 7");
  const std::size_t n = in.descriptors.size();
  const std::size_t nl = params.layers.size();
  std::vector<std::vector<double>> acts(nl + 1), pre(nl);
  acts[0].resize(n * kDescriptorDim);
  for (std::size_t i = 0; i < n; ++i)
    std::copy(in.descriptors[i].begin(), in.descriptors[i].end(), acts[0].begin() + static_cast<long>(i * kDescriptorDim));
  for (std::size_t l = 0; l < nl; ++l) {
    const auto& L = params.layers[l];
    const std::size_t di = L.in(), dout = L.out();
    pre[l].assign(n * dout, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double* x = &acts[l][i * di];
      double* y = &pre[l][i * dout];
      for (std::size_t o = 0; o < dout; ++o) {
        double s = L.bias[o];
        const double* wrow = &L.weight[o * di];
        for (std::size_t k = 0; k < di; ++k) s += wrow[k] * x[k];
        y[o] = s;
      }
    }
    acts[l + 1] = pre[l];
    if (params.hidden_relu && l + 1 < nl)
      for (auto& v : acts[l + 1]) v = v > 0 ? v : 0.0;
  }
  const std::size_t ca = params.output_dim();
  const std::size_t cells = in.h * in.w;
  Tensor out({ca, in.h, in.w});
  std::vector<std::int64_t> argmax(ca * cells, -1);
  const auto& y = acts[nl];
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = in.cell[i];
    for (std::size_t k = 0; k < ca; ++k) {
      auto& am = argmax[k * cells + c];
      const double v = y[i * ca + k];
      // strict > keeps the earliest point on ties
      if (am < 0 || v > out[k * cells + c]) {
        am = static_cast<std::int64_t>(i);
        out[k * cells + c] = v;
      }
    }
  }
  if (cache) {
    cache->acts = std::move(acts);
    cache->pre = std::move(pre);
    cache->argmax = std::move(argmax);
    cache->n = n;
  }
  return out;
}

struct AppearanceFeatures {
  Tensor data;  // (C_a, h, w)
  std::int64_t frame_index = 0;
};

inline AppearanceFeatures encode_appearance(const Partition& part, const PointCloud& cloud, const MlpParams& params,
                                            const GridConfig& cfg) {
  return {encode_points(point_inputs(part, cloud, cfg), params), cloud.frame_index};
}

/// Gradient of sum(upstream * encode_points(...)) with respect to every
/// weight and bias. Only the arg-max point of each (channel, cell) receives
/// gradient.
inline MlpParams encode_points_backward(const AppearanceCache& cache, const MlpParams& params, const Tensor& upstream) {
  const std::size_t nl = params.layers.size();
  const std::size_t ca = params.output_dim();
  const std::size_t cells = upstream.size() / ca;
  MlpParams grad;
  grad.hidden_relu = params.hidden_relu;
  for (const auto& L : params.layers) grad.layers.push_back({Tensor(L.weight.shape()), Tensor(L.bias.shape())});

  std::vector<double> delta(cache.n * ca, 0.0);
  for (std::size_t k = 0; k < ca; ++k)
    for (std::size_t c = 0; c < cells; ++c) {
      const auto am = cache.argmax[k * cells + c];
      if (am >= 0) delta[static_cast<std::size_t>(am) * ca + k] += upstream[k * cells + c];
    }

  for (std::size_t l = nl; l-- > 0;) {
    const auto& L = params.layers[l];
    auto& G = grad.layers[l];
    const std::size_t di = L.in(), dout = L.out();
    if (params.hidden_relu && l + 1 < nl)
      for (std::size_t j = 0; j < delta.size(); ++j)
        if (cache.pre[l][j] <= 0) delta[j] = 0.0;
    std::vector<double> prev(l > 0 ? cache.n * di : 0, 0.0);
    for (std::size_t i = 0; i < cache.n; ++i) {
      const double* d = &delta[i * dout];
      const double* x = &cache.acts[l][i * di];
      for (std::size_t o = 0; o < dout; ++o) {
        if (d[o] == 0.0) continue;
        G.bias[o] += d[o];
        double* gw = &G.weight[o * di];
        const double* wrow = &L.weight[o * di];
        for (std::size_t k = 0; k < di; ++k) gw[k] += d[o] * x[k];
        if (l > 0)
          for (std::size_t k = 0; k < di; ++k) prev[i * di + k] += d[o] * wrow[k];
      }
    }
    delta = std::move(prev);
  }
  return grad;
}

// Parameter file: one MBEV record per layer, in layer order, holding an
// (out, in + 1) matrix whose last column is the bias; tag = layer index.
// A final C=1 h=1 w=1 record with tag -1 stores the hidden_relu flag.
inline std::vector<ContainerRecord> mlp_records(const MlpParams& p) {
  p.validate();
  std::vector<ContainerRecord> recs;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& L = p.layers[l];
    ContainerRecord r;
    r.h = static_cast<std::int32_t>(L.out());
    r.w = static_cast<std::int32_t>(L.in() + 1);
    r.channels = 1;
    r.tag = static_cast<std::int32_t>(l);
    for (std::size_t o = 0; o < L.out(); ++o) {
      for (std::size_t i = 0; i < L.in(); ++i) r.values.push_back(static_cast<float>(L.weight.at(o, i)));
      r.values.push_back(static_cast<float>(L.bias[o]));
    }
    recs.push_back(std::move(r));
  }
  recs.push_back({1, 1, 1, -1, {p.hidden_relu ? 1.0f : 0.0f}});
  return recs;
}

inline MlpParams mlp_from_records(std::span<const ContainerRecord> recs) {
  MlpParams p;
  for (const auto& r : recs) {
    if (r.tag < 0) {
      p.hidden_relu = !r.values.empty() && r.values[0] != 0.0f;
      continue;
    }
    if (r.tag != static_cast<std::int32_t>(p.layers.size()) || r.channels != 1 || r.w < 2)
      throw ParseError("MLP record " + std::to_string(r.tag) + " out of order or malformed");
    const auto out = static_cast<std::size_t>(r.h), in = static_cast<std::size_t>(r.w - 1);
    DenseLayer L{Tensor({out, in}), Tensor({out})};
    for (std::size_t o = 0; o < out; ++o) {
      for (std::size_t i = 0; i < in; ++i) L.weight.at(o, i) = r.values[o * (in + 1) + i];
      L.bias[o] = r.values[o * (in + 1) + in];
    }
    p.layers.push_back(std::move(L));
  }
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------
// Training-time augmentation.

struct AugmentDraw {
  bool flip = false;       // mirror y -> -y
  double yaw = 0.0;        // rotation about z, [-pi, pi)
  double tx = 0.0, ty = 0.0, tz = 0.0;  // each in [-0.5, 0.5]
};

inline AugmentDraw draw_augmentation(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
  std::uniform_real_distribution<double> shift(-0.5, 0.5);
  AugmentDraw d;
  d.flip = coin(rng);
  d.yaw = angle(rng);
  d.tx = shift(rng);
  d.ty = shift(rng);
  d.tz = shift(rng);
  return d;
}

/// Flip, then rotate, then translate.
inline PointCloud apply_augmentation(const PointCloud& cloud, const AugmentDraw& d) {
  PointCloud out = cloud;
  const double c = std::cos(d.yaw), s = std::sin(d.yaw);
  for (auto& p : out.points) {
    const double y0 = d.flip ? -p.y : p.y;
    const double x0 = p.x;
    p.x = c * x0 - s * y0 + d.tx;
    p.y = s * x0 + c * y0 + d.ty;
    p.z = p.z + d.tz;
  }
  return out;
}

inline PointCloud augment(const PointCloud& cloud, std::uint64_t seed) {
  return apply_augmentation(cloud, draw_augmentation(seed));
}

}  // namespace motionbev
