#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "motionbev/error.hpp"
#include "motionbev/tensor.hpp"

namespace motionbev::netcore {

namespace testing {
// Added to every ring_conv2d kernel gradient when nonzero. Lets the check
// suites demonstrate that a broken backward pass is caught.
inline double ring_conv_backward_fault = 0.0;
}  // namespace testing

template <typename T>
inline T sigmoid(T v) {
  return T(1) / (T(1) + std::exp(-v));
}

// ---------------------------------------------------------------------------
// Ring convolution: circular padding along rows (angle), zeros along
// columns (range). Cross-correlation, stride 1, same output size.

template <typename T>
void check_ring_conv_shapes(const BasicTensor<T>& x, const BasicTensor<T>& k, const BasicTensor<T>& b) {
  if (x.rank() != 3) throw ShapeError("ring_conv2d input must be (C, h, w)");
  if (k.rank() != 4) throw ShapeError("ring_conv2d kernel must be (C_out, C_in, kh, kw)");
  if (k.dim(1) != x.dim(0))
    throw ShapeError("ring_conv2d kernel expects " + std::to_string(k.dim(1)) + " input channels, got " +
                     std::to_string(x.dim(0)));
  if (k.dim(2) % 2 == 0 || k.dim(3) % 2 == 0) throw ShapeError("ring_conv2d kernel size must be odd");
  if (b.size() != k.dim(0)) throw ShapeError("ring_conv2d bias length must equal C_out");
}

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Patch matrix of x: row (c, p, q), column (i, j) holds
// x[c, (i + p - ph) mod h, j + q - pw], zero outside the radial range.
template <typename T>
RowMatrix<T> im2col(const BasicTensor<T>& x, std::size_t kh, std::size_t kw) {
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto ph = static_cast<std::ptrdiff_t>(kh / 2), pw = static_cast<std::ptrdiff_t>(kw / 2);
  RowMatrix<T> col = RowMatrix<T>::Zero(static_cast<Eigen::Index>(cin * kh * kw), static_cast<Eigen::Index>(h * w));
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t p = 0; p < kh; ++p)
      for (std::size_t q = 0; q < kw; ++q) {
        T* row = col.row(static_cast<Eigen::Index>((c * kh + p) * kw + q)).data();
        const std::ptrdiff_t dq = static_cast<std::ptrdiff_t>(q) - pw;
        const std::size_t jb = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dq));
        const std::size_t je = static_cast<std::size_t>(std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(w),
                                                                                  static_cast<std::ptrdiff_t>(w) - dq));
        for (std::size_t i = 0; i < h; ++i) {
          const auto hh = static_cast<std::ptrdiff_t>(h);
          const auto src = static_cast<std::size_t>(((static_cast<std::ptrdiff_t>(i + p) - ph) % hh + hh) % hh);
          const T* in = x.data() + (c * h + src) * w;
          T* out = row + i * w;
          for (std::size_t j = jb; j < je; ++j) out[j] = in[static_cast<std::ptrdiff_t>(j) + dq];
        }
      }
  return col;
}

// Adjoint of im2col: scatters patch gradients back onto the input grid.
template <typename T>
void col2im(const RowMatrix<T>& col, BasicTensor<T>& dx, std::size_t kh, std::size_t kw) {
  const std::size_t cin = dx.dim(0), h = dx.dim(1), w = dx.dim(2);
  const auto ph = static_cast<std::ptrdiff_t>(kh / 2), pw = static_cast<std::ptrdiff_t>(kw / 2);
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t p = 0; p < kh; ++p)
      for (std::size_t q = 0; q < kw; ++q) {
        const T* row = col.row(static_cast<Eigen::Index>((c * kh + p) * kw + q)).data();
        const std::ptrdiff_t dq = static_cast<std::ptrdiff_t>(q) - pw;
        const std::size_t jb = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dq));
        const std::size_t je = static_cast<std::size_t>(std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(w),
                                                                                  static_cast<std::ptrdiff_t>(w) - dq));
        for (std::size_t i = 0; i < h; ++i) {
          const auto hh = static_cast<std::ptrdiff_t>(h);
          const auto src = static_cast<std::size_t>(((static_cast<std::ptrdiff_t>(i + p) - ph) % hh + hh) % hh);
          T* din = dx.data() + (c * h + src) * w;
          const T* g = row + i * w;
          for (std::size_t j = jb; j < je; ++j) din[static_cast<std::ptrdiff_t>(j) + dq] += g[j];
        }
      }
}

template <typename T>
Eigen::Map<const RowMatrix<T>> as_matrix(const BasicTensor<T>& t, std::size_t rows) {
  return {t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(t.size() / rows)};
}

template <typename T>
Eigen::Map<RowMatrix<T>> as_matrix(BasicTensor<T>& t, std::size_t rows) {
  return {t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(t.size() / rows)};
}

}  // namespace detail

template <typename T>
BasicTensor<T> ring_conv2d(const BasicTensor<T>& x, const BasicTensor<T>& k, const BasicTensor<T>& b) {
  check_ring_conv_shapes(x, k, b);
  const std::size_t h = x.dim(1), w = x.dim(2);
  const std::size_t cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  BasicTensor<T> y({cout, h, w});
  auto ym = detail::as_matrix(y, cout);
  const auto km = detail::as_matrix(k, cout);
  if (kh == 1 && kw == 1)
    ym.noalias() = km * detail::as_matrix(x, x.dim(0));
  else
    ym.noalias() = km * detail::im2col(x, kh, kw);
  for (std::size_t o = 0; o < cout; ++o) ym.row(static_cast<Eigen::Index>(o)).array() += b[o];
  return y;
}

template <typename T>
struct ConvGrads {
  BasicTensor<T> dx, dk, db;
};

template <typename T>
ConvGrads<T> ring_conv2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& k, const BasicTensor<T>& dy,
                                  bool need_dx = true) {
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  if (dy.rank() != 3 || dy.dim(0) != cout || dy.dim(1) != h || dy.dim(2) != w)
    throw ShapeError("ring_conv2d_backward: upstream gradient shape mismatch");
  ConvGrads<T> g{need_dx ? BasicTensor<T>(x.shape()) : BasicTensor<T>(), BasicTensor<T>(k.shape()),
                 BasicTensor<T>({cout})};
  const auto dym = detail::as_matrix(dy, cout);
  const auto km = detail::as_matrix(k, cout);
  auto dkm = detail::as_matrix(g.dk, cout);
  for (std::size_t o = 0; o < cout; ++o) g.db[o] = dym.row(static_cast<Eigen::Index>(o)).sum();
  if (kh == 1 && kw == 1) {
    const auto xm = detail::as_matrix(x, cin);
    dkm.noalias() = dym * xm.transpose();
    if (need_dx) detail::as_matrix(g.dx, cin).noalias() = km.transpose() * dym;
  } else {
    const auto col = detail::im2col(x, kh, kw);
    dkm.noalias() = dym * col.transpose();
    if (need_dx) {
      const detail::RowMatrix<T> dcol = km.transpose() * dym;
      detail::col2im(dcol, g.dx, kh, kw);
    }
  }
  if (testing::ring_conv_backward_fault != 0.0)
    for (auto& v : g.dk.values()) v += static_cast<T>(testing::ring_conv_backward_fault);
  return g;
}

// ---------------------------------------------------------------------------
// Small elementwise helpers.

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2))
    throw ShapeError("concat_channels: spatial dims differ");
  BasicTensor<T> out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  std::copy(a.values().begin(), a.values().end(), out.values().begin());
  std::copy(b.values().begin(), b.values().end(), out.values().begin() + static_cast<long>(a.size()));
  return out;
}

template <typename T>
BasicTensor<T> relu(BasicTensor<T> x) {
  for (auto& v : x.values()) v = v > 0 ? v : T(0);
  return x;
}

/// Gradient through max(0, .) given the forward output.
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& out, BasicTensor<T> dy) {
  for (std::size_t i = 0; i < dy.size(); ++i)
    if (!(out[i] > 0)) dy[i] = 0;
  return dy;
}

// ---------------------------------------------------------------------------
// Appearance-motion co-attention module.

template <typename T>
struct AmcmParams {
  BasicTensor<T> gate_k;     // (2, C_a + C_m, 3, 3)
  BasicTensor<T> gate_b;     // (2)
  BasicTensor<T> spatial_k;  // (1, C_m, 1, 1)
  BasicTensor<T> spatial_b;  // (1)
  BasicTensor<T> channel_k;  // (C_a, C_a, 1, 1)
  BasicTensor<T> channel_b;  // (C_a)

  static AmcmParams zeros(std::size_t ca, std::size_t cm, std::size_t gate_kernel = 3) {
    return {BasicTensor<T>({2, ca + cm, gate_kernel, gate_kernel}), BasicTensor<T>({2}),
            BasicTensor<T>({1, cm, 1, 1}),                          BasicTensor<T>({1}),
            BasicTensor<T>({ca, ca, 1, 1}),                         BasicTensor<T>({ca})};
  }

  static AmcmParams random(std::size_t ca, std::size_t cm, std::uint64_t seed, T scale = T(1)) {
    auto p = zeros(ca, cm);
    std::mt19937_64 rng(seed);
    auto fill = [&](BasicTensor<T>& t, double fan_in) {
      std::normal_distribution<double> nd(0.0, static_cast<double>(scale) / std::sqrt(fan_in));
      for (auto& v : t.values()) v = static_cast<T>(nd(rng));
    };
    fill(p.gate_k, static_cast<double>((ca + cm) * 9));
    fill(p.spatial_k, static_cast<double>(cm));
    fill(p.channel_k, static_cast<double>(ca));
    return p;
  }

  std::vector<BasicTensor<T>*> tensors() {
    return {&gate_k, &gate_b, &spatial_k, &spatial_b, &channel_k, &channel_b};
  }
  std::vector<const BasicTensor<T>*> tensors() const {
    return {&gate_k, &gate_b, &spatial_k, &spatial_b, &channel_k, &channel_b};
  }

  std::size_t appearance_channels() const { return channel_k.dim(0); }
  std::size_t motion_channels() const { return spatial_k.dim(1); }
};

template <typename T>
struct GateResult {
  T g_a = 0, g_m = 0;
  BasicTensor<T> G_a, G_m;
  BasicTensor<T> cat;  // Cat(F_a, F_m)
  BasicTensor<T> sig;  // Sigmoid(H), (2, h, w)
};

template <typename T>
void check_amcm_inputs(const BasicTensor<T>& fa, const BasicTensor<T>& fm, const AmcmParams<T>& p) {
  if (fa.rank() != 3 || fm.rank() != 3) throw ShapeError("AMCM features must be (C, h, w)");
  if (fa.dim(1) != fm.dim(1) || fa.dim(2) != fm.dim(2)) throw ShapeError("AMCM feature maps differ in h x w");
  if (fa.dim(0) != p.appearance_channels() || fm.dim(0) != p.motion_channels())
    throw ShapeError("AMCM channel counts do not match parameters");
  if (p.gate_k.rank() != 4 || p.gate_k.dim(0) != 2 || p.gate_k.dim(1) != fa.dim(0) + fm.dim(0))
    throw ShapeError("AMCM gate kernel must be (2, C_a + C_m, k, k)");
}

/// Scalar modality scores from the concatenated features, then G = g * F.
template <typename T>
GateResult<T> coattention_gate(const BasicTensor<T>& fa, const BasicTensor<T>& fm, const AmcmParams<T>& p) {
  check_amcm_inputs(fa, fm, p);
  GateResult<T> r;
  r.cat = concat_channels(fa, fm);
  r.sig = ring_conv2d(r.cat, p.gate_k, p.gate_b);
  for (auto& v : r.sig.values()) v = sigmoid(v);
  const std::size_t plane = fa.dim(1) * fa.dim(2);
  T sa = 0, sm = 0;
  for (auto v : r.sig.channel(0)) sa += v;
  for (auto v : r.sig.channel(1)) sm += v;
  r.g_a = sa / static_cast<T>(plane);
  r.g_m = sm / static_cast<T>(plane);
  r.G_a = fa;
  r.G_a *= r.g_a;
  r.G_m = fm;
  r.G_m *= r.g_m;
  return r;
}

template <typename T>
struct AttentionResult {
  BasicTensor<T> out;       // G''
  BasicTensor<T> spatial;   // Sigmoid(Conv1x1(G_m)), (1, h, w)
  BasicTensor<T> gated;     // G'
  std::vector<T> pooled;    // Avg(G')
  std::vector<T> softmax;   // Softmax(Conv1x1(Avg(G')))
  std::vector<T> weights;   // softmax * C_a
};

/// Spatial attention from the motion branch, channel attention on the
/// result, plus the gated appearance residual.
template <typename T>
AttentionResult<T> motion_guided_attention(const BasicTensor<T>& ga, const BasicTensor<T>& gm,
                                           const AmcmParams<T>& p) {
  if (ga.rank() != 3 || gm.rank() != 3 || ga.dim(1) != gm.dim(1) || ga.dim(2) != gm.dim(2))
    throw ShapeError("motion_guided_attention: feature maps differ in h x w");
  if (ga.dim(0) != p.appearance_channels() || gm.dim(0) != p.motion_channels())
    throw ShapeError("motion_guided_attention: channel counts do not match parameters");
  const std::size_t ca = ga.dim(0), h = ga.dim(1), w = ga.dim(2), plane = h * w;
  AttentionResult<T> r;
  r.spatial = ring_conv2d(gm, p.spatial_k, p.spatial_b);
  for (auto& v : r.spatial.values()) v = sigmoid(v);
  r.gated = BasicTensor<T>(ga.shape());
  const auto s = r.spatial.channel(0);
  r.pooled.assign(ca, 0);
  for (std::size_t c = 0; c < ca; ++c) {
    const auto in = ga.channel(c);
    auto out = r.gated.channel(c);
    T sum = 0;
    for (std::size_t i = 0; i < plane; ++i) {
      out[i] = in[i] * s[i];
      sum += out[i];
    }
    r.pooled[c] = sum / static_cast<T>(plane);
  }
  BasicTensor<T> pooled({ca, 1, 1}, std::vector<T>(r.pooled));
  const auto logits = ring_conv2d(pooled, p.channel_k, p.channel_b);
  T mx = logits[0];
  for (std::size_t c = 1; c < ca; ++c) mx = std::max(mx, logits[c]);
  r.softmax.assign(ca, 0);
  T z = 0;
  for (std::size_t c = 0; c < ca; ++c) z += (r.softmax[c] = std::exp(logits[c] - mx));
  r.weights.assign(ca, 0);
  for (std::size_t c = 0; c < ca; ++c) {
    r.softmax[c] /= z;
    r.weights[c] = r.softmax[c] * static_cast<T>(ca);
  }
  r.out = BasicTensor<T>(ga.shape());
  for (std::size_t c = 0; c < ca; ++c) {
    const auto g1 = r.gated.channel(c);
    const auto g0 = ga.channel(c);
    auto o = r.out.channel(c);
    for (std::size_t i = 0; i < plane; ++i) o[i] = g1[i] * r.weights[c] + g0[i];
  }
  return r;
}

template <typename T>
struct AmcmForward {
  GateResult<T> gate;
  AttentionResult<T> attention;
  const BasicTensor<T>& output() const { return attention.out; }
};

template <typename T>
AmcmForward<T> amcm_forward(const BasicTensor<T>& fa, const BasicTensor<T>& fm, const AmcmParams<T>& p) {
  AmcmForward<T> f;
  f.gate = coattention_gate(fa, fm, p);
  f.attention = motion_guided_attention(f.gate.G_a, f.gate.G_m, p);
  return f;
}

template <typename T>
struct AttentionGrads {
  BasicTensor<T> d_ga, d_gm;
  AmcmParams<T> params;  // only spatial_* and channel_* are filled
};

template <typename T>
AttentionGrads<T> motion_guided_attention_backward(const BasicTensor<T>& ga, const BasicTensor<T>& gm,
                                                   const AmcmParams<T>& p, const AttentionResult<T>& f,
                                                   const BasicTensor<T>& dout) {
  require_same_shape(dout, f.out, "motion_guided_attention_backward");
  const std::size_t ca = ga.dim(0), h = ga.dim(1), w = ga.dim(2), plane = h * w;
  AttentionGrads<T> g;
  g.params = AmcmParams<T>::zeros(ca, gm.dim(0), p.gate_k.rank() == 4 ? p.gate_k.dim(2) : 3);
  g.d_ga = dout;  // residual path
  BasicTensor<T> d_gated(ga.shape());
  std::vector<T> d_weights(ca, 0);
  for (std::size_t c = 0; c < ca; ++c) {
    const auto up = dout.channel(c);
    const auto g1 = f.gated.channel(c);
    auto dg1 = d_gated.channel(c);
    T acc = 0;
    for (std::size_t i = 0; i < plane; ++i) {
      dg1[i] = up[i] * f.weights[c];
      acc += up[i] * g1[i];
    }
    d_weights[c] = acc;
  }
  // weights = C * softmax(logits)
  T dot = 0;
  for (std::size_t c = 0; c < ca; ++c) dot += d_weights[c] * f.softmax[c];
  BasicTensor<T> d_logits({ca, 1, 1});
  for (std::size_t c = 0; c < ca; ++c)
    d_logits[c] = static_cast<T>(ca) * f.softmax[c] * (d_weights[c] - dot);
  BasicTensor<T> pooled({ca, 1, 1}, std::vector<T>(f.pooled));
  auto cg = ring_conv2d_backward(pooled, p.channel_k, d_logits);
  g.params.channel_k = std::move(cg.dk);
  g.params.channel_b = std::move(cg.db);
  for (std::size_t c = 0; c < ca; ++c) {
    const T share = cg.dx[c] / static_cast<T>(plane);
    for (auto& v : d_gated.channel(c)) v += share;
  }
  // gated = ga * spatial
  const auto s = f.spatial.channel(0);
  BasicTensor<T> d_spre({1, h, w});
  for (std::size_t c = 0; c < ca; ++c) {
    const auto dg1 = d_gated.channel(c);
    const auto g0 = ga.channel(c);
    auto dga = g.d_ga.channel(c);
    for (std::size_t i = 0; i < plane; ++i) {
      dga[i] += dg1[i] * s[i];
      d_spre[i] += dg1[i] * g0[i];
    }
  }
  for (std::size_t i = 0; i < plane; ++i) d_spre[i] *= s[i] * (T(1) - s[i]);
  auto sg = ring_conv2d_backward(gm, p.spatial_k, d_spre);
  g.params.spatial_k = std::move(sg.dk);
  g.params.spatial_b = std::move(sg.db);
  g.d_gm = std::move(sg.dx);
  return g;
}

template <typename T>
struct GateGrads {
  BasicTensor<T> d_fa, d_fm;
  BasicTensor<T> d_gate_k, d_gate_b;
};

/// Backward of the gate given upstream gradients of G_a and G_m.
template <typename T>
GateGrads<T> coattention_gate_backward(const BasicTensor<T>& fa, const BasicTensor<T>& fm, const AmcmParams<T>& p,
                                       const GateResult<T>& f, const BasicTensor<T>& d_ga,
                                       const BasicTensor<T>& d_gm) {
  require_same_shape(d_ga, fa, "coattention_gate_backward");
  require_same_shape(d_gm, fm, "coattention_gate_backward");
  const std::size_t h = fa.dim(1), w = fa.dim(2), plane = h * w;
  GateGrads<T> g;
  g.d_fa = d_ga;
  g.d_fa *= f.g_a;
  g.d_fm = d_gm;
  g.d_fm *= f.g_m;
  T dga = 0, dgm = 0;
  for (std::size_t i = 0; i < fa.size(); ++i) dga += d_ga[i] * fa[i];
  for (std::size_t i = 0; i < fm.size(); ++i) dgm += d_gm[i] * fm[i];
  BasicTensor<T> dh({2, h, w});
  const T scale_a = dga / static_cast<T>(plane), scale_m = dgm / static_cast<T>(plane);
  for (std::size_t i = 0; i < plane; ++i) {
    const T sa = f.sig[i], sm = f.sig[plane + i];
    dh[i] = scale_a * sa * (T(1) - sa);
    dh[plane + i] = scale_m * sm * (T(1) - sm);
  }
  auto cg = ring_conv2d_backward(f.cat, p.gate_k, dh);
  g.d_gate_k = std::move(cg.dk);
  g.d_gate_b = std::move(cg.db);
  const std::size_t na = fa.size();
  for (std::size_t i = 0; i < na; ++i) g.d_fa[i] += cg.dx[i];
  for (std::size_t i = 0; i < fm.size(); ++i) g.d_fm[i] += cg.dx[na + i];
  return g;
}

template <typename T>
struct AmcmGrads {
  BasicTensor<T> d_fa, d_fm;
  AmcmParams<T> params;
};

template <typename T>
AmcmGrads<T> amcm_backward(const BasicTensor<T>& fa, const BasicTensor<T>& fm, const AmcmParams<T>& p,
                           const AmcmForward<T>& f, const BasicTensor<T>& dout) {
  if (f.attention.out.empty()) throw StateError("amcm_backward called without forward activations");
  auto ag = motion_guided_attention_backward(f.gate.G_a, f.gate.G_m, p, f.attention, dout);
  auto gg = coattention_gate_backward(fa, fm, p, f.gate, ag.d_ga, ag.d_gm);
  AmcmGrads<T> g;
  g.d_fa = std::move(gg.d_fa);
  g.d_fm = std::move(gg.d_fm);
  g.params = std::move(ag.params);
  g.params.gate_k = std::move(gg.d_gate_k);
  g.params.gate_b = std::move(gg.d_gate_b);
  return g;
}

// ---------------------------------------------------------------------------
// SGD with momentum and L2 weight decay folded into the gradient.

template <typename T>
struct SgdState {
  std::vector<BasicTensor<T>> velocity;
};

template <typename T>
void sgd_step(std::span<BasicTensor<T>* const> params, std::span<const BasicTensor<T>* const> grads,
              SgdState<T>& state, T lr, T momentum, T weight_decay) {
  if (params.size() != grads.size()) throw ShapeError("sgd_step: parameter/gradient count mismatch");
  if (state.velocity.empty())
    for (auto* p : params) state.velocity.emplace_back(p->shape());
  if (state.velocity.size() != params.size()) throw ShapeError("sgd_step: optimizer state size mismatch");
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = *params[t];
    const auto& g = *grads[t];
    auto& v = state.velocity[t];
    require_same_shape(p, g, "sgd_step");
    require_same_shape(p, v, "sgd_step");
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = momentum * v[i] + g[i] + weight_decay * p[i];
      p[i] -= lr * v[i];
    }
  }
}

/// Learning rate after `epoch` completed epochs of multiplicative decay.
inline double decayed_lr(double lr0, double decay, int epoch) { return lr0 * std::pow(decay, epoch); }

// ---------------------------------------------------------------------------
// Finite-difference checking.

/// Central-difference gradient of scalar f with respect to every entry of x.
/// x is perturbed in place and restored.
template <typename F>
Tensor numeric_gradient(F&& f, Tensor& x, double step = 1e-5) {
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double fp = f();
    x[i] = orig - step;
    const double fm = f();
    x[i] = orig;
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||), 0 when both are zero.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("relative_error: length mismatch");
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0 ? 0.0 : std::sqrt(diff) / denom;
}

inline double relative_error(const Tensor& a, const Tensor& b) { return relative_error(a.values(), b.values()); }

/// Fills a tensor with uniform values in [lo, hi).
template <typename T>
void fill_uniform(BasicTensor<T>& t, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.values()) v = static_cast<T>(d(rng));
}

}  // namespace motionbev::netcore
