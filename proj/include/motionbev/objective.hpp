#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "motionbev/error.hpp"
#include "motionbev/geometry.hpp"
#include "motionbev/tensor.hpp"

namespace motionbev {

/// Class frequencies and the derived weights alpha_i = 1 / sqrt(f_i).
class ClassStats {
 public:
  static ClassStats from_frequencies(std::vector<double> f) {
    if (f.size() < 2) throw ValidationError("class statistics need at least two classes");
    double sum = 0;
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (!(f[i] > 0.0 && f[i] <= 1.0))
        throw ValidationError("class frequency " + std::to_string(i) + " must lie in (0, 1]");
      sum += f[i];
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("class frequencies must sum to 1");
    ClassStats s;
    s.freq_ = std::move(f);
    for (double v : s.freq_) s.alpha_.push_back(1.0 / std::sqrt(v));
    return s;
  }

  /// Frequencies from raw counts. Zero counts are floored to one so every
  /// weight stays finite.
  static ClassStats from_counts(std::span<const std::uint64_t> counts) {
    std::vector<double> f(counts.size());
    double total = 0;
    for (auto c : counts) total += static_cast<double>(std::max<std::uint64_t>(c, 1));
    for (std::size_t i = 0; i < counts.size(); ++i)
      f[i] = static_cast<double>(std::max<std::uint64_t>(counts[i], 1)) / total;
    const double s = std::accumulate(f.begin(), f.end(), 0.0);
    for (auto& v : f) v /= s;
    return from_frequencies(std::move(f));
  }

  static ClassStats uniform(std::size_t classes) {
    return from_frequencies(std::vector<double>(classes, 1.0 / static_cast<double>(classes)));
  }

  std::size_t classes() const noexcept { return freq_.size(); }
  std::span<const double> frequencies() const noexcept { return freq_; }
  std::span<const double> alpha() const noexcept { return alpha_; }

 private:
  std::vector<double> freq_;
  std::vector<double> alpha_;
};

struct LossResult {
  double loss = 0.0;
  Tensor grad;  // same shape as the loss input
};

namespace detail {

inline void check_labels(const Tensor& x, std::span<const int> labels, std::span<const std::uint8_t> ignore,
                         const char* op) {
  if (x.rank() != 3) throw ShapeError(std::string(op) + ": input must be (C, h, w)");
  if (x.dim(0) < 2) throw ShapeError(std::string(op) + ": need at least two classes");
  const std::size_t plane = x.dim(1) * x.dim(2);
  if (labels.size() != plane) throw ShapeError(std::string(op) + ": label map size mismatch");
  if (!ignore.empty() && ignore.size() != plane) throw ShapeError(std::string(op) + ": ignore mask size mismatch");
  const int nc = static_cast<int>(x.dim(0));
  for (std::size_t i = 0; i < plane; ++i) {
    if (!ignore.empty() && ignore[i]) continue;
    if (labels[i] < 0 || labels[i] >= nc)
      throw ValidationError(std::string(op) + ": label " + std::to_string(labels[i]) + " at pixel " +
                            std::to_string(i) + " out of range");
  }
}

inline bool ignored(std::span<const std::uint8_t> ignore, std::size_t i) { return !ignore.empty() && ignore[i]; }

}  // namespace detail

/// Per-pixel softmax over the class axis of a (C, h, w) tensor.
inline Tensor softmax_channels(const Tensor& logits) {
  const std::size_t nc = logits.dim(0), plane = logits.dim(1) * logits.dim(2);
  Tensor p(logits.shape());
  for (std::size_t i = 0; i < plane; ++i) {
    double mx = logits[i];
    for (std::size_t c = 1; c < nc; ++c) mx = std::max(mx, logits[c * plane + i]);
    double z = 0;
    for (std::size_t c = 0; c < nc; ++c) z += (p[c * plane + i] = std::exp(logits[c * plane + i] - mx));
    for (std::size_t c = 0; c < nc; ++c) p[c * plane + i] /= z;
  }
  return p;
}

/// Class-weighted cross-entropy, mean over unmasked pixels.
inline LossResult weighted_ce(const Tensor& logits, std::span<const int> labels, const ClassStats& stats,
                              std::span<const std::uint8_t> ignore = {}) {
  detail::check_labels(logits, labels, ignore, "weighted_ce");
  if (stats.classes() != logits.dim(0)) throw ShapeError("weighted_ce: class statistics size mismatch");
  const std::size_t nc = logits.dim(0), plane = logits.dim(1) * logits.dim(2);
  LossResult r{0.0, Tensor(logits.shape())};
  std::size_t n = 0;
  for (std::size_t i = 0; i < plane; ++i) n += detail::ignored(ignore, i) ? 0 : 1;
  if (n == 0) return r;
  const auto p = softmax_channels(logits);
  const auto alpha = stats.alpha();
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < plane; ++i) {
    if (detail::ignored(ignore, i)) continue;
    const auto y = static_cast<std::size_t>(labels[i]);
    double mx = logits[i];
    for (std::size_t c = 1; c < nc; ++c) mx = std::max(mx, logits[c * plane + i]);
    double z = 0;
    for (std::size_t c = 0; c < nc; ++c) z += std::exp(logits[c * plane + i] - mx);
    const double log_py = logits[y * plane + i] - mx - std::log(z);
    r.loss -= alpha[y] * log_py;
    for (std::size_t c = 0; c < nc; ++c)
      r.grad[c * plane + i] = alpha[y] * (p[c * plane + i] - (c == y ? 1.0 : 0.0)) * inv_n;
  }
  r.loss *= inv_n;
  return r;
}

/// Gradient of the Lovasz extension of the Jaccard loss with respect to
/// the sorted errors, given the foreground indicator in sorted order.
inline std::vector<double> lovasz_grad(std::span<const std::uint8_t> fg_sorted) {
  const std::size_t n = fg_sorted.size();
  std::vector<double> g(n);
  double gts = 0;
  for (auto f : fg_sorted) gts += f;
  double cum_fg = 0, cum_bg = 0, prev = 0;
  for (std::size_t k = 0; k < n; ++k) {
    cum_fg += fg_sorted[k];
    cum_bg += 1 - fg_sorted[k];
    const double inter = gts - cum_fg;
    const double uni = gts + cum_bg;
    const double jac = 1.0 - inter / uni;
    g[k] = jac - prev;
    prev = jac;
  }
  return g;
}

/// Lovasz-Softmax on probabilities, averaged over classes present in the
/// unmasked labels. Sort ties are broken by pixel index.
inline LossResult lovasz_softmax(const Tensor& probs, std::span<const int> labels,
                                 std::span<const std::uint8_t> ignore = {}) {
  detail::check_labels(probs, labels, ignore, "lovasz_softmax");
  const std::size_t nc = probs.dim(0), plane = probs.dim(1) * probs.dim(2);
  for (std::size_t i = 0; i < plane; ++i) {
    double s = 0;
    for (std::size_t c = 0; c < nc; ++c) {
      const double v = probs[c * plane + i];
      if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("lovasz_softmax: probability outside [0, 1]");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-6)
      throw ValidationError("lovasz_softmax: probabilities at pixel " + std::to_string(i) + " sum to " +
                            std::to_string(s));
  }
  LossResult r{0.0, Tensor(probs.shape())};
  std::vector<std::size_t> pix;
  for (std::size_t i = 0; i < plane; ++i)
    if (!detail::ignored(ignore, i)) pix.push_back(i);
  std::size_t present = 0;
  std::vector<double> err(pix.size());
  std::vector<std::size_t> order(pix.size());
  std::vector<std::uint8_t> fg(pix.size()), fg_sorted(pix.size());
  for (std::size_t c = 0; c < nc; ++c) {
    std::size_t gts = 0;
    for (std::size_t k = 0; k < pix.size(); ++k) {
      fg[k] = labels[pix[k]] == static_cast<int>(c) ? 1 : 0;
      gts += fg[k];
      err[k] = std::abs(static_cast<double>(fg[k]) - probs[c * plane + pix[k]]);
    }
    if (gts == 0) continue;
    ++present;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return err[a] > err[b]; });
    for (std::size_t k = 0; k < order.size(); ++k) fg_sorted[k] = fg[order[k]];
    const auto g = lovasz_grad(fg_sorted);
    for (std::size_t k = 0; k < order.size(); ++k) {
      const std::size_t src = order[k];
      r.loss += err[src] * g[k];
      r.grad[c * plane + pix[src]] += (fg[src] ? -1.0 : 1.0) * g[k];
    }
  }
  if (present == 0) return r;
  const double inv = 1.0 / static_cast<double>(present);
  r.loss *= inv;
  r.grad *= inv;
  return r;
}

struct TotalLoss {
  double loss = 0.0;
  double wce = 0.0;
  double lovasz = 0.0;
  Tensor grad;  // with respect to logits
};

/// Weighted cross-entropy plus Lovasz-Softmax on the softmax of `logits`.
inline TotalLoss total_loss(const Tensor& logits, std::span<const int> labels, const ClassStats& stats,
                            std::span<const std::uint8_t> ignore = {}) {
  auto ce = weighted_ce(logits, labels, stats, ignore);
  const auto p = softmax_channels(logits);
  auto ls = lovasz_softmax(p, labels, ignore);
  const std::size_t nc = logits.dim(0), plane = logits.dim(1) * logits.dim(2);
  TotalLoss t{ce.loss + ls.loss, ce.loss, ls.loss, std::move(ce.grad)};
  for (std::size_t i = 0; i < plane; ++i) {
    double dot = 0;
    for (std::size_t c = 0; c < nc; ++c) dot += ls.grad[c * plane + i] * p[c * plane + i];
    for (std::size_t c = 0; c < nc; ++c)
      t.grad[c * plane + i] += p[c * plane + i] * (ls.grad[c * plane + i] - dot);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Moving-class IoU.

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// TP / (TP + FP + FN); 1 when there is nothing moving in either input.
inline double iou(const ConfusionCounts& c) {
  const auto denom = c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(denom);
}

/// Adds one prediction/ground-truth pair. Ground-truth points marked
/// unlabeled are skipped.
inline ConfusionCounts& accumulate(ConfusionCounts& counts, std::span<const MosClass> pred,
                                   std::span<const MosClass> gt) {
  if (pred.size() != gt.size())
    throw ShapeError("prediction has " + std::to_string(pred.size()) + " entries, ground truth " +
                     std::to_string(gt.size()));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (gt[i] == MosClass::Unlabeled) continue;
    const bool p = pred[i] == MosClass::Moving;
    const bool g = gt[i] == MosClass::Moving;
    if (p && g) ++counts.tp;
    else if (p) ++counts.fp;
    else if (g) ++counts.fn;
    else ++counts.tn;
  }
  return counts;
}

}  // namespace motionbev
