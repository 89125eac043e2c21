#pragma once

// Training objective: L = L_bbox + lambda_p * L_prob.
//
// L_bbox averages (or sums) L_reg over positive anchors, where L_reg is the
// L1 distance of center, height and width in input-normalized coordinates
// plus lambda_giou * (1 - GIoU). L_prob is BCE over positives and mined hard
// negatives (default), BCE over every anchor, or focal loss over every anchor.
// Loss-side arithmetic is double precision regardless of the network scalar.

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <optional>
#include <span>
#include <vector>

#include "vqloc/anchors.hpp"
#include "vqloc/geometry.hpp"
#include "vqloc/model.hpp"

namespace vqloc {

enum class ProbLossMode { kBceHnm, kBce, kFocal };
enum class BoxReduction { kMean, kSum };

struct LossConfig {
  double lambda_p = 1.0;
  double lambda_giou = 0.3;
  double theta = 0.2;
  int negatives_per_positive = 3;
  ProbLossMode mode = ProbLossMode::kBceHnm;
  int fallback_negatives = 16;  // K when a batch has no positives
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  BoxReduction bbox_reduction = BoxReduction::kMean;

  void validate() const {
    if (lambda_p < 0 || lambda_giou < 0) throw ConfigError("loss: weights must be non-negative");
    if (!(theta > 0 && theta < 1)) throw ConfigError("loss: theta must lie in (0, 1)");
    if (negatives_per_positive < 1) throw ConfigError("loss: negatives_per_positive must be >= 1");
    if (fallback_negatives < 1) throw ConfigError("loss: fallback_negatives must be >= 1");
    if (focal_gamma < 0 || focal_alpha < 0) throw ConfigError("loss: focal parameters must be non-negative");
  }
};

inline constexpr double kProbClamp = 1e-7;

// ---------------------------------------------------------------------------
// Box regression

struct RegLoss {
  double value = 0.0;
  std::array<double, 4> grad{};  // d / d(cx, cy, w, h) of the unclamped prediction
};

/// L1 terms use the raw refined box; the GIoU term uses its clamped form.
inline RegLoss l_reg(const BoundingBox& pred, const BoundingBox& gt, double lambda_giou, double image_side) {
  if (is_degenerate(gt)) throw DomainError("l_reg: degenerate ground-truth box " + describe(gt));
  if (!(image_side > 0)) throw ConfigError("l_reg: image side must be positive");
  RegLoss out;
  const std::array<double, 4> p{pred.cx, pred.cy, pred.w, pred.h};
  const std::array<double, 4> g{gt.cx, gt.cy, gt.w, gt.h};
  for (int i = 0; i < 4; ++i) {
    const double diff = (p[i] - g[i]) / image_side;
    out.value += std::abs(diff);
    out.grad[i] = (diff > 0 ? 1.0 : diff < 0 ? -1.0 : 0.0) / image_side;
  }
  const BoundingBox clamped = clamp_degenerate(pred);
  const GiouWithGrad gg = giou_with_grad(clamped, gt);
  out.value += lambda_giou * (1.0 - gg.value);
  out.grad[0] -= lambda_giou * gg.d_pred[0];
  out.grad[1] -= lambda_giou * gg.d_pred[1];
  if (pred.w >= kMinBoxSide) out.grad[2] -= lambda_giou * gg.d_pred[2];
  if (pred.h >= kMinBoxSide) out.grad[3] -= lambda_giou * gg.d_pred[3];
  return out;
}

// ---------------------------------------------------------------------------
// Occurrence probability

inline double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

inline double bce(double p, bool positive) {
  const double q = clamp_prob(p);
  return positive ? -std::log(q) : -std::log(1.0 - q);
}

inline double bce_grad(double p, bool positive) {
  if (p < kProbClamp || p > 1.0 - kProbClamp) return 0.0;
  return positive ? -1.0 / p : 1.0 / (1.0 - p);
}

/// Focal modulation of BCE: w * (1 - p_t)^gamma * BCE, with w = alpha on
/// positives and 1 on negatives, so gamma = 0, alpha = 1 is plain BCE.
inline double focal(double p, bool positive, double gamma, double alpha) {
  const double q = clamp_prob(p);
  const double pt = positive ? q : 1.0 - q;
  const double w = positive ? alpha : 1.0;
  return w * std::pow(1.0 - pt, gamma) * bce(p, positive);
}

inline double focal_grad(double p, bool positive, double gamma, double alpha) {
  if (p < kProbClamp || p > 1.0 - kProbClamp) return 0.0;
  const double w = positive ? alpha : 1.0;
  const double pt = positive ? p : 1.0 - p;
  const double dpt_dp = positive ? 1.0 : -1.0;
  // d/dpt [-(1-pt)^g log pt] = g (1-pt)^(g-1) log pt - (1-pt)^g / pt
  double d = -std::pow(1.0 - pt, gamma) / pt;
  if (gamma != 0.0) d += gamma * std::pow(1.0 - pt, gamma - 1.0) * std::log(pt);
  return w * d * dpt_dp;
}

inline void check_selection(std::span<const double> probs, const std::vector<bool>& labels,
                            std::span<const std::size_t> selected) {
  if (selected.empty()) throw ConfigError("probability loss: empty selection");
  if (probs.size() != labels.size()) throw ConfigError("probability loss: probs and labels differ in length");
  for (std::size_t i : selected)
    if (i >= probs.size()) throw ConfigError("probability loss: selection index out of range");
}

inline double l_prob_bce(std::span<const double> probs, const std::vector<bool>& labels,
                         std::span<const std::size_t> selected) {
  check_selection(probs, labels, selected);
  double sum = 0.0;
  for (std::size_t i : selected) sum += bce(probs[i], labels[i]);
  return sum / static_cast<double>(selected.size());
}

inline double l_prob_focal(std::span<const double> probs, const std::vector<bool>& labels,
                           std::span<const std::size_t> selected, double gamma, double alpha) {
  check_selection(probs, labels, selected);
  double sum = 0.0;
  for (std::size_t i : selected) sum += focal(probs[i], labels[i], gamma, alpha);
  return sum / static_cast<double>(selected.size());
}

// ---------------------------------------------------------------------------
// Hard negative mining

/// Identifies one anchor of one (query video, clip video) pairing.
struct AnchorKey {
  int query_video = 0;
  int clip_video = 0;
  int frame = 0;
  int anchor = 0;

  auto operator<=>(const AnchorKey&) const = default;
};

struct NegativeCandidate {
  AnchorKey key;
  double prob = 0.0;
};

/// Number of negatives to keep for `positives` positives.
inline std::size_t hard_negative_count(std::size_t positives, const LossConfig& cfg) {
  return positives > 0 ? positives * static_cast<std::size_t>(cfg.negatives_per_positive)
                       : static_cast<std::size_t>(cfg.fallback_negatives);
}

/// Indices into `pool` of the k candidates with the largest BCE loss, i.e.
/// the highest probability; ties go to the smaller key. Result is sorted by
/// that same order.
inline std::vector<std::size_t> mine_hard_negatives(const std::vector<NegativeCandidate>& pool, std::size_t k) {
  std::vector<std::size_t> idx(pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  k = std::min(k, idx.size());
  auto harder = [&](std::size_t a, std::size_t b) {
    if (pool[a].prob != pool[b].prob) return pool[a].prob > pool[b].prob;
    return pool[a].key < pool[b].key;
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), harder);
  idx.resize(k);
  return idx;
}

// ---------------------------------------------------------------------------
// Batch objective

/// Model outputs for one clip evaluated against one query. Own pairs
/// (query_video == clip_video) carry per-frame ground truth; cross pairs
/// contribute negatives only.
template <class S>
struct PairPredictions {
  int query_video = 0;
  int clip_video = 0;
  const std::vector<FramePredictionRaw<S>>* frames = nullptr;
  std::vector<bool> valid;                        // per frame; padding is false
  std::vector<std::optional<BoundingBox>> gt;     // per frame

  bool own() const { return query_video == clip_video; }
};

struct LossReport {
  double l_bbox = 0.0;
  double l_prob = 0.0;
  double total = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg_sampled = 0;
};

template <class S>
struct LossGrads {
  std::vector<std::vector<Eigen::Matrix<S, Eigen::Dynamic, 1>>> d_probs;  // [pair][frame]
  std::vector<std::vector<Mat<S>>> d_deltas;                            // [pair][frame]
};

template <class S>
LossReport total_loss(const AnchorGrid& grid, const std::vector<PairPredictions<S>>& pairs, const LossConfig& cfg,
                      double image_side, LossGrads<S>* grads = nullptr) {
  cfg.validate();
  const int n_anchor = grid.size();
  if (grads) {
    grads->d_probs.assign(pairs.size(), {});
    grads->d_deltas.assign(pairs.size(), {});
  }

  struct Entry {
    AnchorKey key;
    std::size_t pair;
    double prob;
    bool positive;
  };
  std::vector<Entry> positives;
  std::vector<Entry> own_all;  // every anchor of own pairs (plain BCE / focal)
  std::vector<NegativeCandidate> pool;
  std::vector<std::size_t> pool_pair;
  struct PosBox {
    std::size_t pair;
    int frame;
    int anchor;
    BoundingBox gt;
  };
  std::vector<PosBox> pos_boxes;

  for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
    const auto& pr = pairs[pi];
    if (!pr.frames) throw ConfigError("loss: pair without predictions");
    const auto& frames = *pr.frames;
    if (pr.valid.size() != frames.size()) throw ConfigError("loss: validity mask length mismatch");
    if (pr.own() && pr.gt.size() != frames.size()) throw ConfigError("loss: ground-truth length mismatch");
    if (grads) {
      grads->d_probs[pi].resize(frames.size());
      grads->d_deltas[pi].resize(frames.size());
      for (std::size_t t = 0; t < frames.size(); ++t) {
        grads->d_probs[pi][t] = Eigen::Matrix<S, Eigen::Dynamic, 1>::Zero(n_anchor);
        grads->d_deltas[pi][t] = Mat<S>::Zero(n_anchor, 4);
      }
    }
    for (std::size_t t = 0; t < frames.size(); ++t) {
      if (!pr.valid[t]) continue;
      const auto& f = frames[t];
      if (f.probs.size() != n_anchor || f.deltas.rows() != n_anchor)
        throw ConfigError("loss: prediction does not match anchor grid");
      std::optional<BoundingBox> gt = pr.own() ? pr.gt[t] : std::nullopt;
      const AnchorLabels labels = assign_labels(grid, gt, cfg.theta);
      for (int a = 0; a < n_anchor; ++a) {
        const AnchorKey key{pr.query_video, pr.clip_video, static_cast<int>(t), a};
        const double p = static_cast<double>(f.probs(a));
        const bool pos = labels.positive_mask[a];
        if (pr.own()) own_all.push_back({key, pi, p, pos});
        if (pos) {
          positives.push_back({key, pi, p, true});
          pos_boxes.push_back({pi, static_cast<int>(t), a, *gt});
        } else {
          pool.push_back({key, p});
          pool_pair.push_back(pi);
        }
      }
    }
  }

  LossReport rep;
  rep.n_pos = positives.size();

  // Box term.
  const double bbox_norm =
      cfg.bbox_reduction == BoxReduction::kMean && !pos_boxes.empty() ? 1.0 / static_cast<double>(pos_boxes.size()) : 1.0;
  for (const auto& pb : pos_boxes) {
    const auto& f = (*pairs[pb.pair].frames)[static_cast<std::size_t>(pb.frame)];
    const BoundingBox pred = refine_unclamped(grid.anchors[pb.anchor], f.deltas, pb.anchor);
    const RegLoss r = l_reg(pred, pb.gt, cfg.lambda_giou, image_side);
    rep.l_bbox += r.value * bbox_norm;
    if (grads) {
      auto& d = grads->d_deltas[pb.pair][static_cast<std::size_t>(pb.frame)];
      for (int k = 0; k < 4; ++k) d(pb.anchor, k) += static_cast<S>(r.grad[k] * bbox_norm);
    }
  }

  // Probability term.
  std::vector<Entry> selection;
  if (cfg.mode == ProbLossMode::kBceHnm) {
    selection = positives;
    const auto picked = mine_hard_negatives(pool, hard_negative_count(positives.size(), cfg));
    for (std::size_t i : picked) selection.push_back({pool[i].key, pool_pair[i], pool[i].prob, false});
  } else {
    selection = own_all;
  }
  if (selection.empty()) throw ConfigError("loss: no anchors available for the probability term");
  for (const auto& e : selection)
    if (!e.positive) ++rep.n_neg_sampled;

  const double inv = 1.0 / static_cast<double>(selection.size());
  double sum = 0.0;
  for (const auto& e : selection) {
    const bool use_focal = cfg.mode == ProbLossMode::kFocal;
    sum += use_focal ? focal(e.prob, e.positive, cfg.focal_gamma, cfg.focal_alpha) : bce(e.prob, e.positive);
    if (grads) {
      const double g = use_focal ? focal_grad(e.prob, e.positive, cfg.focal_gamma, cfg.focal_alpha)
                                 : bce_grad(e.prob, e.positive);
      grads->d_probs[e.pair][static_cast<std::size_t>(e.key.frame)](e.key.anchor) +=
          static_cast<S>(cfg.lambda_p * g * inv);
    }
  }
  rep.l_prob = sum * inv;
  rep.total = rep.l_bbox + cfg.lambda_p * rep.l_prob;
  return rep;
}

}  // namespace vqloc
