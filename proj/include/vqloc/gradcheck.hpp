#pragma once

// Central finite-difference checks of every analytic backward pass, in
// double precision. Each suite packs layer parameters and layer inputs into
// one ParameterSet, reads the output out through fixed random weights and
// compares, tensor by tensor, ||analytic - numeric|| / max(||analytic||,
// ||numeric||).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "vqloc/config.hpp"
#include "vqloc/losses.hpp"
#include "vqloc/model.hpp"
#include "vqloc/nn/attention.hpp"
#include "vqloc/nn/layers.hpp"

namespace vqloc {

inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kGradCheckTolerance = 1e-4;
// Below this norm a gradient is indistinguishable from central-difference
// round-off (~1e-10 at step 1e-5); e.g. attention key biases, which softmax
// cancels exactly.
inline constexpr double kGradCheckZeroFloor = 1e-7;

struct GradCheckEntry {
  std::string suite;
  std::uint64_t seed = 0;
  std::string tensor;
  double rel_error = 0.0;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
  int checked = 0;  // elements perturbed
  bool zero_gradient = false;
  bool pass = false;
};

/// Scalar objective; fills `grad` (same layout as the point) when non-null.
using Objective = std::function<double(const ParameterSet<double>& point, ParameterSet<double>* grad)>;

struct GradCheckOptions {
  double step = kGradCheckStep;
  double tolerance = kGradCheckTolerance;
  int max_elements_per_tensor = 0;  // 0 = all; otherwise a seeded sample
};

inline std::vector<GradCheckEntry> check_gradients(const std::string& suite, std::uint64_t seed,
                                                   ParameterSet<double> point, const Objective& f,
                                                   const GradCheckOptions& opt = {}) {
  ParameterSet<double> analytic = point.zeros_like();
  f(point, &analytic);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<GradCheckEntry> out;
  for (int id = 0; id < static_cast<int>(point.size()); ++id) {
    const Eigen::Index n = point[id].size();
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    for (Eigen::Index k = 0; k < n; ++k) idx[static_cast<std::size_t>(k)] = k;
    if (opt.max_elements_per_tensor > 0 && n > opt.max_elements_per_tensor) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(opt.max_elements_per_tensor));
    }
    double diff2 = 0, a2 = 0, n2 = 0;
    for (Eigen::Index k : idx) {
      double& x = point[id].data()[k];
      const double x0 = x;
      x = x0 + opt.step;
      const double fp = f(point, nullptr);
      x = x0 - opt.step;
      const double fm = f(point, nullptr);
      x = x0;
      const double num = (fp - fm) / (2 * opt.step);
      const double ana = analytic[id].data()[k];
      diff2 += (ana - num) * (ana - num);
      a2 += ana * ana;
      n2 += num * num;
    }
    GradCheckEntry e;
    e.suite = suite;
    e.seed = seed;
    e.tensor = point.name(id);
    e.analytic_norm = std::sqrt(a2);
    e.numeric_norm = std::sqrt(n2);
    e.checked = static_cast<int>(idx.size());
    const double scale = std::max(e.analytic_norm, e.numeric_norm);
    e.zero_gradient = scale < kGradCheckZeroFloor;
    e.rel_error = e.zero_gradient ? 0.0 : std::sqrt(diff2) / scale;
    e.pass = e.rel_error < opt.tolerance;
    out.push_back(std::move(e));
  }
  return out;
}

namespace gradcheck_detail {

inline Mat<double> random_mat(int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Mat<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

/// Gives every parameter a random value so no gradient path is trivially
/// zero (biases and layer-norm shifts start at zero otherwise).
inline void randomize(ParameterSet<double>& p, std::mt19937_64& rng, double scale) {
  for (int i = 0; i < static_cast<int>(p.size()); ++i) p[i] += random_mat(p[i].rows(), p[i].cols(), rng, scale);
}

inline double readout(const Mat<double>& y, const Mat<double>& r) { return (y.array() * r.array()).sum(); }

}  // namespace gradcheck_detail

// ---------------------------------------------------------------------------
// Suites

inline std::vector<GradCheckEntry> gradcheck_encoder(std::uint64_t seed) {
  using namespace gradcheck_detail;
  std::mt19937_64 rng(seed);
  ParameterSet<double> p;
  std::vector<nn::Conv2d> stack{nn::Conv2d::create(p, "encoder.0", 3, 4, 4, 4, 0, rng),
                                nn::Conv2d::create(p, "encoder.1", 4, 6, 2, 2, 0, rng),
                                nn::Conv2d::create(p, "encoder.2", 6, 5, 3, 1, 1, rng)};
  const int img = p.add("input.image", 16 * 16, 3);
  randomize(p, rng, 0.3);
  const Mat<double> r = random_mat(2 * 2, 5, rng);
  Objective f = [&](const ParameterSet<double>& x, ParameterSet<double>* g) {
    ConvStackCache<double> c;
    const FeatureMap<double> in{16, 16, x[img]};
    const auto y = conv_stack_forward(stack, x, in, g ? &c : nullptr);
    if (g) (*g)[img] += conv_stack_backward(stack, x, c, r, *g).data;
    return readout(y.data, r);
  };
  return check_gradients("encoder", seed, p, f);
}

inline std::vector<GradCheckEntry> gradcheck_spatial(std::uint64_t seed) {
  using namespace gradcheck_detail;
  std::mt19937_64 rng(seed);
  ParameterSet<double> p;
  const auto block = nn::CrossAttentionBlock::create(p, "spatial.0", {8, 2, 2}, rng);
  const int frame = p.add("input.frame", 6, 8);
  const int query = p.add("input.query", 5, 8);
  randomize(p, rng, 0.3);
  const Mat<double> r = random_mat(6, 8, rng);
  Objective f = [&](const ParameterSet<double>& x, ParameterSet<double>* g) {
    nn::CrossAttentionBlock::Cache<double> c;
    const Mat<double> y = block.forward(x, x[frame], x[query], c);
    if (g) {
      auto d = block.backward(x, c, r, *g);
      (*g)[frame] += d.d_frame;
      (*g)[query] += d.d_query;
    }
    return readout(y, r);
  };
  return check_gradients("spatial_tx", seed, p, f);
}

inline std::vector<GradCheckEntry> gradcheck_temporal(std::uint64_t seed) {
  using namespace gradcheck_detail;
  std::mt19937_64 rng(seed);
  constexpr int T = 4, side = 2, c = 8;
  ParameterSet<double> p;
  std::vector<nn::SelfAttentionBlock> blocks{nn::SelfAttentionBlock::create(p, "temporal.0", {c, 2, 2}, rng),
                                             nn::SelfAttentionBlock::create(p, "temporal.1", {c, 2, 2}, rng)};
  const int pos = p.add("positional", T * side * side, c);
  std::vector<int> frames;
  for (int t = 0; t < T; ++t) frames.push_back(p.add("input.frame" + std::to_string(t), side * side, c));
  randomize(p, rng, 0.3);
  const auto mask = nn::AttentionMask::temporal_window(T, side * side, 1);
  const Mat<double> r = random_mat(T * side * side, c, rng);
  Objective f = [&](const ParameterSet<double>& x, ParameterSet<double>* g) {
    std::vector<FeatureMap<double>> fd;
    for (int id : frames) fd.push_back({side, side, x[id]});
    Mat<double> tok = nn::add_positional_and_flatten(fd, x[pos]);
    std::vector<nn::SelfAttentionBlock::Cache<double>> cache(blocks.size());
    for (std::size_t l = 0; l < blocks.size(); ++l) tok = blocks[l].forward(x, tok, &mask, cache[l]);
    if (g) {
      Mat<double> d = r;
      for (std::size_t l = blocks.size(); l-- > 0;) d = blocks[l].backward(x, &mask, cache[l], d, *g);
      (*g)[pos] += d;
      for (int t = 0; t < T; ++t) (*g)[frames[static_cast<std::size_t>(t)]] += d.middleRows(t * side * side, side * side);
    }
    return readout(tok, r);
  };
  return check_gradients("spatiotemporal_tx", seed, p, f);
}

inline std::vector<GradCheckEntry> gradcheck_downsample(std::uint64_t seed) {
  using namespace gradcheck_detail;
  std::mt19937_64 rng(seed);
  ParameterSet<double> p;
  std::vector<nn::Conv2d> stack{nn::Conv2d::create(p, "downsample.0", 4, 6, 3, 2, 1, rng),
                                nn::Conv2d::create(p, "downsample.1", 6, 5, 3, 2, 1, rng)};
  const int in = p.add("input.features", 8 * 8, 4);
  randomize(p, rng, 0.3);
  const Mat<double> r = random_mat(2 * 2, 5, rng);
  Objective f = [&](const ParameterSet<double>& x, ParameterSet<double>* g) {
    ConvStackCache<double> c;
    const auto y = conv_stack_forward(stack, x, FeatureMap<double>{8, 8, x[in]}, g ? &c : nullptr);
    if (g) (*g)[in] += conv_stack_backward(stack, x, c, r, *g).data;
    return readout(y.data, r);
  };
  return check_gradients("downsample", seed, p, f);
}

/// `probabilities` applies the sigmoid of the probability head.
inline std::vector<GradCheckEntry> gradcheck_head(std::uint64_t seed, bool probabilities) {
  using namespace gradcheck_detail;
  std::mt19937_64 rng(seed);
  const std::string name = probabilities ? "prob_head" : "reg_head";
  const int outputs = probabilities ? 6 : 24;
  ParameterSet<double> p;
  std::vector<nn::Conv2d> stack;
  for (int b = 0; b < 3; ++b)
    stack.push_back(nn::Conv2d::create(p, name + "." + std::to_string(b), b == 0 ? 5 : 7, b == 2 ? outputs : 7, 3, 1, 1, rng));
  const int in = p.add("input.v_star", 4 * 4, 5);
  randomize(p, rng, 0.3);
  const Mat<double> r = random_mat(16, outputs, rng);
  Objective f = [&](const ParameterSet<double>& x, ParameterSet<double>* g) {
    ConvStackCache<double> c;
    const auto y = conv_stack_forward(stack, x, FeatureMap<double>{4, 4, x[in]}, g ? &c : nullptr);
    Mat<double> out = y.data;
    if (probabilities) out = out.unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); });
    if (g) {
      Mat<double> d = r;
      if (probabilities) d = (r.array() * out.array() * (1.0 - out.array())).matrix();
      (*g)[in] += conv_stack_backward(stack, x, c, d, *g).data;
    }
    return readout(out, r);
  };
  return check_gradients(name, seed, p, f);
}

/// total_loss as a function of head outputs (probabilities and deltas) on a
/// small anchor grid with an own pair and a cross pair.
inline std::vector<GradCheckEntry> gradcheck_losses(std::uint64_t seed, ProbLossMode mode) {
  using namespace gradcheck_detail;
  std::mt19937_64 rng(seed);
  AnchorConfig ac;
  ac.base_sizes = {8, 14};
  ac.aspect_ratios = {0.5, 1.0, 2.0};
  ac.feature_h = ac.feature_w = 4;
  ac.stride = 8;
  const AnchorGrid grid = build_grid(ac);
  const int n = grid.size();
  constexpr int T = 3;
  LossConfig cfg;
  cfg.mode = mode;
  cfg.focal_gamma = 2.0;
  cfg.focal_alpha = 0.25;
  std::uniform_real_distribution<double> u(0.05, 0.95), pos(8, 24), sz(8, 14);
  ParameterSet<double> p;
  std::vector<int> prob_ids, delta_ids;
  for (int pair = 0; pair < 2; ++pair) {
    for (int t = 0; t < T; ++t) {
      const std::string tag = "pair" + std::to_string(pair) + ".frame" + std::to_string(t);
      prob_ids.push_back(p.add(tag + ".probs", n, 1));
      delta_ids.push_back(p.add(tag + ".deltas", n, 4));
    }
  }
  for (int id : prob_ids)
    for (int a = 0; a < n; ++a) p[id](a, 0) = u(rng);
  for (int id : delta_ids) p[id] = random_mat(n, 4, rng, 1.5);
  std::vector<std::optional<BoundingBox>> gt{BoundingBox{pos(rng), pos(rng), sz(rng), sz(rng)}, std::nullopt,
                                             BoundingBox{pos(rng), pos(rng), sz(rng), sz(rng)}};
  const char* tag = mode == ProbLossMode::kBceHnm ? "losses.bce_hnm" : mode == ProbLossMode::kBce ? "losses.bce" : "losses.focal";
  Objective f = [&, gt](const ParameterSet<double>& x, ParameterSet<double>* g) {
    std::vector<std::vector<FramePredictionRaw<double>>> preds(2);
    for (int pair = 0; pair < 2; ++pair)
      for (int t = 0; t < T; ++t) {
        const auto k = static_cast<std::size_t>(pair * T + t);
        preds[pair].push_back({x[prob_ids[k]].col(0), x[delta_ids[k]]});
      }
    std::vector<PairPredictions<double>> pairs(2);
    pairs[0] = {0, 0, &preds[0], std::vector<bool>(T, true), gt};
    pairs[1] = {0, 1, &preds[1], std::vector<bool>(T, true), {}};
    LossGrads<double> lg;
    const LossReport rep = total_loss(grid, pairs, cfg, 32.0, g ? &lg : nullptr);
    if (g) {
      for (int pair = 0; pair < 2; ++pair)
        for (int t = 0; t < T; ++t) {
          const auto k = static_cast<std::size_t>(pair * T + t);
          (*g)[prob_ids[k]].col(0) += lg.d_probs[pair][t];
          (*g)[delta_ids[k]] += lg.d_deltas[pair][t];
        }
    }
    return rep.total;
  };
  return check_gradients(tag, seed, p, f);
}

/// Tiny end-to-end network: encoder, query fusion, downsample, positional
/// table, windowed temporal blocks and both heads, read out through the
/// training loss. Parameter tensors are subsampled.
inline std::vector<GradCheckEntry> gradcheck_model(std::uint64_t seed, QueryFusion fusion) {
  using namespace gradcheck_detail;
  ModelConfig mc;
  mc.input_side = 16;
  mc.clip_len = 3;
  mc.encoder = {{4, 4, 8}};
  mc.fusion = fusion;
  mc.spatial_layers = 1;
  mc.spatial_heads = 2;
  mc.downsample = {{3, 2, 8}};
  mc.temporal_layers = 2;
  mc.temporal_heads = 2;
  mc.window_half_width = 1;
  mc.ffn_expansion = 2;
  mc.head_width = 6;
  mc.head_blocks = 2;
  mc.zero_init_head_outputs = false;
  mc.anchor_base_sizes = {6, 10};
  mc.anchor_aspect_ratios = {0.5, 2.0};
  Model<double> model = Model<double>::create(mc, seed);
  std::mt19937_64 rng(seed + 17);
  randomize(model.params, rng, 0.1);
  std::vector<FeatureMap<double>> clip;
  for (int t = 0; t < mc.clip_len; ++t) clip.push_back({16, 16, random_mat(256, 3, rng)});
  const FeatureMap<double> query{16, 16, random_mat(256, 3, rng)};
  std::vector<std::optional<BoundingBox>> gt{BoundingBox{7, 8, 6, 5}, std::nullopt, BoundingBox{9, 7, 7, 6}};
  const LossConfig lc;
  Objective f = [&](const ParameterSet<double>& x, ParameterSet<double>* g) {
    std::vector<ConvStackCache<double>> enc(clip.size());
    std::vector<FeatureMap<double>> feats;
    for (std::size_t t = 0; t < clip.size(); ++t) feats.push_back(encode(model.net, x, clip[t], &enc[t]));
    ConvStackCache<double> qenc;
    const auto q = encode(model.net, x, query, &qenc);
    CorrespondenceCache<double> cc;
    const auto preds = correspond_forward(model.net, x, feats, q, cc);
    std::vector<PairPredictions<double>> pairs{{0, 0, &preds, std::vector<bool>(clip.size(), true), gt}};
    LossGrads<double> lg;
    const LossReport rep = total_loss(model.grid, pairs, lc, mc.input_side, g ? &lg : nullptr);
    if (g) {
      auto d = correspond_backward(model.net, x, cc, lg.d_probs[0], lg.d_deltas[0], *g);
      for (std::size_t t = 0; t < clip.size(); ++t) conv_stack_backward(model.net.encoder, x, enc[t], d.d_frames[t].data, *g);
      conv_stack_backward(model.net.encoder, x, qenc, d.d_query.data, *g);
    }
    return rep.total;
  };
  GradCheckOptions opt;
  opt.max_elements_per_tensor = 24;
  return check_gradients(fusion == QueryFusion::kConvolution ? "model.conv_fusion" : "model", seed, model.params, f, opt);
}

/// Every suite for each of `seeds`.
inline std::vector<GradCheckEntry> run_gradcheck(const std::vector<std::uint64_t>& seeds) {
  std::vector<GradCheckEntry> all;
  auto add = [&](std::vector<GradCheckEntry> v) { all.insert(all.end(), v.begin(), v.end()); };
  for (std::uint64_t s : seeds) {
    add(gradcheck_encoder(s));
    add(gradcheck_spatial(s));
    add(gradcheck_downsample(s));
    add(gradcheck_temporal(s));
    add(gradcheck_head(s, true));
    add(gradcheck_head(s, false));
    add(gradcheck_losses(s, ProbLossMode::kBceHnm));
    add(gradcheck_losses(s, ProbLossMode::kBce));
    add(gradcheck_losses(s, ProbLossMode::kFocal));
    add(gradcheck_model(s, QueryFusion::kCrossAttention));
    add(gradcheck_model(s, QueryFusion::kConvolution));
  }
  return all;
}

}  // namespace vqloc
