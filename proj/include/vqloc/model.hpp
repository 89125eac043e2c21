#pragma once

// End-to-end correspondence network:
//
//   images --encoder--> v (H x W x C per frame), q (H x W x C)
//   per frame: f_i = cross-attention blocks(v_i, q)
//   downsample f -> f_d (h x w x c), add positional table, flatten clip
//   windowed self-attention blocks over the T*h*w tokens -> v*
//   per frame: ProbHead(v*_i) -> n probabilities per cell,
//              RegHead(v*_i)  -> 4n additive box offsets per cell
//
// Layers are described once (Network) and evaluated for any scalar type
// against a ParameterSet of that type.

#include <optional>
#include <string>
#include <vector>

#include "vqloc/anchors.hpp"
#include "vqloc/nn/attention.hpp"
#include "vqloc/nn/layers.hpp"

namespace vqloc {

struct ConvStage {
  int kernel = 3;
  int stride = 1;
  int out = 64;

  bool operator==(const ConvStage&) const = default;
};

enum class QueryFusion { kCrossAttention, kConvolution };

struct ModelConfig {
  int input_side = 448;
  int clip_len = 30;
  std::vector<ConvStage> encoder{{14, 14, 256}};
  QueryFusion fusion = QueryFusion::kCrossAttention;
  int spatial_layers = 1;
  int spatial_heads = 8;
  std::vector<ConvStage> downsample{{3, 2, 256}, {3, 2, 256}};
  int temporal_layers = 3;
  int temporal_heads = 8;
  int window_half_width = 2;  // < 0: global attention
  int ffn_expansion = 4;
  int head_width = 256;
  int head_blocks = 3;
  double regression_scale = 1.0;  // pixels per regression-head unit
  bool zero_init_head_outputs = true;
  std::vector<double> anchor_base_sizes{16, 32, 64, 128};
  std::vector<double> anchor_aspect_ratios{0.5, 1.0, 2.0};

  int feature_side() const {
    int s = input_side;
    for (const auto& st : encoder) s /= st.stride;
    return s;
  }
  int channels() const { return encoder.empty() ? 3 : encoder.back().out; }
  int reduced_side() const {
    int s = feature_side();
    for (const auto& st : downsample) s /= st.stride;
    return s;
  }
  int reduced_channels() const { return downsample.empty() ? channels() : downsample.back().out; }
  int window_length() const { return window_half_width < 0 ? -1 : 2 * window_half_width + 1; }

  AnchorConfig anchor_config() const {
    AnchorConfig a;
    a.base_sizes = anchor_base_sizes;
    a.aspect_ratios = anchor_aspect_ratios;
    a.feature_h = reduced_side();
    a.feature_w = reduced_side();
    a.stride = static_cast<double>(input_side) / reduced_side();
    return a;
  }

  int anchors_per_cell() const { return static_cast<int>(anchor_base_sizes.size() * anchor_aspect_ratios.size()); }

  void validate() const {
    if (input_side < 1 || clip_len < 1) throw ConfigError("model: input_side and clip_len must be positive");
    if (encoder.empty()) throw ConfigError("model: encoder needs at least one stage");
    int s = input_side;
    for (const auto& st : encoder) {
      if (st.stride < 1 || st.kernel < 1 || st.out < 1) throw ConfigError("model: invalid encoder stage");
      if (s % st.stride != 0)
        throw ConfigError("model: input side " + std::to_string(input_side) + " not divisible by encoder stride");
      s /= st.stride;
    }
    for (const auto& st : downsample) {
      if (st.stride < 1 || st.kernel < 1 || st.out < 1) throw ConfigError("model: invalid downsample stage");
      if (s % st.stride != 0)
        throw ConfigError("model: feature side " + std::to_string(feature_side()) +
                          " not divisible by downsample stride product");
      s /= st.stride;
    }
    if (channels() % spatial_heads != 0) throw ConfigError("model: spatial heads must divide channel width");
    if (reduced_channels() % temporal_heads != 0) throw ConfigError("model: temporal heads must divide reduced width");
    if (spatial_layers < 0 || temporal_layers < 0 || head_blocks < 1 || head_width < 1 || ffn_expansion < 1)
      throw ConfigError("model: invalid layer counts");
    anchor_config().validate();
  }
};

/// h x w x n probabilities and h x w x n x 4 offsets for one frame; rows of
/// `deltas` follow anchor order.
template <class S>
struct FramePredictionRaw {
  Eigen::Matrix<S, Eigen::Dynamic, 1> probs;
  Mat<S> deltas;
};

/// Learnable T x h x w x c table, zero at initialization.
struct PositionalEmbedding3D {
  int values = -1;
  int frames = 0, height = 0, width = 0, channels = 0;
};

/// Layer layout of the whole network.
struct Network {
  ModelConfig config;
  std::vector<nn::Conv2d> encoder;
  std::vector<nn::CrossAttentionBlock> spatial;
  // Convolutional query fusion (ablation variant).
  nn::Conv2d fusion_query, fusion_mix, fusion_out;
  std::vector<nn::Conv2d> downsample;
  PositionalEmbedding3D positional;
  std::vector<nn::SelfAttentionBlock> temporal;
  std::vector<nn::Conv2d> prob_head;
  std::vector<nn::Conv2d> reg_head;
  nn::AttentionMask temporal_mask;

  int anchors_per_cell() const { return config.anchors_per_cell(); }
};

template <class S>
Network build_network(const ModelConfig& cfg, ParameterSet<S>& ps, std::uint64_t seed) {
  cfg.validate();
  nn::Rng rng(seed);
  Network net;
  net.config = cfg;
  int ch = 3;
  for (std::size_t i = 0; i < cfg.encoder.size(); ++i) {
    const auto& st = cfg.encoder[i];
    const int pad = st.kernel == st.stride ? 0 : (st.kernel - 1) / 2;
    net.encoder.push_back(
        nn::Conv2d::create(ps, "encoder." + std::to_string(i), ch, st.out, st.kernel, st.stride, pad, rng));
    ch = st.out;
  }
  const int c_big = cfg.channels();
  if (cfg.fusion == QueryFusion::kCrossAttention) {
    nn::BlockConfig bc{c_big, cfg.spatial_heads, cfg.ffn_expansion};
    for (int l = 0; l < cfg.spatial_layers; ++l)
      net.spatial.push_back(nn::CrossAttentionBlock::create(ps, "spatial." + std::to_string(l), bc, rng));
  } else {
    net.fusion_query = nn::Conv2d::create(ps, "fusion.query", c_big, c_big, 1, 1, 0, rng);
    net.fusion_mix = nn::Conv2d::create(ps, "fusion.mix", 2 * c_big, c_big, 1, 1, 0, rng);
    net.fusion_out = nn::Conv2d::create(ps, "fusion.out", c_big, c_big, 1, 1, 0, rng);
  }
  ch = c_big;
  for (std::size_t i = 0; i < cfg.downsample.size(); ++i) {
    const auto& st = cfg.downsample[i];
    net.downsample.push_back(nn::Conv2d::create(ps, "downsample." + std::to_string(i), ch, st.out, st.kernel,
                                                st.stride, (st.kernel - 1) / 2, rng));
    ch = st.out;
  }
  const int side = cfg.reduced_side();
  const int c = cfg.reduced_channels();
  net.positional = {ps.add("positional", cfg.clip_len * side * side, c), cfg.clip_len, side, side, c};
  nn::BlockConfig tc{c, cfg.temporal_heads, cfg.ffn_expansion};
  for (int l = 0; l < cfg.temporal_layers; ++l)
    net.temporal.push_back(nn::SelfAttentionBlock::create(ps, "temporal." + std::to_string(l), tc, rng));
  net.temporal_mask = nn::AttentionMask::temporal_window(cfg.clip_len, side * side, cfg.window_half_width);

  const int n = cfg.anchors_per_cell();
  auto make_head = [&](const std::string& name, int outputs) {
    std::vector<nn::Conv2d> head;
    int in = c;
    for (int b = 0; b < cfg.head_blocks; ++b) {
      const bool last = b + 1 == cfg.head_blocks;
      head.push_back(nn::Conv2d::create(ps, name + "." + std::to_string(b), in, last ? outputs : cfg.head_width, 3,
                                        1, 1, rng));
      in = cfg.head_width;
    }
    if (cfg.zero_init_head_outputs) ps[head.back().weight].setZero();
    return head;
  };
  net.prob_head = make_head("prob_head", n);
  net.reg_head = make_head("reg_head", 4 * n);
  return net;
}

// ---------------------------------------------------------------------------
// Encoder

template <class S>
struct ConvStackCache {
  std::vector<FeatureMap<S>> inputs;  // extents of each stage input (data kept only for shape)
  std::vector<Mat<S>> cols;
  std::vector<Mat<S>> pre;  // pre-activation outputs of all but the last stage
};

/// Conv stages with GELU between them and none after the last.
template <class S>
FeatureMap<S> conv_stack_forward(const std::vector<nn::Conv2d>& stack, const ParameterSet<S>& p,
                                 const FeatureMap<S>& x, ConvStackCache<S>* cache) {
  FeatureMap<S> cur = x;
  if (cache) {
    cache->inputs.clear();
    cache->cols.assign(stack.size(), Mat<S>());
    cache->pre.assign(stack.size(), Mat<S>());
  }
  for (std::size_t i = 0; i < stack.size(); ++i) {
    if (cache) cache->inputs.push_back({cur.height, cur.width, Mat<S>()});
    FeatureMap<S> y = stack[i].forward(p, cur, cache ? &cache->cols[i] : nullptr);
    if (i + 1 < stack.size()) {
      if (cache) cache->pre[i] = y.data;
      y.data = nn::Gelu::forward(y.data);
    }
    cur = std::move(y);
  }
  return cur;
}

template <class S>
FeatureMap<S> conv_stack_backward(const std::vector<nn::Conv2d>& stack, const ParameterSet<S>& p,
                                  const ConvStackCache<S>& cache, const Mat<S>& dy, ParameterSet<S>& g) {
  Mat<S> grad = dy;
  FeatureMap<S> dx;
  for (std::size_t k = stack.size(); k-- > 0;) {
    if (k + 1 < stack.size()) grad = nn::Gelu::backward(cache.pre[k], grad);
    dx = stack[k].backward(p, cache.cols[k], cache.inputs[k].height, cache.inputs[k].width, grad, g);
    grad = dx.data;
  }
  return dx;
}

/// Maps an input-side x input-side x 3 image (already normalized) to H x W x C.
template <class S>
FeatureMap<S> encode(const Network& net, const ParameterSet<S>& p, const FeatureMap<S>& image,
                     ConvStackCache<S>* cache) {
  if (image.height != net.config.input_side || image.width != net.config.input_side || image.channels() != 3)
    throw ConfigError("encoder: expected " + std::to_string(net.config.input_side) + "x" +
                      std::to_string(net.config.input_side) + "x3 input, got " + std::to_string(image.height) + "x" +
                      std::to_string(image.width) + "x" + std::to_string(image.channels()));
  return conv_stack_forward(net.encoder, p, image, cache);
}

// ---------------------------------------------------------------------------
// Correspondence + heads

template <class S>
struct FusionCache {
  Mat<S> q_col, q_pre;
  Mat<S> mix_col, mix_pre, out_col;
};

template <class S>
struct CorrespondenceCache {
  int frames = 0;
  std::vector<std::vector<typename nn::CrossAttentionBlock::template Cache<S>>> spatial;  // [frame][layer]
  Mat<S> fusion_query_vec;                                                               // 1 x C
  FusionCache<S> fusion_query;
  std::vector<FusionCache<S>> fusion;                                                    // [frame]
  std::vector<ConvStackCache<S>> down;                                                   // [frame]
  std::vector<typename nn::SelfAttentionBlock::template Cache<S>> temporal;              // [layer]
  std::vector<ConvStackCache<S>> prob_head, reg_head;                                    // [frame]
  std::vector<FramePredictionRaw<S>> outputs;
};

namespace detail {

template <class S>
Mat<S> fused_frame_forward(const Network& net, const ParameterSet<S>& p, const FeatureMap<S>& frame,
                           const Mat<S>& query_vec, FusionCache<S>& c) {
  const int hw = frame.pixels();
  const int ch = frame.channels();
  FeatureMap<S> cat{frame.height, frame.width, Mat<S>(hw, 2 * ch)};
  cat.data.leftCols(ch) = frame.data;
  cat.data.rightCols(ch) = query_vec.replicate(hw, 1);
  FeatureMap<S> mixed = net.fusion_mix.forward(p, cat, &c.mix_col);
  c.mix_pre = mixed.data;
  mixed.data = nn::Gelu::forward(mixed.data);
  FeatureMap<S> out = net.fusion_out.forward(p, mixed, &c.out_col);
  out.data += frame.data;
  return out.data;
}

}  // namespace detail

/// Runs everything after the encoder for one (clip, query) pair.
/// `valid_frames` may be shorter than clip_len only through padding, which
/// the caller has already applied; the forward pass always sees clip_len maps.
template <class S>
std::vector<FramePredictionRaw<S>> correspond_forward(const Network& net, const ParameterSet<S>& p,
                                                      const std::vector<FeatureMap<S>>& frames,
                                                      const FeatureMap<S>& query, CorrespondenceCache<S>& c) {
  const ModelConfig& cfg = net.config;
  const int T = cfg.clip_len;
  if (static_cast<int>(frames.size()) != T)
    throw ConfigError("model: clip has " + std::to_string(frames.size()) + " frames, expected " + std::to_string(T));
  const int H = cfg.feature_side();
  const int C = cfg.channels();
  auto check_map = [&](const FeatureMap<S>& m, const char* what) {
    if (m.height != H || m.width != H || m.channels() != C)
      throw ConfigError(std::string("model: ") + what + " features are " + std::to_string(m.height) + "x" +
                        std::to_string(m.width) + "x" + std::to_string(m.channels()) + ", expected " +
                        std::to_string(H) + "x" + std::to_string(H) + "x" + std::to_string(C));
  };
  check_map(query, "query");
  for (const auto& f : frames) check_map(f, "frame");

  c.frames = T;
  c.spatial.assign(T, {});
  c.down.assign(T, {});
  c.fusion.assign(T, {});
  std::vector<FeatureMap<S>> reduced(T);

  if (cfg.fusion == QueryFusion::kConvolution) {
    FeatureMap<S> qp = net.fusion_query.forward(p, query, &c.fusion_query.q_col);
    c.fusion_query.q_pre = qp.data;
    c.fusion_query_vec = nn::Gelu::forward(qp.data).colwise().mean();
  }

  for (int t = 0; t < T; ++t) {
    FeatureMap<S> f{H, H, Mat<S>()};
    if (cfg.fusion == QueryFusion::kCrossAttention) {
      Mat<S> x = frames[t].data;
      c.spatial[t].resize(net.spatial.size());
      for (std::size_t l = 0; l < net.spatial.size(); ++l) x = net.spatial[l].forward(p, x, query.data, c.spatial[t][l]);
      f.data = std::move(x);
    } else {
      f.data = detail::fused_frame_forward(net, p, frames[t], c.fusion_query_vec, c.fusion[t]);
    }
    reduced[t] = conv_stack_forward(net.downsample, p, f, &c.down[t]);
  }

  const auto& pe = net.positional;
  Mat<S> tokens = nn::add_positional_and_flatten(reduced, p[pe.values]);
  c.temporal.resize(net.temporal.size());
  for (std::size_t l = 0; l < net.temporal.size(); ++l)
    tokens = net.temporal[l].forward(p, tokens, &net.temporal_mask, c.temporal[l]);
  const auto v_star = nn::unflatten(tokens, T, pe.height, pe.width);

  const int n = net.anchors_per_cell();
  const int hw = pe.height * pe.width;
  c.prob_head.assign(T, {});
  c.reg_head.assign(T, {});
  c.outputs.assign(T, {});
  for (int t = 0; t < T; ++t) {
    FeatureMap<S> logits = conv_stack_forward(net.prob_head, p, v_star[t], &c.prob_head[t]);
    FeatureMap<S> reg = conv_stack_forward(net.reg_head, p, v_star[t], &c.reg_head[t]);
    auto& out = c.outputs[t];
    out.probs = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>(logits.data.data(), hw * n)
                    .unaryExpr([](S z) { return S(1) / (S(1) + std::exp(-z)); });
    out.deltas = Eigen::Map<const Mat<S>>(reg.data.data(), hw * n, 4) * static_cast<S>(cfg.regression_scale);
  }
  return c.outputs;
}

template <class S>
struct CorrespondenceGrads {
  std::vector<FeatureMap<S>> d_frames;
  FeatureMap<S> d_query;
};

/// Back-propagates d(loss)/d(prob) and d(loss)/d(delta) for every frame.
template <class S>
CorrespondenceGrads<S> correspond_backward(const Network& net, const ParameterSet<S>& p,
                                           const CorrespondenceCache<S>& c,
                                           const std::vector<Eigen::Matrix<S, Eigen::Dynamic, 1>>& d_probs,
                                           const std::vector<Mat<S>>& d_deltas, ParameterSet<S>& g) {
  const ModelConfig& cfg = net.config;
  const int T = c.frames;
  const int n = net.anchors_per_cell();
  const auto& pe = net.positional;
  const int hw = pe.height * pe.width;
  const int H = cfg.feature_side();
  const int C = cfg.channels();

  Mat<S> d_tokens(T * hw, pe.channels);
  for (int t = 0; t < T; ++t) {
    const auto& out = c.outputs[t];
    Eigen::Matrix<S, Eigen::Dynamic, 1> d_logit =
        d_probs[t].array() * out.probs.array() * (S(1) - out.probs.array());
    Mat<S> d_logit_map = Eigen::Map<const Mat<S>>(d_logit.data(), hw, n);
    Mat<S> d_reg_map = Eigen::Map<const Mat<S>>(d_deltas[t].data(), hw, 4 * n) * static_cast<S>(cfg.regression_scale);
    FeatureMap<S> dv = conv_stack_backward(net.prob_head, p, c.prob_head[t], d_logit_map, g);
    dv.data += conv_stack_backward(net.reg_head, p, c.reg_head[t], d_reg_map, g).data;
    d_tokens.middleRows(t * hw, hw) = dv.data;
  }
  for (std::size_t l = net.temporal.size(); l-- > 0;)
    d_tokens = net.temporal[l].backward(p, &net.temporal_mask, c.temporal[l], d_tokens, g);
  g[pe.values] += d_tokens;

  CorrespondenceGrads<S> out;
  out.d_frames.resize(T);
  out.d_query = {H, H, Mat<S>::Zero(H * H, C)};
  Mat<S> d_query_vec;
  if (cfg.fusion == QueryFusion::kConvolution) d_query_vec = Mat<S>::Zero(1, C);

  for (int t = 0; t < T; ++t) {
    const Mat<S> d_red = d_tokens.middleRows(t * hw, hw);
    FeatureMap<S> df = conv_stack_backward(net.downsample, p, c.down[t], d_red, g);
    if (net.downsample.empty()) df = {H, H, d_red};
    if (cfg.fusion == QueryFusion::kCrossAttention) {
      Mat<S> dx = df.data;
      for (std::size_t l = net.spatial.size(); l-- > 0;) {
        auto gb = net.spatial[l].backward(p, c.spatial[t][l], dx, g);
        dx = std::move(gb.d_frame);
        out.d_query.data += gb.d_query;
      }
      out.d_frames[t] = {H, H, std::move(dx)};
    } else {
      const auto& fc = c.fusion[t];
      // out = frame + fusion_out(gelu(fusion_mix([frame, tile(q)])))
      FeatureMap<S> d_mixed = net.fusion_out.backward(p, fc.out_col, H, H, df.data, g);
      Mat<S> d_mix_pre = nn::Gelu::backward(fc.mix_pre, d_mixed.data);
      FeatureMap<S> d_cat = net.fusion_mix.backward(p, fc.mix_col, H, H, d_mix_pre, g);
      Mat<S> d_frame = df.data + d_cat.data.leftCols(C);
      d_query_vec += d_cat.data.rightCols(C).colwise().sum();
      out.d_frames[t] = {H, H, std::move(d_frame)};
    }
  }
  if (cfg.fusion == QueryFusion::kConvolution) {
    const int qn = H * H;
    Mat<S> d_qact = d_query_vec.replicate(qn, 1) / static_cast<S>(qn);
    Mat<S> d_qpre = nn::Gelu::backward(c.fusion_query.q_pre, d_qact);
    out.d_query = net.fusion_query.backward(p, c.fusion_query.q_col, H, H, d_qpre, g);
  }
  return out;
}

// ---------------------------------------------------------------------------

/// Parameters plus layout: the unit that training, checkpoints and
/// inference pass around.
template <class S>
struct Model {
  Network net;
  ParameterSet<S> params;
  AnchorGrid grid;

  static Model create(const ModelConfig& cfg, std::uint64_t seed) {
    Model m;
    m.net = build_network(cfg, m.params, seed);
    m.grid = build_grid(cfg.anchor_config());
    return m;
  }

  const ModelConfig& config() const { return net.config; }

  template <class T>
  Model<T> cast() const {
    Model<T> m;
    m.net = net;
    m.params = params.template cast<T>();
    m.grid = grid;
    return m;
  }
};

/// Full forward pass from images; no caches retained.
template <class S>
std::vector<FramePredictionRaw<S>> forward(const Model<S>& model, const std::vector<FeatureMap<S>>& clip,
                                           const FeatureMap<S>& query) {
  std::vector<FeatureMap<S>> feats;
  feats.reserve(clip.size());
  for (const auto& img : clip) feats.push_back(encode(model.net, model.params, img, static_cast<ConvStackCache<S>*>(nullptr)));
  const FeatureMap<S> q = encode(model.net, model.params, query, static_cast<ConvStackCache<S>*>(nullptr));
  CorrespondenceCache<S> cache;
  return correspond_forward(model.net, model.params, feats, q, cache);
}

}  // namespace vqloc
