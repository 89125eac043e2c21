#pragma once

// Multi-head attention, feed-forward sublayers and the two pre-norm
// transformer blocks used by the pipeline: frame-to-query cross attention
// and masked self attention over a flattened clip.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "vqloc/nn/layers.hpp"

namespace vqloc::nn {

/// Boolean destination x source mask. Rows whose allowed sources form one
/// contiguous interval are grouped into dense blocks so attention is only
/// evaluated where it can be nonzero; otherwise a single block with an
/// additive -inf bias covers the whole matrix.
class AttentionMask {
 public:
  struct Block {
    int row_begin, row_end, col_begin, col_end;
  };

  AttentionMask() = default;

  AttentionMask(int rows, int cols, std::vector<unsigned char> allowed)
      : rows_(rows), cols_(cols), allowed_(std::move(allowed)) {
    if (rows < 1 || cols < 1 || allowed_.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols))
      throw ConfigError("attention mask: allowed matrix does not match " + std::to_string(rows) + "x" +
                        std::to_string(cols));
    build_blocks();
  }

  static AttentionMask all_allowed(int rows, int cols) {
    return AttentionMask(rows, cols, std::vector<unsigned char>(static_cast<std::size_t>(rows) * cols, 1));
  }

  /// Token i belongs to frame i / tokens_per_frame; it may attend token j iff
  /// their frames differ by at most half_width. A negative half width means
  /// no temporal restriction.
  static AttentionMask temporal_window(int frames, int tokens_per_frame, int half_width) {
    const int n = frames * tokens_per_frame;
    std::vector<unsigned char> allowed(static_cast<std::size_t>(n) * n, 0);
    for (int i = 0; i < n; ++i) {
      const int ti = i / tokens_per_frame;
      for (int j = 0; j < n; ++j) {
        const int tj = j / tokens_per_frame;
        allowed[static_cast<std::size_t>(i) * n + j] = (half_width < 0 || std::abs(ti - tj) <= half_width) ? 1 : 0;
      }
    }
    return AttentionMask(n, n, std::move(allowed));
  }

  int rows() const noexcept { return rows_; }
  int cols() const noexcept { return cols_; }
  bool allowed(int r, int c) const { return allowed_[static_cast<std::size_t>(r) * cols_ + c] != 0; }
  const std::vector<Block>& blocks() const noexcept { return blocks_; }
  bool needs_bias() const noexcept { return needs_bias_; }

 private:
  void build_blocks() {
    std::vector<int> first(rows_), last(rows_);
    bool contiguous = true;
    for (int r = 0; r < rows_; ++r) {
      int f = -1, l = -1, count = 0;
      for (int c = 0; c < cols_; ++c) {
        if (allowed(r, c)) {
          if (f < 0) f = c;
          l = c;
          ++count;
        }
      }
      if (count == 0) throw ConfigError("attention mask: row " + std::to_string(r) + " has no allowed source");
      if (count != l - f + 1) contiguous = false;
      first[r] = f;
      last[r] = l;
    }
    blocks_.clear();
    if (!contiguous) {
      needs_bias_ = true;
      blocks_.push_back({0, rows_, 0, cols_});
      return;
    }
    needs_bias_ = false;
    int start = 0;
    for (int r = 1; r <= rows_; ++r) {
      if (r == rows_ || first[r] != first[start] || last[r] != last[start]) {
        blocks_.push_back({start, r, first[start], last[start] + 1});
        start = r;
      }
    }
  }

  int rows_ = 0;
  int cols_ = 0;
  std::vector<unsigned char> allowed_;
  std::vector<Block> blocks_;
  bool needs_bias_ = false;
};

template <class S>
void softmax_rows_inplace(Mat<S>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const S mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp();
    m.row(r) /= m.row(r).sum();
  }
}

// ---------------------------------------------------------------------------

struct MultiHeadAttention {
  Linear q_proj, k_proj, v_proj, o_proj;
  int width = 0;
  int heads = 1;

  template <class S>
  struct Cache {
    Mat<S> q, k, v;                     // projected, N x C / M x C
    std::vector<Mat<S>> probs;          // [block * heads + head]
    Mat<S> context;                     // N x C, concatenated heads
  };

  template <class S>
  static MultiHeadAttention create(ParameterSet<S>& ps, const std::string& name, int width, int heads, Rng& rng) {
    if (heads < 1 || width % heads != 0)
      throw ConfigError("attention '" + name + "': head count " + std::to_string(heads) +
                        " does not divide width " + std::to_string(width));
    MultiHeadAttention a;
    a.width = width;
    a.heads = heads;
    a.q_proj = Linear::create(ps, name + ".q", width, width, rng);
    a.k_proj = Linear::create(ps, name + ".k", width, width, rng);
    a.v_proj = Linear::create(ps, name + ".v", width, width, rng);
    a.o_proj = Linear::create(ps, name + ".o", width, width, rng);
    return a;
  }

  int head_dim() const { return width / heads; }

  template <class S>
  Mat<S> forward(const ParameterSet<S>& p, const Mat<S>& dst, const Mat<S>& src, const AttentionMask* mask,
                 Cache<S>& cache) const {
    if (dst.cols() != width || src.cols() != width)
      throw ConfigError("attention: channel width mismatch (expected " + std::to_string(width) + ")");
    AttentionMask full;
    if (!mask) {
      full = AttentionMask::all_allowed(static_cast<int>(dst.rows()), static_cast<int>(src.rows()));
      mask = &full;
    }
    if (mask->rows() != dst.rows() || mask->cols() != src.rows())
      throw ConfigError("attention: mask is " + std::to_string(mask->rows()) + "x" + std::to_string(mask->cols()) +
                        " but tokens are " + std::to_string(dst.rows()) + "x" + std::to_string(src.rows()));
    cache.q = q_proj.forward(p, dst);
    cache.k = k_proj.forward(p, src);
    cache.v = v_proj.forward(p, src);
    const int d = head_dim();
    const S scale = S(1) / std::sqrt(static_cast<S>(d));
    cache.context = Mat<S>::Zero(dst.rows(), width);
    cache.probs.assign(mask->blocks().size() * static_cast<std::size_t>(heads), Mat<S>());
    for (std::size_t bi = 0; bi < mask->blocks().size(); ++bi) {
      const auto& b = mask->blocks()[bi];
      const int nr = b.row_end - b.row_begin;
      const int nc = b.col_end - b.col_begin;
      for (int h = 0; h < heads; ++h) {
        Mat<S>& a = cache.probs[bi * heads + h];
        a.resize(nr, nc);
        a.noalias() = scale * cache.q.block(b.row_begin, h * d, nr, d) *
                      cache.k.block(b.col_begin, h * d, nc, d).transpose();
        if (mask->needs_bias()) {
          for (int r = 0; r < nr; ++r)
            for (int c = 0; c < nc; ++c)
              if (!mask->allowed(b.row_begin + r, b.col_begin + c)) a(r, c) = -std::numeric_limits<S>::infinity();
        }
        softmax_rows_inplace(a);
        cache.context.block(b.row_begin, h * d, nr, d).noalias() = a * cache.v.block(b.col_begin, h * d, nc, d);
      }
    }
    Mat<S> out = o_proj.forward(p, cache.context);
    debug_check_finite(out, "attention");
    return out;
  }

  template <class S>
  struct Grads {
    Mat<S> d_dst;
    Mat<S> d_src;
  };

  template <class S>
  Grads<S> backward(const ParameterSet<S>& p, const Mat<S>& dst, const Mat<S>& src, const AttentionMask* mask,
                    const Cache<S>& cache, const Mat<S>& dout, ParameterSet<S>& g) const {
    AttentionMask full;
    if (!mask) {
      full = AttentionMask::all_allowed(static_cast<int>(dst.rows()), static_cast<int>(src.rows()));
      mask = &full;
    }
    const int d = head_dim();
    const S scale = S(1) / std::sqrt(static_cast<S>(d));
    const Mat<S> dctx = o_proj.backward(p, cache.context, dout, g);
    Mat<S> dq = Mat<S>::Zero(cache.q.rows(), width);
    Mat<S> dk = Mat<S>::Zero(cache.k.rows(), width);
    Mat<S> dv = Mat<S>::Zero(cache.v.rows(), width);
    for (std::size_t bi = 0; bi < mask->blocks().size(); ++bi) {
      const auto& b = mask->blocks()[bi];
      const int nr = b.row_end - b.row_begin;
      const int nc = b.col_end - b.col_begin;
      for (int h = 0; h < heads; ++h) {
        const Mat<S>& a = cache.probs[bi * heads + h];
        const auto dctx_h = dctx.block(b.row_begin, h * d, nr, d);
        dv.block(b.col_begin, h * d, nc, d).noalias() += a.transpose() * dctx_h;
        Mat<S> da(nr, nc);
        da.noalias() = dctx_h * cache.v.block(b.col_begin, h * d, nc, d).transpose();
        const Eigen::Matrix<S, Eigen::Dynamic, 1> row_dot = (da.array() * a.array()).rowwise().sum();
        Mat<S> dlogits = a.array() * (da.colwise() - row_dot).array();
        dlogits *= scale;
        dq.block(b.row_begin, h * d, nr, d).noalias() += dlogits * cache.k.block(b.col_begin, h * d, nc, d);
        dk.block(b.col_begin, h * d, nc, d).noalias() +=
            dlogits.transpose() * cache.q.block(b.row_begin, h * d, nr, d);
      }
    }
    Grads<S> out;
    out.d_dst = q_proj.backward(p, dst, dq, g);
    out.d_src = k_proj.backward(p, src, dk, g);
    out.d_src += v_proj.backward(p, src, dv, g);
    return out;
  }
};

// ---------------------------------------------------------------------------

struct FeedForward {
  Linear expand, contract;

  template <class S>
  struct Cache {
    Mat<S> input;
    Mat<S> hidden_pre;
    Mat<S> hidden;
  };

  template <class S>
  static FeedForward create(ParameterSet<S>& ps, const std::string& name, int width, int expansion, Rng& rng) {
    FeedForward f;
    f.expand = Linear::create(ps, name + ".fc1", width, width * expansion, rng);
    f.contract = Linear::create(ps, name + ".fc2", width * expansion, width, rng);
    return f;
  }

  template <class S>
  Mat<S> forward(const ParameterSet<S>& p, const Mat<S>& x, Cache<S>& c) const {
    c.input = x;
    c.hidden_pre = expand.forward(p, x);
    c.hidden = Gelu::forward(c.hidden_pre);
    return contract.forward(p, c.hidden);
  }

  template <class S>
  Mat<S> backward(const ParameterSet<S>& p, const Cache<S>& c, const Mat<S>& dy, ParameterSet<S>& g) const {
    const Mat<S> dh = contract.backward(p, c.hidden, dy, g);
    return expand.backward(p, c.input, Gelu::backward(c.hidden_pre, dh), g);
  }
};

// ---------------------------------------------------------------------------

struct BlockConfig {
  int width = 64;
  int heads = 2;
  int ffn_expansion = 4;
};

/// Frame tokens attend to query tokens, then a feed-forward sublayer;
/// pre-norm residual around both. Token count and order are preserved.
struct CrossAttentionBlock {
  LayerNorm norm_dst, norm_src, norm_ffn;
  MultiHeadAttention attn;
  FeedForward ffn;

  template <class S>
  struct Cache {
    typename LayerNorm::template Cache<S> nd, ns, nf;
    Mat<S> dst_n, src_n, hidden;
    typename MultiHeadAttention::template Cache<S> attn;
    typename FeedForward::template Cache<S> ffn;
  };

  template <class S>
  static CrossAttentionBlock create(ParameterSet<S>& ps, const std::string& name, const BlockConfig& cfg, Rng& rng) {
    CrossAttentionBlock b;
    b.norm_dst = LayerNorm::create(ps, name + ".norm_frame", cfg.width);
    b.norm_src = LayerNorm::create(ps, name + ".norm_query", cfg.width);
    b.attn = MultiHeadAttention::create(ps, name + ".attn", cfg.width, cfg.heads, rng);
    b.norm_ffn = LayerNorm::create(ps, name + ".norm_ffn", cfg.width);
    b.ffn = FeedForward::create(ps, name + ".ffn", cfg.width, cfg.ffn_expansion, rng);
    return b;
  }

  template <class S>
  Mat<S> forward(const ParameterSet<S>& p, const Mat<S>& frame, const Mat<S>& query, Cache<S>& c) const {
    // Checked before the norms, which would otherwise broadcast a bad width.
    if (frame.cols() != attn.width || query.cols() != attn.width)
      throw ConfigError("cross attention: frame width " + std::to_string(frame.cols()) + " and query width " +
                        std::to_string(query.cols()) + " must both equal " + std::to_string(attn.width));
    c.dst_n = norm_dst.forward(p, frame, c.nd);
    c.src_n = norm_src.forward(p, query, c.ns);
    c.hidden = frame + attn.forward(p, c.dst_n, c.src_n, nullptr, c.attn);
    const Mat<S> z = norm_ffn.forward(p, c.hidden, c.nf);
    return c.hidden + ffn.forward(p, z, c.ffn);
  }

  template <class S>
  struct Grads {
    Mat<S> d_frame;
    Mat<S> d_query;
  };

  template <class S>
  Grads<S> backward(const ParameterSet<S>& p, const Cache<S>& c, const Mat<S>& dout, ParameterSet<S>& g) const {
    Mat<S> dh = dout + norm_ffn.backward(p, c.nf, ffn.backward(p, c.ffn, dout, g), g);
    auto ga = attn.backward(p, c.dst_n, c.src_n, nullptr, c.attn, dh, g);
    Grads<S> out;
    out.d_frame = dh + norm_dst.backward(p, c.nd, ga.d_dst, g);
    out.d_query = norm_src.backward(p, c.ns, ga.d_src, g);
    return out;
  }
};

/// Masked self attention plus feed-forward, pre-norm residual.
struct SelfAttentionBlock {
  LayerNorm norm_attn, norm_ffn;
  MultiHeadAttention attn;
  FeedForward ffn;

  template <class S>
  struct Cache {
    typename LayerNorm::template Cache<S> na, nf;
    Mat<S> x_n, hidden;
    typename MultiHeadAttention::template Cache<S> attn;
    typename FeedForward::template Cache<S> ffn;
  };

  template <class S>
  static SelfAttentionBlock create(ParameterSet<S>& ps, const std::string& name, const BlockConfig& cfg, Rng& rng) {
    SelfAttentionBlock b;
    b.norm_attn = LayerNorm::create(ps, name + ".norm_attn", cfg.width);
    b.attn = MultiHeadAttention::create(ps, name + ".attn", cfg.width, cfg.heads, rng);
    b.norm_ffn = LayerNorm::create(ps, name + ".norm_ffn", cfg.width);
    b.ffn = FeedForward::create(ps, name + ".ffn", cfg.width, cfg.ffn_expansion, rng);
    return b;
  }

  template <class S>
  Mat<S> forward(const ParameterSet<S>& p, const Mat<S>& x, const AttentionMask* mask, Cache<S>& c) const {
    if (x.cols() != attn.width)
      throw ConfigError("self attention: token width " + std::to_string(x.cols()) + " must equal " +
                        std::to_string(attn.width));
    c.x_n = norm_attn.forward(p, x, c.na);
    c.hidden = x + attn.forward(p, c.x_n, c.x_n, mask, c.attn);
    const Mat<S> z = norm_ffn.forward(p, c.hidden, c.nf);
    return c.hidden + ffn.forward(p, z, c.ffn);
  }

  template <class S>
  Mat<S> backward(const ParameterSet<S>& p, const AttentionMask* mask, const Cache<S>& c, const Mat<S>& dout,
                  ParameterSet<S>& g) const {
    Mat<S> dh = dout + norm_ffn.backward(p, c.nf, ffn.backward(p, c.ffn, dout, g), g);
    auto ga = attn.backward(p, c.x_n, c.x_n, mask, c.attn, dh, g);
    return dh + norm_attn.backward(p, c.na, Mat<S>(ga.d_dst + ga.d_src), g);
  }
};

// ---------------------------------------------------------------------------

/// Adds a (T*h*w) x c positional table to a clip of h x w x c maps and
/// flattens frames in order into one token matrix.
template <class S>
Mat<S> add_positional_and_flatten(const std::vector<FeatureMap<S>>& frames, const Mat<S>& positional) {
  if (frames.empty()) throw ConfigError("flatten: empty clip");
  const int per = frames.front().pixels();
  const int c = frames.front().channels();
  if (positional.rows() != static_cast<Eigen::Index>(frames.size()) * per || positional.cols() != c)
    throw ConfigError("flatten: positional embedding is " + std::to_string(positional.rows()) + "x" +
                      std::to_string(positional.cols()) + ", clip needs " +
                      std::to_string(frames.size() * static_cast<std::size_t>(per)) + "x" + std::to_string(c));
  Mat<S> tokens(positional.rows(), c);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (frames[t].pixels() != per || frames[t].channels() != c) throw ConfigError("flatten: ragged clip");
    tokens.middleRows(static_cast<Eigen::Index>(t) * per, per) = frames[t].data;
  }
  tokens += positional;
  return tokens;
}

template <class S>
std::vector<FeatureMap<S>> unflatten(const Mat<S>& tokens, int frames, int height, int width) {
  const int per = height * width;
  if (tokens.rows() != static_cast<Eigen::Index>(frames) * per) throw ConfigError("unflatten: token count mismatch");
  std::vector<FeatureMap<S>> out(static_cast<std::size_t>(frames));
  for (int t = 0; t < frames; ++t) {
    out[t].height = height;
    out[t].width = width;
    out[t].data = tokens.middleRows(static_cast<Eigen::Index>(t) * per, per);
  }
  return out;
}

}  // namespace vqloc::nn
