#pragma once

// Parameterized building blocks with explicit forward/backward passes.
//
// A layer stores only its hyperparameters and the ids of its parameters
// inside a ParameterSet, so one architecture description serves any scalar
// type. Forward passes are const and return whatever the backward pass needs;
// backward passes accumulate into a caller-owned gradient set.

#include <cmath>
#include <random>
#include <string>

#include "vqloc/tensor.hpp"

namespace vqloc::nn {

using Rng = std::mt19937_64;

template <class S>
void fill_normal(Mat<S>& m, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(dist(rng));
}

// ---------------------------------------------------------------------------

struct Linear {
  int weight = -1;  // in x out
  int bias = -1;    // 1 x out
  int in = 0;
  int out = 0;

  template <class S>
  static Linear create(ParameterSet<S>& ps, const std::string& name, int in, int out, Rng& rng,
                       double gain = 1.0) {
    Linear l;
    l.in = in;
    l.out = out;
    l.weight = ps.add(name + ".weight", in, out);
    l.bias = ps.add(name + ".bias", 1, out);
    fill_normal(ps[l.weight], gain / std::sqrt(static_cast<double>(in)), rng);
    return l;
  }

  template <class S>
  Mat<S> forward(const ParameterSet<S>& p, const Mat<S>& x) const {
    Mat<S> y(x.rows(), out);
    y.noalias() = x * p[weight];
    y.rowwise() += p[bias].row(0);
    return y;
  }

  template <class S>
  Mat<S> backward(const ParameterSet<S>& p, const Mat<S>& x, const Mat<S>& dy, ParameterSet<S>& g) const {
    g[weight].noalias() += x.transpose() * dy;
    g[bias].row(0) += dy.colwise().sum();
    Mat<S> dx(dy.rows(), in);
    dx.noalias() = dy * p[weight].transpose();
    return dx;
  }
};

// ---------------------------------------------------------------------------

/// Per-row normalization with learned gain and shift.
struct LayerNorm {
  int gain = -1;
  int shift = -1;
  int width = 0;
  double eps = 1e-5;

  template <class S>
  struct Cache {
    Mat<S> normalized;
    Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std;
  };

  template <class S>
  static LayerNorm create(ParameterSet<S>& ps, const std::string& name, int width) {
    LayerNorm l;
    l.width = width;
    l.gain = ps.add(name + ".gain", 1, width);
    l.shift = ps.add(name + ".shift", 1, width);
    ps[l.gain].setOnes();
    return l;
  }

  template <class S>
  Mat<S> forward(const ParameterSet<S>& p, const Mat<S>& x, Cache<S>& cache) const {
    const auto n = x.rows();
    cache.normalized.resize(n, width);
    cache.inv_std.resize(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      const S mean = x.row(r).mean();
      const S var = (x.row(r).array() - mean).square().mean();
      const S inv = S(1) / std::sqrt(var + static_cast<S>(eps));
      cache.inv_std(r) = inv;
      cache.normalized.row(r) = (x.row(r).array() - mean) * inv;
    }
    Mat<S> y = cache.normalized.array().rowwise() * p[gain].row(0).array();
    y.rowwise() += p[shift].row(0);
    return y;
  }

  template <class S>
  Mat<S> backward(const ParameterSet<S>& p, const Cache<S>& cache, const Mat<S>& dy, ParameterSet<S>& g) const {
    g[gain].row(0) += (dy.array() * cache.normalized.array()).colwise().sum().matrix();
    g[shift].row(0) += dy.colwise().sum();
    const Mat<S> dxhat = dy.array().rowwise() * p[gain].row(0).array();
    Mat<S> dx(dy.rows(), width);
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
      const S mean_d = dxhat.row(r).mean();
      const S mean_dx = (dxhat.row(r).array() * cache.normalized.row(r).array()).mean();
      dx.row(r) = cache.inv_std(r) *
                  (dxhat.row(r).array() - mean_d - cache.normalized.row(r).array() * mean_dx).matrix();
    }
    return dx;
  }
};

// ---------------------------------------------------------------------------

/// tanh-approximated GELU; smooth everywhere, which keeps finite-difference
/// checks free of activation kinks.
struct Gelu {
  template <class S>
  static Mat<S> forward(const Mat<S>& x) {
    constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
    return x.unaryExpr([](S v) {
      const S t = std::tanh(static_cast<S>(k) * (v + S(0.044715) * v * v * v));
      return S(0.5) * v * (S(1) + t);
    });
  }

  template <class S>
  static Mat<S> backward(const Mat<S>& x, const Mat<S>& dy) {
    constexpr double k = 0.7978845608028654;
    const Mat<S> deriv = x.unaryExpr([](S v) {
      const S t = std::tanh(static_cast<S>(k) * (v + S(0.044715) * v * v * v));
      return S(0.5) * (S(1) + t) +
             S(0.5) * v * (S(1) - t * t) * static_cast<S>(k) * (S(1) + S(3 * 0.044715) * v * v);
    });
    return dy.cwiseProduct(deriv);
  }
};

// ---------------------------------------------------------------------------

/// 2-D convolution over NHWC maps via im2col. Weights are laid out as
/// (kernel*kernel*in) x out with (ky, kx, channel) ordering of the rows.
struct Conv2d {
  int weight = -1;
  int bias = -1;
  int in = 0;
  int out = 0;
  int kernel = 1;
  int stride = 1;
  int pad = 0;

  template <class S>
  static Conv2d create(ParameterSet<S>& ps, const std::string& name, int in, int out, int kernel, int stride,
                       int pad, Rng& rng, double gain = 1.0) {
    if (in < 1 || out < 1 || kernel < 1 || stride < 1 || pad < 0)
      throw ConfigError("conv '" + name + "': invalid hyperparameters");
    Conv2d c;
    c.in = in;
    c.out = out;
    c.kernel = kernel;
    c.stride = stride;
    c.pad = pad;
    c.weight = ps.add(name + ".weight", kernel * kernel * in, out);
    c.bias = ps.add(name + ".bias", 1, out);
    fill_normal(ps[c.weight], gain / std::sqrt(static_cast<double>(kernel * kernel * in)), rng);
    return c;
  }

  int out_extent(int extent) const { return (extent + 2 * pad - kernel) / stride + 1; }

  void check_input(int height, int width, int channels) const {
    if (channels != in)
      throw ConfigError("conv: expected " + std::to_string(in) + " channels, got " + std::to_string(channels));
    if (height % stride != 0 || width % stride != 0 || out_extent(height) != height / stride ||
        out_extent(width) != width / stride)
      throw ConfigError("conv: extent " + std::to_string(height) + "x" + std::to_string(width) +
                        " not divisible by stride " + std::to_string(stride) + " with kernel " +
                        std::to_string(kernel));
  }

  template <class S>
  Mat<S> im2col(const FeatureMap<S>& x) const {
    const int ho = out_extent(x.height);
    const int wo = out_extent(x.width);
    Mat<S> col = Mat<S>::Zero(ho * wo, kernel * kernel * in);
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        const int r = oy * wo + ox;
        for (int ky = 0; ky < kernel; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= x.height) continue;
          for (int kx = 0; kx < kernel; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= x.width) continue;
            col.row(r).segment((ky * kernel + kx) * in, in) = x.data.row(iy * x.width + ix);
          }
        }
      }
    }
    return col;
  }

  template <class S>
  FeatureMap<S> forward(const ParameterSet<S>& p, const FeatureMap<S>& x, Mat<S>* col_cache = nullptr) const {
    check_input(x.height, x.width, x.channels());
    FeatureMap<S> y;
    y.height = out_extent(x.height);
    y.width = out_extent(x.width);
    Mat<S> col = im2col(x);
    y.data.resize(col.rows(), out);
    y.data.noalias() = col * p[weight];
    y.data.rowwise() += p[bias].row(0);
    if (col_cache) *col_cache = std::move(col);
    return y;
  }

  /// Returns the input gradient; `col` is the im2col matrix of the forward input.
  template <class S>
  FeatureMap<S> backward(const ParameterSet<S>& p, const Mat<S>& col, int in_height, int in_width,
                         const Mat<S>& dy, ParameterSet<S>& g) const {
    g[weight].noalias() += col.transpose() * dy;
    g[bias].row(0) += dy.colwise().sum();
    Mat<S> dcol(dy.rows(), kernel * kernel * in);
    dcol.noalias() = dy * p[weight].transpose();
    FeatureMap<S> dx;
    dx.height = in_height;
    dx.width = in_width;
    dx.data = Mat<S>::Zero(in_height * in_width, in);
    const int ho = out_extent(in_height);
    const int wo = out_extent(in_width);
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        const int r = oy * wo + ox;
        for (int ky = 0; ky < kernel; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= in_height) continue;
          for (int kx = 0; kx < kernel; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= in_width) continue;
            dx.data.row(iy * in_width + ix) += dcol.row(r).segment((ky * kernel + kx) * in, in);
          }
        }
      }
    }
    return dx;
  }
};

}  // namespace vqloc::nn
