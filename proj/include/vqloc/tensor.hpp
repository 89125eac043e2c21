#pragma once

// Dense storage used throughout the pipeline.
//
// Compute paths work on row-major Eigen matrices: a feature map of extent
// H x W x C is held as an (H*W) x C matrix whose row index is y*W + x, so a
// frame's tokens and its spatial layout share the same buffer. `Tensor` is
// the shape-carrying container used at IO boundaries (images, feature files,
// checkpoints).

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "vqloc/errors.hpp"

namespace vqloc {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

template <class S>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape, S fill = S(0)) : shape_(std::move(shape)) {
    data_.assign(checked_numel(shape_), fill);
  }

  Tensor(std::vector<int> shape, std::vector<S> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != checked_numel(shape_)) {
      throw ConfigError("tensor buffer length " + std::to_string(data_.size()) +
                        " does not match shape product " + std::to_string(checked_numel(shape_)));
    }
  }

  const std::vector<int>& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t numel() const noexcept { return data_.size(); }

  std::vector<S>& data() noexcept { return data_; }
  const std::vector<S>& data() const noexcept { return data_; }

  S& operator[](std::size_t i) { return data_[i]; }
  const S& operator[](std::size_t i) const { return data_[i]; }

  bool operator==(const Tensor&) const = default;

  static std::size_t checked_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int e : shape) {
      if (e < 1) throw ConfigError("tensor extents must be >= 1");
      n *= static_cast<std::size_t>(e);
    }
    return n;
  }

 private:
  std::vector<int> shape_;
  std::vector<S> data_;
};

/// H x W x C feature map; `data` rows are pixels in row-major order.
template <class S>
struct FeatureMap {
  int height = 0;
  int width = 0;
  Mat<S> data;

  int channels() const { return static_cast<int>(data.cols()); }
  int pixels() const { return height * width; }
};

template <class S>
bool all_finite(const Mat<S>& m) {
  return m.allFinite();
}

#ifndef NDEBUG
template <class S>
inline void debug_check_finite(const Mat<S>& m, const char* where) {
  if (!m.allFinite()) throw std::runtime_error(std::string("non-finite values after ") + where);
}
#else
template <class S>
inline void debug_check_finite(const Mat<S>&, const char*) {}
#endif

/// Named, shape-stable collection of 2-D parameter blocks. The same type
/// holds gradients (see zeros_like) and optimizer moments.
template <class S>
class ParameterSet {
 public:
  int add(std::string name, int rows, int cols) {
    if (rows < 1 || cols < 1) throw ConfigError("parameter '" + name + "' has empty extent");
    names_.push_back(std::move(name));
    values_.push_back(Mat<S>::Zero(rows, cols));
    return static_cast<int>(values_.size()) - 1;
  }

  std::size_t size() const noexcept { return values_.size(); }
  Mat<S>& operator[](int id) { return values_[static_cast<std::size_t>(id)]; }
  const Mat<S>& operator[](int id) const { return values_[static_cast<std::size_t>(id)]; }
  const std::string& name(int id) const { return names_[static_cast<std::size_t>(id)]; }

  int find(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return static_cast<int>(i);
    return -1;
  }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
    return n;
  }

  ParameterSet zeros_like() const {
    ParameterSet out;
    out.names_ = names_;
    out.values_.reserve(values_.size());
    for (const auto& v : values_) out.values_.push_back(Mat<S>::Zero(v.rows(), v.cols()));
    return out;
  }

  void set_zero() {
    for (auto& v : values_) v.setZero();
  }

  template <class T>
  ParameterSet<T> cast() const {
    ParameterSet<T> out;
    for (std::size_t i = 0; i < values_.size(); ++i) {
      const int id = out.add(names_[i], static_cast<int>(values_[i].rows()), static_cast<int>(values_[i].cols()));
      out[id] = values_[i].template cast<T>();
    }
    return out;
  }

  void add_scaled(const ParameterSet& other, S scale) {
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += scale * other.values_[i];
  }

  bool all_finite() const {
    for (const auto& v : values_)
      if (!v.allFinite()) return false;
    return true;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Mat<S>> values_;
};

}  // namespace vqloc
