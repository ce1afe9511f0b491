#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "softcbm/error.hpp"

namespace softcbm {

/// Dense row-major tensor. Activations use (N, C, D, H, W); matrices (rows, cols).
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, T fill = T(0)) : shape_(std::move(shape)) {
    data_.assign(count(shape_), fill);
  }
  Tensor(std::vector<int> shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    require(data_.size() == count(shape_), "tensor data does not match shape");
  }

  const std::vector<int>& shape() const { return shape_; }
  int dim(std::size_t i) const { return shape_[i]; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }
  void reshape(std::vector<int> shape) {
    require(count(shape) == data_.size(), "reshape must preserve element count");
    shape_ = std::move(shape);
  }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  /// Spatial size of an activation (product of dims after N and C).
  std::size_t spatial() const {
    std::size_t s = 1;
    for (std::size_t i = 2; i < shape_.size(); ++i) s *= static_cast<std::size_t>(shape_[i]);
    return s;
  }

  static std::size_t count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
  }

 private:
  std::vector<int> shape_;
  std::vector<T> data_;
};

}  // namespace softcbm
