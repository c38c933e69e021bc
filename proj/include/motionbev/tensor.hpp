#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "motionbev/error.hpp"

namespace motionbev {

/// Dense row-major array of up to four dimensions.
///
/// The last index varies fastest. Image-like tensors use the (C, h, w)
/// layout throughout the library: channel, angular row, radial column.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(std::vector<std::size_t> shape, T fill = T(0))
      : shape_(std::move(shape)), data_(count(shape_), fill) {
    if (shape_.size() > 4) throw ShapeError("tensor rank above 4");
  }

  BasicTensor(std::initializer_list<std::size_t> shape, T fill = T(0))
      : BasicTensor(std::vector<std::size_t>(shape), fill) {}

  BasicTensor(std::vector<std::size_t> shape, std::vector<T> values)
      : shape_(std::move(shape)), data_(std::move(values)) {
    if (shape_.size() > 4) throw ShapeError("tensor rank above 4");
    if (data_.size() != count(shape_))
      throw ShapeError("value count " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
  }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  T& at(std::size_t c, std::size_t i, std::size_t j) {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }
  const T& at(std::size_t c, std::size_t i, std::size_t j) const {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }

  T& at(std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
    return data_[((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }
  const T& at(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const {
    return data_[((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }

  /// One channel of a (C, h, w) tensor as a flat span of h*w values.
  std::span<T> channel(std::size_t c) {
    const std::size_t plane = shape_[1] * shape_[2];
    return std::span<T>(data_).subspan(c * plane, plane);
  }
  std::span<const T> channel(std::size_t c) const {
    const std::size_t plane = shape_[1] * shape_[2];
    return std::span<const T>(data_).subspan(c * plane, plane);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  BasicTensor& operator+=(const BasicTensor& o) {
    require_same_shape(*this, o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  BasicTensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

  static std::size_t count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

  static std::string shape_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ')';
    return os.str();
  }

  friend void require_same_shape(const BasicTensor& a, const BasicTensor& b, const char* op) {
    if (a.shape_ != b.shape_)
      throw ShapeError(std::string(op) + ": shape " + shape_string(a.shape_) + " vs " +
                       shape_string(b.shape_));
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<double>;

}  // namespace motionbev
