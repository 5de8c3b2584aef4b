#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "botda/errors.hpp"

namespace botda::ad {

/// (batch, channels, freq, width)
using Shape = std::array<std::size_t, 4>;

inline std::size_t shape_size(const Shape& s) { return s[0] * s[1] * s[2] * s[3]; }
std::string shape_string(const Shape& s);

/// Dense row-major 4-D array.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0}) : shape_(shape), data_(shape_size(shape), fill) {}
  Tensor(Shape shape, std::vector<T> values) : shape_(shape), data_(std::move(values)) {
    if (data_.size() != shape_size(shape_)) {
      throw ConfigError("tensor value count does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) { return data_[offset(n, c, h, w)]; }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[offset(n, c, h, w)];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_{0, 0, 0, 0};
  std::vector<T> data_;
};

}  // namespace botda::ad
