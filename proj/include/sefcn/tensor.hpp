#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "sefcn/errors.hpp"

namespace sefcn {

// Up to four extents read as (N, C, H, W); lower ranks drop trailing axes.
class Shape {
 public:
  static constexpr std::size_t kMaxRank = 4;

  Shape() = default;
  Shape(std::initializer_list<std::size_t> extents);
  explicit Shape(std::span<const std::size_t> extents);

  static Shape nchw(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return Shape{n, c, h, w};
  }

  std::size_t rank() const noexcept { return rank_; }
  std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
  std::size_t numel() const noexcept;

  // Accessors for rank-4 tensors.
  std::size_t n() const { return dims_[0]; }
  std::size_t c() const { return dims_[1]; }
  std::size_t h() const { return dims_[2]; }
  std::size_t w() const { return dims_[3]; }

  std::span<const std::size_t> extents() const noexcept { return {dims_.data(), rank_}; }
  std::string to_string() const;

  friend bool operator==(const Shape& a, const Shape& b) noexcept {
    return a.rank_ == b.rank_ && std::equal(a.dims_.begin(), a.dims_.begin() + a.rank_, b.dims_.begin());
  }

 private:
  std::array<std::size_t, kMaxRank> dims_{};
  std::size_t rank_ = 0;
};

// Dense row-major array; the scalar type is float for training and double for
// gradient checking.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{0}) : shape_(shape), data_(shape.numel(), fill) {}
  BasicTensor(Shape shape, std::vector<T> data);

  static BasicTensor zeros(Shape shape) { return BasicTensor(shape); }
  static BasicTensor nchw(std::size_t n, std::size_t c, std::size_t h, std::size_t w, T fill = T{0}) {
    return BasicTensor(Shape::nchw(n, c, h, w), fill);
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Rank-4 element access.
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_.c() + c) * shape_.h() + h) * shape_.w() + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_.c() + c) * shape_.h() + h) * shape_.w() + w];
  }

  // Same data, new extents with equal element count.
  BasicTensor reshaped(Shape shape) const&;
  BasicTensor reshaped(Shape shape) &&;

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  template <typename U>
  BasicTensor<U> cast() const {
    return BasicTensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

// Throws ShapeError unless `t` has rank 4.
void require_rank4(const Shape& s, const char* what);

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace sefcn
