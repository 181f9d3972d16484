#include "sefcn/tensor.hpp"

#include <functional>
#include <numeric>
#include <sstream>

namespace sefcn {

Shape::Shape(std::initializer_list<std::size_t> extents) : Shape(std::span<const std::size_t>(extents.begin(), extents.size())) {}

Shape::Shape(std::span<const std::size_t> extents) {
  if (extents.empty() || extents.size() > kMaxRank) {
    throw ShapeError("tensor rank must be 1..4, got " + std::to_string(extents.size()));
  }
  for (std::size_t e : extents) {
    if (e == 0) throw ShapeError("tensor extents must be positive");
  }
  std::copy(extents.begin(), extents.end(), dims_.begin());
  rank_ = extents.size();
}

std::size_t Shape::numel() const noexcept {
  if (rank_ == 0) return 0;
  return std::accumulate(dims_.begin(), dims_.begin() + rank_, std::size_t{1}, std::multiplies<>());
}

std::string Shape::to_string() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < rank_; ++i) os << (i ? ", " : "") << dims_[i];
  os << ')';
  return os.str();
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.numel()) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " + shape_.to_string());
  }
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const& {
  return BasicTensor(shape, data_);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) && {
  return BasicTensor(shape, std::move(data_));
}

void require_rank4(const Shape& s, const char* what) {
  if (s.rank() != 4) throw ShapeError(std::string(what) + ": expected (N, C, H, W), got " + s.to_string());
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace sefcn
