#pragma once

#include <cstddef>
#include <span>

namespace sefcn::kernels {

// Geometry of a zero-padded 2-D cross-correlation over NCHW data.
// Weights are (C_out, C_in, KH, KW).
struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;

  std::size_t out_height() const { return (height + 2 * pad_h - kernel_h) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * pad_w - kernel_w) / stride + 1; }
  std::size_t input_size() const { return batch * in_channels * height * width; }
  std::size_t output_size() const { return batch * out_channels * out_height() * out_width(); }
  std::size_t weight_size() const { return out_channels * in_channels * kernel_h * kernel_w; }

  // Throws ShapeError for zero extents or a kernel larger than the padded input.
  void validate() const;
};

// Straight-line loops, one output element at a time. Kept as the oracle for
// the parallel kernels and as the benchmark baseline.
namespace reference {

// out = conv(in, weight) + bias; bias may be empty.
template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out);

// grad_in = d(out)/d(in)^T grad_out (overwrites grad_in).
template <typename T>
void conv2d_backward_data(const ConvGeometry& g, std::span<const T> grad_out, std::span<const T> weight,
                          std::span<T> grad_in);

// grad_weight += ..., grad_bias += ... (grad_bias may be empty).
template <typename T>
void conv2d_backward_filter(const ConvGeometry& g, std::span<const T> in, std::span<const T> grad_out,
                            std::span<T> grad_weight, std::span<T> grad_bias);

}  // namespace reference

// OpenMP kernels over pre-padded planes. Every output element is produced by
// exactly one thread with a fixed summation order, so results do not depend
// on the thread count.
namespace parallel {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out);

template <typename T>
void conv2d_backward_data(const ConvGeometry& g, std::span<const T> grad_out, std::span<const T> weight,
                          std::span<T> grad_in);

template <typename T>
void conv2d_backward_filter(const ConvGeometry& g, std::span<const T> in, std::span<const T> grad_out,
                            std::span<T> grad_weight, std::span<T> grad_bias);

}  // namespace parallel

}  // namespace sefcn::kernels
