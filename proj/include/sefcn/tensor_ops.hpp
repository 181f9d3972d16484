#pragma once

#include <utility>

#include "sefcn/tensor.hpp"

namespace sefcn {

enum class ElementwiseOp { kAdd, kMul, kMax };

// Per-(n, c) mean over the spatial plane; result has shape (N, C, 1, 1).
template <typename T>
BasicTensor<T> global_spatial_mean(const BasicTensor<T>& u);

// out(n,k,i,j) = s(k) * u(n,k,i,j). `s` is (1, C, 1, 1) or (N, C, 1, 1);
// a batch-1 gate is shared by every item.
template <typename T>
BasicTensor<T> scale_channels(const BasicTensor<T>& u, const BasicTensor<T>& s);

// out(n,c,i,j) = m(i,j) * u(n,c,i,j). `m` is (1, 1, H, W) or (N, 1, H, W).
template <typename T>
BasicTensor<T> scale_spatial(const BasicTensor<T>& u, const BasicTensor<T>& m);

template <typename T>
BasicTensor<T> elementwise(ElementwiseOp op, const BasicTensor<T>& a, const BasicTensor<T>& b);

// Channel-axis concatenation: a fills channels [0, C_a), b the rest.
template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b);

// Inverse of concat_channels: first `channels` planes, then the remainder.
template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> split_channels(const BasicTensor<T>& t, std::size_t channels);

template <typename T>
bool all_finite(const BasicTensor<T>& t);

// In-place a += b (identical shapes).
template <typename T>
void accumulate(BasicTensor<T>& a, const BasicTensor<T>& b);

}  // namespace sefcn
