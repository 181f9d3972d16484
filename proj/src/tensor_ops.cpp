#include "sefcn/tensor_ops.hpp"

#include <cmath>
#include <string>

namespace sefcn {

namespace {

void require_same(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) throw ShapeError(std::string(what) + ": shapes differ " + a.to_string() + " vs " + b.to_string());
}

}  // namespace

template <typename T>
BasicTensor<T> global_spatial_mean(const BasicTensor<T>& u) {
  require_rank4(u.shape(), "global_spatial_mean");
  const auto& s = u.shape();
  const std::size_t plane = s.h() * s.w();
  BasicTensor<T> z = BasicTensor<T>::nchw(s.n(), s.c(), 1, 1);
  const T inv = T{1} / static_cast<T>(plane);
  for (std::size_t nc = 0; nc < s.n() * s.c(); ++nc) {
    const T* p = u.raw() + nc * plane;
    T acc = 0;
    for (std::size_t i = 0; i < plane; ++i) acc += p[i];
    z[nc] = acc * inv;
  }
  return z;
}

template <typename T>
BasicTensor<T> scale_channels(const BasicTensor<T>& u, const BasicTensor<T>& s) {
  require_rank4(u.shape(), "scale_channels");
  const auto& us = u.shape();
  if (s.size() != us.c() && s.size() != us.n() * us.c()) {
    throw ShapeError("scale_channels: gate of " + std::to_string(s.size()) + " values for " +
                     std::to_string(us.c()) + " channels");
  }
  const bool per_item = s.size() == us.n() * us.c() && us.n() > 1;
  const std::size_t plane = us.h() * us.w();
  BasicTensor<T> out(us);
  for (std::size_t n = 0; n < us.n(); ++n) {
    for (std::size_t c = 0; c < us.c(); ++c) {
      const T g = s[per_item ? n * us.c() + c : c];
      const std::size_t off = (n * us.c() + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[off + i] = g * u[off + i];
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> scale_spatial(const BasicTensor<T>& u, const BasicTensor<T>& m) {
  require_rank4(u.shape(), "scale_spatial");
  const auto& us = u.shape();
  const std::size_t plane = us.h() * us.w();
  const bool shaped = m.shape().rank() == 4;
  if (shaped && (m.shape().h() != us.h() || m.shape().w() != us.w() || m.shape().c() != 1)) {
    throw ShapeError("scale_spatial: map " + m.shape().to_string() + " for feature map " + us.to_string());
  }
  if (m.size() != plane && m.size() != us.n() * plane) {
    throw ShapeError("scale_spatial: map " + m.shape().to_string() + " for feature map " + us.to_string());
  }
  const bool per_item = m.size() == us.n() * plane && us.n() > 1;
  BasicTensor<T> out(us);
  for (std::size_t n = 0; n < us.n(); ++n) {
    const T* mp = m.raw() + (per_item ? n * plane : 0);
    for (std::size_t c = 0; c < us.c(); ++c) {
      const std::size_t off = (n * us.c() + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[off + i] = mp[i] * u[off + i];
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> elementwise(ElementwiseOp op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same(a.shape(), b.shape(), "elementwise");
  BasicTensor<T> out(a.shape());
  const std::size_t n = a.size();
  switch (op) {
    case ElementwiseOp::kAdd:
      for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
      break;
    case ElementwiseOp::kMul:
      for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
      break;
    case ElementwiseOp::kMax:
      for (std::size_t i = 0; i < n; ++i) out[i] = a[i] >= b[i] ? a[i] : b[i];
      break;
  }
  return out;
}

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank4(a.shape(), "concat_channels");
  require_rank4(b.shape(), "concat_channels");
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.n() != bs.n() || as.h() != bs.h() || as.w() != bs.w()) {
    throw ShapeError("concat_channels: " + as.to_string() + " and " + bs.to_string() + " differ outside the channel axis");
  }
  const std::size_t plane = as.h() * as.w();
  const std::size_t ca = as.c() * plane;
  const std::size_t cb = bs.c() * plane;
  BasicTensor<T> out = BasicTensor<T>::nchw(as.n(), as.c() + bs.c(), as.h(), as.w());
  for (std::size_t n = 0; n < as.n(); ++n) {
    std::copy_n(a.raw() + n * ca, ca, out.raw() + n * (ca + cb));
    std::copy_n(b.raw() + n * cb, cb, out.raw() + n * (ca + cb) + ca);
  }
  return out;
}

template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> split_channels(const BasicTensor<T>& t, std::size_t channels) {
  require_rank4(t.shape(), "split_channels");
  const auto& s = t.shape();
  if (channels == 0 || channels >= s.c()) {
    throw ShapeError("split_channels: cannot split " + std::to_string(s.c()) + " channels at " + std::to_string(channels));
  }
  const std::size_t plane = s.h() * s.w();
  const std::size_t ca = channels * plane;
  const std::size_t cb = (s.c() - channels) * plane;
  BasicTensor<T> a = BasicTensor<T>::nchw(s.n(), channels, s.h(), s.w());
  BasicTensor<T> b = BasicTensor<T>::nchw(s.n(), s.c() - channels, s.h(), s.w());
  for (std::size_t n = 0; n < s.n(); ++n) {
    std::copy_n(t.raw() + n * (ca + cb), ca, a.raw() + n * ca);
    std::copy_n(t.raw() + n * (ca + cb) + ca, cb, b.raw() + n * cb);
  }
  return {std::move(a), std::move(b)};
}

template <typename T>
bool all_finite(const BasicTensor<T>& t) {
  for (T v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
void accumulate(BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same(a.shape(), b.shape(), "accumulate");
  T* pa = a.raw();
  const T* pb = b.raw();
  for (std::size_t i = 0; i < a.size(); ++i) pa[i] += pb[i];
}

#define SEFCN_INSTANTIATE(T)                                                                          \
  template BasicTensor<T> global_spatial_mean(const BasicTensor<T>&);                                 \
  template BasicTensor<T> scale_channels(const BasicTensor<T>&, const BasicTensor<T>&);               \
  template BasicTensor<T> scale_spatial(const BasicTensor<T>&, const BasicTensor<T>&);                \
  template BasicTensor<T> elementwise(ElementwiseOp, const BasicTensor<T>&, const BasicTensor<T>&);   \
  template BasicTensor<T> concat_channels(const BasicTensor<T>&, const BasicTensor<T>&);              \
  template std::pair<BasicTensor<T>, BasicTensor<T>> split_channels(const BasicTensor<T>&, std::size_t); \
  template bool all_finite(const BasicTensor<T>&);                                                    \
  template void accumulate(BasicTensor<T>&, const BasicTensor<T>&);

SEFCN_INSTANTIATE(float)
SEFCN_INSTANTIATE(double)

#undef SEFCN_INSTANTIATE

}  // namespace sefcn
