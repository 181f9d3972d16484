#include "sefcn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "sefcn/kernels/conv2d.hpp"

namespace sefcn {

namespace {

std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

template <typename T>
const BasicTensor<T>& require_cached(const BasicTensor<T>& cached, const char* layer) {
  if (cached.empty()) throw std::logic_error(std::string(layer) + ": backward called before forward");
  return cached;
}

void require_grad_shape(const Shape& expected, const Shape& got, const char* layer) {
  if (!(expected == got)) {
    throw ShapeError(std::string(layer) + ": gradient " + got.to_string() + " does not match output " +
                     expected.to_string());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Layer

template <typename T>
void Layer<T>::visit_parameters(const std::string& prefix, const ParameterVisitor<T>& fn) {
  for (Parameter<T>* p : own_parameters()) fn(join(prefix, p->name), kind(), *p);
}

template <typename T>
void Layer<T>::visit_buffers(const std::string&, const BufferVisitor<T>&) {}

template <typename T>
std::vector<Parameter<T>*> Layer<T>::parameters() {
  std::vector<Parameter<T>*> out;
  visit_parameters("", [&](const std::string&, const std::string&, Parameter<T>& p) { out.push_back(&p); });
  return out;
}

template <typename T>
void Layer<T>::zero_grad() {
  for (Parameter<T>* p : parameters()) p->grad.fill(T{0});
}

template <typename T>
void init_uniform(BasicTensor<T>& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (T& v : t.data()) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    v = static_cast<T>((2.0 * u - 1.0) * bound);
  }
}

// ---------------------------------------------------------------------------
// Conv2d

template <typename T>
Conv2d<T>::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, bool with_bias, Rng& rng,
                  std::size_t stride)
    : Conv2d(in_channels, out_channels, kernel, kernel / 2, stride, with_bias, rng) {}

template <typename T>
Conv2d<T>::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t pad,
                  std::size_t stride, bool with_bias, Rng& rng)
    : in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      pad_(pad),
      stride_(stride),
      has_bias_(with_bias),
      weight_("weight", BasicTensor<T>::nchw(out_channels, in_channels, kernel, kernel)),
      bias_("bias", BasicTensor<T>(Shape{with_bias ? out_channels : 1})) {
  if (in_ == 0 || out_ == 0 || kernel_ == 0 || stride_ == 0) throw ShapeError("conv2d: zero-sized configuration");
  init_uniform(weight_.value, in_ * kernel_ * kernel_, out_ * kernel_ * kernel_, rng);
}

template <typename T>
std::string Conv2d<T>::describe() const {
  std::string s = "conv" + std::to_string(kernel_) + "x" + std::to_string(kernel_) + "(" + std::to_string(in_) + "->" +
                  std::to_string(out_) + ")";
  if (stride_ != 1) s += "/s" + std::to_string(stride_);
  return s;
}

template <typename T>
std::vector<Parameter<T>*> Conv2d<T>::own_parameters() {
  if (has_bias_) return {&weight_, &bias_};
  return {&weight_};
}

template <typename T>
Shape Conv2d<T>::output_shape(const Shape& in) const {
  require_rank4(in, "conv2d");
  if (in.c() != in_) {
    throw ShapeError(describe() + ": input has " + std::to_string(in.c()) + " channels");
  }
  kernels::ConvGeometry g{in.n(), in_, in.h(), in.w(), out_, kernel_, kernel_, stride_, pad_, pad_};
  g.validate();
  return Shape::nchw(in.n(), out_, g.out_height(), g.out_width());
}

template <typename T>
BasicTensor<T> Conv2d<T>::forward(const BasicTensor<T>& x, Mode) {
  const Shape os = output_shape(x.shape());
  const auto& s = x.shape();
  kernels::ConvGeometry g{s.n(), in_, s.h(), s.w(), out_, kernel_, kernel_, stride_, pad_, pad_};
  BasicTensor<T> out(os);
  kernels::parallel::conv2d_forward<T>(g, x.data(), weight_.value.data(),
                                       has_bias_ ? std::span<const T>(bias_.value.data()) : std::span<const T>(),
                                       out.data());
  input_ = x;
  return out;
}

template <typename T>
BasicTensor<T> Conv2d<T>::backward(const BasicTensor<T>& grad_out) {
  const auto& x = require_cached(input_, "conv2d");
  const auto& s = x.shape();
  require_grad_shape(output_shape(s), grad_out.shape(), "conv2d");
  kernels::ConvGeometry g{s.n(), in_, s.h(), s.w(), out_, kernel_, kernel_, stride_, pad_, pad_};
  BasicTensor<T> grad_in(s);
  kernels::parallel::conv2d_backward_data<T>(g, grad_out.data(), weight_.value.data(), grad_in.data());
  kernels::parallel::conv2d_backward_filter<T>(g, x.data(), grad_out.data(), weight_.grad.data(),
                                               has_bias_ ? bias_.grad.data() : std::span<T>());
  return grad_in;
}

// ---------------------------------------------------------------------------
// FullyConnected

template <typename T>
FullyConnected<T>::FullyConnected(std::size_t in_features, std::size_t out_features, bool with_bias, Rng& rng)
    : in_(in_features),
      out_(out_features),
      has_bias_(with_bias),
      weight_("weight", BasicTensor<T>(Shape{out_features, in_features})),
      bias_("bias", BasicTensor<T>(Shape{with_bias ? out_features : 1})) {
  init_uniform(weight_.value, in_, out_, rng);
}

template <typename T>
std::string FullyConnected<T>::describe() const {
  return "fc(" + std::to_string(in_) + "->" + std::to_string(out_) + ")";
}

template <typename T>
std::vector<Parameter<T>*> FullyConnected<T>::own_parameters() {
  if (has_bias_) return {&weight_, &bias_};
  return {&weight_};
}

template <typename T>
Shape FullyConnected<T>::output_shape(const Shape& in) const {
  const bool vec4 = in.rank() == 4 && in.h() == 1 && in.w() == 1;
  if (!(in.rank() == 2 || vec4) || in[1] != in_) {
    throw ShapeError(describe() + ": expected (N, " + std::to_string(in_) + ") input, got " + in.to_string());
  }
  return vec4 ? Shape::nchw(in[0], out_, 1, 1) : Shape{in[0], out_};
}

template <typename T>
BasicTensor<T> FullyConnected<T>::forward(const BasicTensor<T>& x, Mode) {
  BasicTensor<T> out(output_shape(x.shape()));
  const std::size_t batch = x.shape()[0];
  const T* w = weight_.value.raw();
  for (std::size_t n = 0; n < batch; ++n) {
    const T* xi = x.raw() + n * in_;
    for (std::size_t o = 0; o < out_; ++o) {
      T acc = has_bias_ ? bias_.value[o] : T{0};
      for (std::size_t i = 0; i < in_; ++i) acc += w[o * in_ + i] * xi[i];
      out[n * out_ + o] = acc;
    }
  }
  input_ = x;
  return out;
}

template <typename T>
BasicTensor<T> FullyConnected<T>::backward(const BasicTensor<T>& grad_out) {
  const auto& x = require_cached(input_, "fully_connected");
  require_grad_shape(output_shape(x.shape()), grad_out.shape(), "fully_connected");
  const std::size_t batch = x.shape()[0];
  BasicTensor<T> grad_in(x.shape());
  const T* w = weight_.value.raw();
  T* gw = weight_.grad.raw();
  for (std::size_t n = 0; n < batch; ++n) {
    const T* g = grad_out.raw() + n * out_;
    const T* xi = x.raw() + n * in_;
    T* gi = grad_in.raw() + n * in_;
    for (std::size_t o = 0; o < out_; ++o) {
      for (std::size_t i = 0; i < in_; ++i) {
        gi[i] += w[o * in_ + i] * g[o];
        gw[o * in_ + i] += g[o] * xi[i];
      }
      if (has_bias_) bias_.grad[o] += g[o];
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// Activations

template <typename T>
BasicTensor<T> ReLU<T>::forward(const BasicTensor<T>& x, Mode) {
  if (!frozen_) {
    active_.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) active_[i] = x[i] > T{0};
  } else if (active_.size() != x.size()) {
    throw ShapeError("relu: frozen mask does not match input " + x.shape().to_string());
  }
  BasicTensor<T> out(x.shape());
  const T* in = x.raw();
  const std::uint8_t* a = active_.data();
  T* o = out.raw();
#pragma omp simd
  for (std::size_t i = 0; i < x.size(); ++i) o[i] = a[i] ? in[i] : T{0};
  return out;
}

template <typename T>
BasicTensor<T> ReLU<T>::backward(const BasicTensor<T>& grad_out) {
  if (active_.empty()) throw std::logic_error("relu: backward called before forward");
  if (grad_out.size() != active_.size()) throw ShapeError("relu: gradient shape mismatch");
  BasicTensor<T> out(grad_out.shape());
  const std::uint8_t* a = active_.data();
  const T* g = grad_out.raw();
  T* o = out.raw();
#pragma omp simd
  for (std::size_t i = 0; i < out.size(); ++i) o[i] = a[i] ? g[i] : T{0};
  return out;
}

template <typename T>
BasicTensor<T> Sigmoid<T>::forward(const BasicTensor<T>& x, Mode) {
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    if (v >= T{0}) {
      out[i] = T{1} / (T{1} + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T{1} + e);
    }
  }
  output_ = out;
  return out;
}

template <typename T>
BasicTensor<T> Sigmoid<T>::backward(const BasicTensor<T>& grad_out) {
  const auto& y = require_cached(output_, "sigmoid");
  require_grad_shape(y.shape(), grad_out.shape(), "sigmoid");
  BasicTensor<T> out(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = grad_out[i] * y[i] * (T{1} - y[i]);
  return out;
}

// ---------------------------------------------------------------------------
// BatchNorm2d

template <typename T>
BatchNorm2d<T>::BatchNorm2d(std::size_t channels)
    : channels_(channels),
      gamma_("gamma", BasicTensor<T>(Shape{channels}, T{1})),
      beta_("beta", BasicTensor<T>(Shape{channels}, T{0})),
      running_mean_(Shape{channels}, T{0}),
      running_var_(Shape{channels}, T{1}) {}

template <typename T>
Shape BatchNorm2d<T>::output_shape(const Shape& in) const {
  require_rank4(in, "batch_norm");
  if (in.c() != channels_) {
    throw ShapeError("batch_norm(" + std::to_string(channels_) + "): input has " + std::to_string(in.c()) + " channels");
  }
  return in;
}

template <typename T>
void BatchNorm2d<T>::visit_buffers(const std::string& prefix, const BufferVisitor<T>& fn) {
  fn(join(prefix, "running_mean"), running_mean_);
  fn(join(prefix, "running_var"), running_var_);
}

template <typename T>
BasicTensor<T> BatchNorm2d<T>::forward(const BasicTensor<T>& x, Mode mode) {
  const Shape s = output_shape(x.shape());
  const std::size_t plane = s.h() * s.w();
  const std::size_t count = s.n() * plane;
  if (mode == Mode::kTrain && count < 2) {
    throw ShapeError("batch_norm: training needs at least 2 values per channel, got " + std::to_string(count));
  }
  mode_ = mode;
  normalized_ = BasicTensor<T>(s);
  inv_std_.assign(channels_, T{0});
  BasicTensor<T> out(s);
  const T eps = static_cast<T>(kBatchNormEpsilon);
  const T momentum = static_cast<T>(kBatchNormMomentum);
  for (std::size_t c = 0; c < channels_; ++c) {
    T mean;
    T var;
    if (mode == Mode::kTrain) {
      T sum = 0;
      for (std::size_t n = 0; n < s.n(); ++n) {
        const T* p = x.raw() + (n * channels_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      }
      mean = sum / static_cast<T>(count);
      T sq = 0;
      for (std::size_t n = 0; n < s.n(); ++n) {
        const T* p = x.raw() + (n * channels_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mean) * (p[i] - mean);
      }
      var = sq / static_cast<T>(count);
      running_mean_[c] = (T{1} - momentum) * running_mean_[c] + momentum * mean;
      running_var_[c] =
          (T{1} - momentum) * running_var_[c] + momentum * var * static_cast<T>(count) / static_cast<T>(count - 1);
    } else {
      mean = running_mean_[c];
      var = running_var_[c];
    }
    const T inv = T{1} / std::sqrt(var + eps);
    inv_std_[c] = inv;
    const T g = gamma_.value[c];
    const T b = beta_.value[c];
    for (std::size_t n = 0; n < s.n(); ++n) {
      const std::size_t off = (n * channels_ + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T xh = (x[off + i] - mean) * inv;
        normalized_[off + i] = xh;
        out[off + i] = g * xh + b;
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> BatchNorm2d<T>::backward(const BasicTensor<T>& grad_out) {
  const auto& xh = require_cached(normalized_, "batch_norm");
  const Shape& s = xh.shape();
  require_grad_shape(s, grad_out.shape(), "batch_norm");
  const std::size_t plane = s.h() * s.w();
  const T count = static_cast<T>(s.n() * plane);
  BasicTensor<T> grad_in(s);
  for (std::size_t c = 0; c < channels_; ++c) {
    T sum_g = 0;
    T sum_gx = 0;
    for (std::size_t n = 0; n < s.n(); ++n) {
      const std::size_t off = (n * channels_ + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_g += grad_out[off + i];
        sum_gx += grad_out[off + i] * xh[off + i];
      }
    }
    gamma_.grad[c] += sum_gx;
    beta_.grad[c] += sum_g;
    const T scale = gamma_.value[c] * inv_std_[c];
    for (std::size_t n = 0; n < s.n(); ++n) {
      const std::size_t off = (n * channels_ + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        if (mode_ == Mode::kTrain) {
          grad_in[off + i] = scale * (grad_out[off + i] - sum_g / count - xh[off + i] * sum_gx / count);
        } else {
          grad_in[off + i] = scale * grad_out[off + i];
        }
      }
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// Pooling

template <typename T>
std::pair<BasicTensor<T>, PoolIndices> max_pool2(const BasicTensor<T>& x) {
  require_rank4(x.shape(), "max_pool2");
  const auto& s = x.shape();
  if (s.h() % 2 != 0 || s.w() % 2 != 0) {
    throw ShapeError("max_pool2: spatial extents must be even, got " + s.to_string());
  }
  const std::size_t oh = s.h() / 2;
  const std::size_t ow = s.w() / 2;
  BasicTensor<T> out = BasicTensor<T>::nchw(s.n(), s.c(), oh, ow);
  PoolIndices idx{s, std::vector<std::int32_t>(out.size())};
  for (std::size_t nc = 0; nc < s.n() * s.c(); ++nc) {
    const T* p = x.raw() + nc * s.h() * s.w();
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = (2 * i) * s.w() + 2 * j;
        for (std::size_t a = 0; a < 2; ++a) {
          for (std::size_t b = 0; b < 2; ++b) {
            const std::size_t pos = (2 * i + a) * s.w() + 2 * j + b;
            if (p[pos] > p[best]) best = pos;
          }
        }
        const std::size_t o = (nc * oh + i) * ow + j;
        out[o] = p[best];
        idx.argmax[o] = static_cast<std::int32_t>(best);
      }
    }
  }
  return {std::move(out), std::move(idx)};
}

namespace {

// Resolves the input-plane position for pooled element (i, j) of switch plane
// `plane`, validating that it lies in the 2x2 window.
std::size_t switch_position(const PoolIndices& idx, std::size_t plane, std::size_t i, std::size_t j) {
  const std::size_t in_w = idx.input_shape.w();
  const std::size_t oh = idx.input_shape.h() / 2;
  const std::size_t ow = in_w / 2;
  const std::int32_t v = idx.argmax[(plane * oh + i) * ow + j];
  if (v < 0) throw CorruptIndexError("max_unpool2: negative switch");
  const auto pos = static_cast<std::size_t>(v);
  const std::size_t r = pos / in_w;
  const std::size_t col = pos % in_w;
  if (r / 2 != i || col / 2 != j) {
    throw CorruptIndexError("max_unpool2: switch " + std::to_string(v) + " outside window (" + std::to_string(i) +
                            ", " + std::to_string(j) + ")");
  }
  return pos;
}

void check_unpool_shape(const Shape& x, const PoolIndices& idx) {
  require_rank4(x, "max_unpool2");
  const Shape& ps = idx.input_shape;
  if (ps.rank() != 4 || idx.argmax.size() != ps.n() * ps.c() * (ps.h() / 2) * (ps.w() / 2)) {
    throw CorruptIndexError("max_unpool2: switch table does not match its recorded shape");
  }
  if (x.n() != ps.n() || 2 * x.h() != ps.h() || 2 * x.w() != ps.w()) {
    throw ShapeError("max_unpool2: input " + x.to_string() + " does not match pooled " + ps.to_string());
  }
}

}  // namespace

template <typename T>
BasicTensor<T> max_unpool2(const BasicTensor<T>& x, const PoolIndices& indices) {
  const auto& s = x.shape();
  check_unpool_shape(s, indices);
  const std::size_t pool_c = indices.input_shape.c();
  const std::size_t out_plane = 4 * s.h() * s.w();
  BasicTensor<T> out = BasicTensor<T>::nchw(s.n(), s.c(), 2 * s.h(), 2 * s.w());
  for (std::size_t n = 0; n < s.n(); ++n) {
    for (std::size_t c = 0; c < s.c(); ++c) {
      const std::size_t plane = n * pool_c + c % pool_c;
      for (std::size_t i = 0; i < s.h(); ++i) {
        for (std::size_t j = 0; j < s.w(); ++j) {
          const std::size_t pos = switch_position(indices, plane, i, j);
          out[(n * s.c() + c) * out_plane + pos] = x.at(n, c, i, j);
        }
      }
    }
  }
  return out;
}

template <typename T>
Shape MaxPool2<T>::output_shape(const Shape& in) const {
  require_rank4(in, "max_pool2");
  if (in.h() % 2 != 0 || in.w() % 2 != 0) {
    throw ShapeError("max_pool2: spatial extents must be even, got " + in.to_string());
  }
  return Shape::nchw(in.n(), in.c(), in.h() / 2, in.w() / 2);
}

template <typename T>
BasicTensor<T> MaxPool2<T>::forward(const BasicTensor<T>& x, Mode) {
  if (!frozen_) {
    auto [out, idx] = max_pool2(x);
    indices_ = std::move(idx);
    return out;
  }
  if (!(x.shape() == indices_.input_shape)) {
    throw ShapeError("max_pool2: frozen switches do not match input " + x.shape().to_string());
  }
  const Shape os = output_shape(x.shape());
  const std::size_t in_plane = x.shape().h() * x.shape().w();
  BasicTensor<T> out(os);
  for (std::size_t plane = 0; plane < os.n() * os.c(); ++plane) {
    for (std::size_t i = 0; i < os.h(); ++i) {
      for (std::size_t j = 0; j < os.w(); ++j) {
        out[(plane * os.h() + i) * os.w() + j] = x[plane * in_plane + switch_position(indices_, plane, i, j)];
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> MaxPool2<T>::backward(const BasicTensor<T>& grad_out) {
  if (indices_.argmax.empty()) throw std::logic_error("max_pool2: backward called before forward");
  require_grad_shape(output_shape(indices_.input_shape), grad_out.shape(), "max_pool2");
  // Routing gradients to the switches is exactly unpooling.
  return max_unpool2(grad_out, indices_);
}

template <typename T>
Shape MaxUnpool2<T>::output_shape(const Shape& in) const {
  require_rank4(in, "max_unpool2");
  return Shape::nchw(in.n(), in.c(), 2 * in.h(), 2 * in.w());
}

template <typename T>
BasicTensor<T> MaxUnpool2<T>::forward(const BasicTensor<T>& x, Mode) {
  input_shape_ = x.shape();
  return max_unpool2(x, pool_->indices());
}

template <typename T>
BasicTensor<T> MaxUnpool2<T>::backward(const BasicTensor<T>& grad_out) {
  const Shape& s = input_shape_;
  if (s.rank() != 4) throw std::logic_error("max_unpool2: backward called before forward");
  require_grad_shape(output_shape(s), grad_out.shape(), "max_unpool2");
  const PoolIndices& idx = pool_->indices();
  check_unpool_shape(s, idx);
  const std::size_t pool_c = idx.input_shape.c();
  const std::size_t out_plane = 4 * s.h() * s.w();
  BasicTensor<T> grad_in(s);
  for (std::size_t n = 0; n < s.n(); ++n) {
    for (std::size_t c = 0; c < s.c(); ++c) {
      const std::size_t plane = n * pool_c + c % pool_c;
      for (std::size_t i = 0; i < s.h(); ++i) {
        for (std::size_t j = 0; j < s.w(); ++j) {
          grad_in.at(n, c, i, j) = grad_out[(n * s.c() + c) * out_plane + switch_position(idx, plane, i, j)];
        }
      }
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// TransposedConv2

template <typename T>
TransposedConv2<T>::TransposedConv2(std::size_t in_channels, std::size_t out_channels, bool with_bias, Rng& rng)
    : in_(in_channels),
      out_(out_channels),
      has_bias_(with_bias),
      weight_("weight", BasicTensor<T>::nchw(in_channels, out_channels, 2, 2)),
      bias_("bias", BasicTensor<T>(Shape{with_bias ? out_channels : 1})) {
  init_uniform(weight_.value, in_ * 4, out_ * 4, rng);
}

template <typename T>
std::string TransposedConv2<T>::describe() const {
  return "upconv2x2(" + std::to_string(in_) + "->" + std::to_string(out_) + ")";
}

template <typename T>
std::vector<Parameter<T>*> TransposedConv2<T>::own_parameters() {
  if (has_bias_) return {&weight_, &bias_};
  return {&weight_};
}

template <typename T>
Shape TransposedConv2<T>::output_shape(const Shape& in) const {
  require_rank4(in, "transposed_conv2");
  if (in.c() != in_) {
    throw ShapeError(describe() + ": input has " + std::to_string(in.c()) + " channels");
  }
  return Shape::nchw(in.n(), out_, 2 * in.h(), 2 * in.w());
}

template <typename T>
BasicTensor<T> TransposedConv2<T>::forward(const BasicTensor<T>& x, Mode) {
  const Shape os = output_shape(x.shape());
  const auto& s = x.shape();
  const std::size_t h = s.h();
  const std::size_t w = s.w();
  BasicTensor<T> out(os);
  const T* wt = weight_.value.raw();
  const auto tasks = static_cast<std::ptrdiff_t>(s.n() * out_);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t t = 0; t < tasks; ++t) {
    const std::size_t n = static_cast<std::size_t>(t) / out_;
    const std::size_t co = static_cast<std::size_t>(t) % out_;
    T* o = out.raw() + static_cast<std::size_t>(t) * 4 * h * w;
    std::fill_n(o, 4 * h * w, has_bias_ ? bias_.value[co] : T{0});
    for (std::size_t ci = 0; ci < in_; ++ci) {
      const T* xi = x.raw() + (n * in_ + ci) * h * w;
      const T* k = wt + (ci * out_ + co) * 4;
      for (std::size_t i = 0; i < h; ++i) {
        T* r0 = o + (2 * i) * 2 * w;
        T* r1 = r0 + 2 * w;
        for (std::size_t j = 0; j < w; ++j) {
          const T v = xi[i * w + j];
          r0[2 * j] += v * k[0];
          r0[2 * j + 1] += v * k[1];
          r1[2 * j] += v * k[2];
          r1[2 * j + 1] += v * k[3];
        }
      }
    }
  }
  input_ = x;
  return out;
}

template <typename T>
BasicTensor<T> TransposedConv2<T>::backward(const BasicTensor<T>& grad_out) {
  const auto& x = require_cached(input_, "transposed_conv2");
  const auto& s = x.shape();
  require_grad_shape(output_shape(s), grad_out.shape(), "transposed_conv2");
  const std::size_t h = s.h();
  const std::size_t w = s.w();
  BasicTensor<T> grad_in(s);
  const T* wt = weight_.value.raw();
  const auto in_tasks = static_cast<std::ptrdiff_t>(s.n() * in_);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t t = 0; t < in_tasks; ++t) {
    const std::size_t n = static_cast<std::size_t>(t) / in_;
    const std::size_t ci = static_cast<std::size_t>(t) % in_;
    T* gi = grad_in.raw() + static_cast<std::size_t>(t) * h * w;
    for (std::size_t co = 0; co < out_; ++co) {
      const T* g = grad_out.raw() + (n * out_ + co) * 4 * h * w;
      const T* k = wt + (ci * out_ + co) * 4;
      for (std::size_t i = 0; i < h; ++i) {
        const T* r0 = g + (2 * i) * 2 * w;
        const T* r1 = r0 + 2 * w;
        for (std::size_t j = 0; j < w; ++j) {
          gi[i * w + j] += r0[2 * j] * k[0] + r0[2 * j + 1] * k[1] + r1[2 * j] * k[2] + r1[2 * j + 1] * k[3];
        }
      }
    }
  }
  T* gw = weight_.grad.raw();
  const auto w_tasks = static_cast<std::ptrdiff_t>(in_ * out_);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t t = 0; t < w_tasks; ++t) {
    const std::size_t ci = static_cast<std::size_t>(t) / out_;
    const std::size_t co = static_cast<std::size_t>(t) % out_;
    T acc[4] = {0, 0, 0, 0};
    for (std::size_t n = 0; n < s.n(); ++n) {
      const T* xi = x.raw() + (n * in_ + ci) * h * w;
      const T* g = grad_out.raw() + (n * out_ + co) * 4 * h * w;
      for (std::size_t i = 0; i < h; ++i) {
        const T* r0 = g + (2 * i) * 2 * w;
        const T* r1 = r0 + 2 * w;
        for (std::size_t j = 0; j < w; ++j) {
          const T v = xi[i * w + j];
          acc[0] += v * r0[2 * j];
          acc[1] += v * r0[2 * j + 1];
          acc[2] += v * r1[2 * j];
          acc[3] += v * r1[2 * j + 1];
        }
      }
    }
    for (std::size_t k = 0; k < 4; ++k) gw[static_cast<std::size_t>(t) * 4 + k] += acc[k];
  }
  if (has_bias_) {
    for (std::size_t co = 0; co < out_; ++co) {
      T acc = 0;
      for (std::size_t n = 0; n < s.n(); ++n) {
        const T* g = grad_out.raw() + (n * out_ + co) * 4 * h * w;
        for (std::size_t p = 0; p < 4 * h * w; ++p) acc += g[p];
      }
      bias_.grad[co] += acc;
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// Softmax

template <typename T>
BasicTensor<T> softmax_channels(const BasicTensor<T>& logits) {
  require_rank4(logits.shape(), "softmax_channels");
  const auto& s = logits.shape();
  if (s.c() < 2) throw ShapeError("softmax_channels: needs at least 2 channels");
  const std::size_t plane = s.h() * s.w();
  BasicTensor<T> out(s);
  for (std::size_t n = 0; n < s.n(); ++n) {
    const T* x = logits.raw() + n * s.c() * plane;
    T* y = out.raw() + n * s.c() * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      T mx = x[p];
      for (std::size_t c = 1; c < s.c(); ++c) mx = std::max(mx, x[c * plane + p]);
      T sum = 0;
      for (std::size_t c = 0; c < s.c(); ++c) {
        const T e = std::exp(x[c * plane + p] - mx);
        y[c * plane + p] = e;
        sum += e;
      }
      const T inv = T{1} / sum;
      for (std::size_t c = 0; c < s.c(); ++c) y[c * plane + p] *= inv;
    }
  }
  return out;
}

template <typename T>
Shape SoftmaxChannels<T>::output_shape(const Shape& in) const {
  require_rank4(in, "softmax_channels");
  if (in.c() < 2) throw ShapeError("softmax_channels: needs at least 2 channels");
  return in;
}

template <typename T>
BasicTensor<T> SoftmaxChannels<T>::forward(const BasicTensor<T>& x, Mode) {
  output_ = softmax_channels(x);
  return output_;
}

template <typename T>
BasicTensor<T> SoftmaxChannels<T>::backward(const BasicTensor<T>& grad_out) {
  const auto& y = require_cached(output_, "softmax");
  const auto& s = y.shape();
  require_grad_shape(s, grad_out.shape(), "softmax");
  const std::size_t plane = s.h() * s.w();
  BasicTensor<T> grad_in(s);
  for (std::size_t n = 0; n < s.n(); ++n) {
    const std::size_t off = n * s.c() * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      T dot = 0;
      for (std::size_t c = 0; c < s.c(); ++c) dot += y[off + c * plane + p] * grad_out[off + c * plane + p];
      for (std::size_t c = 0; c < s.c(); ++c) {
        grad_in[off + c * plane + p] = y[off + c * plane + p] * (grad_out[off + c * plane + p] - dot);
      }
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// Sequential

template <typename T>
BasicTensor<T> Sequential<T>::forward(const BasicTensor<T>& x, Mode mode) {
  BasicTensor<T> h = x;
  for (auto& l : layers_) h = l->forward(h, mode);
  return h;
}

template <typename T>
BasicTensor<T> Sequential<T>::backward(const BasicTensor<T>& grad_out) {
  BasicTensor<T> g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

template <typename T>
Shape Sequential<T>::output_shape(const Shape& in) const {
  Shape s = in;
  for (const auto& l : layers_) s = l->output_shape(s);
  return s;
}

template <typename T>
std::vector<std::string> Sequential<T>::recipe() const {
  std::vector<std::string> out;
  for (const auto& l : layers_) out.push_back(l->describe());
  return out;
}

template <typename T>
std::string Sequential<T>::describe() const {
  std::string s = "[";
  for (std::size_t i = 0; i < layers_.size(); ++i) s += (i ? ", " : "") + layers_[i]->describe();
  return s + "]";
}

template <typename T>
void Sequential<T>::visit_parameters(const std::string& prefix, const ParameterVisitor<T>& fn) {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->visit_parameters(join(prefix, std::to_string(i)), fn);
}

template <typename T>
void Sequential<T>::visit_buffers(const std::string& prefix, const BufferVisitor<T>& fn) {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->visit_buffers(join(prefix, std::to_string(i)), fn);
}

template <typename T>
void Sequential<T>::freeze_branches(bool frozen) {
  for (auto& l : layers_) l->freeze_branches(frozen);
}

#define SEFCN_INSTANTIATE(T)                                                          \
  template class Layer<T>;                                                            \
  template class Conv2d<T>;                                                           \
  template class FullyConnected<T>;                                                   \
  template class ReLU<T>;                                                             \
  template class Sigmoid<T>;                                                          \
  template class BatchNorm2d<T>;                                                      \
  template class MaxPool2<T>;                                                         \
  template class MaxUnpool2<T>;                                                       \
  template class TransposedConv2<T>;                                                  \
  template class SoftmaxChannels<T>;                                                  \
  template class Sequential<T>;                                                       \
  template void init_uniform(BasicTensor<T>&, std::size_t, std::size_t, Rng&);        \
  template std::pair<BasicTensor<T>, PoolIndices> max_pool2(const BasicTensor<T>&);   \
  template BasicTensor<T> max_unpool2(const BasicTensor<T>&, const PoolIndices&);     \
  template BasicTensor<T> softmax_channels(const BasicTensor<T>&);

SEFCN_INSTANTIATE(float)
SEFCN_INSTANTIATE(double)

#undef SEFCN_INSTANTIATE

}  // namespace sefcn
