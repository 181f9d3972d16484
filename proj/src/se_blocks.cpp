#include "sefcn/se_blocks.hpp"

#include <string>
#include <utility>

#include "sefcn/tensor_ops.hpp"

namespace sefcn {

std::string to_string(SEMode mode) {
  switch (mode) {
    case SEMode::kNone: return "none";
    case SEMode::kChannel: return "cse";
    case SEMode::kSpatial: return "sse";
    case SEMode::kConcurrent: return "scse";
  }
  return "?";
}

std::string to_string(Aggregation agg) {
  switch (agg) {
    case Aggregation::kMaxout: return "maxout";
    case Aggregation::kAddition: return "addition";
    case Aggregation::kMultiplication: return "multiplication";
    case Aggregation::kConcatenation: return "concatenation";
  }
  return "?";
}

SEMode parse_se_mode(std::string_view s) {
  if (s == "none") return SEMode::kNone;
  if (s == "cse") return SEMode::kChannel;
  if (s == "sse") return SEMode::kSpatial;
  if (s == "scse") return SEMode::kConcurrent;
  throw ConfigError("unknown se mode \"" + std::string(s) + "\" (expected none, cse, sse or scse)");
}

Aggregation parse_aggregation(std::string_view s) {
  if (s == "maxout") return Aggregation::kMaxout;
  if (s == "addition") return Aggregation::kAddition;
  if (s == "multiplication") return Aggregation::kMultiplication;
  if (s == "concatenation") return Aggregation::kConcatenation;
  throw ConfigError("unknown aggregation \"" + std::string(s) +
                    "\" (expected maxout, addition, multiplication or concatenation)");
}

std::size_t se_param_count(SEMode mode, std::size_t channels, std::size_t r) {
  const std::size_t cse = 2 * channels * (channels / r);
  switch (mode) {
    case SEMode::kNone: return 0;
    case SEMode::kChannel: return cse;
    case SEMode::kSpatial: return channels;
    case SEMode::kConcurrent: return cse + channels;
  }
  return 0;
}

std::size_t se_output_channels(const SEConfig& cfg, std::size_t channels) {
  if (cfg.mode == SEMode::kConcurrent && cfg.aggregation == Aggregation::kConcatenation) return 2 * channels;
  return channels;
}

namespace {

std::size_t checked_reduction(std::size_t channels, std::size_t r) {
  if (r == 0 || channels % r != 0 || channels / r == 0) {
    throw ConfigError("se bottleneck ratio r=" + std::to_string(r) + " must divide the channel count " +
                      std::to_string(channels));
  }
  return channels / r;
}

void require_channels(const Shape& in, std::size_t channels, const char* what) {
  require_rank4(in, what);
  if (in.c() != channels) {
    throw ShapeError(std::string(what) + ": built for " + std::to_string(channels) + " channels, got " + in.to_string());
  }
}

template <typename T>
std::string se_prefix(const std::string& prefix, const char* name) {
  return prefix.empty() ? name : prefix + "." + name;
}

}  // namespace

// ---------------------------------------------------------------------------
// cSE

template <typename T>
ChannelSE<T>::ChannelSE(std::size_t channels, std::size_t r, Rng& rng)
    : channels_(channels),
      reduced_(checked_reduction(channels, r)),
      squeeze_(channels, reduced_, false, rng),
      excite_(reduced_, channels, false, rng) {}

template <typename T>
std::string ChannelSE<T>::describe() const {
  return "cse(" + std::to_string(channels_) + ", r=" + std::to_string(channels_ / reduced_) + ")";
}

template <typename T>
Shape ChannelSE<T>::output_shape(const Shape& in) const {
  require_channels(in, channels_, "cse");
  return in;
}

template <typename T>
void ChannelSE<T>::visit_parameters(const std::string& prefix, const ParameterVisitor<T>& fn) {
  const ParameterVisitor<T> tagged = [&](const std::string& name, const std::string&, Parameter<T>& p) {
    fn(name, "cse", p);
  };
  squeeze_.visit_parameters(se_prefix<T>(prefix, "fc_squeeze"), tagged);
  excite_.visit_parameters(se_prefix<T>(prefix, "fc_excite"), tagged);
}

template <typename T>
BasicTensor<T> ChannelSE<T>::forward(const BasicTensor<T>& u, Mode mode) {
  output_shape(u.shape());
  const BasicTensor<T> z = global_spatial_mean(u);
  const BasicTensor<T> hidden = relu_.forward(squeeze_.forward(z, mode), mode);
  gate_ = sigmoid_.forward(excite_.forward(hidden, mode), mode);
  input_ = u;
  return scale_channels(u, gate_);
}

template <typename T>
BasicTensor<T> ChannelSE<T>::backward(const BasicTensor<T>& grad_out) {
  if (input_.empty()) throw std::logic_error("cse: backward called before forward");
  const Shape& s = input_.shape();
  if (!(grad_out.shape() == s)) throw ShapeError("cse: gradient shape mismatch");
  const std::size_t plane = s.h() * s.w();
  // d/ds_k = sum_{i,j} g * u over channel k
  BasicTensor<T> grad_gate(gate_.shape());
  for (std::size_t nc = 0; nc < s.n() * s.c(); ++nc) {
    T acc = 0;
    for (std::size_t p = 0; p < plane; ++p) acc += grad_out[nc * plane + p] * input_[nc * plane + p];
    grad_gate[nc] = acc;
  }
  const BasicTensor<T> grad_z = squeeze_.backward(relu_.backward(excite_.backward(sigmoid_.backward(grad_gate))));
  BasicTensor<T> grad_in = scale_channels(grad_out, gate_);
  const T inv = T{1} / static_cast<T>(plane);
  for (std::size_t nc = 0; nc < s.n() * s.c(); ++nc) {
    const T add = grad_z[nc] * inv;
    for (std::size_t p = 0; p < plane; ++p) grad_in[nc * plane + p] += add;
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// sSE

template <typename T>
SpatialSE<T>::SpatialSE(std::size_t channels, Rng& rng)
    : channels_(channels), squeeze_(channels, 1, 1, 0, 1, false, rng) {}

template <typename T>
std::string SpatialSE<T>::describe() const {
  return "sse(" + std::to_string(channels_) + ")";
}

template <typename T>
Shape SpatialSE<T>::output_shape(const Shape& in) const {
  require_channels(in, channels_, "sse");
  return in;
}

template <typename T>
void SpatialSE<T>::visit_parameters(const std::string& prefix, const ParameterVisitor<T>& fn) {
  const ParameterVisitor<T> tagged = [&](const std::string& name, const std::string&, Parameter<T>& p) {
    fn(name, "sse", p);
  };
  squeeze_.visit_parameters(se_prefix<T>(prefix, "conv_squeeze"), tagged);
}

template <typename T>
BasicTensor<T> SpatialSE<T>::forward(const BasicTensor<T>& u, Mode mode) {
  output_shape(u.shape());
  projection_ = squeeze_.forward(u, mode);
  map_ = sigmoid_.forward(projection_, mode);
  input_ = u;
  return scale_spatial(u, map_);
}

template <typename T>
BasicTensor<T> SpatialSE<T>::backward(const BasicTensor<T>& grad_out) {
  if (input_.empty()) throw std::logic_error("sse: backward called before forward");
  const Shape& s = input_.shape();
  if (!(grad_out.shape() == s)) throw ShapeError("sse: gradient shape mismatch");
  const std::size_t plane = s.h() * s.w();
  BasicTensor<T> grad_map(map_.shape());
  for (std::size_t n = 0; n < s.n(); ++n) {
    for (std::size_t c = 0; c < s.c(); ++c) {
      const std::size_t off = (n * s.c() + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) grad_map[n * plane + p] += grad_out[off + p] * input_[off + p];
    }
  }
  BasicTensor<T> grad_in = squeeze_.backward(sigmoid_.backward(grad_map));
  accumulate(grad_in, scale_spatial(grad_out, map_));
  return grad_in;
}

// ---------------------------------------------------------------------------
// scSE

template <typename T>
ConcurrentSE<T>::ConcurrentSE(std::size_t channels, std::size_t r, Aggregation aggregation, Rng& rng)
    : channels_(channels), aggregation_(aggregation), cse_(channels, r, rng), sse_(channels, rng) {}

template <typename T>
std::string ConcurrentSE<T>::describe() const {
  return "scse(" + std::to_string(channels_) + ", " + to_string(aggregation_) + ")";
}

template <typename T>
Shape ConcurrentSE<T>::output_shape(const Shape& in) const {
  require_channels(in, channels_, "scse");
  if (aggregation_ == Aggregation::kConcatenation) return Shape::nchw(in.n(), 2 * in.c(), in.h(), in.w());
  return in;
}

template <typename T>
void ConcurrentSE<T>::visit_parameters(const std::string& prefix, const ParameterVisitor<T>& fn) {
  cse_.visit_parameters(se_prefix<T>(prefix, "cse"), fn);
  sse_.visit_parameters(se_prefix<T>(prefix, "sse"), fn);
}

template <typename T>
BasicTensor<T> ConcurrentSE<T>::forward(const BasicTensor<T>& u, Mode mode) {
  output_shape(u.shape());
  out_c_ = cse_.forward(u, mode);
  out_s_ = sse_.forward(u, mode);
  switch (aggregation_) {
    case Aggregation::kMaxout: {
      // Ties go to the cSE branch.
      if (!frozen_) {
        pick_c_.resize(out_c_.size());
        for (std::size_t i = 0; i < out_c_.size(); ++i) pick_c_[i] = out_c_[i] >= out_s_[i];
      } else if (pick_c_.size() != out_c_.size()) {
        throw ShapeError("scse: frozen maxout choices do not match input " + u.shape().to_string());
      }
      BasicTensor<T> out(out_c_.shape());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = pick_c_[i] ? out_c_[i] : out_s_[i];
      return out;
    }
    case Aggregation::kAddition: return elementwise(ElementwiseOp::kAdd, out_c_, out_s_);
    case Aggregation::kMultiplication: return elementwise(ElementwiseOp::kMul, out_c_, out_s_);
    case Aggregation::kConcatenation: return concat_channels(out_c_, out_s_);
  }
  throw ConfigError("scse: unknown aggregation");
}

template <typename T>
void ConcurrentSE<T>::freeze_branches(bool frozen) {
  frozen_ = frozen;
  cse_.freeze_branches(frozen);
  sse_.freeze_branches(frozen);
}

template <typename T>
BasicTensor<T> ConcurrentSE<T>::backward(const BasicTensor<T>& grad_out) {
  if (out_c_.empty()) throw std::logic_error("scse: backward called before forward");
  BasicTensor<T> grad_c(out_c_.shape());
  BasicTensor<T> grad_s(out_s_.shape());
  switch (aggregation_) {
    case Aggregation::kMaxout:
      for (std::size_t i = 0; i < grad_out.size(); ++i) {
        if (pick_c_[i]) {
          grad_c[i] = grad_out[i];
        } else {
          grad_s[i] = grad_out[i];
        }
      }
      break;
    case Aggregation::kAddition:
      grad_c = grad_out;
      grad_s = grad_out;
      break;
    case Aggregation::kMultiplication:
      for (std::size_t i = 0; i < grad_out.size(); ++i) {
        grad_c[i] = grad_out[i] * out_s_[i];
        grad_s[i] = grad_out[i] * out_c_[i];
      }
      break;
    case Aggregation::kConcatenation: {
      auto [gc, gs] = split_channels(grad_out, channels_);
      grad_c = std::move(gc);
      grad_s = std::move(gs);
      break;
    }
  }
  BasicTensor<T> grad_in = cse_.backward(grad_c);
  accumulate(grad_in, sse_.backward(grad_s));
  return grad_in;
}

// ---------------------------------------------------------------------------

template <typename T>
std::unique_ptr<Layer<T>> make_se_block(const SEConfig& cfg, std::size_t channels, Rng& rng) {
  switch (cfg.mode) {
    case SEMode::kNone: return nullptr;
    case SEMode::kChannel: return std::make_unique<ChannelSE<T>>(channels, cfg.r, rng);
    case SEMode::kSpatial: return std::make_unique<SpatialSE<T>>(channels, rng);
    case SEMode::kConcurrent: return std::make_unique<ConcurrentSE<T>>(channels, cfg.r, cfg.aggregation, rng);
  }
  throw ConfigError("unknown se mode");
}

template <typename T>
const BasicTensor<T>* spatial_excitation(const Layer<T>& layer) {
  if (const auto* s = dynamic_cast<const SpatialSE<T>*>(&layer)) return &s->last_map();
  if (const auto* sc = dynamic_cast<const ConcurrentSE<T>*>(&layer)) return &sc->spatial().last_map();
  return nullptr;
}

#define SEFCN_INSTANTIATE(T)                                                                         \
  template class ChannelSE<T>;                                                                       \
  template class SpatialSE<T>;                                                                       \
  template class ConcurrentSE<T>;                                                                    \
  template std::unique_ptr<Layer<T>> make_se_block<T>(const SEConfig&, std::size_t, Rng&);           \
  template const BasicTensor<T>* spatial_excitation<T>(const Layer<T>&);

SEFCN_INSTANTIATE(float)
SEFCN_INSTANTIATE(double)

#undef SEFCN_INSTANTIATE

}  // namespace sefcn
