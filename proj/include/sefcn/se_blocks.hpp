#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "sefcn/layers.hpp"

namespace sefcn {

enum class SEMode { kNone, kChannel, kSpatial, kConcurrent };
enum class Aggregation { kMaxout, kAddition, kMultiplication, kConcatenation };

// Which recalibration wraps a block output. `aggregation` only matters for
// the concurrent (scSE) mode.
struct SEConfig {
  SEMode mode = SEMode::kNone;
  std::size_t r = 2;
  Aggregation aggregation = Aggregation::kMaxout;

  friend bool operator==(const SEConfig&, const SEConfig&) = default;
};

// Config-file spellings: none/cse/sse/scse and maxout/addition/multiplication/concatenation.
std::string to_string(SEMode mode);
std::string to_string(Aggregation agg);
SEMode parse_se_mode(std::string_view s);       // throws ConfigError
Aggregation parse_aggregation(std::string_view s);  // throws ConfigError

// Weights added by one block wrapping a C-channel map (all SE layers are bias-free).
std::size_t se_param_count(SEMode mode, std::size_t channels, std::size_t r);

// Channels emitted by an SE block wrapping `channels` inputs.
std::size_t se_output_channels(const SEConfig& cfg, std::size_t channels);

// Spatial squeeze + channel excitation:
//   z = mean_{i,j} u, s = sigmoid(W1 relu(W2 z)), out = s (.) u
// W2 is (C/r, C), W1 is (C, C/r); z is computed per batch item.
template <typename T>
class ChannelSE final : public Layer<T> {
 public:
  ChannelSE(std::size_t channels, std::size_t r, Rng& rng);

  BasicTensor<T> forward(const BasicTensor<T>& u, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  Shape output_shape(const Shape& in) const override;
  std::string kind() const override { return "cse"; }
  void freeze_branches(bool frozen) override { relu_.freeze_branches(frozen); }
  std::string describe() const override;
  void visit_parameters(const std::string& prefix, const ParameterVisitor<T>& fn) override;

  FullyConnected<T>& squeeze() { return squeeze_; }  // W2
  FullyConnected<T>& excite() { return excite_; }    // W1
  // Gates of the last forward, (N, C, 1, 1).
  const BasicTensor<T>& last_gate() const { return gate_; }

 private:
  std::size_t channels_, reduced_;
  FullyConnected<T> squeeze_;
  ReLU<T> relu_;
  FullyConnected<T> excite_;
  Sigmoid<T> sigmoid_;
  BasicTensor<T> input_;
  BasicTensor<T> gate_;
};

// Channel squeeze + spatial excitation:
//   q = W_sq * u (1x1 conv, C -> 1), out = sigmoid(q) (.) u
template <typename T>
class SpatialSE final : public Layer<T> {
 public:
  SpatialSE(std::size_t channels, Rng& rng);

  BasicTensor<T> forward(const BasicTensor<T>& u, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  Shape output_shape(const Shape& in) const override;
  std::string kind() const override { return "sse"; }
  std::string describe() const override;
  void visit_parameters(const std::string& prefix, const ParameterVisitor<T>& fn) override;

  Conv2d<T>& squeeze() { return squeeze_; }
  // Spatial gate of the last forward, (N, 1, H, W).
  const BasicTensor<T>& last_map() const { return map_; }
  const BasicTensor<T>& last_projection() const { return projection_; }

 private:
  std::size_t channels_;
  Conv2d<T> squeeze_;
  Sigmoid<T> sigmoid_;
  BasicTensor<T> input_;
  BasicTensor<T> projection_;
  BasicTensor<T> map_;
};

// cSE and sSE applied to the same input, then aggregated.
template <typename T>
class ConcurrentSE final : public Layer<T> {
 public:
  ConcurrentSE(std::size_t channels, std::size_t r, Aggregation aggregation, Rng& rng);

  BasicTensor<T> forward(const BasicTensor<T>& u, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  Shape output_shape(const Shape& in) const override;
  std::string kind() const override { return "scse"; }
  void freeze_branches(bool frozen) override;
  std::string describe() const override;
  void visit_parameters(const std::string& prefix, const ParameterVisitor<T>& fn) override;

  ChannelSE<T>& channel() { return cse_; }
  SpatialSE<T>& spatial() { return sse_; }
  const SpatialSE<T>& spatial() const { return sse_; }
  Aggregation aggregation() const { return aggregation_; }

 private:
  std::size_t channels_;
  Aggregation aggregation_;
  ChannelSE<T> cse_;
  SpatialSE<T> sse_;
  BasicTensor<T> out_c_;
  BasicTensor<T> out_s_;
  std::vector<std::uint8_t> pick_c_;  // maxout winners, 1 where the cSE branch won
  bool frozen_ = false;
};

// nullptr for SEMode::kNone. Throws ConfigError when r does not divide C.
template <typename T>
std::unique_ptr<Layer<T>> make_se_block(const SEConfig& cfg, std::size_t channels, Rng& rng);

// Spatial gate of an sSE or scSE block; nullptr for cSE or unknown layers.
template <typename T>
const BasicTensor<T>* spatial_excitation(const Layer<T>& layer);

}  // namespace sefcn
