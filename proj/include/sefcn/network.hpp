#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "sefcn/layers.hpp"
#include "sefcn/se_blocks.hpp"

namespace sefcn {

enum class Family { kUNet, kSDNet, kFCDenseNet };

// SE placement: P1 encoders, P2 decoders, P3 bottleneck, P4 classifier,
// P5 encoders + decoders, P6 all of them.
enum class Position { kP1 = 1, kP2, kP3, kP4, kP5, kP6 };

enum class BlockKind { kEncoder, kDecoder, kBottleneck, kClassifier };

std::string to_string(Family f);
std::string to_string(Position p);
std::string to_string(BlockKind k);
Family parse_family(std::string_view s);      // throws ConfigError
Position parse_position(std::string_view s);  // "P1".."P6"; throws ConfigError

bool se_attached(Position p, BlockKind kind);

struct NetworkSpec {
  Family family = Family::kSDNet;
  std::size_t depth = 4;
  std::size_t channels = 64;
  std::size_t num_classes = 9;
  std::size_t in_channels = 1;
  SEConfig se{SEMode::kConcurrent, 2, Aggregation::kMaxout};
  Position position = Position::kP5;
  int skip_config = 1;  // 1: skip taps the SE output, 2: the block output before SE

  void validate() const;  // throws ConfigError
  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

struct BlockDescriptor {
  BlockKind kind;
  std::size_t index;        // 1-based within its kind
  std::string id;           // "E1".."E4", "B", "D1".."D4", "C"
  std::vector<std::string> layers;
  bool se_attached;
  std::size_t in_channels;
  std::size_t out_channels;  // after the SE block (doubled for concatenation)
};

// conv -> batch_norm -> relu units with dense concatenation:
//   a = unit1(x); b = unit2([a, x]); out = unit3([b, a, x])
template <typename T>
class DenseBlock final : public Layer<T> {
 public:
  DenseBlock(std::size_t in_channels, std::size_t channels, Rng& rng);

  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  Shape output_shape(const Shape& in) const override;
  std::string kind() const override { return "dense_block"; }
  void freeze_branches(bool frozen) override;
  std::string describe() const override;
  void visit_parameters(const std::string& prefix, const ParameterVisitor<T>& fn) override;
  void visit_buffers(const std::string& prefix, const BufferVisitor<T>& fn) override;

  std::vector<std::string> recipe() const;

 private:
  std::size_t in_, channels_;
  Sequential<T> unit1_, unit2_, unit3_;
};

// Layers of one encoder/decoder/bottleneck body (pooling and upsampling live
// between blocks). For kClassifier this is the 1x1 convolution to `c_out`.
template <typename T>
std::unique_ptr<Layer<T>> build_block(Family family, BlockKind kind, std::size_t c_in, std::size_t c_out, Rng& rng);

std::vector<std::string> block_recipe(Family family, BlockKind kind, std::size_t c_in, std::size_t c_out);

struct BlockParams {
  std::string id;
  std::size_t total = 0;
  std::size_t se = 0;
};

struct ParamReport {
  std::size_t total = 0;
  std::size_t se_total = 0;
  std::size_t se_blocks = 0;
  double percentage = 0.0;  // 100 * se_total / (total - se_total)
  std::vector<BlockParams> per_block;
};

template <typename T>
class Network {
 public:
  Network(const NetworkSpec& spec, std::uint64_t seed);
  ~Network();
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  const NetworkSpec& spec() const { return spec_; }
  const std::vector<BlockDescriptor>& blocks() const { return descriptors_; }

  // Class logits (N, K, H, W).
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode);
  // Softmax of forward().
  BasicTensor<T> predict(const BasicTensor<T>& x, Mode mode);
  // Gradient of the loss w.r.t. the logits of the last forward; returns the
  // input gradient and accumulates parameter gradients.
  BasicTensor<T> backward(const BasicTensor<T>& grad_logits);

  // Static shape inference: (block id, output shape) in data-flow order,
  // ending with ("C", logits shape). Throws ShapeError on bad extents.
  std::vector<std::pair<std::string, Shape>> infer_shapes(const Shape& input) const;
  // Same list recorded during the last forward.
  const std::vector<std::pair<std::string, Shape>>& last_shapes() const { return last_shapes_; }

  void visit_parameters(const ParameterVisitor<T>& fn);
  void visit_buffers(const BufferVisitor<T>& fn);
  std::vector<Parameter<T>*> parameters();
  void zero_grad();

  ParamReport count_parameters();

  // Spatial gate σ(q) of the SE block at "sE-k", "sD-k", "sB" or "sC" from the
  // last forward. Throws ConfigError when the block has no spatial excitation.
  const BasicTensor<T>& spatial_map(std::string_view block) const;
  // Layer::freeze_branches over every block.
  void freeze_branches(bool frozen);

  // Number of attached SE blocks.
  std::size_t se_block_count() const;

  // Copies parameters and buffers from a network with the same spec.
  template <typename U>
  void copy_state_from(Network<U>& other);

 private:
  struct Stage;
  void build();
  const Stage* find_stage(std::string_view block_id) const;
  template <typename Fn>
  void for_each_stage(Fn&& fn);

  NetworkSpec spec_;
  Rng rng_;
  std::vector<std::unique_ptr<Stage>> encoders_;
  std::unique_ptr<Stage> bottleneck_;
  std::vector<std::unique_ptr<Stage>> decoders_;  // D1 (deepest) .. D<depth> (full resolution)
  std::unique_ptr<Stage> classifier_;
  std::vector<BlockDescriptor> descriptors_;

  std::vector<BasicTensor<T>> skips_;
  std::vector<std::pair<std::string, Shape>> last_shapes_;

  template <typename U>
  friend class Network;
};

// Checkpoint: u32 count, then parameters in visit order, then buffers.
void save_checkpoint(Network<float>& net, const std::filesystem::path& path);
// Throws ConfigError naming the first tensor whose presence or shape
// disagrees with the network; IoError/FormatError for unreadable files.
void load_checkpoint(Network<float>& net, const std::filesystem::path& path);

// Raw state list in checkpoint order, with matching names.
std::vector<std::string> state_names(Network<float>& net);
std::vector<Tensor> state_tensors(Network<float>& net);
void assign_state(Network<float>& net, const std::vector<Tensor>& tensors);

extern template class Network<float>;
extern template class Network<double>;

}  // namespace sefcn
