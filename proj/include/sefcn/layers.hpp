#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "sefcn/tensor.hpp"

namespace sefcn {

enum class Mode { kTrain, kEval };

using Rng = std::mt19937_64;

// Batch-norm constants; not exposed through the run config.
inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kBatchNormEpsilon = 1e-5;

template <typename T>
struct Parameter {
  Parameter(std::string local_name, BasicTensor<T> init)
      : name(std::move(local_name)), value(std::move(init)), grad(value.shape()) {}

  std::string name;
  BasicTensor<T> value;
  BasicTensor<T> grad;
};

// (qualified name, owning layer kind, parameter)
template <typename T>
using ParameterVisitor = std::function<void(const std::string&, const std::string&, Parameter<T>&)>;
template <typename T>
using BufferVisitor = std::function<void(const std::string&, BasicTensor<T>&)>;

// Differentiable unit. backward() must follow a forward() on the same instance;
// it returns the input gradient and accumulates parameter gradients.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) = 0;
  virtual BasicTensor<T> backward(const BasicTensor<T>& grad_out) = 0;

  // Static shape inference; throws ShapeError when `in` is not accepted.
  virtual Shape output_shape(const Shape& in) const = 0;

  virtual std::string kind() const = 0;
  // Human-readable recipe entry such as "conv7x7(64->64)".
  virtual std::string describe() const { return kind(); }

  // Visits trainable tensors in a stable order.
  virtual void visit_parameters(const std::string& prefix, const ParameterVisitor<T>& fn);
  // Non-trainable state that must be checkpointed (batch-norm running stats).
  virtual void visit_buffers(const std::string& prefix, const BufferVisitor<T>& fn);

  // While frozen, forward() reuses the branch choices (ReLU signs, pooling
  // switches, maxout winners) of the last unfrozen forward, i.e. it evaluates
  // the smooth piece containing that point. Input shapes must not change.
  virtual void freeze_branches(bool) {}

  std::vector<Parameter<T>*> parameters();
  void zero_grad();

 protected:
  virtual std::vector<Parameter<T>*> own_parameters() { return {}; }
};

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
template <typename T>
void init_uniform(BasicTensor<T>& t, std::size_t fan_in, std::size_t fan_out, Rng& rng);

template <typename T>
class Conv2d final : public Layer<T> {
 public:
  // "same" zero padding (kernel / 2), stride 1 unless given.
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, bool with_bias, Rng& rng,
         std::size_t stride = 1);
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t pad, std::size_t stride,
         bool with_bias, Rng& rng);

  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  Shape output_shape(const Shape& in) const override;
  std::string kind() const override { return "conv2d"; }
  std::string describe() const override;

  Parameter<T>& weight() { return weight_; }
  Parameter<T>* bias() { return has_bias_ ? &bias_ : nullptr; }
  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }

 protected:
  std::vector<Parameter<T>*> own_parameters() override;

 private:
  std::size_t in_, out_, kernel_, pad_, stride_;
  bool has_bias_;
  Parameter<T> weight_;
  Parameter<T> bias_;
  BasicTensor<T> input_;
};

// Bias-free (or biased) dense map over a (N, in) or (N, in, 1, 1) input.
// Weight is (out, in); rows are outputs.
template <typename T>
class FullyConnected final : public Layer<T> {
 public:
  FullyConnected(std::size_t in_features, std::size_t out_features, bool with_bias, Rng& rng);

  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  Shape output_shape(const Shape& in) const override;
  std::string kind() const override { return "fully_connected"; }
  std::string describe() const override;

  Parameter<T>& weight() { return weight_; }

 protected:
  std::vector<Parameter<T>*> own_parameters() override;

 private:
  std::size_t in_, out_;
  bool has_bias_;
  Parameter<T> weight_;
  Parameter<T> bias_;
  BasicTensor<T> input_;
};

template <typename T>
class ReLU final : public Layer<T> {
 public:
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  Shape output_shape(const Shape& in) const override { return in; }
  std::string kind() const override { return "relu"; }
  void freeze_branches(bool frozen) override { frozen_ = frozen; }

 private:
  std::vector<std::uint8_t> active_;
  bool frozen_ = false;
};

template <typename T>
class Sigmoid final : public Layer<T> {
 public:
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  Shape output_shape(const Shape& in) const override { return in; }
  std::string kind() const override { return "sigmoid"; }

  const BasicTensor<T>& last_output() const { return output_; }

 private:
  BasicTensor<T> output_;
};

// Per-channel normalization. Train mode uses batch statistics (biased
// variance) and updates running statistics (unbiased variance) with
// kBatchNormMomentum; eval mode uses the running statistics.
template <typename T>
class BatchNorm2d final : public Layer<T> {
 public:
  explicit BatchNorm2d(std::size_t channels);

  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  Shape output_shape(const Shape& in) const override;
  std::string kind() const override { return "batch_norm"; }
  void visit_buffers(const std::string& prefix, const BufferVisitor<T>& fn) override;

  Parameter<T>& gamma() { return gamma_; }
  Parameter<T>& beta() { return beta_; }
  BasicTensor<T>& running_mean() { return running_mean_; }
  BasicTensor<T>& running_var() { return running_var_; }

 protected:
  std::vector<Parameter<T>*> own_parameters() override { return {&gamma_, &beta_}; }

 private:
  std::size_t channels_;
  Parameter<T> gamma_;
  Parameter<T> beta_;
  BasicTensor<T> running_mean_;
  BasicTensor<T> running_var_;
  // Cached for backward.
  BasicTensor<T> normalized_;
  std::vector<T> inv_std_;
  Mode mode_ = Mode::kTrain;
};

// Switches of a 2x2 / stride-2 max pooling: for every pooled element, the
// flat position (row * W + col) of its maximum inside the input plane.
struct PoolIndices {
  Shape input_shape;
  std::vector<std::int32_t> argmax;
};

template <typename T>
std::pair<BasicTensor<T>, PoolIndices> max_pool2(const BasicTensor<T>& x);

// Scatters x into a zero tensor of twice the spatial extent at the recorded
// switches. When x has a different channel count than the pooled tensor,
// channel c uses switch plane c mod C_pool.
template <typename T>
BasicTensor<T> max_unpool2(const BasicTensor<T>& x, const PoolIndices& indices);

template <typename T>
class MaxPool2 final : public Layer<T> {
 public:
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  Shape output_shape(const Shape& in) const override;
  std::string kind() const override { return "max_pool2"; }
  void freeze_branches(bool frozen) override { frozen_ = frozen; }

  const PoolIndices& indices() const { return indices_; }

 private:
  PoolIndices indices_;
  bool frozen_ = false;
};

// Unpooling driven by the switches of a paired MaxPool2 (not owned).
template <typename T>
class MaxUnpool2 final : public Layer<T> {
 public:
  explicit MaxUnpool2(const MaxPool2<T>* pool) : pool_(pool) {}

  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  Shape output_shape(const Shape& in) const override;
  std::string kind() const override { return "max_unpool2"; }

 private:
  const MaxPool2<T>* pool_;
  Shape input_shape_;
};

// 2x2 kernel, stride 2; weight (C_in, C_out, 2, 2). Adjoint of the stride-2
// convolution with the same weight tensor read as (C_out_conv, C_in_conv, 2, 2).
template <typename T>
class TransposedConv2 final : public Layer<T> {
 public:
  TransposedConv2(std::size_t in_channels, std::size_t out_channels, bool with_bias, Rng& rng);

  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  Shape output_shape(const Shape& in) const override;
  std::string kind() const override { return "transposed_conv2"; }
  std::string describe() const override;

  Parameter<T>& weight() { return weight_; }
  Parameter<T>* bias() { return has_bias_ ? &bias_ : nullptr; }

 protected:
  std::vector<Parameter<T>*> own_parameters() override;

 private:
  std::size_t in_, out_;
  bool has_bias_;
  Parameter<T> weight_;
  Parameter<T> bias_;
  BasicTensor<T> input_;
};

// Per-pixel softmax across channels with max subtraction.
template <typename T>
BasicTensor<T> softmax_channels(const BasicTensor<T>& logits);

template <typename T>
class SoftmaxChannels final : public Layer<T> {
 public:
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  Shape output_shape(const Shape& in) const override;
  std::string kind() const override { return "softmax"; }

 private:
  BasicTensor<T> output_;
};

template <typename T>
class Sequential final : public Layer<T> {
 public:
  Sequential() = default;

  Sequential& add(std::unique_ptr<Layer<T>> layer) {
    layers_.push_back(std::move(layer));
    return *this;
  }

  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  Shape output_shape(const Shape& in) const override;
  std::string kind() const override { return "sequential"; }
  std::string describe() const override;
  void visit_parameters(const std::string& prefix, const ParameterVisitor<T>& fn) override;
  void visit_buffers(const std::string& prefix, const BufferVisitor<T>& fn) override;
  void freeze_branches(bool frozen) override;

  std::size_t size() const { return layers_.size(); }
  Layer<T>& at(std::size_t i) { return *layers_.at(i); }
  std::vector<std::string> recipe() const;

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

}  // namespace sefcn
