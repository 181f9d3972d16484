#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sefcn/tensor.hpp"

namespace sefcn {

// Integer class ids for a batch of maps, row-major (N, H, W).
struct LabelMap {
  std::size_t n = 0, h = 0, w = 0;
  std::vector<std::int32_t> ids;

  LabelMap() = default;
  LabelMap(std::size_t n_, std::size_t h_, std::size_t w_, std::int32_t fill = 0)
      : n(n_), h(h_), w(w_), ids(n_ * h_ * w_, fill) {}

  std::size_t size() const { return ids.size(); }
  std::size_t plane() const { return h * w; }
};

// Class ids stored as floats in a (1, H, W) or (N, 1, H, W) tensor.
// Throws InputError for non-integral or out-of-range ids.
LabelMap labels_from_tensor(const Tensor& t, std::size_t num_classes);
Tensor labels_to_tensor(const LabelMap& labels);  // (1, H, W) for n == 1, else (N, 1, H, W)

// Per-pixel argmax over channels (ties pick the lowest id).
template <typename T>
LabelMap argmax_channels(const BasicTensor<T>& scores);

inline constexpr double kLogClamp = 1e-12;
inline constexpr double kDiceEpsilon = 1e-6;

// Per-class statistics of a set of images.
struct ClassCounts {
  std::vector<std::uint64_t> pixels;          // pixels of class c
  std::vector<std::uint64_t> present_pixels;  // pixels of the images containing c
  std::uint64_t total = 0;

  explicit ClassCounts(std::size_t num_classes = 0) : pixels(num_classes), present_pixels(num_classes) {}
  void add(const LabelMap& labels);  // each of the n maps counts as one image
};

// f_c = pixels_c / present_pixels_c; w_c = median_{present}(f) / f_c; absent classes 0.
// Throws InputError when no pixel was counted.
std::vector<double> median_frequency_weights(const ClassCounts& counts);
std::vector<double> median_frequency_weights(std::span<const LabelMap> maps, std::size_t num_classes);

template <typename T>
struct LossResult {
  double value = 0.0;
  BasicTensor<T> grad_logits;  // d value / d logits
};

// Mean over pixels of w_y * -log(max(p_y, 1e-12)).
template <typename T>
LossResult<T> weighted_cross_entropy(const BasicTensor<T>& probs, const LabelMap& labels,
                                     std::span<const double> weights);

// 1 - mean_c (2 sum p g + eps) / (sum p + sum g + eps); sums run over every
// pixel of the batch.
template <typename T>
LossResult<T> soft_dice_loss(const BasicTensor<T>& probs, const LabelMap& labels);

template <typename T>
struct CombinedLoss {
  double value = 0.0;
  double cross_entropy = 0.0;
  double dice = 0.0;
  BasicTensor<T> grad_logits;
};

// softmax -> weighted_cross_entropy + lambda * soft_dice_loss, with the
// gradient taken w.r.t. the logits.
template <typename T>
CombinedLoss<T> combined_loss(const BasicTensor<T>& logits, const LabelMap& labels, std::span<const double> weights,
                              double lambda = 1.0);

// Overlap counts pooled over any number of prediction/truth pairs.
class DiceAccumulator {
 public:
  explicit DiceAccumulator(std::size_t num_classes);
  void add(const LabelMap& pred, const LabelMap& truth);  // throws ShapeError on extent mismatch

  std::size_t num_classes() const { return inter_.size(); }
  // 2|P∩T| / (|P| + |T|); NaN for classes absent from both.
  std::vector<double> per_class() const;
  // Mean over classes present in either map; NaN when nothing was added.
  double global() const;

 private:
  std::vector<std::uint64_t> inter_, pred_, truth_;
};

struct DiceScore {
  std::vector<double> per_class;
  double global = 0.0;
};

DiceScore dice_score(const LabelMap& pred, const LabelMap& truth, std::size_t num_classes);

}  // namespace sefcn
