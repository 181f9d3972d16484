#include "sefcn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sefcn/layers.hpp"

namespace sefcn {

LabelMap labels_from_tensor(const Tensor& t, std::size_t num_classes) {
  const Shape& s = t.shape();
  std::size_t n = 1, h = 0, w = 0;
  if (s.rank() == 3 && s[0] == 1) {
    h = s[1];
    w = s[2];
  } else if (s.rank() == 4 && s.c() == 1) {
    n = s.n();
    h = s.h();
    w = s.w();
  } else {
    throw ShapeError("label tensor must be (1, H, W) or (N, 1, H, W), got " + s.to_string());
  }
  LabelMap out(n, h, w);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const float v = t[i];
    if (!(v >= 0.0f) || v != std::floor(v) || v >= static_cast<float>(num_classes)) {
      throw InputError("label value " + std::to_string(v) + " at index " + std::to_string(i) +
                       " is not a class id below " + std::to_string(num_classes));
    }
    out.ids[i] = static_cast<std::int32_t>(v);
  }
  return out;
}

Tensor labels_to_tensor(const LabelMap& labels) {
  const Shape s = labels.n == 1 ? Shape{1, labels.h, labels.w} : Shape::nchw(labels.n, 1, labels.h, labels.w);
  Tensor t(s);
  for (std::size_t i = 0; i < labels.size(); ++i) t[i] = static_cast<float>(labels.ids[i]);
  return t;
}

template <typename T>
LabelMap argmax_channels(const BasicTensor<T>& scores) {
  const Shape& s = scores.shape();
  require_rank4(s, "argmax_channels");
  LabelMap out(s.n(), s.h(), s.w());
  const std::size_t plane = s.h() * s.w();
  for (std::size_t n = 0; n < s.n(); ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      std::size_t best = 0;
      T best_v = scores[n * s.c() * plane + p];
      for (std::size_t c = 1; c < s.c(); ++c) {
        const T v = scores[(n * s.c() + c) * plane + p];
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      out.ids[n * plane + p] = static_cast<std::int32_t>(best);
    }
  }
  return out;
}

void ClassCounts::add(const LabelMap& labels) {
  const std::size_t k = pixels.size();
  std::vector<std::uint64_t> local(k);
  for (std::size_t n = 0; n < labels.n; ++n) {
    std::fill(local.begin(), local.end(), 0);
    for (std::size_t p = 0; p < labels.plane(); ++p) {
      const auto id = labels.ids[n * labels.plane() + p];
      if (id < 0 || static_cast<std::size_t>(id) >= k) {
        throw InputError("class id " + std::to_string(id) + " out of range for " + std::to_string(k) + " classes");
      }
      ++local[static_cast<std::size_t>(id)];
    }
    for (std::size_t c = 0; c < k; ++c) {
      pixels[c] += local[c];
      if (local[c] > 0) present_pixels[c] += labels.plane();
    }
    total += labels.plane();
  }
}

std::vector<double> median_frequency_weights(const ClassCounts& counts) {
  if (counts.total == 0) throw InputError("median_frequency_weights: no labelled pixels");
  const std::size_t k = counts.pixels.size();
  std::vector<double> freq(k, 0.0);
  std::vector<double> present;
  for (std::size_t c = 0; c < k; ++c) {
    if (counts.pixels[c] == 0) continue;
    freq[c] = static_cast<double>(counts.pixels[c]) / static_cast<double>(counts.present_pixels[c]);
    present.push_back(freq[c]);
  }
  std::sort(present.begin(), present.end());
  const std::size_t m = present.size();
  const double median = m % 2 ? present[m / 2] : 0.5 * (present[m / 2 - 1] + present[m / 2]);
  std::vector<double> w(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    if (freq[c] > 0) w[c] = median / freq[c];
  }
  return w;
}

std::vector<double> median_frequency_weights(std::span<const LabelMap> maps, std::size_t num_classes) {
  ClassCounts counts(num_classes);
  for (const auto& m : maps) counts.add(m);
  return median_frequency_weights(counts);
}

namespace {

template <typename T>
void check_probs(const BasicTensor<T>& probs, const LabelMap& labels, const char* what) {
  const Shape& s = probs.shape();
  require_rank4(s, what);
  if (s.n() != labels.n || s.h() != labels.h || s.w() != labels.w) {
    throw ShapeError(std::string(what) + ": probabilities " + s.to_string() + " do not match labels (" +
                     std::to_string(labels.n) + ", " + std::to_string(labels.h) + ", " + std::to_string(labels.w) +
                     ")");
  }
  for (auto id : labels.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= s.c()) {
      throw InputError(std::string(what) + ": class id " + std::to_string(id) + " out of range");
    }
  }
}

// Chain a gradient w.r.t. softmax outputs back to the logits:
//   dz_j = p_j (dp_j - sum_c p_c dp_c)
template <typename T>
BasicTensor<T> through_softmax(const BasicTensor<T>& probs, const BasicTensor<T>& grad_probs) {
  const Shape& s = probs.shape();
  const std::size_t plane = s.h() * s.w();
  BasicTensor<T> out(s);
  for (std::size_t n = 0; n < s.n(); ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      T dot = 0;
      for (std::size_t c = 0; c < s.c(); ++c) {
        const std::size_t i = (n * s.c() + c) * plane + p;
        dot += probs[i] * grad_probs[i];
      }
      for (std::size_t c = 0; c < s.c(); ++c) {
        const std::size_t i = (n * s.c() + c) * plane + p;
        out[i] = probs[i] * (grad_probs[i] - dot);
      }
    }
  }
  return out;
}

}  // namespace

template <typename T>
LossResult<T> weighted_cross_entropy(const BasicTensor<T>& probs, const LabelMap& labels,
                                     std::span<const double> weights) {
  check_probs(probs, labels, "weighted_cross_entropy");
  const Shape& s = probs.shape();
  if (weights.size() != s.c()) throw ShapeError("weighted_cross_entropy: weight count does not match classes");
  const std::size_t plane = s.h() * s.w();
  const double inv = 1.0 / static_cast<double>(s.n() * plane);
  LossResult<T> r;
  r.grad_logits = BasicTensor<T>(s);
  double sum = 0.0;
  for (std::size_t n = 0; n < s.n(); ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      const auto y = static_cast<std::size_t>(labels.ids[n * plane + p]);
      const double w = weights[y];
      const double py = static_cast<double>(probs[(n * s.c() + y) * plane + p]);
      sum += w * -std::log(std::max(py, kLogClamp));
      // softmax + log-loss: d/dz_c = w (p_c - [c == y])
      for (std::size_t c = 0; c < s.c(); ++c) {
        const std::size_t i = (n * s.c() + c) * plane + p;
        r.grad_logits[i] = static_cast<T>(w * (static_cast<double>(probs[i]) - (c == y ? 1.0 : 0.0)) * inv);
      }
    }
  }
  r.value = sum * inv;
  return r;
}

template <typename T>
LossResult<T> soft_dice_loss(const BasicTensor<T>& probs, const LabelMap& labels) {
  check_probs(probs, labels, "soft_dice_loss");
  const Shape& s = probs.shape();
  const std::size_t k = s.c();
  const std::size_t plane = s.h() * s.w();
  std::vector<double> inter(k, 0.0), psum(k, 0.0), gsum(k, 0.0);
  for (std::size_t n = 0; n < s.n(); ++n) {
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t p = 0; p < plane; ++p) {
        const double v = static_cast<double>(probs[(n * k + c) * plane + p]);
        psum[c] += v;
        if (static_cast<std::size_t>(labels.ids[n * plane + p]) == c) {
          inter[c] += v;
          gsum[c] += 1.0;
        }
      }
    }
  }
  double mean = 0.0;
  std::vector<double> a(k), b(k);  // d term_c / d p = a_c * g - b_c
  for (std::size_t c = 0; c < k; ++c) {
    const double num = 2.0 * inter[c] + kDiceEpsilon;
    const double den = psum[c] + gsum[c] + kDiceEpsilon;
    mean += num / den;
    a[c] = 2.0 / den;
    b[c] = num / (den * den);
  }
  LossResult<T> r;
  r.value = 1.0 - mean / static_cast<double>(k);
  BasicTensor<T> grad_probs(s);
  const double scale = -1.0 / static_cast<double>(k);
  for (std::size_t n = 0; n < s.n(); ++n) {
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t p = 0; p < plane; ++p) {
        const double g = static_cast<std::size_t>(labels.ids[n * plane + p]) == c ? 1.0 : 0.0;
        grad_probs[(n * k + c) * plane + p] = static_cast<T>(scale * (a[c] * g - b[c]));
      }
    }
  }
  r.grad_logits = through_softmax(probs, grad_probs);
  return r;
}

template <typename T>
CombinedLoss<T> combined_loss(const BasicTensor<T>& logits, const LabelMap& labels, std::span<const double> weights,
                              double lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("loss lambda must be non-negative");
  const BasicTensor<T> probs = softmax_channels(logits);
  LossResult<T> ce = weighted_cross_entropy(probs, labels, weights);
  CombinedLoss<T> out;
  out.cross_entropy = ce.value;
  out.grad_logits = std::move(ce.grad_logits);
  if (lambda > 0.0) {
    const LossResult<T> dice = soft_dice_loss(probs, labels);
    out.dice = dice.value;
    const T l = static_cast<T>(lambda);
    for (std::size_t i = 0; i < out.grad_logits.size(); ++i) out.grad_logits[i] += l * dice.grad_logits[i];
  }
  out.value = out.cross_entropy + lambda * out.dice;
  return out;
}

DiceAccumulator::DiceAccumulator(std::size_t num_classes)
    : inter_(num_classes), pred_(num_classes), truth_(num_classes) {}

void DiceAccumulator::add(const LabelMap& pred, const LabelMap& truth) {
  if (pred.n != truth.n || pred.h != truth.h || pred.w != truth.w) {
    throw ShapeError("dice_score: prediction and truth extents differ");
  }
  const std::size_t k = inter_.size();
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto p = static_cast<std::size_t>(pred.ids[i]);
    const auto t = static_cast<std::size_t>(truth.ids[i]);
    if (p >= k || t >= k) throw InputError("dice_score: class id out of range");
    ++pred_[p];
    ++truth_[t];
    if (p == t) ++inter_[p];
  }
}

std::vector<double> DiceAccumulator::per_class() const {
  std::vector<double> out(inter_.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t c = 0; c < inter_.size(); ++c) {
    const std::uint64_t den = pred_[c] + truth_[c];
    if (den > 0) out[c] = 2.0 * static_cast<double>(inter_[c]) / static_cast<double>(den);
  }
  return out;
}

double DiceAccumulator::global() const {
  double sum = 0.0;
  std::size_t present = 0;
  for (double d : per_class()) {
    if (std::isnan(d)) continue;
    sum += d;
    ++present;
  }
  return present ? sum / static_cast<double>(present) : std::numeric_limits<double>::quiet_NaN();
}

DiceScore dice_score(const LabelMap& pred, const LabelMap& truth, std::size_t num_classes) {
  DiceAccumulator acc(num_classes);
  acc.add(pred, truth);
  return {acc.per_class(), acc.global()};
}

#define SEFCN_INSTANTIATE(T)                                                                                      \
  template LabelMap argmax_channels<T>(const BasicTensor<T>&);                                                   \
  template LossResult<T> weighted_cross_entropy<T>(const BasicTensor<T>&, const LabelMap&, std::span<const double>); \
  template LossResult<T> soft_dice_loss<T>(const BasicTensor<T>&, const LabelMap&);                               \
  template CombinedLoss<T> combined_loss<T>(const BasicTensor<T>&, const LabelMap&, std::span<const double>, double);

SEFCN_INSTANTIATE(float)
SEFCN_INSTANTIATE(double)

#undef SEFCN_INSTANTIATE

}  // namespace sefcn
