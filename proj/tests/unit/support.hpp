#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "sefcn/layers.hpp"
#include "sefcn/tensor.hpp"
#include "sefcn/trainer.hpp"

namespace sefcn::test {

template <typename T>
BasicTensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  BasicTensor<T> t(shape);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

inline double sum_product(const TensorD& a, const TensorD& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct GradErrors {
  double input = 0.0;
  double parameters = 0.0;
};

// Checks input and parameter gradients of L = <r, layer(x)> for a random r
// against central differences.
inline GradErrors layer_grad_errors(Layer<double>& layer, const TensorD& x, Rng& rng, double h = 1e-3,
                                    Mode mode = Mode::kTrain) {
  const TensorD y = layer.forward(x, mode);
  const TensorD r = random_tensor<double>(y.shape(), rng);
  layer.zero_grad();
  const TensorD gx = layer.backward(r);

  auto loss = [&](const TensorD& input) { return sum_product(r, layer.forward(input, mode)); };

  GradErrors e;
  TensorD probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = probe[i];
    probe[i] = keep + h;
    const double lp = loss(probe);
    probe[i] = keep - h;
    const double lm = loss(probe);
    probe[i] = keep;
    e.input = std::max(e.input, relative_error(gx[i], (lp - lm) / (2 * h)));
  }
  for (Parameter<double>* p : layer.parameters()) {
    const TensorD analytic = p->grad;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double keep = p->value[i];
      p->value[i] = keep + h;
      const double lp = loss(x);
      p->value[i] = keep - h;
      const double lm = loss(x);
      p->value[i] = keep;
      e.parameters = std::max(e.parameters, relative_error(analytic[i], (lp - lm) / (2 * h)));
    }
  }
  return e;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("sefcn_" + tag + "_" + std::to_string(rd()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace sefcn::test
