#include "sefcn/kernels/conv2d.hpp"

#include <algorithm>
#include <string>
#include <vector>

#include "sefcn/errors.hpp"

namespace sefcn::kernels {

void ConvGeometry::validate() const {
  if (batch == 0 || in_channels == 0 || height == 0 || width == 0 || out_channels == 0 || kernel_h == 0 ||
      kernel_w == 0 || stride == 0) {
    throw ShapeError("conv2d: zero extent in geometry");
  }
  if (height + 2 * pad_h < kernel_h || width + 2 * pad_w < kernel_w) {
    throw ShapeError("conv2d: kernel " + std::to_string(kernel_h) + "x" + std::to_string(kernel_w) +
                     " larger than padded input " + std::to_string(height) + "x" + std::to_string(width));
  }
}

namespace {

template <typename T>
void check_sizes(const ConvGeometry& g, std::size_t in, std::size_t w, std::size_t bias, std::size_t out) {
  g.validate();
  if (in != g.input_size() || w != g.weight_size() || out != g.output_size() || (bias != 0 && bias != g.out_channels)) {
    throw ShapeError("conv2d: buffer sizes do not match geometry");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// reference

namespace reference {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out) {
  check_sizes<T>(g, in.size(), weight.size(), bias.size(), out.size());
  const std::size_t oh_n = g.out_height();
  const std::size_t ow_n = g.out_width();
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      for (std::size_t oh = 0; oh < oh_n; ++oh) {
        for (std::size_t ow = 0; ow < ow_n; ++ow) {
          T acc = bias.empty() ? T{0} : bias[co];
          for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
            for (std::size_t kh = 0; kh < g.kernel_h; ++kh) {
              const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) - static_cast<std::ptrdiff_t>(g.pad_h);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.height)) continue;
              for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
                const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + kw) - static_cast<std::ptrdiff_t>(g.pad_w);
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.width)) continue;
                acc += weight[((co * g.in_channels + ci) * g.kernel_h + kh) * g.kernel_w + kw] *
                       in[((n * g.in_channels + ci) * g.height + static_cast<std::size_t>(ih)) * g.width +
                          static_cast<std::size_t>(iw)];
              }
            }
          }
          out[((n * g.out_channels + co) * oh_n + oh) * ow_n + ow] = acc;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_data(const ConvGeometry& g, std::span<const T> grad_out, std::span<const T> weight,
                          std::span<T> grad_in) {
  check_sizes<T>(g, grad_in.size(), weight.size(), 0, grad_out.size());
  const std::size_t oh_n = g.out_height();
  const std::size_t ow_n = g.out_width();
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
      for (std::size_t ih = 0; ih < g.height; ++ih) {
        for (std::size_t iw = 0; iw < g.width; ++iw) {
          T acc = 0;
          for (std::size_t co = 0; co < g.out_channels; ++co) {
            for (std::size_t kh = 0; kh < g.kernel_h; ++kh) {
              const std::size_t ph = ih + g.pad_h;
              if (ph < kh || (ph - kh) % g.stride != 0) continue;
              const std::size_t oh = (ph - kh) / g.stride;
              if (oh >= oh_n) continue;
              for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
                const std::size_t pw = iw + g.pad_w;
                if (pw < kw || (pw - kw) % g.stride != 0) continue;
                const std::size_t ow = (pw - kw) / g.stride;
                if (ow >= ow_n) continue;
                acc += weight[((co * g.in_channels + ci) * g.kernel_h + kh) * g.kernel_w + kw] *
                       grad_out[((n * g.out_channels + co) * oh_n + oh) * ow_n + ow];
              }
            }
          }
          grad_in[((n * g.in_channels + ci) * g.height + ih) * g.width + iw] = acc;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_filter(const ConvGeometry& g, std::span<const T> in, std::span<const T> grad_out,
                            std::span<T> grad_weight, std::span<T> grad_bias) {
  check_sizes<T>(g, in.size(), grad_weight.size(), grad_bias.size(), grad_out.size());
  const std::size_t oh_n = g.out_height();
  const std::size_t ow_n = g.out_width();
  for (std::size_t co = 0; co < g.out_channels; ++co) {
    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
      for (std::size_t kh = 0; kh < g.kernel_h; ++kh) {
        for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
          T acc = 0;
          for (std::size_t n = 0; n < g.batch; ++n) {
            for (std::size_t oh = 0; oh < oh_n; ++oh) {
              const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) - static_cast<std::ptrdiff_t>(g.pad_h);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.height)) continue;
              for (std::size_t ow = 0; ow < ow_n; ++ow) {
                const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + kw) - static_cast<std::ptrdiff_t>(g.pad_w);
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.width)) continue;
                acc += grad_out[((n * g.out_channels + co) * oh_n + oh) * ow_n + ow] *
                       in[((n * g.in_channels + ci) * g.height + static_cast<std::size_t>(ih)) * g.width +
                          static_cast<std::size_t>(iw)];
              }
            }
          }
          grad_weight[((co * g.in_channels + ci) * g.kernel_h + kh) * g.kernel_w + kw] += acc;
        }
      }
    }
    if (!grad_bias.empty()) {
      T acc = 0;
      for (std::size_t n = 0; n < g.batch; ++n) {
        for (std::size_t p = 0; p < oh_n * ow_n; ++p) acc += grad_out[(n * g.out_channels + co) * oh_n * ow_n + p];
      }
      grad_bias[co] += acc;
    }
  }
}

}  // namespace reference

// ---------------------------------------------------------------------------
// parallel

namespace parallel {

namespace {

// Copies NCHW planes into a zero border of pad_h / pad_w.
template <typename T>
std::vector<T> pad_planes(std::span<const T> src, std::size_t planes, std::size_t h, std::size_t w, std::size_t ph,
                          std::size_t pw) {
  const std::size_t hp = h + 2 * ph;
  const std::size_t wp = w + 2 * pw;
  std::vector<T> dst(planes * hp * wp, T{0});
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t p = 0; p < static_cast<std::ptrdiff_t>(planes); ++p) {
    const T* s = src.data() + static_cast<std::size_t>(p) * h * w;
    T* d = dst.data() + static_cast<std::size_t>(p) * hp * wp + ph * wp + pw;
    for (std::size_t r = 0; r < h; ++r) std::copy_n(s + r * w, w, d + r * wp);
  }
  return dst;
}

// dst[0..n) += sum_k w[k] * src[k .. k+n), the stride-1 row update with the
// kernel row held in registers.
template <typename T, std::size_t K>
inline void row_fma_fixed(T* __restrict dst, const T* __restrict src, const T* __restrict w, std::size_t n) {
#pragma omp simd
  for (std::size_t x = 0; x < n; ++x) {
    T acc = dst[x];
    for (std::size_t k = 0; k < K; ++k) acc += w[k] * src[x + k];
    dst[x] = acc;
  }
}

template <typename T>
inline void row_fma(T* __restrict dst, const T* __restrict src, const T* __restrict w, std::size_t kw,
                    std::size_t n) {
  switch (kw) {
    case 1: row_fma_fixed<T, 1>(dst, src, w, n); return;
    case 3: row_fma_fixed<T, 3>(dst, src, w, n); return;
    case 5: row_fma_fixed<T, 5>(dst, src, w, n); return;
    case 7: row_fma_fixed<T, 7>(dst, src, w, n); return;
    default:
      for (std::size_t k = 0; k < kw; ++k) {
        const T wk = w[k];
#pragma omp simd
        for (std::size_t x = 0; x < n; ++x) dst[x] += wk * src[x + k];
      }
  }
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out) {
  check_sizes<T>(g, in.size(), weight.size(), bias.size(), out.size());
  const std::size_t hp = g.height + 2 * g.pad_h;
  const std::size_t wp = g.width + 2 * g.pad_w;
  const std::size_t oh_n = g.out_height();
  const std::size_t ow_n = g.out_width();
  const bool padded = g.pad_h != 0 || g.pad_w != 0;
  std::vector<T> scratch;
  const T* xp = in.data();
  if (padded) {
    scratch = pad_planes<T>(in, g.batch * g.in_channels, g.height, g.width, g.pad_h, g.pad_w);
    xp = scratch.data();
  }
  const auto tasks = static_cast<std::ptrdiff_t>(g.batch * g.out_channels);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t t = 0; t < tasks; ++t) {
    const std::size_t n = static_cast<std::size_t>(t) / g.out_channels;
    const std::size_t co = static_cast<std::size_t>(t) % g.out_channels;
    T* o = out.data() + static_cast<std::size_t>(t) * oh_n * ow_n;
    std::fill_n(o, oh_n * ow_n, bias.empty() ? T{0} : bias[co]);
    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
      const T* x = xp + (n * g.in_channels + ci) * hp * wp;
      const T* wk = weight.data() + (co * g.in_channels + ci) * g.kernel_h * g.kernel_w;
      for (std::size_t oh = 0; oh < oh_n; ++oh) {
        T* dst = o + oh * ow_n;
        for (std::size_t kh = 0; kh < g.kernel_h; ++kh) {
          const T* src = x + (oh * g.stride + kh) * wp;
          const T* wrow = wk + kh * g.kernel_w;
          if (g.stride == 1) {
            row_fma(dst, src, wrow, g.kernel_w, ow_n);
          } else {
            for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
              const T wv = wrow[kw];
              for (std::size_t ow = 0; ow < ow_n; ++ow) dst[ow] += wv * src[ow * g.stride + kw];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_data(const ConvGeometry& g, std::span<const T> grad_out, std::span<const T> weight,
                          std::span<T> grad_in) {
  check_sizes<T>(g, grad_in.size(), weight.size(), 0, grad_out.size());
  const std::size_t hp = g.height + 2 * g.pad_h;
  const std::size_t wp = g.width + 2 * g.pad_w;
  const std::size_t oh_n = g.out_height();
  const std::size_t ow_n = g.out_width();
  const auto tasks = static_cast<std::ptrdiff_t>(g.batch * g.in_channels);
#pragma omp parallel
  {
    std::vector<T> gx(hp * wp);
#pragma omp for schedule(static)
    for (std::ptrdiff_t t = 0; t < tasks; ++t) {
      const std::size_t n = static_cast<std::size_t>(t) / g.in_channels;
      const std::size_t ci = static_cast<std::size_t>(t) % g.in_channels;
      std::fill(gx.begin(), gx.end(), T{0});
      for (std::size_t co = 0; co < g.out_channels; ++co) {
        const T* go = grad_out.data() + (n * g.out_channels + co) * oh_n * ow_n;
        const T* wk = weight.data() + (co * g.in_channels + ci) * g.kernel_h * g.kernel_w;
        for (std::size_t kh = 0; kh < g.kernel_h; ++kh) {
          for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
            const T wv = wk[kh * g.kernel_w + kw];
            for (std::size_t oh = 0; oh < oh_n; ++oh) {
              T* __restrict dst = gx.data() + (oh * g.stride + kh) * wp + kw;
              const T* __restrict src = go + oh * ow_n;
              if (g.stride == 1) {
#pragma omp simd
                for (std::size_t ow = 0; ow < ow_n; ++ow) dst[ow] += wv * src[ow];
              } else {
                for (std::size_t ow = 0; ow < ow_n; ++ow) dst[ow * g.stride] += wv * src[ow];
              }
            }
          }
        }
      }
      T* gi = grad_in.data() + static_cast<std::size_t>(t) * g.height * g.width;
      for (std::size_t r = 0; r < g.height; ++r) {
        std::copy_n(gx.data() + (r + g.pad_h) * wp + g.pad_w, g.width, gi + r * g.width);
      }
    }
  }
}

template <typename T>
void conv2d_backward_filter(const ConvGeometry& g, std::span<const T> in, std::span<const T> grad_out,
                            std::span<T> grad_weight, std::span<T> grad_bias) {
  check_sizes<T>(g, in.size(), grad_weight.size(), grad_bias.size(), grad_out.size());
  const std::size_t hp = g.height + 2 * g.pad_h;
  const std::size_t wp = g.width + 2 * g.pad_w;
  const std::size_t oh_n = g.out_height();
  const std::size_t ow_n = g.out_width();
  const bool padded = g.pad_h != 0 || g.pad_w != 0;
  std::vector<T> scratch;
  const T* xp = in.data();
  if (padded) {
    scratch = pad_planes<T>(in, g.batch * g.in_channels, g.height, g.width, g.pad_h, g.pad_w);
    xp = scratch.data();
  }
  const std::size_t taps = g.kernel_h * g.kernel_w;
  const auto tasks = static_cast<std::ptrdiff_t>(g.out_channels * g.in_channels);
#pragma omp parallel
  {
    // One accumulator row per kernel tap; lanes are summed at the end so the
    // reduction order is fixed.
    std::vector<T> acc(taps * ow_n);
#pragma omp for schedule(static)
    for (std::ptrdiff_t t = 0; t < tasks; ++t) {
      const std::size_t co = static_cast<std::size_t>(t) / g.in_channels;
      const std::size_t ci = static_cast<std::size_t>(t) % g.in_channels;
      std::fill(acc.begin(), acc.end(), T{0});
      for (std::size_t n = 0; n < g.batch; ++n) {
        const T* x = xp + (n * g.in_channels + ci) * hp * wp;
        const T* go = grad_out.data() + (n * g.out_channels + co) * oh_n * ow_n;
        for (std::size_t oh = 0; oh < oh_n; ++oh) {
          const T* __restrict grow = go + oh * ow_n;
          for (std::size_t kh = 0; kh < g.kernel_h; ++kh) {
            const T* xrow = x + (oh * g.stride + kh) * wp;
            for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
              T* __restrict a = acc.data() + (kh * g.kernel_w + kw) * ow_n;
              const T* __restrict src = xrow + kw;
              if (g.stride == 1) {
#pragma omp simd
                for (std::size_t ow = 0; ow < ow_n; ++ow) a[ow] += grow[ow] * src[ow];
              } else {
                for (std::size_t ow = 0; ow < ow_n; ++ow) a[ow] += grow[ow] * src[ow * g.stride];
              }
            }
          }
        }
      }
      T* gw = grad_weight.data() + (co * g.in_channels + ci) * taps;
      for (std::size_t k = 0; k < taps; ++k) {
        T s = 0;
        for (std::size_t ow = 0; ow < ow_n; ++ow) s += acc[k * ow_n + ow];
        gw[k] += s;
      }
    }
  }
  if (!grad_bias.empty()) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t co = 0; co < static_cast<std::ptrdiff_t>(g.out_channels); ++co) {
      T s = 0;
      for (std::size_t n = 0; n < g.batch; ++n) {
        const T* go = grad_out.data() + (n * g.out_channels + static_cast<std::size_t>(co)) * oh_n * ow_n;
        for (std::size_t p = 0; p < oh_n * ow_n; ++p) s += go[p];
      }
      grad_bias[static_cast<std::size_t>(co)] += s;
    }
  }
}

}  // namespace parallel

#define SEFCN_INSTANTIATE(NS, T)                                                                                    \
  template void NS::conv2d_forward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,                   \
                                      std::span<const T>, std::span<T>);                                             \
  template void NS::conv2d_backward_data<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,             \
                                            std::span<T>);                                                           \
  template void NS::conv2d_backward_filter<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,           \
                                              std::span<T>, std::span<T>);

SEFCN_INSTANTIATE(reference, float)
SEFCN_INSTANTIATE(reference, double)
SEFCN_INSTANTIATE(parallel, float)
SEFCN_INSTANTIATE(parallel, double)

#undef SEFCN_INSTANTIATE

}  // namespace sefcn::kernels
