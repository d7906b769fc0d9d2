#pragma once

// Convolution, pooling and normalization ops over B×C×H×W tensors.

#include <algorithm>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "glandseg/tensor.hpp"

namespace glandseg {

namespace detail {

// c[m×n] += a[m×k] · b[k×n], all row-major.
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m×n] += aᵀ · b where a is k×m.
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      if (av == T(0)) continue;
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m×n] += a · bᵀ where b is n×k.
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = T(0);
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

struct ConvGeometry {
  std::size_t channels, height, width;  // image side
  std::size_t kh, kw, stride, pad;
  std::size_t out_h, out_w;             // column side
  std::size_t rows() const { return channels * kh * kw; }
  std::size_t cols() const { return out_h * out_w; }
};

template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* col) {
  const long pad = static_cast<long>(g.pad);
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* dst = col + ((c * g.kh + ki) * g.kw + kj) * g.cols();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - pad;
          if (iy < 0 || iy >= static_cast<long>(g.height)) {
            std::fill(dst + oy * g.out_w, dst + (oy + 1) * g.out_w, T(0));
            continue;
          }
          const T* src = img + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - pad;
            dst[oy * g.out_w + ox] =
                (ix < 0 || ix >= static_cast<long>(g.width)) ? T(0) : src[ix];
          }
        }
      }
}

// Adjoint of im2col: scatters-adds columns back into the image.
template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* img) {
  const long pad = static_cast<long>(g.pad);
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* src = col + ((c * g.kh + ki) * g.kw + kj) * g.cols();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - pad;
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          T* dst = img + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - pad;
            if (ix >= 0 && ix < static_cast<long>(g.width)) dst[ix] += src[oy * g.out_w + ox];
          }
        }
      }
}

inline void require_rank4(const Shape& s, const char* op, const char* what) {
  if (s.size() != 4)
    throw std::invalid_argument(std::string(op) + ": " + what + " must be 4-D, got " +
                                shape_str(s));
}

}  // namespace detail

// weight: Cout×Cin×kH×kW; bias: Cout or undefined.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, std::size_t stride, std::size_t padding) {
  detail::require_rank4(input.shape(), "conv2d", "input");
  detail::require_rank4(weight.shape(), "conv2d", "weight");
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  const std::size_t batch = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != cin)
    throw std::invalid_argument("conv2d: channel mismatch, input has " + std::to_string(cin) +
                                ", weight expects " + std::to_string(weight.dim(1)));
  if (bias.defined() && bias.numel() != cout)
    throw std::invalid_argument("conv2d: bias length must equal output channels");
  if (h + 2 * padding < kh || w + 2 * padding < kw)
    throw std::invalid_argument("conv2d: output dimension would be <= 0");

  detail::ConvGeometry g{cin, h, w, kh, kw, stride, padding,
                         (h + 2 * padding - kh) / stride + 1, (w + 2 * padding - kw) / stride + 1};
  const std::size_t k = g.rows(), cols = g.cols();
  std::vector<T> out(batch * cout * cols, T(0));
  std::vector<T> col(k * cols);
  const T* wd = weight.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    detail::im2col(input.data().data() + b * cin * h * w, g, col.data());
    T* ob = out.data() + b * cout * cols;
    if (bias.defined())
      for (std::size_t o = 0; o < cout; ++o) std::fill(ob + o * cols, ob + (o + 1) * cols, bias.data()[o]);
    detail::gemm_nn(cout, cols, k, wd, col.data(), ob);
  }

  const bool tracked = detail::tracks<T>({&input, &weight, &bias});
  auto result = detail::make_output<T>({batch, cout, g.out_h, g.out_w}, std::move(out), tracked);
  if (tracked) {
    active_tape().record("conv2d", [xs = input.storage(), ws = weight.storage(),
                                    bs = bias.defined() ? bias.storage() : nullptr,
                                    ys = result.storage(), g, batch, cout]() {
      if (!ys->has_grad()) return;
      const std::size_t k = g.rows(), cols = g.cols(), in_sz = g.channels * g.height * g.width;
      std::vector<T> col(k * cols), dcol(k * cols);
      for (std::size_t b = 0; b < batch; ++b) {
        const T* dy = ys->grad.data() + b * cout * cols;
        if (ws->requires_grad) {
          detail::im2col(xs->data.data() + b * in_sz, g, col.data());
          detail::gemm_nt(cout, k, cols, dy, col.data(), ws->ensure_grad().data());
        }
        if (xs->requires_grad) {
          std::fill(dcol.begin(), dcol.end(), T(0));
          detail::gemm_tn(k, cols, cout, ws->data.data(), dy, dcol.data());
          detail::col2im(dcol.data(), g, xs->ensure_grad().data() + b * in_sz);
        }
        if (bs && bs->requires_grad) {
          auto& gb = bs->ensure_grad();
          for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t j = 0; j < cols; ++j) gb[o] += dy[o * cols + j];
        }
      }
    });
  }
  return result;
}

// weight: Cin×Cout×kH×kW. Output size (H−1)·stride − 2·padding + kH + output_padding;
// the op is the adjoint of conv2d with the same weight, stride and padding.
template <typename T>
BasicTensor<T> conv_transpose2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                                const BasicTensor<T>& bias, std::size_t stride,
                                std::size_t padding = 0, std::size_t output_padding = 0) {
  detail::require_rank4(input.shape(), "conv_transpose2d", "input");
  detail::require_rank4(weight.shape(), "conv_transpose2d", "weight");
  if (stride != 1 && stride != 2)
    throw std::invalid_argument("conv_transpose2d: stride must be 1 or 2");
  if (output_padding >= stride && output_padding != 0)
    throw std::invalid_argument("conv_transpose2d: output_padding must be < stride");
  const std::size_t batch = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (weight.dim(0) != cin)
    throw std::invalid_argument("conv_transpose2d: channel mismatch, input has " +
                                std::to_string(cin) + ", weight expects " +
                                std::to_string(weight.dim(0)));
  const std::size_t cout = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  if (bias.defined() && bias.numel() != cout)
    throw std::invalid_argument("conv_transpose2d: bias length must equal output channels");
  const long oh_l = static_cast<long>((h - 1) * stride + kh + output_padding) - 2 * static_cast<long>(padding);
  const long ow_l = static_cast<long>((w - 1) * stride + kw + output_padding) - 2 * static_cast<long>(padding);
  if (oh_l <= 0 || ow_l <= 0)
    throw std::invalid_argument("conv_transpose2d: output dimension would be <= 0");
  const auto oh = static_cast<std::size_t>(oh_l), ow = static_cast<std::size_t>(ow_l);

  // Geometry of the forward conv this op is the adjoint of: image = output.
  detail::ConvGeometry g{cout, oh, ow, kh, kw, stride, padding, h, w};
  const std::size_t k = g.rows(), cols = g.cols();
  std::vector<T> out(batch * cout * oh * ow, T(0));
  std::vector<T> col(k * cols);
  for (std::size_t b = 0; b < batch; ++b) {
    std::fill(col.begin(), col.end(), T(0));
    detail::gemm_tn(k, cols, cin, weight.data().data(), input.data().data() + b * cin * cols,
                    col.data());
    T* ob = out.data() + b * cout * oh * ow;
    detail::col2im(col.data(), g, ob);
    if (bias.defined())
      for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t j = 0; j < oh * ow; ++j) ob[o * oh * ow + j] += bias.data()[o];
  }

  const bool tracked = detail::tracks<T>({&input, &weight, &bias});
  auto result = detail::make_output<T>({batch, cout, oh, ow}, std::move(out), tracked);
  if (tracked) {
    active_tape().record("conv_transpose2d", [xs = input.storage(), ws = weight.storage(),
                                              bs = bias.defined() ? bias.storage() : nullptr,
                                              ys = result.storage(), g, batch, cin]() {
      if (!ys->has_grad()) return;
      const std::size_t k = g.rows(), cols = g.cols(), out_sz = g.channels * g.height * g.width;
      std::vector<T> dcol(k * cols);
      for (std::size_t b = 0; b < batch; ++b) {
        detail::im2col(ys->grad.data() + b * out_sz, g, dcol.data());
        if (xs->requires_grad)
          detail::gemm_nn(cin, cols, k, ws->data.data(), dcol.data(),
                          xs->ensure_grad().data() + b * cin * cols);
        if (ws->requires_grad)
          detail::gemm_nt(cin, k, cols, xs->data.data() + b * cin * cols, dcol.data(),
                          ws->ensure_grad().data());
        if (bs && bs->requires_grad) {
          auto& gb = bs->ensure_grad();
          const T* dy = ys->grad.data() + b * out_sz;
          const std::size_t plane = g.height * g.width;
          for (std::size_t o = 0; o < g.channels; ++o)
            for (std::size_t j = 0; j < plane; ++j) gb[o] += dy[o * plane + j];
        }
      }
    });
  }
  return result;
}

namespace detail {

inline void pool_dims(const Shape& s, std::size_t window, std::size_t stride, const char* op,
                      std::size_t& oh, std::size_t& ow) {
  require_rank4(s, op, "input");
  if (window < 1 || stride < 1) throw std::invalid_argument(std::string(op) + ": window and stride must be >= 1");
  if (window > s[2] || window > s[3])
    throw std::invalid_argument(std::string(op) + ": window larger than input");
  // Windows that would run past the edge are dropped (floor semantics).
  oh = (s[2] - window) / stride + 1;
  ow = (s[3] - window) / stride + 1;
}

}  // namespace detail

// Backward routes each output's gradient to the row-major earliest maximum.
template <typename T>
BasicTensor<T> maxpool2d(const BasicTensor<T>& input, std::size_t window = 2, std::size_t stride = 2) {
  std::size_t oh = 0, ow = 0;
  detail::pool_dims(input.shape(), window, stride, "maxpool2d", oh, ow);
  const std::size_t planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  std::vector<T> out(planes * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  const T* x = input.data().data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = p * h * w + oy * stride * w + ox * stride;
        for (std::size_t i = 0; i < window; ++i)
          for (std::size_t j = 0; j < window; ++j) {
            const std::size_t idx = p * h * w + (oy * stride + i) * w + ox * stride + j;
            if (x[idx] > x[best]) best = idx;
          }
        const std::size_t o = (p * oh + oy) * ow + ox;
        out[o] = x[best];
        argmax[o] = best;
      }
  const bool tracked = detail::tracks<T>({&input});
  auto result = detail::make_output<T>({input.dim(0), input.dim(1), oh, ow}, std::move(out), tracked);
  if (tracked) {
    active_tape().record("maxpool2d", [xs = input.storage(), ys = result.storage(),
                                       argmax = std::move(argmax)]() {
      if (!ys->has_grad()) return;
      auto& g = xs->ensure_grad();
      for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += ys->grad[o];
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> avgpool2d(const BasicTensor<T>& input, std::size_t window, std::size_t stride) {
  std::size_t oh = 0, ow = 0;
  detail::pool_dims(input.shape(), window, stride, "avgpool2d", oh, ow);
  const std::size_t planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  const T inv = T(1) / static_cast<T>(window * window);
  std::vector<T> out(planes * oh * ow);
  const T* x = input.data().data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (std::size_t i = 0; i < window; ++i)
          for (std::size_t j = 0; j < window; ++j)
            acc += x[p * h * w + (oy * stride + i) * w + ox * stride + j];
        out[(p * oh + oy) * ow + ox] = static_cast<T>(acc) * inv;
      }
  const bool tracked = detail::tracks<T>({&input});
  auto result = detail::make_output<T>({input.dim(0), input.dim(1), oh, ow}, std::move(out), tracked);
  if (tracked) {
    active_tape().record("avgpool2d", [xs = input.storage(), ys = result.storage(), window, stride,
                                       planes, h, w, oh, ow, inv]() {
      if (!ys->has_grad()) return;
      auto& g = xs->ensure_grad();
      for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const T share = ys->grad[(p * oh + oy) * ow + ox] * inv;
            for (std::size_t i = 0; i < window; ++i)
              for (std::size_t j = 0; j < window; ++j)
                g[p * h * w + (oy * stride + i) * w + ox * stride + j] += share;
          }
    });
  }
  return result;
}

enum class Mode { train, eval };

// Per-channel running statistics owned by a normalization layer.
template <typename T>
struct RunningStats {
  BasicTensor<T> mean;
  BasicTensor<T> var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  static RunningStats identity(std::size_t channels) {
    return {BasicTensor<T>::zeros({channels}), BasicTensor<T>::full({channels}, T(1))};
  }
};

// Train mode normalizes with biased batch variance and folds the unbiased
// variance into the running estimate; eval mode uses the running estimate.
template <typename T>
BasicTensor<T> batchnorm2d(const BasicTensor<T>& input, const BasicTensor<T>& gamma,
                           const BasicTensor<T>& beta, RunningStats<T>& stats, Mode mode) {
  detail::require_rank4(input.shape(), "batchnorm2d", "input");
  const std::size_t batch = input.dim(0), ch = input.dim(1), plane = input.dim(2) * input.dim(3);
  if (gamma.numel() != ch || beta.numel() != ch || stats.mean.numel() != ch ||
      stats.var.numel() != ch)
    throw std::invalid_argument("batchnorm2d: channel count mismatch (input has " +
                                std::to_string(ch) + ")");
  const std::size_t count = batch * plane;
  const T* x = input.data().data();
  std::vector<T> mean(ch), inv_std(ch);
  if (mode == Mode::train) {
    if (count < 2) throw std::invalid_argument("batchnorm2d: train mode needs >1 value per channel");
    auto rm = stats.mean.mutable_data();
    auto rv = stats.var.mutable_data();
    for (std::size_t c = 0; c < ch; ++c) {
      double s = 0.0, ss = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* px = x + (b * ch + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) s += px[j];
      }
      const double mu = s / static_cast<double>(count);
      for (std::size_t b = 0; b < batch; ++b) {
        const T* px = x + (b * ch + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) ss += (px[j] - mu) * (px[j] - mu);
      }
      const double var = ss / static_cast<double>(count);
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(stats.eps)));
      const double unbiased = ss / static_cast<double>(count - 1);
      rm[c] = static_cast<T>((1.0 - stats.momentum) * rm[c] + stats.momentum * mu);
      rv[c] = static_cast<T>((1.0 - stats.momentum) * rv[c] + stats.momentum * unbiased);
    }
  } else {
    for (std::size_t c = 0; c < ch; ++c) {
      mean[c] = stats.mean.data()[c];
      inv_std[c] = T(1) / std::sqrt(std::max(stats.var.data()[c], T(0)) + stats.eps);
    }
  }

  std::vector<T> xhat(input.numel()), out(input.numel());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t base = (b * ch + c) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        xhat[base + j] = (x[base + j] - mean[c]) * inv_std[c];
        out[base + j] = gamma.data()[c] * xhat[base + j] + beta.data()[c];
      }
    }

  const bool tracked = detail::tracks<T>({&input, &gamma, &beta});
  auto result = detail::make_output<T>(input.shape(), std::move(out), tracked);
  if (tracked) {
    active_tape().record("batchnorm2d", [xs = input.storage(), gs = gamma.storage(),
                                         bs = beta.storage(), ys = result.storage(),
                                         xhat = std::move(xhat), inv_std = std::move(inv_std),
                                         batch, ch, plane, count, mode]() {
      if (!ys->has_grad()) return;
      const auto& dy = ys->grad;
      for (std::size_t c = 0; c < ch; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t base = (b * ch + c) * plane;
          for (std::size_t j = 0; j < plane; ++j) {
            sum_dy += dy[base + j];
            sum_dy_xhat += dy[base + j] * xhat[base + j];
          }
        }
        if (gs->requires_grad) gs->ensure_grad()[c] += static_cast<T>(sum_dy_xhat);
        if (bs->requires_grad) bs->ensure_grad()[c] += static_cast<T>(sum_dy);
        if (!xs->requires_grad) continue;
        auto& gx = xs->ensure_grad();
        const T scale = gs->data[c] * inv_std[c];
        const T mean_dy = static_cast<T>(sum_dy / static_cast<double>(count));
        const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / static_cast<double>(count));
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t base = (b * ch + c) * plane;
          for (std::size_t j = 0; j < plane; ++j) {
            if (mode == Mode::train)
              gx[base + j] += scale * (dy[base + j] - mean_dy - xhat[base + j] * mean_dy_xhat);
            else
              gx[base + j] += scale * dy[base + j];
          }
        }
      }
    });
  }
  return result;
}

}  // namespace glandseg
