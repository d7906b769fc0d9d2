#pragma once

// LinkNet-style residual encoder-decoder with a full-resolution output head and
// an auxiliary coarse-scale head.
//
//   stem:    7×7/2 conv + norm + relu  (→ H/2, kept as the first skip)
//            2×2 max-pool              (→ H/4)
//   encoder: 4 residual stages at H/4, H/8, H/16, H/32
//   decoder: 4 blocks (1×1 reduce → 3×3 transposed /2 → 1×1 expand), each
//            output summed with the encoder feature one level up
//   final:   3×3 transposed /2 → 3×3 conv → 3×3 transposed (stride 1) → 1×1 → sigmoid
//   coarse:  1×1 conv → sigmoid on the decoder output at the tap resolution

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "glandseg/image.hpp"
#include "glandseg/nn_ops.hpp"
#include "glandseg/tensor.hpp"

namespace glandseg {

struct NetworkConfig {
  std::size_t in_channels = 1;
  std::size_t stem_channels = 8;
  std::array<std::size_t, 4> encoder_channels{8, 16, 32, 64};
  std::size_t blocks_per_stage = 1;
  std::size_t coarse_tap = 4;  // downsampling factor of the tapped decoder output: 2, 4, 8 or 16
  std::uint64_t seed = 1;

  static NetworkConfig tiny() { return {}; }
  static NetworkConfig full() { return {1, 64, {64, 128, 256, 512}, 2, 4, 1}; }

  static NetworkConfig preset(const std::string& name) {
    if (name == "tiny") return tiny();
    if (name == "full") return full();
    throw std::invalid_argument("unknown network preset '" + name + "' (expected tiny or full)");
  }

  void validate() const {
    if (in_channels < 1 || stem_channels < 1 || blocks_per_stage < 1)
      throw std::invalid_argument("NetworkConfig: channel and block counts must be >= 1");
    for (auto c : encoder_channels)
      if (c < 1) throw std::invalid_argument("NetworkConfig: encoder widths must be >= 1");
    if (coarse_tap != 2 && coarse_tap != 4 && coarse_tap != 8 && coarse_tap != 16)
      throw std::invalid_argument("NetworkConfig: coarse_tap must be 2, 4, 8 or 16");
  }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

struct NetworkOutputs {
  Tensor final;   // B×1×H×W
  Tensor coarse;  // B×1×(H/tap)×(W/tap)
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

class MiniLinkNet {
 public:
  explicit MiniLinkNet(const NetworkConfig& config) : config_(config) {
    config_.validate();
    const auto& enc = config_.encoder_channels;
    stem_conv_ = conv("stem.conv", config_.in_channels, config_.stem_channels, 7, 2, 3, false);
    stem_norm_ = norm("stem.norm", config_.stem_channels);
    std::size_t cin = config_.stem_channels;
    for (std::size_t s = 0; s < 4; ++s) {
      for (std::size_t b = 0; b < config_.blocks_per_stage; ++b) {
        const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
        stages_[s].push_back(residual("enc" + std::to_string(s + 1) + "." + std::to_string(b), cin, enc[s], stride));
        cin = enc[s];
      }
    }
    for (std::size_t i = 0; i < 4; ++i) {
      const std::size_t m = enc[i];
      const std::size_t n = i == 0 ? config_.stem_channels : enc[i - 1];
      decoders_[i] = decoder("dec" + std::to_string(i + 1), m, n);
    }
    const std::size_t half = std::max<std::size_t>(1, config_.stem_channels / 2);
    final_up1_ = conv_t("final.up1", config_.stem_channels, half, 3, 2, 1, 1);
    final_norm1_ = norm("final.norm1", half);
    final_conv_ = conv("final.conv", half, half, 3, 1, 1, false);
    final_norm2_ = norm("final.norm2", half);
    final_up2_ = conv_t("final.up2", half, half, 3, 1, 1, 0);
    final_norm3_ = norm("final.norm3", half);
    final_out_ = conv("final.out", half, 1, 1, 1, 0, true, 1.0);
    const std::size_t tap_channels = tap_stage_channels();
    coarse_out_ = conv("coarse.out", tap_channels, 1, 1, 1, 0, true, 1.0);
  }

  MiniLinkNet(const MiniLinkNet&) = delete;
  MiniLinkNet& operator=(const MiniLinkNet&) = delete;
  MiniLinkNet(MiniLinkNet&&) = default;
  MiniLinkNet& operator=(MiniLinkNet&&) = default;

  const NetworkConfig& config() const { return config_; }

  // Learnable tensors in registration order.
  const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }
  // Normalization running statistics (not learnable).
  const std::vector<std::pair<std::string, Tensor>>& buffers() const { return buffers_; }

  std::size_t num_params() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
  }

  NetworkOutputs forward(const Tensor& batch, Mode mode) {
    if (batch.rank() != 4 || batch.dim(1) != config_.in_channels)
      throw std::invalid_argument("forward: expected B×" + std::to_string(config_.in_channels) +
                                  "×H×W input, got " + shape_str(batch.shape()));
    if (batch.dim(2) % 32 != 0 || batch.dim(3) % 32 != 0)
      throw std::invalid_argument("forward: spatial dims must be divisible by 32, got " +
                                  std::to_string(batch.dim(2)) + "x" + std::to_string(batch.dim(3)));

    Tensor stem = relu(apply(stem_norm_, apply(stem_conv_, batch), mode));
    std::array<Tensor, 4> encoded;
    Tensor x = maxpool2d(stem, 2, 2);
    for (std::size_t s = 0; s < 4; ++s) {
      for (auto& block : stages_[s]) x = apply(block, x, mode);
      encoded[s] = x;
    }

    NetworkOutputs out;
    Tensor d = encoded[3];
    std::size_t factor = 32;
    for (std::size_t i = 4; i-- > 0;) {
      d = apply(decoders_[i], d, mode);
      d = add(d, i == 0 ? stem : encoded[i - 1]);
      factor /= 2;
      if (factor == config_.coarse_tap) out.coarse = sigmoid(apply(coarse_out_, d));
    }

    Tensor f = relu(apply(final_norm1_, apply(final_up1_, d), mode));
    f = relu(apply(final_norm2_, apply(final_conv_, f), mode));
    f = relu(apply(final_norm3_, apply(final_up2_, f), mode));
    out.final = sigmoid(apply(final_out_, f));
    return out;
  }

 private:
  struct Conv {
    Tensor weight, bias;
    std::size_t stride = 1, pad = 0, out_pad = 0;
    bool transposed = false;
  };
  struct Norm {
    Tensor gamma, beta;
    RunningStats<float> stats;
  };
  struct Residual {
    Conv conv1, conv2;
    Norm norm1, norm2;
    bool project = false;
    Conv proj;
    Norm proj_norm;
  };
  struct Decoder {
    Conv reduce, up, expand;
    Norm n1, n2, n3;
  };

  std::size_t tap_stage_channels() const {
    // Decoder i (0-based) outputs at factor 2^(i+1) with the width of the level it joins.
    switch (config_.coarse_tap) {
      case 2: return config_.stem_channels;
      case 4: return config_.encoder_channels[0];
      case 8: return config_.encoder_channels[1];
      default: return config_.encoder_channels[2];
    }
  }

  std::uint64_t next_seed() { return detail::splitmix64(config_.seed * 1000003ULL + seed_counter_++); }

  Tensor& add_param(const std::string& name, Tensor t) {
    t.set_requires_grad(true);
    params_.emplace_back(name, t);
    return params_.back().second;
  }

  // Scaled-normal fan-in init: std = sqrt(gain / fan_in).
  Conv conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride,
            std::size_t pad, bool bias, double gain = 2.0) {
    Conv c;
    const double fan_in = static_cast<double>(cin * k * k);
    c.weight = add_param(name + ".weight",
                         Tensor::randn({cout, cin, k, k}, next_seed(), static_cast<float>(std::sqrt(gain / fan_in))));
    if (bias) c.bias = add_param(name + ".bias", Tensor::zeros({cout}));
    c.stride = stride;
    c.pad = pad;
    return c;
  }

  Conv conv_t(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride,
              std::size_t pad, std::size_t out_pad) {
    Conv c;
    const double fan_in = static_cast<double>(cin * k * k) / static_cast<double>(stride * stride);
    c.weight = add_param(name + ".weight",
                         Tensor::randn({cin, cout, k, k}, next_seed(), static_cast<float>(std::sqrt(2.0 / fan_in))));
    c.stride = stride;
    c.pad = pad;
    c.out_pad = out_pad;
    c.transposed = true;
    return c;
  }

  Norm norm(const std::string& name, std::size_t channels) {
    Norm n;
    n.gamma = add_param(name + ".gamma", Tensor::full({channels}, 1.0f));
    n.beta = add_param(name + ".beta", Tensor::zeros({channels}));
    n.stats = RunningStats<float>::identity(channels);
    buffers_.emplace_back(name + ".running_mean", n.stats.mean);
    buffers_.emplace_back(name + ".running_var", n.stats.var);
    return n;
  }

  Residual residual(const std::string& name, std::size_t cin, std::size_t cout, std::size_t stride) {
    Residual r;
    r.conv1 = conv(name + ".conv1", cin, cout, 3, stride, 1, false);
    r.norm1 = norm(name + ".norm1", cout);
    r.conv2 = conv(name + ".conv2", cout, cout, 3, 1, 1, false);
    r.norm2 = norm(name + ".norm2", cout);
    r.project = stride != 1 || cin != cout;
    if (r.project) {
      r.proj = conv(name + ".proj", cin, cout, 1, stride, 0, false);
      r.proj_norm = norm(name + ".proj_norm", cout);
    }
    return r;
  }

  Decoder decoder(const std::string& name, std::size_t m, std::size_t n) {
    const std::size_t mid = std::max<std::size_t>(1, m / 4);
    Decoder d;
    d.reduce = conv(name + ".reduce", m, mid, 1, 1, 0, false);
    d.n1 = norm(name + ".norm1", mid);
    d.up = conv_t(name + ".up", mid, mid, 3, 2, 1, 1);
    d.n2 = norm(name + ".norm2", mid);
    d.expand = conv(name + ".expand", mid, n, 1, 1, 0, false);
    d.n3 = norm(name + ".norm3", n);
    return d;
  }

  static Tensor apply(const Conv& c, const Tensor& x) {
    return c.transposed ? conv_transpose2d(x, c.weight, c.bias, c.stride, c.pad, c.out_pad)
                        : conv2d(x, c.weight, c.bias, c.stride, c.pad);
  }

  static Tensor apply(Norm& n, const Tensor& x, Mode mode) { return batchnorm2d(x, n.gamma, n.beta, n.stats, mode); }

  static Tensor apply(Residual& r, const Tensor& x, Mode mode) {
    Tensor y = relu(apply(r.norm1, apply(r.conv1, x), mode));
    y = apply(r.norm2, apply(r.conv2, y), mode);
    Tensor skip = r.project ? apply(r.proj_norm, apply(r.proj, x), mode) : x;
    return relu(add(y, skip));
  }

  static Tensor apply(Decoder& d, const Tensor& x, Mode mode) {
    Tensor y = relu(apply(d.n1, apply(d.reduce, x), mode));
    y = relu(apply(d.n2, apply(d.up, y), mode));
    return relu(apply(d.n3, apply(d.expand, y), mode));
  }

  NetworkConfig config_;
  std::uint64_t seed_counter_ = 0;
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::pair<std::string, Tensor>> buffers_;

  Conv stem_conv_;
  Norm stem_norm_;
  std::array<std::vector<Residual>, 4> stages_;
  std::array<Decoder, 4> decoders_;
  Conv final_up1_, final_conv_, final_up2_, final_out_;
  Norm final_norm1_, final_norm2_, final_norm3_;
  Conv coarse_out_;
};

inline MiniLinkNet build(const NetworkConfig& config) { return MiniLinkNet(config); }

inline std::size_t num_params(const MiniLinkNet& net) { return net.num_params(); }

// Average-pool by `factor`, then keep blocks whose mean is >= 0.5.
inline BinaryMask downsample_target(const BinaryMask& mask, std::size_t factor) {
  if (factor < 1 || mask.rows() % factor != 0 || mask.cols() % factor != 0)
    throw std::invalid_argument("downsample_target: " + std::to_string(mask.cols()) + "x" +
                                std::to_string(mask.rows()) + " is not divisible by " + std::to_string(factor));
  BinaryMask out(mask.rows() / factor, mask.cols() / factor, 0);
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) {
      std::size_t on = 0;
      for (std::size_t i = 0; i < factor; ++i)
        for (std::size_t j = 0; j < factor; ++j) on += mask(r * factor + i, c * factor + j) != 0;
      out(r, c) = 2 * on >= factor * factor;
    }
  return out;
}

// Batch version on B×1×H×W {0,1} tensors.
inline Tensor downsample_target(const Tensor& targets, std::size_t factor) {
  NoGradGuard no_grad;
  auto pooled = avgpool2d(targets, factor, factor);
  auto values = pooled.mutable_data();
  for (auto& v : values) v = v >= 0.5f ? 1.0f : 0.0f;
  return pooled;
}

}  // namespace glandseg
