#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "glandseg/tensor.hpp"

namespace glandseg {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adaptive moment estimation with bias correction.
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, Tensor>> params, AdamOptions opts)
      : params_(std::move(params)), opts_(opts) {
    for (const auto& [name, p] : params_) {
      m_.emplace_back(p.numel(), 0.0f);
      v_.emplace_back(p.numel(), 0.0f);
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    const float b1 = static_cast<float>(opts_.beta1), b2 = static_cast<float>(opts_.beta2);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k].second;
      if (!p.has_grad()) continue;
      auto w = p.mutable_data();
      const auto g = p.grad();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = b1 * m[i] + (1.0f - b1) * g[i];
        v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
        const double mhat = m[i] / bc1, vhat = v[i] / bc2;
        w[i] -= static_cast<float>(opts_.learning_rate * mhat / (std::sqrt(vhat) + opts_.eps));
      }
    }
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  std::uint64_t steps() const { return t_; }
  const AdamOptions& options() const { return opts_; }
  const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }
  const std::vector<float>& first_moment(std::size_t k) const { return m_.at(k); }
  const std::vector<float>& second_moment(std::size_t k) const { return v_.at(k); }

  void restore(std::uint64_t steps, std::vector<std::vector<float>> m, std::vector<std::vector<float>> v) {
    if (m.size() != params_.size() || v.size() != params_.size())
      throw std::invalid_argument("Adam::restore: moment buffer count mismatch");
    for (std::size_t k = 0; k < params_.size(); ++k)
      if (m[k].size() != params_[k].second.numel() || v[k].size() != params_[k].second.numel())
        throw std::invalid_argument("Adam::restore: moment buffer size mismatch for " + params_[k].first);
    t_ = steps;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  AdamOptions opts_;
  std::vector<std::vector<float>> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace glandseg
