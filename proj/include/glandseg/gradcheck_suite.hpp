#pragma once

// Finite-difference checks over every differentiable op and the composite
// losses, on seeded random instances. Runs in double precision: the float32
// instantiation shares the same templates, but its central differences carry
// rounding noise far above 1e-3 relative error.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "glandseg/gradcheck.hpp"
#include "glandseg/losses.hpp"
#include "glandseg/nn_ops.hpp"
#include "glandseg/tensor.hpp"

namespace glandseg {

struct GradCheckCaseResult {
  std::string name;
  std::size_t instances = 0;
  std::size_t failures = 0;
  double worst_rel_error = 0.0;
};

struct GradCheckSuiteResult {
  std::vector<GradCheckCaseResult> cases;
  double seconds = 0.0;
  double epsilon = 0.0, tolerance = 0.0;

  bool passed() const {
    for (const auto& c : cases)
      if (c.failures) return false;
    return !cases.empty();
  }
};

namespace gcs {

using D = BasicTensor<double>;

// Uniform magnitudes in [lo, hi] with random signs: keeps values away from 0.
inline D signed_away_from_zero(const Shape& shape, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> mag(lo, hi);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
  return D::from(shape, std::move(v));
}

// Distinct values spaced 0.05 apart in random order, so pooling windows have
// a unique maximum well beyond the finite-difference step.
inline D distinct_values(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> v(shape_numel(shape));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.05 * static_cast<double>(i) - 1.0;
  std::shuffle(v.begin(), v.end(), rng);
  return D::from(shape, std::move(v));
}

inline D binary(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution on(0.5);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = on(rng) ? 1.0 : 0.0;
  return D::from(shape, std::move(v));
}

struct Instance {
  std::function<D()> function;
  NamedTensors<double> parameters;
};

using Builder = std::function<Instance(std::uint64_t)>;

inline Instance unary_case(std::uint64_t s, D x, std::function<D(const D&)> op) {
  Shape out_shape;
  {
    NoGradGuard no_grad;
    out_shape = op(x.detach()).shape();
  }
  const D r = D::uniform(out_shape, s ^ 0xABCDEFULL, -1.0, 1.0);
  return {[x, r, op] { return reduce_sum(mul(op(x), r)); }, {{"x", x}}};
}

inline Instance binary_case(std::uint64_t s, D a, D b, std::function<D(const D&, const D&)> op) {
  const D r = D::uniform(a.shape(), s ^ 0xFEDCBAULL, -1.0, 1.0);
  return {[a, b, r, op] { return reduce_sum(mul(op(a, b), r)); }, {{"a", a}, {"b", b}}};
}

inline std::vector<std::pair<std::string, Builder>> cases() {
  const Shape v{3, 4};
  std::vector<std::pair<std::string, Builder>> list;
  list.emplace_back("add", [v](std::uint64_t s) {
    return binary_case(s, D::uniform(v, s, -2, 2), D::uniform(v, s + 1000, -2, 2),
                       [](const D& a, const D& b) { return add(a, b); });
  });
  list.emplace_back("sub", [v](std::uint64_t s) {
    return binary_case(s, D::uniform(v, s, -2, 2), D::uniform(v, s + 1000, -2, 2),
                       [](const D& a, const D& b) { return sub(a, b); });
  });
  list.emplace_back("mul", [v](std::uint64_t s) {
    return binary_case(s, D::uniform(v, s, -2, 2), D::uniform(v, s + 1000, -2, 2),
                       [](const D& a, const D& b) { return mul(a, b); });
  });
  list.emplace_back("div", [v](std::uint64_t s) {
    return binary_case(s, D::uniform(v, s, -2, 2), signed_away_from_zero(v, s + 1000, 0.5, 2.0),
                       [](const D& a, const D& b) { return div(a, b); });
  });
  list.emplace_back("scalar_mul", [v](std::uint64_t s) {
    return unary_case(s, D::uniform(v, s, -2, 2), [s](const D& x) { return scalar_mul(x, 0.5 + 0.1 * (s % 7)); });
  });
  list.emplace_back("add_scalar", [v](std::uint64_t s) {
    return unary_case(s, D::uniform(v, s, -2, 2), [s](const D& x) { return add_scalar(x, -1.0 + 0.3 * (s % 5)); });
  });
  list.emplace_back("relu", [v](std::uint64_t s) {
    return unary_case(s, signed_away_from_zero(v, s, 0.05, 1.0), [](const D& x) { return relu(x); });
  });
  list.emplace_back("sigmoid", [v](std::uint64_t s) {
    return unary_case(s, D::uniform(v, s, -4, 4), [](const D& x) { return sigmoid(x); });
  });
  list.emplace_back("exp", [v](std::uint64_t s) {
    return unary_case(s, D::uniform(v, s, -2, 2), [](const D& x) { return exp(x); });
  });
  list.emplace_back("log", [v](std::uint64_t s) {
    return unary_case(s, D::uniform(v, s, 0.3, 3.0), [](const D& x) { return log(x); });
  });
  list.emplace_back("clamp", [v](std::uint64_t s) {
    // Magnitudes in [0.05, 0.4] ∪ [0.6, 1.0] stay clear of the ±0.5 bounds.
    D x = signed_away_from_zero(v, s, 0.05, 0.8);
    for (auto& e : x.mutable_data()) e = std::abs(e) > 0.4 ? (e > 0 ? e + 0.2 : e - 0.2) : e;
    return unary_case(s, x, [](const D& t) { return clamp(t, -0.5, 0.5); });
  });
  list.emplace_back("reduce_sum", [v](std::uint64_t s) {
    const D x = D::uniform(v, s, -2, 2);
    const D w = D::uniform(v, s + 7, -1, 1);
    return Instance{[x, w] { return scalar_mul(reduce_sum(mul(x, w)), 1.5); }, {{"x", x}}};
  });
  list.emplace_back("reduce_mean", [v](std::uint64_t s) {
    const D x = D::uniform(v, s, -2, 2);
    return Instance{[x] { return reduce_mean(mul(x, x)); }, {{"x", x}}};
  });
  list.emplace_back("conv2d", [](std::uint64_t s) {
    const std::size_t stride = 1 + s % 2, pad = s % 3 == 0 ? 0 : 1;
    const D x = D::uniform({2, 2, 6, 5}, s, -1, 1);
    const D w = D::uniform({3, 2, 3, 3}, s + 1, -1, 1);
    const D b = D::uniform({3}, s + 2, -1, 1);
    const auto out_shape = conv2d(x.detach(), w.detach(), b.detach(), stride, pad).shape();
    const D r = D::uniform(out_shape, s + 3, -1, 1);
    return Instance{[=] { return reduce_sum(mul(conv2d(x, w, b, stride, pad), r)); }, {{"x", x}, {"w", w}, {"b", b}}};
  });
  list.emplace_back("conv_transpose2d", [](std::uint64_t s) {
    const std::size_t stride = 1 + s % 2, pad = s % 3 == 0 ? 0 : 1, out_pad = stride == 2 ? (s / 2) % 2 : 0;
    const D x = D::uniform({2, 3, 4, 3}, s, -1, 1);
    const D w = D::uniform({3, 2, 3, 3}, s + 1, -1, 1);
    const D b = D::uniform({2}, s + 2, -1, 1);
    const auto out_shape = conv_transpose2d(x.detach(), w.detach(), b.detach(), stride, pad, out_pad).shape();
    const D r = D::uniform(out_shape, s + 3, -1, 1);
    return Instance{[=] { return reduce_sum(mul(conv_transpose2d(x, w, b, stride, pad, out_pad), r)); },
                    {{"x", x}, {"w", w}, {"b", b}}};
  });
  list.emplace_back("maxpool2d", [](std::uint64_t s) {
    const std::size_t window = 2 + s % 2;
    return unary_case(s, distinct_values({2, 2, 6, 6}, s), [window](const D& x) { return maxpool2d(x, window, window); });
  });
  list.emplace_back("avgpool2d", [](std::uint64_t s) {
    const std::size_t window = 2 + s % 2;
    return unary_case(s, D::uniform({2, 2, 6, 6}, s, -1, 1),
                      [window](const D& x) { return avgpool2d(x, window, window); });
  });
  for (const Mode mode : {Mode::train, Mode::eval}) {
    const std::string name = mode == Mode::train ? "batchnorm2d_train" : "batchnorm2d_eval";
    list.emplace_back(name, [mode](std::uint64_t s) {
      const D x = D::uniform({3, 2, 3, 3}, s, -2, 2);
      const D g = D::uniform({2}, s + 1, 0.5, 1.5);
      const D b = D::uniform({2}, s + 2, -1, 1);
      const D r = D::uniform(x.shape(), s + 3, -1, 1);
      const D mean = D::uniform({2}, s + 4, -0.5, 0.5), var = D::uniform({2}, s + 5, 0.5, 1.5);
      return Instance{[=] {
                        RunningStats<double> stats{mean.detach(), var.detach()};
                        return reduce_sum(mul(batchnorm2d(x, g, b, stats, mode), r));
                      },
                      {{"x", x}, {"gamma", g}, {"beta", b}}};
    });
  }
  const Shape img{2, 1, 4, 4};
  list.emplace_back("bce", [img](std::uint64_t s) {
    const D t = binary(img, s + 9), p = D::uniform(img, s, 0.05, 0.95);
    return Instance{[t, p] { return bce(t, p); }, {{"prob", p}}};
  });
  list.emplace_back("soft_dice", [img](std::uint64_t s) {
    const D t = binary(img, s + 9), p = D::uniform(img, s, 0.05, 0.95);
    return Instance{[t, p] { return soft_dice(t, p, 1.0); }, {{"prob", p}}};
  });
  list.emplace_back("soft_accuracy", [img](std::uint64_t s) {
    const D t = binary(img, s + 9), p = D::uniform(img, s, 0.05, 0.95);
    return Instance{[t, p] { return soft_accuracy(t, p); }, {{"prob", p}}};
  });
  for (const LossKind kind : {LossKind::L1, LossKind::L2, LossKind::L3}) {
    list.emplace_back("loss_" + std::string(to_string(kind)), [img, kind](std::uint64_t s) {
      const D t = binary(img, s + 9), p = D::uniform(img, s, 0.05, 0.95);
      return Instance{[t, p, kind] { return composite_loss(kind, t, p); }, {{"prob", p}}};
    });
  }
  list.emplace_back("total_loss", [](std::uint64_t s) {
    const LossKind kind = static_cast<LossKind>(s % 3);
    const D t = binary({2, 1, 4, 4}, s + 9), p = D::uniform({2, 1, 4, 4}, s, 0.05, 0.95);
    const D tc = binary({2, 1, 2, 2}, s + 10), pc = D::uniform({2, 1, 2, 2}, s + 11, 0.05, 0.95);
    return Instance{[=] { return total_loss(kind, t, p, tc, pc).l_final; }, {{"prob", p}, {"prob_coarse", pc}}};
  });
  return list;
}

}  // namespace gcs

inline GradCheckSuiteResult run_gradcheck_suite(std::size_t instances = 20, std::uint64_t seed = 1,
                                                double epsilon = 1e-3, double tolerance = 1e-3) {
  const auto start = std::chrono::steady_clock::now();
  GradCheckSuiteResult res;
  res.epsilon = epsilon;
  res.tolerance = tolerance;
  for (const auto& [name, build] : gcs::cases()) {
    GradCheckCaseResult c{name, instances, 0, 0.0};
    for (std::size_t i = 0; i < instances; ++i) {
      auto inst = build(seed * 1000003ULL + i);
      const auto report = grad_check<double>(inst.function, inst.parameters, epsilon, tolerance);
      c.worst_rel_error = std::max(c.worst_rel_error, report.worst());
      if (!report.passed) ++c.failures;
    }
    res.cases.push_back(c);
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

}  // namespace glandseg
