#pragma once

// Central finite-difference verification of taped gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "glandseg/tensor.hpp"

namespace glandseg {

struct GradCheckReport {
  struct Entry {
    std::string name;
    double max_rel_error = 0.0;
  };
  std::vector<Entry> parameters;
  double epsilon = 0.0;
  double tolerance = 0.0;
  bool passed = false;

  double worst() const {
    double w = 0.0;
    for (const auto& e : parameters) w = std::max(w, e.max_rel_error);
    return w;
  }
};

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, BasicTensor<T>>>;

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

// `function` rebuilds the graph from the current parameter values and returns
// a scalar. Parameters are perturbed in place and restored afterwards.
template <typename T>
GradCheckReport grad_check(const std::function<BasicTensor<T>()>& function,
                           NamedTensors<T> parameters, double epsilon = 1e-3,
                           double tolerance = 1e-3) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("grad_check: epsilon must be > 0");
  Tape& tape = active_tape();
  tape.clear();
  for (auto& [name, p] : parameters) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  auto loss = function();
  if (!std::isfinite(static_cast<double>(loss.item())))
    throw std::domain_error("grad_check: function value is not finite");
  backward(loss);
  tape.clear();

  GradCheckReport report;
  report.epsilon = epsilon;
  report.tolerance = tolerance;
  report.passed = true;
  NoGradGuard no_grad;
  for (auto& [name, p] : parameters) {
    GradCheckReport::Entry entry{name, 0.0};
    const std::vector<T> analytic = p.has_grad() ? std::vector<T>(p.grad().begin(), p.grad().end())
                                                 : std::vector<T>(p.numel(), T(0));
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T original = values[i];
      const T plus = static_cast<T>(original + epsilon);
      const T minus = static_cast<T>(original - epsilon);
      values[i] = plus;
      const double f_plus = function().item();
      values[i] = minus;
      const double f_minus = function().item();
      values[i] = original;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
        throw std::domain_error("grad_check: function value is not finite at " + name);
      const double numeric = (f_plus - f_minus) / (static_cast<double>(plus) - static_cast<double>(minus));
      entry.max_rel_error = std::max(entry.max_rel_error, relative_error(analytic[i], numeric));
    }
    if (!(entry.max_rel_error < tolerance)) report.passed = false;
    report.parameters.push_back(std::move(entry));
  }
  return report;
}

}  // namespace glandseg
