#pragma once

// Dense N-d tensors with tape-based reverse-mode differentiation.
//
// Every differentiable op that sees a grad-enabled input appends a backward
// closure to the thread's active Tape. backward() replays the tape in exact
// reverse order and then marks it consumed; the training loop clears it
// before the next step.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace glandseg {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

class Tape {
 public:
  struct Entry {
    const char* op;
    std::function<void()> backward;
  };

  void record(const char* op, std::function<void()> fn) {
    if (consumed_)
      throw std::logic_error("tape: recording onto a consumed tape; call clear() first");
    entries_.push_back({op, std::move(fn)});
  }

  // Visits entries last-to-first. Optional visitor observes op names in
  // replay order (used by tests).
  void replay(const std::function<void(const char*)>& visit = {}) {
    if (consumed_) throw std::logic_error("backward called twice on a consumed tape");
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (visit) visit(it->op);
      it->backward();
    }
    consumed_ = true;
  }

  void clear() {
    entries_.clear();
    consumed_ = false;
  }

  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline Tape& active_tape() {
  thread_local Tape tape;
  return tape;
}

inline bool grad_mode_enabled() { return detail::grad_mode_flag(); }

// Disables tape recording for the guard's lifetime (inference).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;

  std::vector<T>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
  bool has_grad() const { return !grad.empty(); }
};

template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using Storage = TensorStorage<T>;

  BasicTensor() = default;

  static BasicTensor from(Shape shape, std::vector<T> values) {
    if (shape_numel(shape) != values.size()) {
      throw std::invalid_argument("tensor_from: shape " + shape_str(shape) + " holds " +
                                  std::to_string(shape_numel(shape)) + " values, got " +
                                  std::to_string(values.size()));
    }
    BasicTensor t;
    t.s_ = std::make_shared<Storage>();
    t.s_->shape = std::move(shape);
    t.s_->data = std::move(values);
    return t;
  }

  static BasicTensor zeros(Shape shape) { return full(std::move(shape), T(0)); }

  static BasicTensor full(Shape shape, T value) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<T>(n, value));
  }

  static BasicTensor scalar(T value) { return from({}, {value}); }

  // Standard normal samples scaled by stddev; deterministic per (shape, seed).
  static BasicTensor randn(Shape shape, std::uint64_t seed, T stddev = T(1)) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(dist(rng)) * stddev;
    return from(std::move(shape), std::move(v));
  }

  static BasicTensor uniform(Shape shape, std::uint64_t seed, T lo, T hi) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(dist(rng));
    return from(std::move(shape), std::move(v));
  }

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::size_t dim(std::size_t i) const { return s_->shape.at(i); }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t numel() const { return s_->data.size(); }

  std::span<const T> data() const { return s_->data; }
  std::span<T> mutable_data() { return s_->data; }
  std::span<const T> grad() const { return s_->grad; }
  std::span<T> mutable_grad() { return s_->ensure_grad(); }
  bool has_grad() const { return s_->has_grad(); }
  void zero_grad() { s_->grad.clear(); }

  bool requires_grad() const { return s_ && s_->requires_grad; }
  BasicTensor& set_requires_grad(bool on = true) {
    s_->requires_grad = on;
    return *this;
  }

  T item() const {
    if (numel() != 1) throw std::invalid_argument("item(): tensor is not a scalar");
    return s_->data[0];
  }

  T sum() const {
    double acc = 0.0;
    for (T x : s_->data) acc += x;
    return static_cast<T>(acc);
  }

  // Fresh storage holding a copy of the values; not grad-enabled.
  BasicTensor detach() const { return from(shape(), s_->data); }

  const std::shared_ptr<Storage>& storage() const { return s_; }

 private:
  std::shared_ptr<Storage> s_;
};

using Tensor = BasicTensor<float>;

namespace detail {

template <typename T>
bool tracks(std::initializer_list<const BasicTensor<T>*> inputs) {
  if (!grad_mode_enabled()) return false;
  for (const auto* t : inputs)
    if (t && t->defined() && t->requires_grad()) return true;
  return false;
}

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

// Output tensor; grad-enabled when any input is.
template <typename T>
BasicTensor<T> make_output(Shape shape, std::vector<T> data, bool tracked) {
  auto out = BasicTensor<T>::from(std::move(shape), std::move(data));
  if (tracked) out.set_requires_grad(true);
  return out;
}

// Unary elementwise op with derivative expressed through (x, y).
template <typename T, typename Fwd, typename Deriv>
BasicTensor<T> unary(const char* name, const BasicTensor<T>& x, Fwd fwd, Deriv deriv) {
  std::vector<T> y(x.numel());
  auto xs = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = fwd(xs[i]);
  const bool tracked = tracks<T>({&x});
  auto out = make_output<T>(x.shape(), std::move(y), tracked);
  if (tracked) {
    active_tape().record(name, [xs = x.storage(), ys = out.storage(), deriv]() {
      if (!ys->has_grad()) return;
      auto& gx = xs->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i)
        gx[i] += ys->grad[i] * deriv(xs->data[i], ys->data[i]);
    });
  }
  return out;
}

}  // namespace detail

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + b.data()[i];
  const bool tracked = detail::tracks<T>({&a, &b});
  auto out = detail::make_output<T>(a.shape(), std::move(y), tracked);
  if (tracked) {
    active_tape().record("add", [as = a.storage(), bs = b.storage(), ys = out.storage()]() {
      if (!ys->has_grad()) return;
      for (auto* s : {as.get(), bs.get()}) {
        if (!s->requires_grad) continue;
        auto& g = s->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += ys->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] - b.data()[i];
  const bool tracked = detail::tracks<T>({&a, &b});
  auto out = detail::make_output<T>(a.shape(), std::move(y), tracked);
  if (tracked) {
    active_tape().record("sub", [as = a.storage(), bs = b.storage(), ys = out.storage()]() {
      if (!ys->has_grad()) return;
      if (as->requires_grad) {
        auto& g = as->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += ys->grad[i];
      }
      if (bs->requires_grad) {
        auto& g = bs->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= ys->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
  const bool tracked = detail::tracks<T>({&a, &b});
  auto out = detail::make_output<T>(a.shape(), std::move(y), tracked);
  if (tracked) {
    active_tape().record("mul", [as = a.storage(), bs = b.storage(), ys = out.storage()]() {
      if (!ys->has_grad()) return;
      if (as->requires_grad) {
        auto& g = as->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += ys->grad[i] * bs->data[i];
      }
      if (bs->requires_grad) {
        auto& g = bs->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += ys->grad[i] * as->data[i];
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a, b, "div");
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] / b.data()[i];
  const bool tracked = detail::tracks<T>({&a, &b});
  auto out = detail::make_output<T>(a.shape(), std::move(y), tracked);
  if (tracked) {
    active_tape().record("div", [as = a.storage(), bs = b.storage(), ys = out.storage()]() {
      if (!ys->has_grad()) return;
      if (as->requires_grad) {
        auto& g = as->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += ys->grad[i] / bs->data[i];
      }
      if (bs->requires_grad) {
        auto& g = bs->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
          g[i] -= ys->grad[i] * ys->data[i] / bs->data[i];
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> scalar_mul(const BasicTensor<T>& x, T c) {
  return detail::unary<T>(
      "scalar_mul", x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, T c) {
  return detail::unary<T>(
      "add_scalar", x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  return detail::unary<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  return detail::unary<T>(
      "sigmoid", x,
      [](T v) {
        // Split on sign so exp never overflows.
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
BasicTensor<T> exp(const BasicTensor<T>& x) {
  return detail::unary<T>(
      "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

// Callers clamp first; non-positive input is a contract violation.
template <typename T>
BasicTensor<T> log(const BasicTensor<T>& x) {
  for (T v : x.data())
    if (v <= T(0)) throw std::domain_error("log: non-positive input; clamp before log");
  return detail::unary<T>(
      "log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
BasicTensor<T> clamp(const BasicTensor<T>& x, T lo, T hi) {
  return detail::unary<T>(
      "clamp", x, [lo, hi](T v) { return v < lo ? lo : (v > hi ? hi : v); },
      [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

template <typename T>
BasicTensor<T> reduce_sum(const BasicTensor<T>& x) {
  double acc = 0.0;
  for (T v : x.data()) acc += v;
  const bool tracked = detail::tracks<T>({&x});
  auto out = detail::make_output<T>({}, {static_cast<T>(acc)}, tracked);
  if (tracked) {
    active_tape().record("reduce_sum", [xs = x.storage(), ys = out.storage()]() {
      if (!ys->has_grad()) return;
      auto& g = xs->ensure_grad();
      for (auto& v : g) v += ys->grad[0];
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> reduce_mean(const BasicTensor<T>& x) {
  const auto n = x.numel();
  double acc = 0.0;
  for (T v : x.data()) acc += v;
  const bool tracked = detail::tracks<T>({&x});
  auto out = detail::make_output<T>({}, {static_cast<T>(acc / static_cast<double>(n))}, tracked);
  if (tracked) {
    active_tape().record("reduce_mean", [xs = x.storage(), ys = out.storage(), n]() {
      if (!ys->has_grad()) return;
      auto& g = xs->ensure_grad();
      const T share = ys->grad[0] / static_cast<T>(n);
      for (auto& v : g) v += share;
    });
  }
  return out;
}

// Reverse pass from a scalar loss over the active tape.
template <typename T>
void backward(BasicTensor<T>& loss, Tape& tape = active_tape()) {
  if (!loss.defined() || loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be a scalar tensor");
  if (tape.consumed()) throw std::logic_error("backward called twice on a consumed tape");
  if (!loss.requires_grad())
    throw std::invalid_argument("backward: loss is not connected to any grad-enabled tensor");
  loss.mutable_grad()[0] += T(1);
  tape.replay();
}

}  // namespace glandseg
