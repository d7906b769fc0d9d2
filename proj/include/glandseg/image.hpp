#pragma once

// 2-D pixel grids shared by preprocessing, post-processing and metrics.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace glandseg {

template <typename P>
class Grid {
 public:
  using value_type = P;

  Grid() = default;
  Grid(std::size_t rows, std::size_t cols, P fill = P{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Grid(std::size_t rows, std::size_t cols, std::vector<P> values)
      : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (data_.size() != rows * cols)
      throw std::invalid_argument("Grid: " + std::to_string(rows) + "x" + std::to_string(cols) +
                                  " needs " + std::to_string(rows * cols) + " values, got " +
                                  std::to_string(data_.size()));
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t height() const { return rows_; }
  std::size_t width() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  P& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const P& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  P& operator[](std::size_t i) { return data_[i]; }
  const P& operator[](std::size_t i) const { return data_[i]; }

  std::vector<P>& values() { return data_; }
  const std::vector<P>& values() const { return data_; }

  bool same_size(std::size_t r, std::size_t c) const { return rows_ == r && cols_ == c; }
  template <typename Q>
  bool same_size(const Grid<Q>& other) const {
    return rows_ == other.rows() && cols_ == other.cols();
  }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<P> data_;
};

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

using ImageRGB = Grid<Rgb>;
using GrayImage = Grid<float>;       // values kept in [0,1]
using ProbabilityMap = Grid<float>;  // per-pixel gland probability
using BinaryMask = Grid<std::uint8_t>;
using LabeledMask = Grid<std::uint32_t>;  // 0 = background, objects 1..K

template <typename P>
void require_same_size(const Grid<P>& a, const Grid<P>& b, const char* op) {
  if (!a.same_size(b))
    throw std::invalid_argument(std::string(op) + ": dimension mismatch " +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

inline BinaryMask foreground(const LabeledMask& labels) {
  BinaryMask m(labels.rows(), labels.cols());
  for (std::size_t i = 0; i < labels.size(); ++i) m[i] = labels[i] != 0;
  return m;
}

inline std::uint32_t max_label(const LabeledMask& labels) {
  std::uint32_t k = 0;
  for (auto v : labels.values()) k = std::max(k, v);
  return k;
}

}  // namespace glandseg
