#pragma once

// Probability map → labeled objects: Otsu threshold, disk morphology, hole
// filling, small-object removal and connected-component labeling.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "glandseg/image.hpp"
#include "glandseg/preprocess.hpp"

namespace glandseg {

struct PostprocessParams {
  int radius = 2;               // disk structuring element
  std::size_t min_area = 100;   // pixels at original resolution
  int connectivity = 8;         // object connectivity; holes use the dual (4)

  void validate() const {
    if (radius < 0) throw std::invalid_argument("postprocess: radius must be >= 0");
    if (connectivity != 4 && connectivity != 8)
      throw std::invalid_argument("postprocess: connectivity must be 4 or 8");
  }
};

using Histogram256 = std::array<std::uint64_t, 256>;

inline int quantize_probability(float v) {
  return static_cast<int>(std::clamp(std::lround(static_cast<double>(v) * 255.0), 0L, 255L));
}

inline Histogram256 probability_histogram(const ProbabilityMap& map) {
  Histogram256 h{};
  for (float v : map.values()) ++h[static_cast<std::size_t>(quantize_probability(v))];
  return h;
}

// Otsu bin: the t in [0, 254] maximizing between-class variance of
// {bins <= t} vs {bins > t}; the smallest such t on ties. Returns -1 when the
// histogram occupies fewer than two bins (no foreground). Comparisons are
// exact: N²·σ_B²(t) = (n1·s0 − n0·s1)² / (n0·n1).
inline int otsu_bin(const Histogram256& hist) {
  using boost::multiprecision::int256_t;
  int occupied = 0;
  std::int64_t total_n = 0, total_s = 0;
  for (int b = 0; b < 256; ++b) {
    if (hist[b]) ++occupied;
    total_n += static_cast<std::int64_t>(hist[b]);
    total_s += static_cast<std::int64_t>(hist[b]) * b;
  }
  if (occupied < 2) return -1;

  int best = -1;
  int256_t best_num = 0, best_den = 1;
  std::int64_t n0 = 0, s0 = 0;
  for (int t = 0; t < 255; ++t) {
    n0 += static_cast<std::int64_t>(hist[t]);
    s0 += static_cast<std::int64_t>(hist[t]) * t;
    const std::int64_t n1 = total_n - n0, s1 = total_s - s0;
    int256_t num = 0, den = 1;
    if (n0 > 0 && n1 > 0) {
      const int256_t diff = int256_t(n1) * s0 - int256_t(n0) * s1;
      num = diff * diff;
      den = int256_t(n0) * n1;
    }
    if (best < 0 || num * best_den > best_num * den) {
      best = t;
      best_num = num;
      best_den = den;
    }
  }
  return best;
}

struct OtsuResult {
  double threshold = 1.0;  // decision boundary in probability units; foreground is v·255 rounding above it
  int bin = -1;            // -1: empty foreground
  BinaryMask mask;
};

inline OtsuResult otsu_threshold(const ProbabilityMap& map) {
  OtsuResult res;
  res.bin = otsu_bin(probability_histogram(map));
  res.mask = BinaryMask(map.rows(), map.cols(), 0);
  if (res.bin < 0) return res;
  res.threshold = (res.bin + 0.5) / 255.0;
  for (std::size_t i = 0; i < map.size(); ++i) res.mask[i] = quantize_probability(map[i]) > res.bin;
  return res;
}

// Offsets (dy, dx) with dy² + dx² <= r².
inline std::vector<std::pair<int, int>> disk_offsets(int radius) {
  std::vector<std::pair<int, int>> offs;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dy * dy + dx * dx <= radius * radius) offs.emplace_back(dy, dx);
  return offs;
}

namespace detail {

// outside_value: how pixels beyond the border are treated.
inline BinaryMask erode(const BinaryMask& mask, int radius, bool outside_value) {
  const auto offs = disk_offsets(radius);
  const long rows = static_cast<long>(mask.rows()), cols = static_cast<long>(mask.cols());
  BinaryMask out(mask.rows(), mask.cols(), 0);
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) {
      if (!mask(r, c)) continue;
      bool keep = true;
      for (auto [dy, dx] : offs) {
        const long y = r + dy, x = c + dx;
        const bool v = (y < 0 || y >= rows || x < 0 || x >= cols) ? outside_value : mask(y, x) != 0;
        if (!v) {
          keep = false;
          break;
        }
      }
      out(r, c) = keep;
    }
  return out;
}

}  // namespace detail

// Border pixels are erodible: out-of-image counts as background.
inline BinaryMask morph_erode(const BinaryMask& mask, const PostprocessParams& params) {
  params.validate();
  return detail::erode(mask, params.radius, false);
}

inline BinaryMask morph_dilate(const BinaryMask& mask, const PostprocessParams& params) {
  params.validate();
  const auto offs = disk_offsets(params.radius);
  const long rows = static_cast<long>(mask.rows()), cols = static_cast<long>(mask.cols());
  BinaryMask out(mask.rows(), mask.cols(), 0);
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) {
      if (!mask(r, c)) continue;
      for (auto [dy, dx] : offs) {
        const long y = r + dy, x = c + dx;
        if (y >= 0 && y < rows && x >= 0 && x < cols) out(y, x) = 1;
      }
    }
  return out;
}

inline BinaryMask morph_open(const BinaryMask& mask, const PostprocessParams& params) {
  return morph_dilate(morph_erode(mask, params), params);
}

// The closing's erosion treats out-of-image as foreground, which makes it
// the complement-dual of morph_open: extensive and idempotent up to the border.
inline BinaryMask morph_close(const BinaryMask& mask, const PostprocessParams& params) {
  return detail::erode(morph_dilate(mask, params), params.radius, true);
}

namespace detail {

inline const std::vector<std::pair<int, int>>& neighbours(int connectivity) {
  static const std::vector<std::pair<int, int>> four{{-1, 0}, {0, -1}, {0, 1}, {1, 0}};
  static const std::vector<std::pair<int, int>> eight{{-1, -1}, {-1, 0}, {-1, 1}, {0, -1},
                                                      {0, 1},   {1, -1}, {1, 0},  {1, 1}};
  return connectivity == 4 ? four : eight;
}

class DisjointSet {
 public:
  std::uint32_t make() {
    parent_.push_back(static_cast<std::uint32_t>(parent_.size()));
    return parent_.back();
  }
  std::uint32_t find(std::uint32_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b) std::swap(a, b);
    parent_[a] = b;  // smaller provisional label wins
  }

 private:
  std::vector<std::uint32_t> parent_;
};

}  // namespace detail

// Two-pass labeling; labels are 1..K in row-major first-encounter order.
inline LabeledMask connected_components(const BinaryMask& mask, int connectivity = 8) {
  if (connectivity != 4 && connectivity != 8)
    throw std::invalid_argument("connected_components: connectivity must be 4 or 8");
  const long rows = static_cast<long>(mask.rows()), cols = static_cast<long>(mask.cols());
  std::vector<std::uint32_t> provisional(mask.size(), 0);
  detail::DisjointSet sets;
  sets.make();  // slot 0 = background
  // Already-visited neighbours in raster order.
  std::vector<std::pair<int, int>> causal{{0, -1}, {-1, 0}};
  if (connectivity == 8) causal = {{0, -1}, {-1, -1}, {-1, 0}, {-1, 1}};
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) {
      if (!mask(r, c)) continue;
      std::uint32_t label = 0;
      for (auto [dy, dx] : causal) {
        const long y = r + dy, x = c + dx;
        if (y < 0 || x < 0 || x >= cols) continue;
        const std::uint32_t n = provisional[y * cols + x];
        if (!n) continue;
        if (!label)
          label = n;
        else
          sets.unite(label, n);
      }
      provisional[r * cols + c] = label ? label : sets.make();
    }
  LabeledMask out(mask.rows(), mask.cols(), 0);
  std::vector<std::uint32_t> compact;
  std::uint32_t next = 0;
  for (std::size_t i = 0; i < provisional.size(); ++i) {
    if (!provisional[i]) continue;
    const std::uint32_t root = sets.find(provisional[i]);
    if (root >= compact.size()) compact.resize(root + 1, 0);
    if (!compact[root]) compact[root] = ++next;
    out[i] = compact[root];
  }
  return out;
}

inline std::vector<std::size_t> component_areas(const LabeledMask& labels) {
  std::vector<std::size_t> area(max_label(labels) + 1, 0);
  for (auto v : labels.values()) ++area[v];
  return area;
}

// Background components not 4-connected to the border become foreground.
inline BinaryMask fill_holes(const BinaryMask& mask) {
  const long rows = static_cast<long>(mask.rows()), cols = static_cast<long>(mask.cols());
  std::vector<std::uint8_t> outside(mask.size(), 0);
  std::vector<std::pair<long, long>> stack;
  auto seed = [&](long r, long c) {
    if (!mask(r, c) && !outside[r * cols + c]) {
      outside[r * cols + c] = 1;
      stack.emplace_back(r, c);
    }
  };
  for (long r = 0; r < rows; ++r) {
    seed(r, 0);
    seed(r, cols - 1);
  }
  for (long c = 0; c < cols; ++c) {
    seed(0, c);
    seed(rows - 1, c);
  }
  while (!stack.empty()) {
    auto [r, c] = stack.back();
    stack.pop_back();
    for (auto [dy, dx] : detail::neighbours(4)) {
      const long y = r + dy, x = c + dx;
      if (y >= 0 && y < rows && x >= 0 && x < cols) seed(y, x);
    }
  }
  BinaryMask out(mask.rows(), mask.cols());
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = mask[i] || !outside[i];
  return out;
}

inline BinaryMask remove_small(const BinaryMask& mask, std::size_t min_area, int connectivity = 8) {
  if (min_area == 0) return mask;
  const auto labels = connected_components(mask, connectivity);
  const auto area = component_areas(labels);
  BinaryMask out(mask.rows(), mask.cols(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i)
    out[i] = labels[i] != 0 && area[labels[i]] >= min_area;
  return out;
}

// resize (bilinear) → Otsu → open → fill holes → remove small → label.
inline LabeledMask postprocess_pipeline(const ProbabilityMap& map, const PostprocessParams& params,
                                        std::size_t original_w, std::size_t original_h) {
  params.validate();
  const ProbabilityMap resized = resize_bilinear(map, original_w, original_h);
  BinaryMask mask = otsu_threshold(resized).mask;
  mask = morph_open(mask, params);
  mask = fill_holes(mask);
  mask = remove_small(mask, params.min_area, params.connectivity);
  return connected_components(mask, params.connectivity);
}

}  // namespace glandseg
