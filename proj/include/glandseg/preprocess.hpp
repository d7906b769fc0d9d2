#pragma once

// Stain deconvolution, hematoxylin extraction, unsharp masking, resizing and
// dihedral augmentation with fixed crops.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "glandseg/image.hpp"

namespace glandseg {

using Vec3 = std::array<double, 3>;

inline double norm(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

inline Vec3 normalized(const Vec3& v) {
  const double n = norm(v);
  if (!(n > 0.0)) throw std::invalid_argument("stain vector has zero length");
  return {v[0] / n, v[1] / n, v[2] / n};
}

inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

// Rows are unit optical-density directions of hematoxylin, eosin and a
// residual channel. An OD vector decomposes as od = Σ c_k · row_k.
class StainMatrix {
 public:
  StainMatrix(const Vec3& hematoxylin, const Vec3& eosin)
      : StainMatrix(hematoxylin, eosin, cross(normalized(hematoxylin), normalized(eosin))) {}

  StainMatrix(const Vec3& hematoxylin, const Vec3& eosin, const Vec3& residual)
      : rows_{normalized(hematoxylin), normalized(eosin), normalized(residual)} {
    const auto& m = rows_;
    const Vec3 c0 = cross(m[1], m[2]), c1 = cross(m[2], m[0]), c2 = cross(m[0], m[1]);
    const double det = m[0][0] * c0[0] + m[0][1] * c0[1] + m[0][2] * c0[2];
    if (std::abs(det) < 1e-9) throw std::invalid_argument("StainMatrix: stain vectors are singular");
    // inverse_ = (Mᵀ)⁻¹: row k is (row_{k+1} × row_{k+2}) / det.
    for (int j = 0; j < 3; ++j) {
      inverse_[0][j] = c0[j] / det;
      inverse_[1][j] = c1[j] / det;
      inverse_[2][j] = c2[j] / det;
    }
  }

  // Standard H&E optical-density vectors (Ruifrok and Johnston).
  static StainMatrix hematoxylin_eosin() {
    return StainMatrix({0.650, 0.704, 0.286}, {0.072, 0.990, 0.105});
  }

  const Vec3& row(std::size_t i) const { return rows_.at(i); }

  Vec3 concentrations(const Vec3& od) const {
    Vec3 c{};
    for (int k = 0; k < 3; ++k)
      c[k] = inverse_[k][0] * od[0] + inverse_[k][1] * od[1] + inverse_[k][2] * od[2];
    return c;
  }

  Vec3 recompose(const Vec3& c) const {
    Vec3 od{};
    for (int ch = 0; ch < 3; ++ch) od[ch] = c[0] * rows_[0][ch] + c[1] * rows_[1][ch] + c[2] * rows_[2][ch];
    return od;
  }

 private:
  std::array<Vec3, 3> rows_;
  std::array<Vec3, 3> inverse_{};
};

struct StainMaps {
  Grid<double> hematoxylin, eosin, residual;  // clamped at 0
  Grid<Vec3> raw;                             // unclamped concentrations
};

inline constexpr double kIncidentIntensity = 255.0;

inline Vec3 pixel_to_od(const Rgb& p) {
  auto od = [](std::uint8_t v) {
    return -std::log(std::max(static_cast<double>(v), 1.0) / kIncidentIntensity);
  };
  return {od(p.r), od(p.g), od(p.b)};
}

inline Grid<Vec3> rgb_to_od(const ImageRGB& image) {
  Grid<Vec3> out(image.rows(), image.cols());
  for (std::size_t i = 0; i < image.size(); ++i) out[i] = pixel_to_od(image[i]);
  return out;
}

inline StainMaps stain_deconvolve(const Grid<Vec3>& od, const StainMatrix& matrix) {
  StainMaps maps{Grid<double>(od.rows(), od.cols()), Grid<double>(od.rows(), od.cols()),
                 Grid<double>(od.rows(), od.cols()), Grid<Vec3>(od.rows(), od.cols())};
  for (std::size_t i = 0; i < od.size(); ++i) {
    const Vec3 c = matrix.concentrations(od[i]);
    maps.raw[i] = c;
    maps.hematoxylin[i] = std::max(c[0], 0.0);
    maps.eosin[i] = std::max(c[1], 0.0);
    maps.residual[i] = std::max(c[2], 0.0);
  }
  return maps;
}

// Min-max normalized hematoxylin plane; a constant plane maps to zeros.
inline GrayImage hematoxylin_channel(const StainMaps& maps) {
  const auto& plane = maps.hematoxylin;
  GrayImage out(plane.rows(), plane.cols(), 0.0f);
  if (plane.empty()) return out;
  const auto [lo, hi] = std::minmax_element(plane.values().begin(), plane.values().end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < plane.size(); ++i)
    out[i] = std::clamp(static_cast<float>((plane[i] - *lo) / range), 0.0f, 1.0f);
  return out;
}

inline GrayImage hematoxylin_channel(const ImageRGB& image,
                                     const StainMatrix& matrix = StainMatrix::hematoxylin_eosin()) {
  return hematoxylin_channel(stain_deconvolve(rgb_to_od(image), matrix));
}

namespace detail {

// Half-sample symmetric reflection (…cba|abc…|cba…) of an index into [0, n).
inline std::size_t reflect_index(long i, std::size_t n) {
  const long period = 2 * static_cast<long>(n);
  long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<long>(n) ? m : period - 1 - m);
}

}  // namespace detail

inline std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian kernel: sigma must be > 0");
  const auto radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (long i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (auto& v : k) v /= total;
  return k;
}

inline GrayImage gaussian_blur(const GrayImage& img, double sigma) {
  const auto kernel = gaussian_kernel(sigma);
  const long radius = static_cast<long>(kernel.size() / 2);
  const std::size_t rows = img.rows(), cols = img.cols();
  std::vector<double> tmp(rows * cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (long k = -radius; k <= radius; ++k)
        acc += kernel[static_cast<std::size_t>(k + radius)] *
               img(r, detail::reflect_index(static_cast<long>(c) + k, cols));
      tmp[r * cols + c] = acc;
    }
  GrayImage out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (long k = -radius; k <= radius; ++k)
        acc += kernel[static_cast<std::size_t>(k + radius)] *
               tmp[detail::reflect_index(static_cast<long>(r) + k, rows) * cols + c];
      out(r, c) = std::clamp(static_cast<float>(acc), 0.0f, 1.0f);
    }
  return out;
}

inline GrayImage unsharp_mask(const GrayImage& img, double sigma, double amount) {
  if (amount < 0.0) throw std::invalid_argument("unsharp_mask: amount must be >= 0");
  const GrayImage blurred = gaussian_blur(img, sigma);
  GrayImage out(img.rows(), img.cols());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double v = img[i] + amount * (static_cast<double>(img[i]) - blurred[i]);
    out[i] = std::clamp(static_cast<float>(v), 0.0f, 1.0f);
  }
  return out;
}

namespace detail {

// Corner-aligned source coordinate of destination index i.
inline double source_coord(std::size_t i, std::size_t src_n, std::size_t dst_n) {
  if (dst_n <= 1 || src_n <= 1) return 0.0;
  return static_cast<double>(i) * static_cast<double>(src_n - 1) / static_cast<double>(dst_n - 1);
}

template <typename P, typename Sample>
Grid<P> resample(const Grid<P>& src, std::size_t target_w, std::size_t target_h, Sample sample) {
  if (target_w < 1 || target_h < 1) throw std::invalid_argument("resize: target dims must be >= 1");
  if (src.empty()) throw std::invalid_argument("resize: empty source image");
  if (src.same_size(target_h, target_w)) return src;
  Grid<P> out(target_h, target_w);
  for (std::size_t r = 0; r < target_h; ++r) {
    const double sy = source_coord(r, src.rows(), target_h);
    for (std::size_t c = 0; c < target_w; ++c)
      out(r, c) = sample(sy, source_coord(c, src.cols(), target_w));
  }
  return out;
}

template <typename P, typename Channel>
double bilinear_at(const Grid<P>& src, double y, double x, Channel channel) {
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, src.rows() - 1), x1 = std::min(x0 + 1, src.cols() - 1);
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  const double top = (1 - fx) * channel(src(y0, x0)) + fx * channel(src(y0, x1));
  const double bottom = (1 - fx) * channel(src(y1, x0)) + fx * channel(src(y1, x1));
  return (1 - fy) * top + fy * bottom;
}

}  // namespace detail

inline GrayImage resize_bilinear(const GrayImage& img, std::size_t target_w, std::size_t target_h) {
  return detail::resample(img, target_w, target_h, [&](double y, double x) {
    return static_cast<float>(detail::bilinear_at(img, y, x, [](float v) { return static_cast<double>(v); }));
  });
}

inline ImageRGB resize_bilinear(const ImageRGB& img, std::size_t target_w, std::size_t target_h) {
  return detail::resample(img, target_w, target_h, [&](double y, double x) {
    auto channel = [&](auto pick) {
      const double v = detail::bilinear_at(img, y, x, pick);
      return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    };
    return Rgb{channel([](const Rgb& p) { return static_cast<double>(p.r); }),
               channel([](const Rgb& p) { return static_cast<double>(p.g); }),
               channel([](const Rgb& p) { return static_cast<double>(p.b); })};
  });
}

// Nearest-neighbour resize; labels are never blended.
template <typename P>
Grid<P> resize_nearest(const Grid<P>& img, std::size_t target_w, std::size_t target_h) {
  return detail::resample(img, target_w, target_h, [&](double y, double x) {
    return img(static_cast<std::size_t>(std::lround(y)), static_cast<std::size_t>(std::lround(x)));
  });
}

// Counter-clockwise quarter turn.
template <typename P>
Grid<P> rotate90(const Grid<P>& img) {
  Grid<P> out(img.cols(), img.rows());
  for (std::size_t r = 0; r < img.rows(); ++r)
    for (std::size_t c = 0; c < img.cols(); ++c) out(img.cols() - 1 - c, r) = img(r, c);
  return out;
}

// Mirror left-right.
template <typename P>
Grid<P> flip_horizontal(const Grid<P>& img) {
  Grid<P> out(img.rows(), img.cols());
  for (std::size_t r = 0; r < img.rows(); ++r)
    for (std::size_t c = 0; c < img.cols(); ++c) out(r, img.cols() - 1 - c) = img(r, c);
  return out;
}

// Mirror top-bottom.
template <typename P>
Grid<P> flip_vertical(const Grid<P>& img) {
  Grid<P> out(img.rows(), img.cols());
  for (std::size_t r = 0; r < img.rows(); ++r)
    for (std::size_t c = 0; c < img.cols(); ++c) out(img.rows() - 1 - r, c) = img(r, c);
  return out;
}

template <typename P>
Grid<P> crop(const Grid<P>& img, std::size_t top, std::size_t left, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0 || top + height > img.rows() || left + width > img.cols())
    throw std::invalid_argument("crop " + std::to_string(width) + "x" + std::to_string(height) +
                                " at (" + std::to_string(top) + "," + std::to_string(left) +
                                ") does not fit in " + std::to_string(img.cols()) + "x" +
                                std::to_string(img.rows()) + " image");
  Grid<P> out(height, width);
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c) out(r, c) = img(top + r, left + c);
  return out;
}

// Optional flips, then `quarter_turns` counter-clockwise rotations.
struct GeoTransform {
  int quarter_turns = 0;
  bool flip_h = false;
  bool flip_v = false;
  friend bool operator==(const GeoTransform&, const GeoTransform&) = default;
};

template <typename P>
Grid<P> apply_transform(const Grid<P>& img, const GeoTransform& t) {
  Grid<P> out = img;
  if (t.flip_h) out = flip_horizontal(out);
  if (t.flip_v) out = flip_vertical(out);
  for (int i = 0; i < ((t.quarter_turns % 4) + 4) % 4; ++i) out = rotate90(out);
  return out;
}

struct CropSpec {
  enum class Kind { full, quadrants, corners };
  Kind kind = Kind::full;
  std::size_t width = 0, height = 0;  // corners only

  std::size_t count() const { return kind == Kind::full ? 1 : 4; }
};

struct AugmentSpec {
  std::vector<GeoTransform> transforms{GeoTransform{}};
  CropSpec crops{};

  std::size_t expansion_factor() const { return transforms.size() * crops.count(); }

  static AugmentSpec identity() { return {}; }

  // Four quarter-turns × {no flip, horizontal flip, vertical flip}, four quadrant crops.
  static AugmentSpec standard() {
    AugmentSpec spec;
    spec.transforms.clear();
    for (int turns = 0; turns < 4; ++turns)
      for (int flip = 0; flip < 3; ++flip)
        spec.transforms.push_back({turns, flip == 1, flip == 2});
    spec.crops.kind = CropSpec::Kind::quadrants;
    return spec;
  }
};

struct CropRect {
  std::size_t top, left, height, width;
};

inline std::vector<CropRect> crop_rects(const CropSpec& spec, std::size_t rows, std::size_t cols) {
  switch (spec.kind) {
    case CropSpec::Kind::full:
      return {{0, 0, rows, cols}};
    case CropSpec::Kind::quadrants: {
      const std::size_t h = rows / 2, w = cols / 2;
      return {{0, 0, h, w}, {0, w, h, w}, {h, 0, h, w}, {h, w, h, w}};
    }
    case CropSpec::Kind::corners: {
      const std::size_t h = spec.height, w = spec.width;
      if (h > rows || w > cols)
        throw std::invalid_argument("augment: crop larger than image");
      return {{0, 0, h, w}, {0, cols - w, h, w}, {rows - h, 0, h, w}, {rows - h, cols - w, h, w}};
    }
  }
  return {};
}

// The index-th output of augment(): transform index * crop count + crop index.
template <typename P, typename M>
std::pair<Grid<P>, Grid<M>> augment_one(const Grid<P>& image, const Grid<M>& mask,
                                        const AugmentSpec& spec, std::size_t index) {
  if (!image.same_size(mask)) throw std::invalid_argument("augment: image and mask dimensions differ");
  if (index >= spec.expansion_factor()) throw std::out_of_range("augment: index out of range");
  const auto& t = spec.transforms[index / spec.crops.count()];
  auto img_t = apply_transform(image, t);
  auto mask_t = apply_transform(mask, t);
  const auto rect = crop_rects(spec.crops, img_t.rows(), img_t.cols())[index % spec.crops.count()];
  return {crop(img_t, rect.top, rect.left, rect.height, rect.width),
          crop(mask_t, rect.top, rect.left, rect.height, rect.width)};
}

template <typename P, typename M>
std::vector<std::pair<Grid<P>, Grid<M>>> augment(const Grid<P>& image, const Grid<M>& mask,
                                                 const AugmentSpec& spec) {
  if (!image.same_size(mask)) throw std::invalid_argument("augment: image and mask dimensions differ");
  std::vector<std::pair<Grid<P>, Grid<M>>> out;
  out.reserve(spec.expansion_factor());
  for (const auto& t : spec.transforms) {
    auto img_t = apply_transform(image, t);
    auto mask_t = apply_transform(mask, t);
    for (const auto& rect : crop_rects(spec.crops, img_t.rows(), img_t.cols()))
      out.emplace_back(crop(img_t, rect.top, rect.left, rect.height, rect.width),
                       crop(mask_t, rect.top, rect.left, rect.height, rect.width));
  }
  return out;
}

}  // namespace glandseg
