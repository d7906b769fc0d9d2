#pragma once

// Synthetic H&E-like tiles: pink background with dark speckles, elliptical
// glands with hematoxylin-rich boundary rings, rendered through Beer-Lambert
// with the stain vectors.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>

#include "glandseg/dataset.hpp"
#include "glandseg/io.hpp"
#include "glandseg/network.hpp"
#include "glandseg/postprocess.hpp"
#include "glandseg/preprocess.hpp"

namespace glandseg {

struct SyntheticSpec {
  std::size_t width = 64, height = 64;
  std::size_t glands_min = 2, glands_max = 4;
  double axis_min = 6.0, axis_max = 11.0;  // semi-axes in pixels
  int ring_width = 2;
  double ring_hematoxylin = 1.1;  // boundary-ring darkness
  double gland_hematoxylin = 0.55, gland_eosin = 0.30;
  double background_hematoxylin = 0.12, background_eosin = 0.55;
  double noise = 0.06;             // stddev of per-pixel concentration noise
  double speckle_fraction = 0.02;  // background pixels given a dark nucleus-like dot
  double speckle_hematoxylin = 0.9;
  int gap = 4;                // minimum distance between glands
  int margin = 2;             // minimum distance from the image border
  std::size_t min_area = 60;  // smallest generated gland
  std::uint64_t seed = 7;

  void validate() const {
    if (width < 16 || height < 16) throw std::invalid_argument("SyntheticSpec: image must be at least 16x16");
    if (glands_min > glands_max) throw std::invalid_argument("SyntheticSpec: glands_min > glands_max");
    if (!(axis_min > 0 && axis_min <= axis_max)) throw std::invalid_argument("SyntheticSpec: bad axis range");
    if (noise < 0 || speckle_fraction < 0 || speckle_fraction > 1)
      throw std::invalid_argument("SyntheticSpec: noise and speckle must be non-negative");
    if (gap < 3 || margin < 0 || ring_width < 0) throw std::invalid_argument("SyntheticSpec: gap must be >= 3");
  }
};

struct SyntheticSample {
  ImageRGB image;
  LabeledMask labels;
};

namespace detail {

// Gland interiors are opened with this radius, so the default postprocess
// opening leaves the annotation unchanged.
inline constexpr int kSyntheticOpenRadius = 2;

inline BinaryMask ellipse_mask(std::size_t rows, std::size_t cols, double cy, double cx, double a, double b,
                               double theta) {
  BinaryMask m(rows, cols, 0);
  const double ct = std::cos(theta), st = std::sin(theta);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const double dy = static_cast<double>(r) - cy, dx = static_cast<double>(c) - cx;
      const double u = (dx * ct + dy * st) / a, v = (-dx * st + dy * ct) / b;
      m(r, c) = u * u + v * v <= 1.0;
    }
  return m;
}

inline bool try_place_glands(const SyntheticSpec& spec, std::size_t count, std::mt19937_64& rng, LabeledMask& labels) {
  std::uniform_real_distribution<double> axis(spec.axis_min, spec.axis_max);
  std::uniform_real_distribution<double> angle(0.0, 3.14159265358979323846);
  std::uniform_real_distribution<double> cy(0.0, static_cast<double>(spec.height - 1));
  std::uniform_real_distribution<double> cx(0.0, static_cast<double>(spec.width - 1));
  labels = LabeledMask(spec.height, spec.width, 0);
  BinaryMask blocked(spec.height, spec.width, 0);
  const long rows = static_cast<long>(spec.height), cols = static_cast<long>(spec.width);
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c)
      blocked(r, c) = r < spec.margin || c < spec.margin || r >= rows - spec.margin || c >= cols - spec.margin;

  std::size_t placed = 0;
  for (int attempt = 0; attempt < 400 && placed < count; ++attempt) {
    const double a = axis(rng), b = axis(rng), th = angle(rng), y = cy(rng), x = cx(rng);
    BinaryMask gland = morph_open(ellipse_mask(spec.height, spec.width, y, x, a, b, th),
                                  PostprocessParams{kSyntheticOpenRadius, 0, 8});
    std::size_t area = 0;
    bool clash = false;
    for (std::size_t i = 0; i < gland.size(); ++i) {
      if (!gland[i]) continue;
      ++area;
      if (blocked[i]) clash = true;
    }
    if (clash || area < spec.min_area) continue;
    ++placed;
    for (std::size_t i = 0; i < gland.size(); ++i)
      if (gland[i]) labels[i] = static_cast<std::uint32_t>(placed);
    const BinaryMask halo = morph_dilate(gland, PostprocessParams{spec.gap, 0, 8});
    for (std::size_t i = 0; i < halo.size(); ++i) blocked[i] |= halo[i];
  }
  return placed == count;
}

}  // namespace detail

// Image `index` of the stream identified by (spec.seed, stream).
inline SyntheticSample generate_synthetic_image(const SyntheticSpec& spec, std::uint64_t stream, std::size_t index) {
  spec.validate();
  std::mt19937_64 rng(detail::splitmix64(spec.seed ^ detail::splitmix64(stream * 0x10001ULL + index)));
  std::uniform_int_distribution<std::size_t> count_dist(spec.glands_min, spec.glands_max);
  const std::size_t count = count_dist(rng);

  SyntheticSample s;
  int tries = 0;
  while (!detail::try_place_glands(spec, count, rng, s.labels))
    if (++tries > 200)
      throw std::runtime_error("synthetic: cannot fit " + std::to_string(count) + " glands into " +
                               std::to_string(spec.width) + "x" + std::to_string(spec.height));

  // Pixels within ring_width of a gland's outline form its ring.
  const BinaryMask fg = foreground(s.labels);
  const BinaryMask core = detail::erode(fg, spec.ring_width, false);

  const StainMatrix stains = StainMatrix::hematoxylin_eosin();
  const Vec3 vh = stains.row(0), ve = stains.row(1);
  std::normal_distribution<double> noise(0.0, spec.noise);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  s.image = ImageRGB(spec.height, spec.width);
  for (std::size_t i = 0; i < fg.size(); ++i) {
    double h = spec.background_hematoxylin, e = spec.background_eosin;
    if (fg[i]) {
      h = core[i] ? spec.gland_hematoxylin : spec.ring_hematoxylin;
      e = spec.gland_eosin;
    }
    const double speckle = unit(rng);
    if (!fg[i] && speckle < spec.speckle_fraction) h += spec.speckle_hematoxylin;
    h = std::max(0.0, h + noise(rng));
    e = std::max(0.0, e + noise(rng));
    std::uint8_t ch[3];
    for (int k = 0; k < 3; ++k) {
      const double v = kIncidentIntensity * std::exp(-(h * vh[k] + e * ve[k]));
      ch[k] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
    s.image[i] = Rgb{ch[0], ch[1], ch[2]};
  }
  return s;
}

// Writes <split>_<first_index + i>.png and matching _anno.png label maps.
inline void generate_synthetic(const std::filesystem::path& dir, const SyntheticSpec& spec, std::size_t n_images,
                               Split split, std::size_t first_index = 1) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir))
    throw io::IoError(dir, "cannot create output directory");
  for (std::size_t i = 0; i < n_images; ++i) {
    const std::size_t idx = first_index + i;
    const auto sample = generate_synthetic_image(spec, static_cast<std::uint64_t>(split), idx);
    const std::string stem = to_string(split) + "_" + std::to_string(idx);
    io::write_rgb(dir / (stem + ".png"), sample.image);
    io::write_labels(dir / (stem + "_anno.png"), sample.labels);
  }
}

}  // namespace glandseg
