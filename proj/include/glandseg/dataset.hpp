#pragma once

// Dataset discovery and per-image input preparation.
//
// Layout: <root>/<split>_<N>.{png,bmp} with label maps <split>_<N>_anno.{png,bmp},
// split ∈ {train, testA, testB}.

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <stdexcept>
#include <string>
#include <vector>

#include "glandseg/config.hpp"
#include "glandseg/io.hpp"
#include "glandseg/preprocess.hpp"

namespace glandseg {

enum class Split { train, testA, testB };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::testA: return "testA";
    case Split::testB: return "testB";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "testA") return Split::testA;
  if (s == "testB") return Split::testB;
  throw std::invalid_argument("unknown split '" + s + "' (expected train, testA or testB)");
}

struct DatasetRecord {
  std::filesystem::path image;
  std::filesystem::path annotation;
  Split split = Split::train;
  int index = 0;
  std::size_t width = 0, height = 0;

  std::string name() const { return to_string(split) + "_" + std::to_string(index); }
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetIndex {
  std::filesystem::path root;
  std::vector<DatasetRecord> records;

  std::vector<DatasetRecord> split(Split s) const {
    std::vector<DatasetRecord> out;
    for (const auto& r : records)
      if (r.split == s) out.push_back(r);
    return out;
  }
  std::size_t count(Split s) const {
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [s](const auto& r) { return r.split == s; }));
  }
};

// Reads every annotation to check it against its image's dimensions.
inline DatasetIndex load_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw DatasetError(root.string() + ": dataset directory does not exist");
  static const std::regex image_re(R"((train|testA|testB)_(\d+)\.(png|bmp|PNG|BMP))");
  static const std::regex anno_re(R"((train|testA|testB)_(\d+)_anno\.(png|bmp|PNG|BMP))");

  std::map<std::pair<int, int>, fs::path> images, annos;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    std::smatch m;
    if (std::regex_match(name, m, image_re)) {
      const auto key = std::make_pair(static_cast<int>(parse_split(m[1])), std::stoi(m[2]));
      if (images.count(key)) throw DatasetError(entry.path().string() + ": duplicate image for " + m[1].str() + "_" + m[2].str());
      images[key] = entry.path();
    } else if (std::regex_match(name, m, anno_re)) {
      annos[{static_cast<int>(parse_split(m[1])), std::stoi(m[2])}] = entry.path();
    }
  }

  DatasetIndex index;
  index.root = root;
  for (const auto& [key, image_path] : images) {
    const auto it = annos.find(key);
    if (it == annos.end()) throw DatasetError(image_path.string() + ": missing annotation (_anno file)");
    DatasetRecord rec;
    rec.image = image_path;
    rec.annotation = it->second;
    rec.split = static_cast<Split>(key.first);
    rec.index = key.second;
    const auto img = io::read_rgb(image_path);
    const auto labels = io::read_labels(rec.annotation);
    if (!img.same_size(labels))
      throw DatasetError(rec.annotation.string() + ": annotation is " + std::to_string(labels.cols()) + "x" +
                         std::to_string(labels.rows()) + " but image is " + std::to_string(img.cols()) + "x" +
                         std::to_string(img.rows()));
    rec.width = img.cols();
    rec.height = img.rows();
    index.records.push_back(rec);
  }
  for (const auto& [key, anno_path] : annos)
    if (!images.count(key)) throw DatasetError(anno_path.string() + ": annotation without image");
  return index;
}

// Network input planes for one image, values in [0,1].
using Planes = std::vector<GrayImage>;

inline Planes prepare_planes(const ImageRGB& image, const ExperimentConfig& cfg) {
  ImageRGB img = image;
  if (cfg.resize_width) img = resize_bilinear(img, cfg.resize_width, cfg.resize_height);
  Planes planes;
  if (cfg.input_mode == InputMode::rgb) {
    for (int ch = 0; ch < 3; ++ch) {
      GrayImage p(img.rows(), img.cols());
      for (std::size_t i = 0; i < img.size(); ++i) {
        const auto& px = img[i];
        p[i] = (ch == 0 ? px.r : ch == 1 ? px.g : px.b) / 255.0f;
      }
      planes.push_back(std::move(p));
    }
    return planes;
  }
  GrayImage h = hematoxylin_channel(img, cfg.stain_matrix());
  if (cfg.input_mode == InputMode::hematoxylin_unsharp) h = unsharp_mask(h, cfg.unsharp_sigma, cfg.unsharp_amount);
  planes.push_back(std::move(h));
  return planes;
}

inline BinaryMask prepare_target(const LabeledMask& labels, const ExperimentConfig& cfg) {
  BinaryMask fg = foreground(labels);
  if (cfg.resize_width) fg = resize_nearest(fg, cfg.resize_width, cfg.resize_height);
  return fg;
}

inline std::size_t round_up32(std::size_t n) { return (n + 31) / 32 * 32; }

// Stacks equally-sized samples into B×C×H×W, zero-padding bottom/right to
// multiples of 32.
inline Tensor stack_planes(const std::vector<const Planes*>& batch) {
  if (batch.empty() || batch.front()->empty()) throw std::invalid_argument("stack_planes: empty batch");
  const std::size_t c = batch.front()->size(), h = batch.front()->front().rows(), w = batch.front()->front().cols();
  const std::size_t hp = round_up32(h), wp = round_up32(w);
  std::vector<float> data(batch.size() * c * hp * wp, 0.0f);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (batch[b]->size() != c) throw std::invalid_argument("stack_planes: channel count differs within batch");
    for (std::size_t ch = 0; ch < c; ++ch) {
      const auto& p = (*batch[b])[ch];
      if (p.rows() != h || p.cols() != w) throw std::invalid_argument("stack_planes: sizes differ within batch");
      float* dst = data.data() + ((b * c + ch) * hp) * wp;
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t x = 0; x < w; ++x) dst[r * wp + x] = p(r, x);
    }
  }
  return Tensor::from({batch.size(), c, hp, wp}, std::move(data));
}

inline Tensor stack_masks(const std::vector<const BinaryMask*>& batch) {
  if (batch.empty()) throw std::invalid_argument("stack_masks: empty batch");
  const std::size_t h = batch.front()->rows(), w = batch.front()->cols();
  const std::size_t hp = round_up32(h), wp = round_up32(w);
  std::vector<float> data(batch.size() * hp * wp, 0.0f);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& m = *batch[b];
    if (m.rows() != h || m.cols() != w) throw std::invalid_argument("stack_masks: sizes differ within batch");
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t x = 0; x < w; ++x) data[(b * hp + r) * wp + x] = m(r, x) ? 1.0f : 0.0f;
  }
  return Tensor::from({batch.size(), 1, hp, wp}, std::move(data));
}

}  // namespace glandseg
