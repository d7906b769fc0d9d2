#pragma once

// Image and map file I/O. PNG/BMP decoding and encoding go through OpenCV's
// imgcodecs; link the glandseg_io target when including this header.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "glandseg/image.hpp"

namespace glandseg::io {

class IoError : public std::runtime_error {
 public:
  IoError(const std::filesystem::path& path, const std::string& what)
      : std::runtime_error(path.string() + ": " + what), path_(path) {}
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline cv::Mat read_raw(const std::filesystem::path& path, int flags) {
  if (!std::filesystem::exists(path)) throw IoError(path, "file does not exist");
  cv::Mat m;
  try {
    m = cv::imread(path.string(), flags);
  } catch (const cv::Exception& e) {
    throw IoError(path, std::string("unreadable image: ") + e.what());
  }
  if (m.empty()) throw IoError(path, "unreadable image");
  return m;
}

inline void write_raw(const std::filesystem::path& path, const cv::Mat& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), m);
  } catch (const cv::Exception& e) {
    throw IoError(path, std::string("cannot write image: ") + e.what());
  }
  if (!ok) throw IoError(path, "cannot write image");
}

// 8-bit RGB from PNG or BMP (grayscale files are expanded).
inline ImageRGB read_rgb(const std::filesystem::path& path) {
  cv::Mat m = read_raw(path, cv::IMREAD_COLOR);
  if (m.depth() != CV_8U) throw IoError(path, "expected an 8-bit image");
  ImageRGB img(static_cast<std::size_t>(m.rows), static_cast<std::size_t>(m.cols));
  for (int r = 0; r < m.rows; ++r) {
    const auto* row = m.ptr<cv::Vec3b>(r);
    for (int c = 0; c < m.cols; ++c) img(r, c) = Rgb{row[c][2], row[c][1], row[c][0]};
  }
  return img;
}

inline void write_rgb(const std::filesystem::path& path, const ImageRGB& img) {
  cv::Mat m(static_cast<int>(img.rows()), static_cast<int>(img.cols()), CV_8UC3);
  for (int r = 0; r < m.rows; ++r) {
    auto* row = m.ptr<cv::Vec3b>(r);
    for (int c = 0; c < m.cols; ++c) {
      const auto& p = img(r, c);
      row[c] = cv::Vec3b(p.b, p.g, p.r);
    }
  }
  write_raw(path, m);
}

// Integer label map; 8- or 16-bit single channel. Multi-channel files use the
// first channel.
inline LabeledMask read_labels(const std::filesystem::path& path) {
  cv::Mat m = read_raw(path, cv::IMREAD_UNCHANGED);
  if (m.channels() > 1) {
    std::vector<cv::Mat> planes;
    cv::split(m, planes);
    m = planes.front();
  }
  LabeledMask out(static_cast<std::size_t>(m.rows), static_cast<std::size_t>(m.cols));
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) {
      switch (m.depth()) {
        case CV_8U: out(r, c) = m.at<std::uint8_t>(r, c); break;
        case CV_16U: out(r, c) = m.at<std::uint16_t>(r, c); break;
        default: throw IoError(path, "label map must be 8- or 16-bit");
      }
    }
  return out;
}

// 16-bit single-channel PNG, pixel value = label.
inline void write_labels(const std::filesystem::path& path, const LabeledMask& labels) {
  cv::Mat m(static_cast<int>(labels.rows()), static_cast<int>(labels.cols()), CV_16UC1);
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) {
      const auto v = labels(r, c);
      if (v > 0xFFFF) throw IoError(path, "label exceeds 16-bit range");
      m.at<std::uint16_t>(r, c) = static_cast<std::uint16_t>(v);
    }
  write_raw(path, m);
}

// 8-bit grayscale, value = round(255·v).
inline void write_gray(const std::filesystem::path& path, const GrayImage& img) {
  cv::Mat m(static_cast<int>(img.rows()), static_cast<int>(img.cols()), CV_8UC1);
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c)
      m.at<std::uint8_t>(r, c) = cv::saturate_cast<std::uint8_t>(img(r, c) * 255.0f);
  write_raw(path, m);
}

// Probability map binary: "GSPM", u32 version (1), u32 rows, u32 cols, then
// rows·cols little-endian float32 values, row-major.
inline constexpr char kProbMapMagic[4] = {'G', 'S', 'P', 'M'};

namespace detail {
inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4] = {};
  is.read(reinterpret_cast<char*>(b), 4);
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
inline void put_f32(std::ostream& os, float f) {
  std::uint32_t bits = 0;
  std::memcpy(&bits, &f, 4);
  put_u32(os, bits);
}
inline float get_f32(std::istream& is) {
  const std::uint32_t bits = get_u32(is);
  float f = 0;
  std::memcpy(&f, &bits, 4);
  return f;
}
}  // namespace detail

inline void write_probability_map(const std::filesystem::path& path, const ProbabilityMap& map) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(path, "cannot open for writing");
  os.write(kProbMapMagic, 4);
  detail::put_u32(os, 1);
  detail::put_u32(os, static_cast<std::uint32_t>(map.rows()));
  detail::put_u32(os, static_cast<std::uint32_t>(map.cols()));
  for (float v : map.values()) detail::put_f32(os, v);
  if (!os) throw IoError(path, "write failed");
}

inline ProbabilityMap read_probability_map(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(path, "cannot open for reading");
  char magic[4] = {};
  is.read(magic, 4);
  if (std::memcmp(magic, kProbMapMagic, 4) != 0) throw IoError(path, "not a probability map file");
  if (detail::get_u32(is) != 1) throw IoError(path, "unsupported probability map version");
  const std::size_t rows = detail::get_u32(is), cols = detail::get_u32(is);
  ProbabilityMap map(rows, cols);
  for (auto& v : map.values()) v = detail::get_f32(is);
  if (!is) throw IoError(path, "truncated probability map");
  return map;
}

}  // namespace glandseg::io
