#pragma once

// Object-level evaluation: size-weighted object Dice, Hausdorff distance via
// an exact Euclidean distance transform, object Hausdorff, and object F1.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "glandseg/image.hpp"

namespace glandseg {

struct Pixel {
  std::int32_t row = 0, col = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

struct ObjectSet {
  std::size_t rows = 0, cols = 0;
  std::vector<std::uint32_t> labels;           // source label of each object
  std::vector<std::vector<Pixel>> objects;     // row-major pixel lists

  std::size_t size() const { return objects.size(); }
  bool empty() const { return objects.empty(); }
  std::size_t total_pixels() const {
    std::size_t n = 0;
    for (const auto& o : objects) n += o.size();
    return n;
  }
};

// One object per distinct nonzero label, in ascending label order.
inline ObjectSet extract_objects(const LabeledMask& mask) {
  ObjectSet set;
  set.rows = mask.rows();
  set.cols = mask.cols();
  std::map<std::uint32_t, std::vector<Pixel>> by_label;
  for (std::size_t r = 0; r < mask.rows(); ++r)
    for (std::size_t c = 0; c < mask.cols(); ++c)
      if (const auto v = mask(r, c))
        by_label[v].push_back({static_cast<std::int32_t>(r), static_cast<std::int32_t>(c)});
  for (auto& [label, pixels] : by_label) {
    set.labels.push_back(label);
    set.objects.push_back(std::move(pixels));
  }
  return set;
}

struct MatchTable {
  static constexpr int kUnmatched = -1;
  std::vector<int> match;             // per a-object: index into b, or kUnmatched
  std::vector<std::size_t> overlap;   // pixels shared with the match
  std::vector<double> weights;        // |a_i| / Σ|a_k|
};

// For each a-object, the b-object with the largest intersection (ties → lowest
// b label). Zero overlap leaves the object unmatched.
inline MatchTable match_max_overlap(const ObjectSet& a, const ObjectSet& b) {
  if (a.rows != b.rows || a.cols != b.cols)
    throw std::invalid_argument("match_max_overlap: dimension mismatch");
  std::vector<int> owner(b.rows * b.cols, MatchTable::kUnmatched);
  for (std::size_t j = 0; j < b.size(); ++j)
    for (const auto& p : b.objects[j]) owner[static_cast<std::size_t>(p.row) * b.cols + p.col] = static_cast<int>(j);

  MatchTable table;
  const double total = static_cast<double>(a.total_pixels());
  std::vector<std::size_t> counts(b.size());
  for (const auto& obj : a.objects) {
    std::fill(counts.begin(), counts.end(), 0);
    for (const auto& p : obj) {
      const int j = owner[static_cast<std::size_t>(p.row) * b.cols + p.col];
      if (j != MatchTable::kUnmatched) ++counts[static_cast<std::size_t>(j)];
    }
    int best = MatchTable::kUnmatched;
    std::size_t best_count = 0;
    for (std::size_t j = 0; j < counts.size(); ++j)
      if (counts[j] > best_count) {
        best = static_cast<int>(j);
        best_count = counts[j];
      }
    table.match.push_back(best);
    table.overlap.push_back(best_count);
    table.weights.push_back(static_cast<double>(obj.size()) / total);
  }
  return table;
}

inline double pair_dice(std::size_t overlap, std::size_t size_a, std::size_t size_b) {
  return 2.0 * static_cast<double>(overlap) / static_cast<double>(size_a + size_b);
}

inline double object_dice(const LabeledMask& gt, const LabeledMask& seg) {
  require_same_size(gt, seg, "object_dice");
  const auto g = extract_objects(gt), s = extract_objects(seg);
  if (g.empty() && s.empty()) return 1.0;
  auto directional = [](const ObjectSet& from, const ObjectSet& to) {
    // Size-weighted sum divided once, so a perfect match gives exactly 1.
    const auto table = match_max_overlap(from, to);
    double sum = 0.0;
    for (std::size_t i = 0; i < from.size(); ++i) {
      if (table.match[i] == MatchTable::kUnmatched) continue;
      const auto n = from.objects[i].size();
      sum += static_cast<double>(n) *
             pair_dice(table.overlap[i], n, to.objects[static_cast<std::size_t>(table.match[i])].size());
    }
    return from.empty() ? 0.0 : sum / static_cast<double>(from.total_pixels());
  };
  return 0.5 * (directional(s, g) + directional(g, s));
}

// Exact squared Euclidean distance transform (lower envelope of parabolas,
// separable in rows then columns). Feature pixels are nonzero; the result at a
// pixel is the squared distance to the nearest feature, or +inf if none.
inline std::vector<double> squared_distance_transform(const BinaryMask& features) {
  const std::size_t rows = features.rows(), cols = features.cols();
  static constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(rows * cols);
  for (std::size_t i = 0; i < dist.size(); ++i) dist[i] = features[i] ? 0.0 : inf;

  auto pass_1d = [](std::vector<double>& f, std::vector<double>& out, std::vector<std::size_t>& v,
                    std::vector<double>& z) {
    const std::size_t n = f.size();
    std::size_t k = 0;
    bool any = false;
    for (std::size_t q = 0; q < n; ++q) {
      if (f[q] == inf) continue;
      const double fq = f[q] + static_cast<double>(q * q);
      if (!any) {
        v[0] = q;
        z[0] = -inf;
        z[1] = inf;
        k = 0;
        any = true;
        continue;
      }
      double s = 0.0;
      while (true) {
        const std::size_t p = v[k];
        s = (fq - (f[p] + static_cast<double>(p * p))) /
            (2.0 * static_cast<double>(q) - 2.0 * static_cast<double>(p));
        if (s > z[k]) break;
        --k;  // z[0] = -inf stops this before k underflows
      }
      ++k;
      v[k] = q;
      z[k] = s;
      z[k + 1] = inf;
    }
    if (!any) {
      std::fill(out.begin(), out.end(), inf);
      return;
    }
    k = 0;
    for (std::size_t q = 0; q < n; ++q) {
      while (z[k + 1] < static_cast<double>(q)) ++k;
      const double d = static_cast<double>(q) - static_cast<double>(v[k]);
      out[q] = d * d + f[v[k]];
    }
  };

  const std::size_t longest = std::max(rows, cols);
  std::vector<double> f(longest), out(longest), z(longest + 1);
  std::vector<std::size_t> v(longest);
  f.resize(cols);
  out.resize(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) f[c] = dist[r * cols + c];
    pass_1d(f, out, v, z);
    for (std::size_t c = 0; c < cols; ++c) dist[r * cols + c] = out[c];
  }
  f.resize(rows);
  out.resize(rows);
  for (std::size_t c = 0; c < cols; ++c) {
    for (std::size_t r = 0; r < rows; ++r) f[r] = dist[r * cols + c];
    pass_1d(f, out, v, z);
    for (std::size_t r = 0; r < rows; ++r) dist[r * cols + c] = out[r];
  }
  return dist;
}

// max over `from` of squared distance to the nearest pixel of `to`.
inline double directed_max_sq(const std::vector<Pixel>& from, const std::vector<Pixel>& to) {
  std::int32_t r0 = std::numeric_limits<std::int32_t>::max(), c0 = r0, r1 = std::numeric_limits<std::int32_t>::min(), c1 = r1;
  for (const auto* set : {&from, &to})
    for (const auto& p : *set) {
      r0 = std::min(r0, p.row);
      r1 = std::max(r1, p.row);
      c0 = std::min(c0, p.col);
      c1 = std::max(c1, p.col);
    }
  BinaryMask grid(static_cast<std::size_t>(r1 - r0 + 1), static_cast<std::size_t>(c1 - c0 + 1), 0);
  for (const auto& p : to) grid(static_cast<std::size_t>(p.row - r0), static_cast<std::size_t>(p.col - c0)) = 1;
  const auto dist = squared_distance_transform(grid);
  double worst = 0.0;
  for (const auto& p : from)
    worst = std::max(worst, dist[static_cast<std::size_t>(p.row - r0) * grid.cols() + static_cast<std::size_t>(p.col - c0)]);
  return worst;
}

inline double hausdorff(const std::vector<Pixel>& a, const std::vector<Pixel>& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("hausdorff: empty point set");
  return std::sqrt(std::max(directed_max_sq(a, b), directed_max_sq(b, a)));
}

// Object pixels with a 4-neighbour outside the object (or outside the image).
inline std::vector<Pixel> boundary_pixels(const std::vector<Pixel>& object, std::size_t rows, std::size_t cols) {
  BinaryMask in(rows, cols, 0);
  for (const auto& p : object) in(static_cast<std::size_t>(p.row), static_cast<std::size_t>(p.col)) = 1;
  std::vector<Pixel> out;
  for (const auto& p : object) {
    const long r = p.row, c = p.col;
    const bool edge = r == 0 || c == 0 || r + 1 == static_cast<long>(rows) || c + 1 == static_cast<long>(cols) ||
                      !in(r - 1, c) || !in(r + 1, c) || !in(r, c - 1) || !in(r, c + 1);
    if (edge) out.push_back(p);
  }
  return out;
}

struct MetricOptions {
  double f1_overlap = 0.5;         // fraction of the ground-truth object's area
  bool hausdorff_boundary = false; // Hausdorff over object boundaries instead of all pixels
};

inline double object_hausdorff(const LabeledMask& gt, const LabeledMask& seg, const MetricOptions& opts = {}) {
  require_same_size(gt, seg, "object_hausdorff");
  auto g = extract_objects(gt), s = extract_objects(seg);
  if (g.empty() && s.empty()) return 0.0;
  const double diagonal = std::hypot(static_cast<double>(gt.rows()), static_cast<double>(gt.cols()));
  auto prepare = [&](const std::vector<Pixel>& obj) {
    return opts.hausdorff_boundary ? boundary_pixels(obj, gt.rows(), gt.cols()) : obj;
  };
  auto directional = [&](const ObjectSet& from, const ObjectSet& to) {
    const auto table = match_max_overlap(from, to);
    // Unmatched objects are measured against the whole opposite foreground.
    std::vector<Pixel> everything;
    for (const auto& o : to.objects) {
      const auto pts = prepare(o);
      everything.insert(everything.end(), pts.begin(), pts.end());
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < from.size(); ++i) {
      double h = diagonal;
      if (table.match[i] != MatchTable::kUnmatched)
        h = hausdorff(prepare(from.objects[i]), prepare(to.objects[static_cast<std::size_t>(table.match[i])]));
      else if (!everything.empty())
        h = hausdorff(prepare(from.objects[i]), everything);
      sum += table.weights[i] * h;
    }
    return sum;
  };
  return 0.5 * (directional(s, g) + directional(g, s));
}

struct F1Result {
  double f1 = 0, precision = 0, recall = 0;
  std::size_t tp = 0, fp = 0, fn = 0;
};

// A segmented object is a true positive when it covers more than
// `overlap_frac` of a still-unmatched ground-truth object; one-to-one, greedy
// by descending overlap.
inline F1Result f1_object(const LabeledMask& gt, const LabeledMask& seg, double overlap_frac = 0.5) {
  require_same_size(gt, seg, "f1_object");
  const auto g = extract_objects(gt), s = extract_objects(seg);
  F1Result res;
  if (g.empty() && s.empty()) {
    res.f1 = res.precision = res.recall = 1.0;
    return res;
  }
  std::vector<int> owner(gt.size(), -1);
  for (std::size_t j = 0; j < g.size(); ++j)
    for (const auto& p : g.objects[j]) owner[static_cast<std::size_t>(p.row) * gt.cols() + p.col] = static_cast<int>(j);

  struct Candidate {
    std::size_t overlap, seg, gt;
  };
  std::vector<Candidate> candidates;
  std::vector<std::size_t> counts(g.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    std::fill(counts.begin(), counts.end(), 0);
    for (const auto& p : s.objects[i]) {
      const int j = owner[static_cast<std::size_t>(p.row) * gt.cols() + p.col];
      if (j >= 0) ++counts[static_cast<std::size_t>(j)];
    }
    for (std::size_t j = 0; j < g.size(); ++j)
      if (counts[j] > 0 && static_cast<double>(counts[j]) > overlap_frac * static_cast<double>(g.objects[j].size()))
        candidates.push_back({counts[j], i, j});
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    return std::tie(b.overlap, a.seg, a.gt) < std::tie(a.overlap, b.seg, b.gt);
  });
  std::vector<bool> seg_used(s.size(), false), gt_used(g.size(), false);
  for (const auto& c : candidates) {
    if (seg_used[c.seg] || gt_used[c.gt]) continue;
    seg_used[c.seg] = gt_used[c.gt] = true;
    ++res.tp;
  }
  res.fp = s.size() - res.tp;
  res.fn = g.size() - res.tp;
  if (res.tp + res.fp > 0) res.precision = static_cast<double>(res.tp) / static_cast<double>(res.tp + res.fp);
  if (res.tp + res.fn > 0) res.recall = static_cast<double>(res.tp) / static_cast<double>(res.tp + res.fn);
  if (res.precision + res.recall > 0)
    res.f1 = 2.0 * res.precision * res.recall / (res.precision + res.recall);
  return res;
}

struct ImageMetrics {
  std::string name;
  double object_dice = 0, f1 = 0, object_hausdorff = 0;
  double precision = 0, recall = 0;
  std::size_t tp = 0, fp = 0, fn = 0;
};

inline ImageMetrics evaluate_masks(std::string name, const LabeledMask& gt, const LabeledMask& seg,
                                   const MetricOptions& opts = {}) {
  ImageMetrics m;
  m.name = std::move(name);
  m.object_dice = object_dice(gt, seg);
  m.object_hausdorff = object_hausdorff(gt, seg, opts);
  const auto f1 = f1_object(gt, seg, opts.f1_overlap);
  m.f1 = f1.f1;
  m.precision = f1.precision;
  m.recall = f1.recall;
  m.tp = f1.tp;
  m.fp = f1.fp;
  m.fn = f1.fn;
  return m;
}

struct MetricsReport {
  std::vector<ImageMetrics> images;
  ImageMetrics mean;  // unweighted mean of the per-image rows; counts are summed
};

inline MetricsReport aggregate_report(std::vector<ImageMetrics> images) {
  if (images.empty()) throw std::invalid_argument("aggregate_report: no image results");
  MetricsReport report;
  report.mean.name = "mean";
  const double n = static_cast<double>(images.size());
  for (const auto& m : images) {
    report.mean.object_dice += m.object_dice / n;
    report.mean.f1 += m.f1 / n;
    report.mean.object_hausdorff += m.object_hausdorff / n;
    report.mean.precision += m.precision / n;
    report.mean.recall += m.recall / n;
    report.mean.tp += m.tp;
    report.mean.fp += m.fp;
    report.mean.fn += m.fn;
  }
  if (images.size() == 1) {
    const auto name = report.mean.name;
    report.mean = images.front();
    report.mean.name = name;
  }
  report.images = std::move(images);
  return report;
}

}  // namespace glandseg
