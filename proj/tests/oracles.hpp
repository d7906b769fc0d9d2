#pragma once

// Slow, direct reference implementations used only by the tests. None of them
// shares code with the library beyond the plain Grid container.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "glandseg/image.hpp"

namespace oracle {

using glandseg::BinaryMask;
using glandseg::LabeledMask;

// Plain 4-D array, NCHW.
struct Array4 {
  std::size_t n = 0, c = 0, h = 0, w = 0;
  std::vector<double> v;
  Array4(std::size_t n_, std::size_t c_, std::size_t h_, std::size_t w_)
      : n(n_), c(c_), h(h_), w(w_), v(n_ * c_ * h_ * w_, 0.0) {}
  double& at(std::size_t a, std::size_t b, std::size_t y, std::size_t x) { return v[((a * c + b) * h + y) * w + x]; }
  double at(std::size_t a, std::size_t b, std::size_t y, std::size_t x) const {
    return v[((a * c + b) * h + y) * w + x];
  }
};

// out[n,o,y,x] = b[o] + Σ_{i,ky,kx} in[n,i,y·s−p+ky, x·s−p+kx] · w[o,i,ky,kx]
inline Array4 conv2d(const Array4& in, const Array4& wt, const std::vector<double>& bias, std::size_t s,
                     std::size_t p) {
  const std::size_t oh = (in.h + 2 * p - wt.h) / s + 1, ow = (in.w + 2 * p - wt.w) / s + 1;
  Array4 out(in.n, wt.n, oh, ow);
  for (std::size_t n = 0; n < in.n; ++n)
    for (std::size_t o = 0; o < wt.n; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (std::size_t i = 0; i < in.c; ++i)
            for (std::size_t ky = 0; ky < wt.h; ++ky)
              for (std::size_t kx = 0; kx < wt.w; ++kx) {
                const long iy = static_cast<long>(y * s + ky) - static_cast<long>(p);
                const long ix = static_cast<long>(x * s + kx) - static_cast<long>(p);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(in.h) || ix >= static_cast<long>(in.w)) continue;
                acc += in.at(n, i, iy, ix) * wt.at(o, i, ky, kx);
              }
          out.at(n, o, y, x) = acc;
        }
  return out;
}

// Scatter form: every input pixel spreads its kernel-weighted value into the
// output window it came from. Weight layout Cin×Cout×k×k.
inline Array4 conv_transpose2d(const Array4& in, const Array4& wt, const std::vector<double>& bias, std::size_t s,
                               std::size_t p, std::size_t op) {
  const std::size_t oh = (in.h - 1) * s + wt.h + op - 2 * p, ow = (in.w - 1) * s + wt.w + op - 2 * p;
  Array4 out(in.n, wt.c, oh, ow);
  for (std::size_t n = 0; n < in.n; ++n)
    for (std::size_t o = 0; o < wt.c; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) out.at(n, o, y, x) = bias.empty() ? 0.0 : bias[o];
  for (std::size_t n = 0; n < in.n; ++n)
    for (std::size_t i = 0; i < in.c; ++i)
      for (std::size_t y = 0; y < in.h; ++y)
        for (std::size_t x = 0; x < in.w; ++x)
          for (std::size_t o = 0; o < wt.c; ++o)
            for (std::size_t ky = 0; ky < wt.h; ++ky)
              for (std::size_t kx = 0; kx < wt.w; ++kx) {
                const long oy = static_cast<long>(y * s + ky) - static_cast<long>(p);
                const long ox = static_cast<long>(x * s + kx) - static_cast<long>(p);
                if (oy < 0 || ox < 0 || oy >= static_cast<long>(oh) || ox >= static_cast<long>(ow)) continue;
                out.at(n, o, oy, ox) += in.at(n, i, y, x) * wt.at(i, o, ky, kx);
              }
  return out;
}

// Breadth-first flood fill; labels in row-major order of each component's first pixel.
inline LabeledMask flood_fill_components(const BinaryMask& m, int connectivity) {
  const long rows = static_cast<long>(m.rows()), cols = static_cast<long>(m.cols());
  LabeledMask out(m.rows(), m.cols(), 0);
  std::uint32_t next = 0;
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) {
      if (!m(r, c) || out(r, c)) continue;
      ++next;
      std::deque<std::pair<long, long>> q{{r, c}};
      out(r, c) = next;
      while (!q.empty()) {
        auto [y, x] = q.front();
        q.pop_front();
        for (long dy = -1; dy <= 1; ++dy)
          for (long dx = -1; dx <= 1; ++dx) {
            if (!dy && !dx) continue;
            if (connectivity == 4 && dy && dx) continue;
            const long ny = y + dy, nx = x + dx;
            if (ny < 0 || nx < 0 || ny >= rows || nx >= cols) continue;
            if (m(ny, nx) && !out(ny, nx)) {
              out(ny, nx) = next;
              q.emplace_back(ny, nx);
            }
          }
      }
    }
  return out;
}

// Otsu by exhaustive search with exact rational between-class variance
// σ² = w0·w1·(μ0 − μ1)²; smallest maximizing t; −1 if < 2 occupied bins.
inline int otsu_bin(const std::array<std::uint64_t, 256>& hist) {
  using boost::multiprecision::cpp_rational;
  int occupied = 0;
  std::uint64_t total = 0;
  for (auto h : hist) {
    occupied += h > 0;
    total += h;
  }
  if (occupied < 2) return -1;
  int best = -1;
  cpp_rational best_var = -1;
  for (int t = 0; t < 255; ++t) {
    std::uint64_t n0 = 0, n1 = 0, s0 = 0, s1 = 0;
    for (int b = 0; b < 256; ++b) {
      if (b <= t) {
        n0 += hist[b];
        s0 += hist[b] * static_cast<std::uint64_t>(b);
      } else {
        n1 += hist[b];
        s1 += hist[b] * static_cast<std::uint64_t>(b);
      }
    }
    cpp_rational var = 0;
    if (n0 > 0 && n1 > 0) {
      const cpp_rational w0(n0, total), w1(n1, total);
      const cpp_rational d = cpp_rational(s0, n0) - cpp_rational(s1, n1);
      var = w0 * w1 * d * d;
    }
    if (var > best_var) {
      best_var = var;
      best = t;
    }
  }
  return best;
}

using Points = std::vector<std::pair<long, long>>;

inline std::map<std::uint32_t, Points> objects(const LabeledMask& m) {
  std::map<std::uint32_t, Points> out;
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c)
      if (m(r, c)) out[m(r, c)].emplace_back(static_cast<long>(r), static_cast<long>(c));
  return out;
}

inline Points all_foreground(const LabeledMask& m) {
  Points p;
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c)
      if (m(r, c)) p.emplace_back(static_cast<long>(r), static_cast<long>(c));
  return p;
}

inline double pairwise_hausdorff(const Points& a, const Points& b) {
  auto directed = [](const Points& from, const Points& to) {
    double worst = 0;
    for (auto [y, x] : from) {
      double best = std::numeric_limits<double>::infinity();
      for (auto [v, u] : to) best = std::min(best, std::hypot(static_cast<double>(y - v), static_cast<double>(x - u)));
      worst = std::max(worst, best);
    }
    return worst;
  };
  return std::max(directed(a, b), directed(b, a));
}

inline std::size_t overlap(const Points& a, const Points& b) {
  const std::set<std::pair<long, long>> sb(b.begin(), b.end());
  std::size_t n = 0;
  for (const auto& p : a) n += sb.count(p);
  return n;
}

// For each object of `from`, the label in `to` with maximal overlap (lowest
// label on ties), or 0 when nothing overlaps.
inline std::map<std::uint32_t, std::uint32_t> best_match(const std::map<std::uint32_t, Points>& from,
                                                         const std::map<std::uint32_t, Points>& to) {
  std::map<std::uint32_t, std::uint32_t> m;
  for (const auto& [la, pa] : from) {
    std::size_t best = 0;
    std::uint32_t arg = 0;
    for (const auto& [lb, pb] : to) {
      const std::size_t o = overlap(pa, pb);
      if (o > best) {
        best = o;
        arg = lb;
      }
    }
    m[la] = arg;
  }
  return m;
}

inline double object_dice(const LabeledMask& gt, const LabeledMask& seg) {
  const auto g = objects(gt), s = objects(seg);
  if (g.empty() && s.empty()) return 1.0;
  auto direction = [](const std::map<std::uint32_t, Points>& a, const std::map<std::uint32_t, Points>& b) {
    if (a.empty()) return 0.0;
    double total = 0;
    for (const auto& [l, p] : a) total += static_cast<double>(p.size());
    const auto match = best_match(a, b);
    double sum = 0;
    for (const auto& [l, p] : a) {
      const auto m = match.at(l);
      if (!m) continue;
      const auto& q = b.at(m);
      const double dice = 2.0 * static_cast<double>(overlap(p, q)) / static_cast<double>(p.size() + q.size());
      sum += static_cast<double>(p.size()) / total * dice;
    }
    return sum;
  };
  return 0.5 * (direction(s, g) + direction(g, s));
}

inline double object_hausdorff(const LabeledMask& gt, const LabeledMask& seg) {
  const auto g = objects(gt), s = objects(seg);
  if (g.empty() && s.empty()) return 0.0;
  const double diagonal = std::hypot(static_cast<double>(gt.rows()), static_cast<double>(gt.cols()));
  const Points g_all = all_foreground(gt), s_all = all_foreground(seg);
  auto direction = [&](const std::map<std::uint32_t, Points>& a, const std::map<std::uint32_t, Points>& b,
                       const Points& b_all) {
    if (a.empty()) return 0.0;
    double total = 0;
    for (const auto& [l, p] : a) total += static_cast<double>(p.size());
    const auto match = best_match(a, b);
    double sum = 0;
    for (const auto& [l, p] : a) {
      double h;
      if (b_all.empty())
        h = diagonal;
      else if (const auto m = match.at(l))
        h = pairwise_hausdorff(p, b.at(m));
      else
        h = pairwise_hausdorff(p, b_all);
      sum += static_cast<double>(p.size()) / total * h;
    }
    return sum;
  };
  return 0.5 * (direction(s, g, g_all) + direction(g, s, s_all));
}

struct F1 {
  double f1;
  std::size_t tp, fp, fn;
};

// A ground-truth object can be covered beyond half its area by at most one
// segmented object, so the maximum one-to-one matching size is the number of
// segmented objects that qualify for at least one ground-truth object.
inline F1 f1(const LabeledMask& gt, const LabeledMask& seg, double frac) {
  const auto g = objects(gt), s = objects(seg);
  if (g.empty() && s.empty()) return {1.0, 0, 0, 0};
  std::size_t tp = 0;
  for (const auto& [ls, ps] : s) {
    bool hit = false;
    for (const auto& [lg, pg] : g)
      if (static_cast<double>(overlap(ps, pg)) > frac * static_cast<double>(pg.size())) hit = true;
    tp += hit;
  }
  const std::size_t fp = s.size() - tp, fn = g.size() - tp;
  const double p = s.empty() ? 0.0 : static_cast<double>(tp) / static_cast<double>(s.size());
  const double r = g.empty() ? 0.0 : static_cast<double>(tp) / static_cast<double>(g.size());
  return {p + r > 0 ? 2 * p * r / (p + r) : 0.0, tp, fp, fn};
}

// Random labeled mask: a few overlapping ellipses and rectangles with
// distinct labels (later shapes overwrite earlier ones).
inline LabeledMask random_labels(std::mt19937_64& rng, std::size_t rows, std::size_t cols, int max_objects = 5) {
  LabeledMask m(rows, cols, 0);
  std::uniform_int_distribution<int> count(0, max_objects);
  std::uniform_real_distribution<double> cy(0, static_cast<double>(rows)), cx(0, static_cast<double>(cols));
  std::uniform_real_distribution<double> axis(1.0, static_cast<double>(std::min(rows, cols)) / 4);
  std::bernoulli_distribution rect(0.3);
  const int k = count(rng);
  for (int i = 1; i <= k; ++i) {
    const double y0 = cy(rng), x0 = cx(rng), a = axis(rng), b = axis(rng);
    const bool is_rect = rect(rng);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        const double dy = (static_cast<double>(r) - y0) / a, dx = (static_cast<double>(c) - x0) / b;
        const bool inside = is_rect ? (std::abs(dy) <= 1 && std::abs(dx) <= 1) : dy * dy + dx * dx <= 1;
        if (inside) m(r, c) = static_cast<std::uint32_t>(i);
      }
  }
  return m;
}

inline BinaryMask random_mask(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double density) {
  BinaryMask m(rows, cols, 0);
  std::bernoulli_distribution on(density);
  for (auto& v : m.values()) v = on(rng);
  return m;
}

// Blobby random mask: noise plus a few filled shapes, so morphology has
// structure to work on.
inline BinaryMask random_blobby_mask(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  std::uniform_real_distribution<double> d(0.0, 0.15);
  BinaryMask m = random_mask(rng, rows, cols, d(rng));
  const LabeledMask shapes = random_labels(rng, rows, cols, 6);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = m[i] || shapes[i] != 0;
  return m;
}

}  // namespace oracle
