#include <gtest/gtest.h>

#include <random>

#include "glandseg/metrics.hpp"
#include "oracles.hpp"

using namespace glandseg;

namespace {

LabeledMask rect_labels(std::size_t rows, std::size_t cols,
                        std::vector<std::tuple<std::uint32_t, std::size_t, std::size_t, std::size_t, std::size_t>> boxes) {
  LabeledMask m(rows, cols, 0);
  for (auto [label, r0, c0, h, w] : boxes)
    for (std::size_t r = r0; r < r0 + h; ++r)
      for (std::size_t c = c0; c < c0 + w; ++c) m(r, c) = label;
  return m;
}

LabeledMask shifted(const LabeledMask& m, long dy, long dx, std::size_t rows, std::size_t cols) {
  LabeledMask out(rows, cols, 0);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c)
      if (m(r, c)) out(static_cast<std::size_t>(static_cast<long>(r) + dy), static_cast<std::size_t>(static_cast<long>(c) + dx)) = m(r, c);
  return out;
}

std::vector<Pixel> random_points(std::mt19937_64& rng, std::size_t n, int extent) {
  std::uniform_int_distribution<int> u(0, extent - 1);
  std::vector<Pixel> p(n);
  for (auto& q : p) q = {u(rng), u(rng)};
  return p;
}

oracle::Points as_points(const std::vector<Pixel>& p) {
  oracle::Points out;
  for (auto q : p) out.emplace_back(q.row, q.col);
  return out;
}

}  // namespace

TEST(ExtractObjects, Examples) {
  EXPECT_TRUE(extract_objects(LabeledMask(4, 4, 0)).empty());
  const auto m = rect_labels(4, 4, {{2, 0, 0, 1, 2}, {1, 3, 3, 1, 1}});
  const auto set = extract_objects(m);
  ASSERT_EQ(set.size(), 2u);
  EXPECT_EQ(set.labels, (std::vector<std::uint32_t>{1, 2}));
  EXPECT_EQ(set.objects[0], (std::vector<Pixel>{{3, 3}}));
  EXPECT_EQ(set.objects[1], (std::vector<Pixel>{{0, 0}, {0, 1}}));
}

TEST(Matching, IdentityOnSameSet) {
  const auto m = rect_labels(10, 10, {{1, 0, 0, 3, 3}, {2, 5, 5, 2, 4}, {3, 8, 0, 2, 2}});
  const auto s = extract_objects(m);
  const auto t = match_max_overlap(s, s);
  EXPECT_EQ(t.match, (std::vector<int>{0, 1, 2}));
  double total = 0;
  for (double w : t.weights) total += w;
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Matching, LargestOverlapWins) {
  const auto a = rect_labels(4, 10, {{1, 0, 0, 1, 8}});
  const auto b = rect_labels(4, 10, {{1, 0, 0, 1, 3}, {2, 0, 3, 1, 5}});
  const auto t = match_max_overlap(extract_objects(a), extract_objects(b));
  EXPECT_EQ(t.match[0], 1);
  EXPECT_EQ(t.overlap[0], 5u);
}

TEST(Matching, TieGoesToLowestLabel) {
  const auto a = rect_labels(2, 4, {{1, 0, 0, 1, 4}});
  const auto b = rect_labels(2, 4, {{7, 0, 2, 1, 2}, {3, 0, 0, 1, 2}});
  const auto t = match_max_overlap(extract_objects(a), extract_objects(b));
  EXPECT_EQ(extract_objects(b).labels[static_cast<std::size_t>(t.match[0])], 3u);
}

TEST(Matching, DisjointIsUnmatched) {
  const auto a = rect_labels(6, 6, {{1, 0, 0, 2, 2}, {2, 4, 4, 2, 2}});
  const auto b = rect_labels(6, 6, {{1, 0, 4, 2, 2}});
  const auto t = match_max_overlap(extract_objects(a), extract_objects(b));
  EXPECT_EQ(t.match, (std::vector<int>{MatchTable::kUnmatched, MatchTable::kUnmatched}));
}

TEST(ObjectDice, Examples) {
  const auto m = rect_labels(8, 8, {{1, 0, 0, 3, 3}, {2, 4, 4, 3, 3}});
  EXPECT_DOUBLE_EQ(object_dice(m, m), 1.0);
  const auto relabeled = rect_labels(8, 8, {{9, 0, 0, 3, 3}, {4, 4, 4, 3, 3}});
  EXPECT_DOUBLE_EQ(object_dice(m, relabeled), 1.0);
  const auto g = rect_labels(4, 4, {{1, 0, 0, 2, 2}}), s = rect_labels(4, 4, {{1, 0, 1, 2, 2}});
  EXPECT_DOUBLE_EQ(object_dice(g, s), 0.5);
}

TEST(ObjectDice, EmptyCases) {
  const LabeledMask empty(5, 5, 0);
  const auto one = rect_labels(5, 5, {{1, 1, 1, 2, 2}});
  EXPECT_EQ(object_dice(empty, empty), 1.0);
  EXPECT_EQ(object_dice(empty, one), 0.0);
  EXPECT_EQ(object_dice(one, empty), 0.0);
}

TEST(Hausdorff, Examples) {
  const std::vector<Pixel> a{{0, 0}, {2, 5}}, b{{3, 4}};
  EXPECT_EQ(hausdorff(a, a), 0.0);
  EXPECT_DOUBLE_EQ(hausdorff({{0, 0}}, b), 5.0);
  EXPECT_THROW(hausdorff({}, b), std::invalid_argument);
}

TEST(Hausdorff, DistanceTransformEqualsPairwiseExactly) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<std::size_t> n(1, 200);
  for (int i = 0; i < 300; ++i) {
    const auto a = random_points(rng, n(rng), 40), b = random_points(rng, n(rng), 40);
    const double h = hausdorff(a, b);
    EXPECT_EQ(h, oracle::pairwise_hausdorff(as_points(a), as_points(b)));
    EXPECT_EQ(h, hausdorff(b, a));
  }
}

TEST(DistanceTransform, MatchesBruteForce) {
  std::mt19937_64 rng(10);
  for (int i = 0; i < 30; ++i) {
    const auto f = oracle::random_mask(rng, 13, 17, 0.05);
    const auto d = squared_distance_transform(f);
    for (std::size_t r = 0; r < 13; ++r)
      for (std::size_t c = 0; c < 17; ++c) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t y = 0; y < 13; ++y)
          for (std::size_t x = 0; x < 17; ++x)
            if (f(y, x)) {
              const double dy = double(y) - double(r), dx = double(x) - double(c);
              best = std::min(best, dy * dy + dx * dx);
            }
        EXPECT_EQ(d[r * 17 + c], best);
      }
  }
}

TEST(ObjectHausdorff, Examples) {
  const auto m = rect_labels(10, 10, {{1, 1, 1, 3, 3}, {2, 6, 5, 3, 4}});
  EXPECT_EQ(object_hausdorff(m, m), 0.0);
  const auto g = rect_labels(10, 12, {{1, 2, 1, 4, 5}});
  EXPECT_DOUBLE_EQ(object_hausdorff(g, shifted(g, 0, 3, 10, 12)), 3.0);
}

TEST(ObjectHausdorff, UnmatchedPenalties) {
  const LabeledMask empty(6, 8, 0);
  const auto one = rect_labels(6, 8, {{1, 0, 0, 2, 2}});
  EXPECT_DOUBLE_EQ(object_hausdorff(empty, one), 0.5 * std::hypot(6.0, 8.0));
  EXPECT_EQ(object_hausdorff(empty, empty), 0.0);
  // A missed object is measured against the whole other foreground.
  const auto gt = rect_labels(6, 8, {{1, 0, 0, 1, 1}, {2, 0, 7, 1, 1}});
  const auto seg = rect_labels(6, 8, {{1, 0, 0, 1, 1}});
  EXPECT_DOUBLE_EQ(object_hausdorff(gt, seg), 0.5 * (0.0 + 0.5 * 0.0 + 0.5 * 7.0));
}

TEST(ObjectHausdorff, BoundaryModeUsesOutlines) {
  const auto g = rect_labels(12, 12, {{1, 1, 1, 9, 9}});
  const auto s = rect_labels(12, 12, {{1, 3, 3, 5, 5}});
  MetricOptions boundary;
  boundary.hausdorff_boundary = true;
  EXPECT_DOUBLE_EQ(object_hausdorff(g, s), std::hypot(2.0, 2.0));
  EXPECT_DOUBLE_EQ(object_hausdorff(g, s, boundary), std::hypot(2.0, 2.0));
  const auto inner = boundary_pixels(extract_objects(g).objects[0], 12, 12);
  EXPECT_EQ(inner.size(), 32u);
}

TEST(F1, Examples) {
  const auto gt = rect_labels(10, 10, {{1, 0, 0, 3, 3}, {2, 5, 5, 3, 3}});
  EXPECT_EQ(f1_object(gt, gt).f1, 1.0);
  const auto half = rect_labels(10, 10, {{1, 0, 0, 3, 3}});
  const auto r = f1_object(gt, half);
  EXPECT_EQ(r.precision, 1.0);
  EXPECT_EQ(r.recall, 0.5);
  EXPECT_DOUBLE_EQ(r.f1, 2.0 / 3.0);
  EXPECT_EQ(r.tp, 1u);
  EXPECT_EQ(r.fn, 1u);
  const auto g10 = rect_labels(10, 10, {{1, 0, 0, 2, 5}});
  const auto forty = rect_labels(10, 10, {{1, 0, 0, 2, 2}});
  EXPECT_EQ(f1_object(g10, forty).tp, 0u);
  EXPECT_EQ(f1_object(g10, forty).f1, 0.0);
  EXPECT_EQ(f1_object(LabeledMask(3, 3, 0), LabeledMask(3, 3, 0)).f1, 1.0);
}

TEST(F1, OneToOne) {
  // Two segmented halves of one object cannot both be true positives.
  const auto gt = rect_labels(4, 10, {{1, 0, 0, 1, 10}});
  const auto seg = rect_labels(4, 10, {{1, 0, 0, 1, 6}, {2, 0, 6, 1, 4}});
  const auto r = f1_object(gt, seg);
  EXPECT_EQ(r.tp, 1u);
  EXPECT_EQ(r.fp, 1u);
}

TEST(Oracles, RandomPairsAgree) {
  std::mt19937_64 rng(123);
  for (int i = 0; i < 150; ++i) {
    const auto g = oracle::random_labels(rng, 32, 32), s = oracle::random_labels(rng, 32, 32);
    EXPECT_NEAR(object_dice(g, s), oracle::object_dice(g, s), 1e-9) << i;
    EXPECT_NEAR(object_hausdorff(g, s), oracle::object_hausdorff(g, s), 1e-9) << i;
    const auto f = f1_object(g, s);
    const auto fo = oracle::f1(g, s, 0.5);
    EXPECT_NEAR(f.f1, fo.f1, 1e-9) << i;
    EXPECT_EQ(f.tp, fo.tp);
    EXPECT_EQ(f.fp, fo.fp);
    EXPECT_EQ(f.fn, fo.fn);
  }
}

TEST(Symmetry, SelfComparison) {
  std::mt19937_64 rng(55);
  for (int i = 0; i < 50; ++i) {
    const auto m = oracle::random_labels(rng, 24, 24);
    EXPECT_EQ(object_dice(m, m), 1.0);
    EXPECT_EQ(object_hausdorff(m, m), 0.0);
    EXPECT_EQ(f1_object(m, m).f1, 1.0);
  }
}

TEST(Symmetry, TranslationInvariance) {
  std::mt19937_64 rng(66);
  for (int i = 0; i < 40; ++i) {
    const auto g = oracle::random_labels(rng, 20, 20), s = oracle::random_labels(rng, 20, 20);
    const auto g2 = shifted(g, 5, 7, 30, 30), s2 = shifted(s, 5, 7, 30, 30);
    EXPECT_NEAR(object_dice(g, s), object_dice(g2, s2), 1e-12);
    EXPECT_NEAR(f1_object(g, s).f1, f1_object(g2, s2).f1, 1e-12);
    // The diagonal penalty depends on image size, so only compare when both sides have objects.
    if (max_label(g) && max_label(s)) {
      EXPECT_NEAR(object_hausdorff(g, s), object_hausdorff(g2, s2), 1e-12);
    }
  }
}

TEST(Report, Aggregation) {
  ImageMetrics a, b;
  a.name = "a";
  a.object_dice = 0.8;
  a.tp = 2;
  b.name = "b";
  b.object_dice = 0.9;
  b.tp = 3;
  const auto two = aggregate_report({a, b});
  EXPECT_NEAR(two.mean.object_dice, 0.85, 1e-12);
  EXPECT_EQ(two.mean.tp, 5u);
  EXPECT_EQ(two.mean.name, "mean");
  const auto one = aggregate_report({a});
  EXPECT_EQ(one.mean.object_dice, a.object_dice);
  EXPECT_EQ(one.mean.tp, a.tp);
  EXPECT_THROW(aggregate_report({}), std::invalid_argument);
}

TEST(Report, EvaluateMasksCombinesMetrics) {
  const auto gt = rect_labels(10, 10, {{1, 0, 0, 3, 3}, {2, 5, 5, 3, 3}});
  const auto m = evaluate_masks("x", gt, gt);
  EXPECT_EQ(m.name, "x");
  EXPECT_EQ(m.object_dice, 1.0);
  EXPECT_EQ(m.f1, 1.0);
  EXPECT_EQ(m.object_hausdorff, 0.0);
  EXPECT_EQ(m.tp, 2u);
  EXPECT_THROW(evaluate_masks("y", gt, LabeledMask(9, 10)), std::invalid_argument);
}
