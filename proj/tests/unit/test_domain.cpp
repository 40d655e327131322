#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "heis/domain.hpp"

using namespace heis;

namespace {

constexpr double kPi = std::numbers::pi;

// Dense search over the gauge sphere reached by gauge-radial projection of the
// Euclidean unit sphere, followed by a shrinking random local search.
double sphere_oracle(Metric m, const Point& q, double radius) {
  auto at = [&](double th, double ph) {
    const Point v{std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th)};
    return dilate(radius / koranyi_norm(v), v);
  };
  struct C {
    double d, th, ph;
  };
  std::vector<C> grid;
  const int nt = 150, np = 300;
  for (int i = 0; i <= nt; ++i) {
    for (int j = 0; j < np; ++j) {
      const double th = kPi * i / nt, ph = 2 * kPi * j / np;
      grid.push_back({dist(m, q, at(th, ph)), th, ph});
    }
  }
  std::partial_sort(grid.begin(), grid.begin() + 6, grid.end(), [](const C& a, const C& b) { return a.d < b.d; });
  double best = grid[0].d;
  Stream s(99, "oracle-refine", 0);
  for (int k = 0; k < 6; ++k) {
    C c = grid[k];
    double h = 2 * kPi / np;
    for (int it = 0; it < 6000; ++it) {
      const double th = c.th + h * s.uniform(-1, 1), ph = c.ph + h * s.uniform(-1, 1);
      const double d = dist(m, q, at(th, ph));
      if (d < c.d) c = {d, th, ph};
      if (it % 150 == 149) h *= 0.7;
    }
    best = std::min(best, c.d);
  }
  return best;
}

// Dense sampling of the six faces of a box, then a shrinking random local
// search on the best face.
double box_oracle(Metric m, const Point& p, const Point& lo, const Point& hi, int n = 100) {
  const double lov[3] = {lo.x, lo.y, lo.t}, hiv[3] = {hi.x, hi.y, hi.t};
  double best = 1e300;
  int best_axis = 0, best_side = 0;
  double bu = 0, bv = 0;
  auto eval = [&](int axis, int side, double a, double b) {
    const int u = (axis + 1) % 3, v = (axis + 2) % 3;
    double c[3];
    c[axis] = side ? hiv[axis] : lov[axis];
    c[u] = std::clamp(a, lov[u], hiv[u]);
    c[v] = std::clamp(b, lov[v], hiv[v]);
    return dist(m, p, {c[0], c[1], c[2]});
  };
  for (int axis = 0; axis < 3; ++axis) {
    for (int side = 0; side < 2; ++side) {
      const int u = (axis + 1) % 3, v = (axis + 2) % 3;
      for (int i = 0; i <= n; ++i) {
        for (int j = 0; j <= n; ++j) {
          const double a = lov[u] + (hiv[u] - lov[u]) * i / n, b = lov[v] + (hiv[v] - lov[v]) * j / n;
          const double d = eval(axis, side, a, b);
          if (d < best) best = d, best_axis = axis, best_side = side, bu = a, bv = b;
        }
      }
    }
  }
  Stream s(98, "oracle-refine", 0);
  double h = 0.05;
  for (int it = 0; it < 3000; ++it) {
    const double a = bu + h * s.uniform(-1, 1), b = bv + h * s.uniform(-1, 1);
    const double d = eval(best_axis, best_side, a, b);
    if (d < best) best = d, bu = a, bv = b;
    if (it % 100 == 99) h *= 0.6;
  }
  return best;
}

}  // namespace

TEST(Domain, Contains) {
  EXPECT_TRUE(Domain::punctured({}).contains({1, 0, 0}));
  EXPECT_FALSE(Domain::punctured({}).contains({}));
  const auto ball = Domain::koranyi_ball({}, 1.0);
  EXPECT_FALSE(ball.contains({0, 0, 2}));
  EXPECT_TRUE(ball.contains({}));
  const auto ann = Domain::koranyi_annulus({}, 0.5, 1.0);
  EXPECT_FALSE(ann.contains({}));
  EXPECT_TRUE(ann.contains({0.75, 0, 0}));
  EXPECT_TRUE(Domain::box({-1, -1, -1}, {1, 1, 1}).contains({0.9, -0.9, 0.9}));
  EXPECT_THROW(Domain::koranyi_ball({}, 0.0), InvalidArgument);
  EXPECT_THROW(Domain::koranyi_annulus({}, 1.0, 0.5), InvalidArgument);
}

TEST(Domain, PuncturedExact) {
  const auto d = Domain::punctured({0.1, 0.2, 0.3});
  EXPECT_DOUBLE_EQ(Domain::punctured({}).boundary_distance({0, 0, 1}, Metric::Koranyi), 1.0);
  const Point p{1, -1, 2};
  EXPECT_DOUBLE_EQ(d.boundary_distance(p, Metric::SubRiemannian), dist(Metric::SubRiemannian, p, {0.1, 0.2, 0.3}));
  EXPECT_THROW(d.boundary_distance({0.1, 0.2, 0.3}, Metric::Koranyi), InvalidArgument);
}

TEST(Domain, BallCenterAndBracket) {
  const auto ball = Domain::koranyi_ball({}, 1.0);
  EXPECT_NEAR(ball.boundary_distance({}, Metric::Koranyi), 1.0, 1e-12);
  EXPECT_NEAR(ball.boundary_distance({}, Metric::SubRiemannian), 1.0, 1e-9);
  Stream s(1, "bracket", 0);
  for (int i = 0; i < 50; ++i) {
    const Point u = unit_sphere_point(s.uniform(-kPi / 2, kPi / 2), s.uniform(0, 2 * kPi));
    const Point p = dilate(0.5, u);
    const double d = ball.boundary_distance(p, Metric::Koranyi);
    EXPECT_GE(d, 0.5 - 1e-12);
    EXPECT_LE(d, koranyi_dist(p, dilate(2.0, p)) + 1e-12);
  }
}

TEST(Domain, BallMatchesDenseOracle) {
  const Point c{0.3, -0.2, 0.5};
  const auto ball = Domain::koranyi_ball(c, 1.2);
  Stream s(2, "oracle", 0);
  for (Metric m : {Metric::Koranyi, Metric::SubRiemannian}) {
    for (int i = 0; i < (m == Metric::Koranyi ? 40 : 6); ++i) {
      Stream ps(3, "pt", i);
      const Point p = ball.propose(ps);
      const double ours = ball.boundary_distance(p, m);
      const double oracle = sphere_oracle(m, group_inv(c) * p, 1.2);
      EXPECT_NEAR(ours, oracle, 1e-6 * 1.2);
    }
  }
}

TEST(Domain, AnnulusTakesNearerSphere) {
  const auto ann = Domain::koranyi_annulus({}, 0.5, 2.0);
  const Point p{0.6, 0, 0};
  const double d = ann.boundary_distance(p, Metric::Koranyi);
  EXPECT_NEAR(d, sphere_oracle(Metric::Koranyi, p, 0.5), 1e-6);
  EXPECT_LE(d, 0.1 + 1e-12);
}

TEST(Domain, BoxExactDistances) {
  const Point lo{-1, -0.5, -0.8}, hi{1.2, 0.7, 0.9};
  const auto box = Domain::box(lo, hi);
  Stream s(4, "box", 0);
  for (Metric m : {Metric::Koranyi, Metric::SubRiemannian}) {
    for (int i = 0; i < 6; ++i) {
      const Point p = box.propose(s);
      const double ours = box.boundary_distance(p, m);
      EXPECT_NEAR(ours, box_oracle(m, p, lo, hi), 1e-6) << p;
    }
  }
}

TEST(Domain, BoxBallContainment) {
  const auto box = Domain::box({0, 0, 0}, {1, 1, 1});
  const Point p{0.7, 0.4, 0.35};
  for (Metric m : {Metric::Koranyi, Metric::SubRiemannian}) {
    const double r = box.boundary_distance(p, m);
    // Points of the ball of radius r stay inside; a slightly bigger ball leaves.
    Stream s(5, "contain", 0);
    int outside_small = 0, outside_big = 0;
    for (int i = 0; i < 20000; ++i) {
      const Point u{s.uniform(-1, 1), s.uniform(-1, 1), s.uniform(-1, 1)};
      const double g = norm(m, u);
      if (g >= 1.0 || g == 0.0) continue;
      // Push to the sphere to probe the extreme points.
      const Point v = dilate(1.0 / g, u);
      if (!box.contains(p * dilate(r * 0.999, v))) ++outside_small;
      if (!box.contains(p * dilate(r * 1.05, v))) ++outside_big;
    }
    EXPECT_EQ(outside_small, 0);
    EXPECT_GT(outside_big, 0);
  }
}

TEST(Domain, SampleInterior) {
  const auto ball = Domain::koranyi_ball({}, 1.0);
  const auto a = sample_interior(ball, 500, 42, 0.1);
  const auto b = sample_interior(ball, 500, 42, 0.1);
  EXPECT_EQ(a, b);
  double min_d = 1e9;
  for (const auto& p : a) {
    EXPECT_TRUE(ball.contains(p));
    min_d = std::min(min_d, ball.boundary_distance(p, Metric::Koranyi));
  }
  EXPECT_GE(min_d, 0.1);
  set_threads(4);
  const auto c = sample_interior(ball, 500, 42, 0.1);
  set_threads(1);
  EXPECT_EQ(a, c);
  const auto pre = sample_interior(ball, 100, 42, 0.1);
  EXPECT_TRUE(std::equal(pre.begin(), pre.end(), a.begin()));

  const auto pun = sample_interior(Domain::punctured({}, 2.0), 200, 1, 0.3);
  for (const auto& p : pun) {
    EXPECT_GT(koranyi_norm(p), 0.3);
    EXPECT_LT(koranyi_norm(p), 2.0);
  }
  EXPECT_THROW(sample_interior(Domain::koranyi_ball({}, 0.1), 10, 1, 0.5), SamplingFailure);
}
