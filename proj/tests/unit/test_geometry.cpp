#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "heis/metric.hpp"
#include "heis/random.hpp"

using namespace heis;

namespace {

constexpr double kPi = std::numbers::pi;

// Endpoint of the unit-speed horizontal curve from the origin whose planar
// projection turns with constant curvature kappa, integrated by RK4.
Point shoot(double kappa, double length, double heading, int steps = 4000) {
  auto rhs = [&](double s, const Point& p) {
    const double dx = std::cos(heading + kappa * s);
    const double dy = std::sin(heading + kappa * s);
    return Point{dx, dy, 2.0 * (p.y * dx - p.x * dy)};
  };
  Point p{};
  const double h = length / steps;
  for (int i = 0; i < steps; ++i) {
    const double s = i * h;
    const Point k1 = rhs(s, p);
    const Point k2 = rhs(s + h / 2, {p.x + h / 2 * k1.x, p.y + h / 2 * k1.y, p.t + h / 2 * k1.t});
    const Point k3 = rhs(s + h / 2, {p.x + h / 2 * k2.x, p.y + h / 2 * k2.y, p.t + h / 2 * k2.t});
    const Point k4 = rhs(s + h, {p.x + h * k3.x, p.y + h * k3.y, p.t + h * k3.t});
    p.x += h / 6 * (k1.x + 2 * k2.x + 2 * k3.x + k4.x);
    p.y += h / 6 * (k1.y + 2 * k2.y + 2 * k3.y + k4.y);
    p.t += h / 6 * (k1.t + 2 * k2.t + 2 * k3.t + k4.t);
  }
  return p;
}

Point random_point(Stream& s, double scale = 2.0) {
  return {s.uniform(-scale, scale), s.uniform(-scale, scale), s.uniform(-scale * scale, scale * scale)};
}

}  // namespace

TEST(Group, ProductExamples) {
  const Point p{0.3, -1.2, 2.5};
  EXPECT_EQ(Point{} * p, p);
  EXPECT_EQ((Point{1, 0, 0} * Point{0, 1, 0}), (Point{1, 1, -2}));
  EXPECT_EQ((Point{1, 2, 3} * Point{-1, -2, -3}), (Point{0, 0, 0}));
  EXPECT_EQ(group_inv(Point{1, 2, 3}), (Point{-1, -2, -3}));
  EXPECT_EQ(group_inv(Point{}), Point{});
}

TEST(Group, Axioms) {
  Stream s(1, "axioms", 0);
  for (int i = 0; i < 10000; ++i) {
    const Point a = random_point(s), b = random_point(s), c = random_point(s);
    const Point l = (a * b) * c;
    const Point r = a * (b * c);
    EXPECT_NEAR(l.t, r.t, 1e-12 * (1 + std::abs(l.t)));
    EXPECT_NEAR(l.x, r.x, 1e-12 * (1 + std::abs(l.x)));
    const Point id = a * group_inv(a);
    EXPECT_NEAR(id.t, 0.0, 1e-12 * (1 + std::abs(a.t)));
    EXPECT_EQ(group_inv(group_inv(a)), a);
  }
}

TEST(Dilation, Examples) {
  EXPECT_EQ(dilate(2, Point{1, 1, 1}), (Point{2, 2, 4}));
  const Point p{0.4, -0.7, 1.3};
  EXPECT_EQ(dilate(1, p), p);
  const Point ab = dilate(3.0, dilate(0.5, p));
  const Point c = dilate(1.5, p);
  EXPECT_NEAR(ab.t, c.t, 1e-15);
  EXPECT_NEAR(koranyi_norm(dilate(2.7, p)), 2.7 * koranyi_norm(p), 1e-14);
  EXPECT_THROW(dilate(0.0, p), InvalidArgument);
  EXPECT_THROW(dilate(-1.0, p), InvalidArgument);
}

TEST(Gauge, Examples) {
  EXPECT_EQ(koranyi_norm(Point{}), 0.0);
  EXPECT_DOUBLE_EQ(koranyi_norm(Point{1, 0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(koranyi_norm(Point{0, 0, 1}), 1.0);
  EXPECT_DOUBLE_EQ(koranyi_norm(Point{0, 0, 2}), std::sqrt(2.0));
}

TEST(SubRiemannian, Anchors) {
  EXPECT_NEAR(dist(Metric::SubRiemannian, Point{}, Point{0.6, -0.8, 0}), 1.0, 1e-15);
  EXPECT_NEAR(dist(Metric::SubRiemannian, Point{}, Point{0, 0, 1}), std::sqrt(kPi), 1e-15);
  EXPECT_NEAR(dist(Metric::SubRiemannian, Point{}, Point{0, 0, -5}), std::sqrt(5 * kPi), 1e-14);
  // A half circle of diameter 2 lifts to |t| = 4 * (pi/2); length pi.
  EXPECT_NEAR(subriemannian_norm(Point{2, 0, 2 * kPi}), kPi, 1e-12);
}

TEST(SubRiemannian, ShootingOracle) {
  // Circular-arc lifts with total turning below 2 pi minimize length, so the
  // solver must return the arc length at the shot endpoint.
  Stream s(7, "shoot", 0);
  for (int i = 0; i < 200; ++i) {
    const double length = s.uniform(0.1, 3.0);
    const double turning = s.uniform(-0.999, 0.999) * 2.0 * kPi;
    const Point end = shoot(turning / length, length, s.uniform(0.0, 2 * kPi));
    EXPECT_NEAR(subriemannian_norm(end), length, 1e-9 * length) << "turning " << turning;
  }
  // Near the axis and near the plane.
  for (double turning : {1e-6, 1e-3, 0.5, 6.0, 6.28, 2 * kPi - 1e-4}) {
    const Point end = shoot(turning, 1.0, 0.3);
    EXPECT_NEAR(subriemannian_norm(end), 1.0, 1e-9) << turning;
  }
}

TEST(SubRiemannian, ExtremeRatios) {
  for (double t : {1e-300, 1e-30, 1e-12, 1e-6, 1e6, 1e12, 1e30}) {
    const double d = subriemannian_norm(Point{1, 0, t});
    EXPECT_TRUE(std::isfinite(d));
    EXPECT_GE(d, koranyi_norm(Point{1, 0, t}) * (1 - 1e-12));
    EXPECT_LE(d, std::sqrt(kPi) * koranyi_norm(Point{1, 0, t}) * (1 + 1e-12));
  }
  EXPECT_NEAR(subriemannian_norm(Point{1e-200, 0, 1}), std::sqrt(kPi), 1e-12);
}

TEST(Metrics, InvarianceHomogeneityTriangle) {
  Stream s(11, "metric", 0);
  for (Metric m : {Metric::Koranyi, Metric::SubRiemannian}) {
    for (int i = 0; i < 2000; ++i) {
      const Point g = random_point(s), p = random_point(s), q = random_point(s), r = random_point(s);
      const double d = dist(m, p, q);
      EXPECT_NEAR(dist(m, g * p, g * q), d, 1e-9 * (1 + d));
      EXPECT_NEAR(dist(m, q, p), d, 1e-9 * (1 + d));
      const double lam = s.uniform(0.1, 5.0);
      EXPECT_NEAR(dist(m, dilate(lam, p), dilate(lam, q)), lam * d, 1e-9 * (1 + lam * d));
      EXPECT_GE(dist(m, p, r) + dist(m, r, q) - d, -1e-9);
    }
  }
}

TEST(Metrics, Sandwich) {
  Stream s(12, "sandwich", 0);
  for (int i = 0; i < 10000; ++i) {
    const Point p = random_point(s), q = random_point(s);
    const double ds = dist(Metric::SubRiemannian, p, q);
    const double dh = dist(Metric::Koranyi, p, q);
    EXPECT_LE(dh, ds * (1 + 1e-12));
    EXPECT_GE(dh, ds / std::sqrt(kPi) * (1 - 1e-12));
  }
  // Equality cases: t-axis for the left bound, t = 0 plane for the right.
  EXPECT_NEAR(koranyi_norm(Point{0, 0, 2}) * std::sqrt(kPi), subriemannian_norm(Point{0, 0, 2}), 1e-14);
  EXPECT_NEAR(koranyi_norm(Point{1, 2, 0}), subriemannian_norm(Point{1, 2, 0}), 1e-14);
}

TEST(Curves, Length) {
  const Curve c({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}});
  EXPECT_DOUBLE_EQ(curve_length(c), 2.0);
  const Point a{0.2, 0.1, 0.3}, b{-0.5, 0.4, 1.0};
  EXPECT_DOUBLE_EQ(curve_length(Curve({a, b})), koranyi_dist(b, a));
  Curve d({a, b, {1, 1, 1}});
  Curve e = d;
  for (auto& v : e.vertices) v = dilate(3.0, v);
  EXPECT_NEAR(curve_length(e), 3.0 * curve_length(d), 1e-13);
  EXPECT_THROW(Curve({a}), InvalidArgument);
}

TEST(Volume, ClosedFormAndMonteCarlo) {
  EXPECT_NEAR(koranyi_ball_volume(1.0), kPi * kPi / 2, 1e-15);
  EXPECT_NEAR(koranyi_ball_volume(2.0), 16 * kPi * kPi / 2, 1e-13);
  EXPECT_THROW(koranyi_ball_volume(0.0), InvalidArgument);
  // Rejection oracle over [-1,1]^3 around a translated center.
  const Point c{0.7, -0.2, 0.4};
  Stream s(3, "volume", 0);
  const int n = 400000;
  int hits = 0;
  const double tr = 1 + 2 * horizontal_radius(c);
  for (int i = 0; i < n; ++i) {
    const Point p{c.x + s.uniform(-1, 1), c.y + s.uniform(-1, 1), c.t + s.uniform(-tr, tr)};
    if (koranyi_dist(p, c) < 1.0) ++hits;
  }
  const double vol = 8.0 * tr * hits / n;
  EXPECT_NEAR(vol / koranyi_ball_volume(1.0), 1.0, 0.01);
}
