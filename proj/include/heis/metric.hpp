#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "heis/errors.hpp"
#include "heis/geodesic.hpp"
#include "heis/point.hpp"

namespace heis {

enum class Metric { Koranyi, SubRiemannian };

inline std::string_view to_string(Metric m) noexcept {
  return m == Metric::Koranyi ? "koranyi" : "subriemannian";
}

inline Metric parse_metric(std::string_view s) {
  if (s == "koranyi" || s == "Koranyi" || s == "korányi") return Metric::Koranyi;
  if (s == "subriemannian" || s == "sub-riemannian" || s == "SubRiemannian" || s == "cc") {
    return Metric::SubRiemannian;
  }
  throw InvalidArgument("unknown metric '" + std::string(s) + "'");
}

/// Distance from the origin in the chosen metric.
inline double norm(Metric m, const Point& g) {
  return m == Metric::Koranyi ? koranyi_norm(g) : subriemannian_norm(g);
}

/// d(p, q) = |q^{-1} p|. Symmetric because both gauges satisfy |g| = |g^{-1}|.
inline double dist(Metric m, const Point& p, const Point& q) {
  return norm(m, group_inv(q) * p);
}

inline double koranyi_dist(const Point& p, const Point& q) noexcept {
  return koranyi_norm(group_inv(q) * p);
}

struct Ball {
  Point center;
  double radius = 1.0;
  Metric metric = Metric::Koranyi;

  Ball() = default;
  Ball(Point c, double r, Metric m = Metric::Koranyi) : center(c), radius(r), metric(m) {
    if (!(r > 0.0) || !std::isfinite(r)) throw InvalidArgument("ball radius must be positive and finite");
    if (!c.finite()) throw InvalidArgument("ball center must be finite");
  }

  /// The concentric ball mB.
  Ball scaled(double m) const { return Ball(center, m * radius, metric); }

  bool contains(const Point& p) const { return dist(metric, p, center) < radius; }
};

/// Lebesgue (Haar) volume of the Korányi ball of radius r.
inline double koranyi_ball_volume(double r) {
  if (!(r > 0.0) || !std::isfinite(r)) throw InvalidArgument("ball radius must be positive and finite");
  const double r2 = r * r;
  return 0.5 * std::numbers::pi * std::numbers::pi * r2 * r2;
}

/// Haar volume of the sub-Riemannian ball of radius r. The unit sphere is
/// swept by geodesics with curvature phi in [0, 2 pi], reaching horizontal
/// radius sin(phi/2)/(phi/2) and height 2 (phi - sin phi) / phi^2; the volume
/// is the solid of revolution under that profile.
inline double subriemannian_ball_volume(double r) {
  if (!(r > 0.0) || !std::isfinite(r)) throw InvalidArgument("ball radius must be positive and finite");
  static const double unit = [] {
    constexpr double pi = std::numbers::pi;
    auto integrand = [](double f) {
      const double h = 0.5 * f;
      const double rho = std::sin(h) / h;
      const double drho = (h * std::cos(h) - std::sin(h)) / (2.0 * h * h);
      const double t = 2.0 * (f - std::sin(f)) / (f * f);
      return 4.0 * pi * rho * t * std::abs(drho);
    };
    // composite Simpson, integrand smooth and vanishing at 0
    const int n = 4000;
    const double h = 2.0 * pi / n;
    double s = integrand(2.0 * pi);
    for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * integrand(i * h);
    return s * h / 3.0;
  }();
  const double r2 = r * r;
  return unit * r2 * r2;
}

inline double ball_volume(Metric m, double r) {
  return m == Metric::Koranyi ? koranyi_ball_volume(r) : subriemannian_ball_volume(r);
}

/// Polyline in exponential coordinates.
struct Curve {
  std::vector<Point> vertices;

  Curve() = default;
  explicit Curve(std::vector<Point> v) : vertices(std::move(v)) {
    if (vertices.size() < 2) throw InvalidArgument("a curve needs at least two vertices");
  }
};

/// Sum of Korányi distances between consecutive vertices.
inline double curve_length(const Curve& c) noexcept {
  double len = 0.0;
  for (std::size_t i = 1; i < c.vertices.size(); ++i) len += koranyi_dist(c.vertices[i], c.vertices[i - 1]);
  return len;
}

/// Point reached after moving a fraction s of the way along the group segment
/// p * exp(s * log(p^{-1} q)); used as a cheap interior point of a segment.
inline Point group_lerp(const Point& p, const Point& q, double s) noexcept {
  const Point d = group_inv(p) * q;
  return p * Point{s * d.x, s * d.y, s * d.t};
}

}  // namespace heis
