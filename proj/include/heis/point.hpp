#pragma once

#include <algorithm>
#include <cmath>
#include <ostream>

#include "heis/errors.hpp"

namespace heis {

/// A point of the first Heisenberg group in exponential coordinates.
///
/// Group law: (x,y,t)(x',y',t') = (x+x', y+y', t+t' - 2xy' + 2x'y).
/// The left-invariant horizontal frame is X = d/dx + 2y d/dt,
/// Y = d/dy - 2x d/dt.
struct Point {
  double x = 0.0;
  double y = 0.0;
  double t = 0.0;

  friend constexpr bool operator==(const Point&, const Point&) = default;

  bool finite() const noexcept {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(t);
  }
};

inline std::ostream& operator<<(std::ostream& os, const Point& p) {
  return os << '(' << p.x << ", " << p.y << ", " << p.t << ')';
}

constexpr Point group_mul(const Point& p, const Point& q) noexcept {
  return {p.x + q.x, p.y + q.y, p.t + q.t - 2.0 * p.x * q.y + 2.0 * q.x * p.y};
}

constexpr Point operator*(const Point& p, const Point& q) noexcept { return group_mul(p, q); }

constexpr Point group_inv(const Point& p) noexcept { return {-p.x, -p.y, -p.t}; }

/// Heisenberg dilation (lx, ly, l^2 t).
inline Point dilate(double lambda, const Point& p) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw InvalidArgument("dilation factor must be positive and finite");
  }
  return {lambda * p.x, lambda * p.y, lambda * lambda * p.t};
}

/// Quartic gauge ((x^2+y^2)^2 + t^2)^(1/4). Coordinates beyond ~1e75 overflow.
inline double koranyi_norm(const Point& p) noexcept {
  const double r2 = p.x * p.x + p.y * p.y;
  return std::sqrt(std::sqrt(r2 * r2 + p.t * p.t));
}

/// Euclidean length of the horizontal projection.
inline double horizontal_radius(const Point& p) noexcept { return std::hypot(p.x, p.y); }

/// Rotation about the t-axis; a group automorphism and an isometry of both metrics.
inline Point rotate(double theta, const Point& p) noexcept {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  return {c * p.x - s * p.y, s * p.x + c * p.y, p.t};
}

/// Point on the gauge sphere of radius 1 parametrized by latitude-like
/// alpha in [-pi/2, pi/2] (|z|^2 = cos alpha, t = sin alpha) and azimuth beta.
inline Point unit_sphere_point(double alpha, double beta) noexcept {
  const double rho = std::sqrt(std::max(0.0, std::cos(alpha)));
  return {rho * std::cos(beta), rho * std::sin(beta), std::sin(alpha)};
}

}  // namespace heis
