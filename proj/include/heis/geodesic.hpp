#pragma once

#include <cmath>
#include <numbers>
#include <sstream>

#include "heis/errors.hpp"
#include "heis/point.hpp"

namespace heis {

namespace detail {

// u - sin(u) without cancellation for small u.
inline double u_minus_sin(double u) noexcept {
  if (std::abs(u) >= 0.5) return u - std::sin(u);
  const double u2 = u * u;
  double term = u * u2 / 6.0;
  double sum = 0.0;
  for (int k = 1; k < 12; ++k) {
    sum += term;
    term *= -u2 / ((2.0 * k + 2.0) * (2.0 * k + 3.0));
  }
  return sum;
}

// sin(u) - u cos(u) without cancellation for small u.
inline double sin_minus_u_cos(double u) noexcept {
  if (std::abs(u) >= 0.5) return std::sin(u) - u * std::cos(u);
  // sum_{k>=1} (-1)^(k+1) u^(2k+1) * 2k / (2k+1)!
  const double u2 = u * u;
  double power = u * u2;  // u^3
  double fact = 6.0;      // 3!
  double sum = 0.0;
  for (int k = 1; k < 12; ++k) {
    const double sign = (k % 2 == 1) ? 1.0 : -1.0;
    sum += sign * power * (2.0 * k) / fact;
    power *= u2;
    fact *= (2.0 * k + 2.0) * (2.0 * k + 3.0);
  }
  return sum;
}

// Lift ratio |t| / |z|^2 reached by a geodesic whose planar projection is a
// circular arc subtending the angle 2*phi over its chord, phi in (0, pi/2].
inline double lift_ratio(double phi) noexcept {
  const double s = std::sin(phi);
  return 0.5 * u_minus_sin(2.0 * phi) / (s * s);
}

inline double lift_ratio_derivative(double phi) noexcept {
  const double s = std::sin(phi);
  return 2.0 * sin_minus_u_cos(phi) / (s * s * s);
}

[[noreturn]] inline void geodesic_failure(double ratio, double chord, int iterations) {
  std::ostringstream os;
  os << "sub-Riemannian geodesic solver did not converge (|t|/|z|^2=" << ratio << ", |z|=" << chord
     << ", iterations=" << iterations << ')';
  throw NumericFailure(os.str());
}

}  // namespace detail

/// Sub-Riemannian distance from the origin to g.
///
/// Geodesics from the origin project to circular arcs; a horizontal curve
/// satisfies dt = 2(y dx - x dy), so the lift gains four times the area swept
/// between arc and chord. With chord c = |z| and half-angle phi this gives
/// |t| / c^2 = (phi - sin(phi)cos(phi)) / sin(phi)^2 and length c*phi/sin(phi).
/// The scalar relation is solved by safeguarded Newton iteration.
inline double subriemannian_norm(const Point& g) {
  constexpr double pi = std::numbers::pi;
  const double chord = horizontal_radius(g);
  const double lift = std::abs(g.t);
  if (lift == 0.0) return chord;
  const double ratio = lift / (chord * chord);
  if (chord == 0.0 || !std::isfinite(ratio)) return std::sqrt(pi * lift);

  if (ratio < 1e-6) {
    // lift_ratio(phi) = 2 phi / 3 + O(phi^3); the neglected terms are below
    // rounding in the returned length.
    const double phi = 1.5 * ratio;
    return chord * (1.0 + phi * phi / 6.0);
  }

  constexpr int kMaxIter = 200;
  if (ratio <= pi / 2.0) {
    // Increasing lift_ratio(phi) on (0, pi/2]; bracket [lo, hi].
    double lo = 0.0;
    double hi = pi / 2.0;
    double phi = std::min(1.5 * ratio, hi);
    for (int it = 0; it < kMaxIter; ++it) {
      const double f = detail::lift_ratio(phi) - ratio;
      if (f == 0.0) return chord * phi / std::sin(phi);
      if (f > 0.0) hi = phi; else lo = phi;
      const double df = detail::lift_ratio_derivative(phi);
      double next = phi - f / df;
      if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
      if (std::abs(next - phi) <= 1e-16 * phi || hi - lo <= 4e-16 * hi) {
        phi = next;
        return phi == 0.0 ? chord : chord * phi / std::sin(phi);
      }
      phi = next;
    }
    detail::geodesic_failure(ratio, chord, kMaxIter);
  }

  // Arc beyond a half circle: write phi = pi - eps and solve
  // F(eps) = ratio*sin^2(eps) - (pi - eps + sin(eps)cos(eps)) = 0, F increasing on (0, pi/2].
  double lo = 0.0;
  double hi = pi / 2.0;
  double eps = std::min(std::sqrt(pi / ratio), hi);
  for (int it = 0; it < kMaxIter; ++it) {
    const double s = std::sin(eps);
    const double c = std::cos(eps);
    const double f = ratio * s * s - (pi - eps + s * c);
    if (f == 0.0) return chord * (pi - eps) / s;
    if (f > 0.0) hi = eps; else lo = eps;
    const double df = ratio * 2.0 * s * c + 2.0 * s * s;
    double next = eps - f / df;
    if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
    if (std::abs(next - eps) <= 1e-16 * eps || hi - lo <= 4e-16 * hi) {
      eps = next;
      return chord * (pi - eps) / std::sin(eps);
    }
    eps = next;
  }
  detail::geodesic_failure(ratio, chord, kMaxIter);
}

}  // namespace heis
