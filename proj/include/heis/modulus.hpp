#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <vector>

#include "heis/domain.hpp"
#include "heis/errors.hpp"
#include "heis/metric.hpp"
#include "heis/parallel.hpp"
#include "heis/random.hpp"

namespace heis {

/// Korányi ring B(center, k r) minus the closed ball B(center, r).
struct RingSpec {
  Point center;
  double r = 1.0;
  double k = 2.0;

  RingSpec() = default;
  RingSpec(Point c, double r_, double k_) : center(c), r(r_), k(k_) {
    if (!(r > 0.0) || !std::isfinite(r)) throw InvalidArgument("ring radius must be positive");
    if (!(k > 1.0) || !std::isfinite(k)) throw InvalidArgument("ring ratio k must exceed 1");
    if (!c.finite()) throw InvalidArgument("ring center must be finite");
  }

  Domain carrier() const { return Domain::koranyi_annulus(center, r, k * r); }
};

struct CurveFamily {
  std::vector<Curve> curves;
  double p_exp = 4.0;
  Domain carrier;
};

namespace detail {

// Uniform direction on the unit gauge sphere under the cone measure.
inline Point gauge_sphere_direction(Stream& s, double min_horizontal = 0.0) {
  for (;;) {
    const Point u{s.uniform(-1, 1), s.uniform(-1, 1), s.uniform(-1, 1)};
    const double g = koranyi_norm(u);
    if (g >= 1.0 || g < 1e-3) continue;
    const Point w = dilate(1.0 / g, u);
    if (horizontal_radius(w) / koranyi_norm(w) < min_horizontal) continue;
    return w;
  }
}

// Horizontal unit field climbing the gauge, turned by psi toward larger |z|.
inline Point crossing_velocity(const Point& p, double psi) {
  const double z = horizontal_radius(p);
  const double n2 = std::sqrt(z * z * z * z + p.t * p.t);
  const double a = z * z / n2, b = p.t / n2;
  const double ex = p.x / z, ey = p.y / z;
  const double ux = a * ex + b * ey, uy = a * ey - b * ex;  // unit gauge gradient
  const double vx = -uy, vy = ux;                           // its quarter turn
  const double ps = b >= 0.0 ? std::abs(psi) : -std::abs(psi);
  const double wx = std::cos(ps) * ux + std::sin(ps) * vx;
  const double wy = std::cos(ps) * uy + std::sin(ps) * vy;
  // dN/ds = (|z|/N) cos(psi); return dp/dN.
  const double scale = std::sqrt(n2) / (z * std::cos(ps));
  return {scale * wx, scale * wy, scale * 2.0 * (p.y * wx - p.x * wy)};
}

inline std::vector<Point> gauge_crossing(const Point& start, double psi, double r0, double r1, std::size_t pts) {
  constexpr int sub = 4;
  std::vector<Point> out{start};
  Point p = start;
  const double h = (r1 - r0) / static_cast<double>((pts - 1) * sub);
  auto add = [](const Point& a, const Point& v, double s) { return Point{a.x + s * v.x, a.y + s * v.y, a.t + s * v.t}; };
  for (std::size_t i = 1; i < pts; ++i) {
    for (int j = 0; j < sub; ++j) {
      const Point k1 = crossing_velocity(p, psi);
      const Point k2 = crossing_velocity(add(p, k1, h / 2), psi);
      const Point k3 = crossing_velocity(add(p, k2, h / 2), psi);
      const Point k4 = crossing_velocity(add(p, k3, h), psi);
      p = {p.x + h / 6 * (k1.x + 2 * k2.x + 2 * k3.x + k4.x), p.y + h / 6 * (k1.y + 2 * k2.y + 2 * k3.y + k4.y),
           p.t + h / 6 * (k1.t + 2 * k2.t + 2 * k3.t + k4.t)};
    }
    out.push_back(p);
  }
  out.back() = dilate(r1 / koranyi_norm(out.back()), out.back());
  return out;
}

}  // namespace detail

/// The dilation ray s -> center * delta_s(q) for s in [r, kr], q on the unit
/// gauge sphere (q is renormalized).
inline Curve dilation_ray(const RingSpec& spec, const Point& q, std::size_t pts) {
  if (pts < 2) throw InvalidArgument("curves need at least two points");
  const double g = koranyi_norm(q);
  if (!(g > 0.0)) throw InvalidArgument("ray direction must be nonzero");
  const Point w = dilate(1.0 / g, q);
  const double r0 = spec.r, r1 = spec.k * spec.r;
  std::vector<Point> v;
  v.reserve(pts);
  for (std::size_t j = 0; j < pts; ++j) {
    const double sj = j + 1 == pts ? r1 : r0 + (r1 - r0) * static_cast<double>(j) / static_cast<double>(pts - 1);
    v.push_back(spec.center * dilate(sj, w));
  }
  return Curve(std::move(v));
}

/// Polylines joining the two boundary spheres of the ring. Every fourth curve
/// is a dilation ray; the others are horizontal curves climbing the gauge at a
/// random deflection angle in (-pi/4, pi/4).
inline CurveFamily ring_curve_family(const RingSpec& spec, std::size_t n_curves, std::size_t pts_per_curve,
                                     std::uint64_t seed) {
  if (n_curves < 1) throw InvalidArgument("ring_curve_family needs at least one curve");
  if (pts_per_curve < 2) throw InvalidArgument("curves need at least two points");
  std::vector<Curve> curves(n_curves);
  const double r0 = spec.r, r1 = spec.k * spec.r;
  parallel_for(n_curves, [&](std::size_t i) {
    Stream s(seed, "ring_curve", i);
    if (i % 4 == 0) {
      curves[i] = dilation_ray(spec, detail::gauge_sphere_direction(s), pts_per_curve);
      return;
    }
    const Point w = detail::gauge_sphere_direction(s, 0.3);
    const double psi = s.uniform(-0.25, 0.25) * std::numbers::pi;
    std::vector<Point> v = detail::gauge_crossing(dilate(r0, w), psi, r0, r1, pts_per_curve);
    for (Point& p : v) p = spec.center * p;
    curves[i] = Curve(std::move(v));
  });
  return {std::move(curves), 4.0, spec.carrier()};
}

struct UpperEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

/// Monte-Carlo value of the integral of rho^4 over the ring for
/// rho = 1/(|x| log k), stratified over gauge shells.
inline UpperEstimate modulus_upper_explicit_estimate(const RingSpec& spec, std::size_t mc_n, std::uint64_t seed) {
  if (mc_n < 2) throw InvalidArgument("modulus_upper_explicit needs mc_n >= 2");
  const std::size_t strata = std::min<std::size_t>(64, mc_n / 2);
  const double lk = std::log(spec.k);
  std::vector<double> mean(strata), var(strata), vol(strata);
  parallel_for(strata, [&](std::size_t i) {
    const std::size_t lo_n = mc_n * i / strata, hi_n = mc_n * (i + 1) / strata;
    const double a = spec.r * std::pow(spec.k, static_cast<double>(i) / strata);
    const double b = spec.r * std::pow(spec.k, static_cast<double>(i + 1) / strata);
    const double a4 = a * a * a * a, b4 = b * b * b * b;
    vol[i] = koranyi_ball_volume(b) - koranyi_ball_volume(a);
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t j = lo_n; j < hi_n; ++j) {
      Stream s(seed, "modulus_upper", j);
      // Haar measure in gauge-polar form: radius density ~ s^3, cone-measure direction.
      const double rad = std::pow(a4 + s.uniform() * (b4 - a4), 0.25);
      const Point x = spec.center * dilate(rad, detail::gauge_sphere_direction(s));
      const double rho = 1.0 / (koranyi_dist(x, spec.center) * lk);
      const double f = rho * rho * rho * rho;
      s1 += f;
      s2 += f * f;
    }
    const double m = static_cast<double>(hi_n - lo_n);
    mean[i] = s1 / m;
    var[i] = m > 1 ? std::max(0.0, (s2 - s1 * s1 / m) / (m - 1)) / m : 0.0;
  });
  UpperEstimate out;
  double v2 = 0.0;
  for (std::size_t i = 0; i < strata; ++i) {
    out.value += vol[i] * mean[i];
    v2 += vol[i] * vol[i] * var[i];
  }
  out.std_error = std::sqrt(v2);
  return out;
}

inline double modulus_upper_explicit(const RingSpec& spec, std::size_t mc_n, std::uint64_t seed) {
  return modulus_upper_explicit_estimate(spec, mc_n, seed).value;
}

inline double ring_modulus_reference(double k, double omega4) {
  if (!(k > 1.0)) throw InvalidArgument("ring ratio k must exceed 1");
  if (!(omega4 > 0.0)) throw InvalidArgument("omega4 must be positive");
  const double l = std::log(k);
  return omega4 / (l * l * l);
}

struct LowerSolution {
  double lower = 0.0;   // dual value, a lower bound of the discrete program
  double primal = 0.0;  // value of a feasible rescaled density
  std::size_t grid = 0;
  std::size_t curves = 0;
  std::size_t active_cells = 0;
  std::size_t iterations = 0;
  double slack() const { return primal - lower; }
};

namespace detail {

struct SparseRows {
  std::vector<std::size_t> start{0};
  std::vector<std::size_t> col;
  std::vector<double> val;
};

}  // namespace detail

/// Discrete p-modulus of the sampled family on a grid^3 rectilinear grid
/// over the carrier's bounding box, solved through its concave dual
///   g(mu) = sum mu - (1 - 1/p) sum_c s_c rho_c,  s = A^T mu,
///   rho_c = (s_c / (p v_c))^(1/(p-1)),
/// by accelerated projected gradient ascent.
inline LowerSolution modulus_lower_detailed(const CurveFamily& fam, std::size_t grid, std::size_t iterations) {
  if (grid < 8) throw ConfigurationError("modulus grid needs at least 8 cells per axis");
  if (iterations < 1) throw InvalidArgument("iterations must be positive");
  if (fam.curves.empty()) throw ConfigurationError("empty curve family");
  const double p = fam.p_exp;
  if (!(p > 1.0)) throw InvalidArgument("modulus exponent must exceed 1");
  const BoundingBox bb = fam.carrier.bounding_box();
  const double hx = (bb.hi.x - bb.lo.x) / grid, hy = (bb.hi.y - bb.lo.y) / grid, ht = (bb.hi.t - bb.lo.t) / grid;
  const double vol = hx * hy * ht;
  const std::size_t ncell = grid * grid * grid;

  std::vector<unsigned char> active(ncell, 0);
  parallel_for(ncell, [&](std::size_t c) {
    const std::size_t i = c / (grid * grid), j = (c / grid) % grid, k = c % grid;
    const Point ctr{bb.lo.x + (i + 0.5) * hx, bb.lo.y + (j + 0.5) * hy, bb.lo.t + (k + 0.5) * ht};
    active[c] = fam.carrier.contains(ctr);
  });
  auto cell_of = [&](const Point& q) -> std::size_t {
    auto ix = [&](double v, double lo, double h) {
      const double f = std::floor((v - lo) / h);
      return static_cast<std::size_t>(std::clamp(f, 0.0, static_cast<double>(grid - 1)));
    };
    return (ix(q.x, bb.lo.x, hx) * grid + ix(q.y, bb.lo.y, hy)) * grid + ix(q.t, bb.lo.t, ht);
  };

  // Midpoint rule per segment; segments landing in inactive cells drop out.
  const std::size_t m = fam.curves.size();
  std::vector<std::vector<std::pair<std::size_t, double>>> rows(m);
  parallel_for(m, [&](std::size_t g) {
    const auto& v = fam.curves[g].vertices;
    std::vector<std::pair<std::size_t, double>> r;
    for (std::size_t s = 0; s + 1 < v.size(); ++s) {
      const std::size_t c = cell_of(group_lerp(v[s], v[s + 1], 0.5));
      if (active[c]) r.emplace_back(c, koranyi_dist(v[s + 1], v[s]));
    }
    std::sort(r.begin(), r.end());
    std::vector<std::pair<std::size_t, double>> merged;
    for (const auto& e : r) {
      if (!merged.empty() && merged.back().first == e.first)
        merged.back().second += e.second;
      else
        merged.push_back(e);
    }
    rows[g] = std::move(merged);
  });
  for (std::size_t g = 0; g < m; ++g)
    if (rows[g].empty()) throw ConfigurationError("a sampled curve misses every active cell; refine the grid");

  // Compact the cells that appear in some constraint.
  std::vector<std::size_t> remap(ncell, SIZE_MAX);
  std::size_t used = 0;
  detail::SparseRows A;
  for (std::size_t g = 0; g < m; ++g) {
    for (const auto& [c, a] : rows[g]) {
      if (remap[c] == SIZE_MAX) remap[c] = used++;
      A.col.push_back(remap[c]);
      A.val.push_back(a);
    }
    A.start.push_back(A.col.size());
  }

  const double q = 1.0 / (p - 1.0);
  std::vector<double> s(used), rho(used), arho(m);
  auto evaluate = [&](const std::vector<double>& mu, std::vector<double>& grad) {
    std::fill(s.begin(), s.end(), 0.0);
    for (std::size_t g = 0; g < m; ++g)
      for (std::size_t e = A.start[g]; e < A.start[g + 1]; ++e) s[A.col[e]] += mu[g] * A.val[e];
    double pen = 0.0;
    for (std::size_t c = 0; c < used; ++c) {
      rho[c] = std::pow(s[c] / (p * vol), q);
      pen += s[c] * rho[c];
    }
    double val = 0.0;
    for (std::size_t g = 0; g < m; ++g) {
      double acc = 0.0;
      for (std::size_t e = A.start[g]; e < A.start[g + 1]; ++e) acc += A.val[e] * rho[A.col[e]];
      arho[g] = acc;
      grad[g] = 1.0 - acc;
      val += mu[g];
    }
    return val - (1.0 - 1.0 / p) * pen;
  };

  // Best uniform multiplier as the starting point.
  std::vector<double> mu(m, 1.0), grad(m);
  {
    evaluate(mu, grad);
    double pen = 0.0;
    for (std::size_t c = 0; c < used; ++c) pen += s[c] * rho[c];
    // g(c 1) = c m - (1 - 1/p) c^(p/(p-1)) pen; maximize over c.
    const double c = std::pow(static_cast<double>(m) / pen, p - 1.0);
    for (double& v : mu) v = c;
  }
  double best = evaluate(mu, grad);
  std::vector<double> best_mu = mu, y = mu, prev = mu, gy(m), trial(m), gt(m);
  double step = mu[0];
  double tk = 1.0;
  std::size_t it = 0;
  for (; it < iterations; ++it) {
    const double fy = evaluate(y, gy);
    double ft = 0.0;
    for (int bt = 0; bt < 60; ++bt) {
      double lin = 0.0, quad = 0.0;
      for (std::size_t g = 0; g < m; ++g) {
        trial[g] = std::max(0.0, y[g] + step * gy[g]);
        const double d = trial[g] - y[g];
        lin += gy[g] * d;
        quad += d * d;
      }
      ft = evaluate(trial, gt);
      if (ft >= fy + lin - quad / (2.0 * step)) break;
      step *= 0.5;
    }
    if (ft > best) {
      best = ft;
      best_mu = trial;
    }
    // Restart momentum when the objective drops.
    const double tn = (1.0 + std::sqrt(1.0 + 4.0 * tk * tk)) / 2.0;
    const bool restart = ft < best;
    for (std::size_t g = 0; g < m; ++g) {
      y[g] = restart ? best_mu[g] : std::max(0.0, trial[g] + (tk - 1.0) / tn * (trial[g] - prev[g]));
      prev[g] = trial[g];
    }
    tk = restart ? 1.0 : tn;
    step *= 1.25;
  }

  LowerSolution out;
  out.lower = evaluate(best_mu, grad);
  double worst = std::numeric_limits<double>::infinity();
  for (std::size_t g = 0; g < m; ++g) worst = std::min(worst, arho[g]);
  double primal = 0.0;
  for (std::size_t c = 0; c < used; ++c) primal += vol * std::pow(rho[c] / worst, p);
  out.primal = worst > 0.0 ? primal : std::numeric_limits<double>::infinity();
  out.grid = grid;
  out.curves = m;
  out.active_cells = used;
  out.iterations = it;
  return out;
}

inline double modulus_lower_sampled(const CurveFamily& fam, std::size_t grid, std::size_t iterations) {
  return modulus_lower_detailed(fam, grid, iterations).lower;
}

struct ModulusBounds {
  RingSpec spec;
  double upper = 0.0;
  double upper_std_error = 0.0;
  double lower = 0.0;
  double slack = 0.0;
  std::size_t grid_resolution = 0;
  std::size_t curves_sampled = 0;
};

inline ModulusBounds ring_modulus_bounds(const RingSpec& spec, std::size_t mc_n, std::size_t n_curves,
                                         std::size_t pts_per_curve, std::size_t grid, std::size_t iterations,
                                         std::uint64_t seed) {
  ModulusBounds b;
  b.spec = spec;
  const UpperEstimate up = modulus_upper_explicit_estimate(spec, mc_n, seed);
  b.upper = up.value;
  b.upper_std_error = up.std_error;
  const LowerSolution lo =
      modulus_lower_detailed(ring_curve_family(spec, n_curves, pts_per_curve, seed), grid, iterations);
  b.lower = lo.lower;
  b.slack = lo.slack();
  b.grid_resolution = grid;
  b.curves_sampled = n_curves;
  return b;
}

}  // namespace heis
