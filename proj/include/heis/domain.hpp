#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "heis/errors.hpp"
#include "heis/metric.hpp"
#include "heis/parallel.hpp"
#include "heis/point.hpp"
#include "heis/random.hpp"

namespace heis {

enum class DomainKind { KoranyiBall, PuncturedSpace, KoranyiAnnulus, Box };

/// Axis-aligned box in exponential coordinates.
struct BoundingBox {
  Point lo;
  Point hi;

  bool contains(const Point& p) const noexcept {
    return p.x > lo.x && p.x < hi.x && p.y > lo.y && p.y < hi.y && p.t > lo.t && p.t < hi.t;
  }
  double volume() const noexcept { return (hi.x - lo.x) * (hi.y - lo.y) * (hi.t - lo.t); }
};

/// Euclidean bounding box of the Korányi ball B(c, r).
inline BoundingBox koranyi_ball_bbox(const Point& c, double r) noexcept {
  const double tr = r * r + 2.0 * r * horizontal_radius(c);
  return {{c.x - r, c.y - r, c.t - tr}, {c.x + r, c.y + r, c.t + tr}};
}

namespace detail {

inline Point sphere_point(double radius, double alpha, double beta) noexcept {
  const Point u = unit_sphere_point(alpha, beta);
  const double r2 = radius * radius;
  return {radius * u.x, radius * u.y, r2 * u.t};
}

// Minimizes f from (a, b) with an initial simplex of size (ha, hb).
template <class F>
double nelder_mead_2d(const F& f, double a, double b, double ha, double hb, int max_evals = 600) {
  std::array<std::array<double, 3>, 3> s{{{a, b, 0.0}, {a + ha, b, 0.0}, {a, b + hb, 0.0}}};
  for (auto& v : s) v[2] = f(v[0], v[1]);
  int evals = 3;
  auto order = [&] { std::sort(s.begin(), s.end(), [](const auto& l, const auto& r) { return l[2] < r[2]; }); };
  order();
  while (evals < max_evals) {
    const double size = std::max({std::abs(s[1][0] - s[0][0]), std::abs(s[2][0] - s[0][0]),
                                  std::abs(s[1][1] - s[0][1]), std::abs(s[2][1] - s[0][1])});
    if (size < 1e-13 || s[2][2] - s[0][2] <= 1e-16 * std::abs(s[0][2])) break;
    const double ca = 0.5 * (s[0][0] + s[1][0]), cb = 0.5 * (s[0][1] + s[1][1]);
    auto point = [&](double k) {
      const double pa = ca + k * (s[2][0] - ca), pb = cb + k * (s[2][1] - cb);
      ++evals;
      return std::array<double, 3>{pa, pb, f(pa, pb)};
    };
    const auto r = point(-1.0);
    if (r[2] < s[0][2]) {
      const auto e = point(-2.0);
      s[2] = e[2] < r[2] ? e : r;
    } else if (r[2] < s[1][2]) {
      s[2] = r;
    } else {
      const auto c = r[2] < s[2][2] ? point(-0.5) : point(0.5);
      if (c[2] < std::min(r[2], s[2][2])) {
        s[2] = c;
      } else {
        for (int i = 1; i < 3; ++i) {
          s[i][0] = 0.5 * (s[0][0] + s[i][0]);
          s[i][1] = 0.5 * (s[0][1] + s[i][1]);
          s[i][2] = f(s[i][0], s[i][1]);
          ++evals;
        }
      }
    }
    order();
  }
  return s[0][2];
}

/// Minimum of dist(m, q, z) over z on the gauge sphere |z| = radius centered at
/// the origin. Coarse (alpha, beta) grid, three 7x7 refinement levels around
/// the best two seeds, then a Nelder-Mead polish.
inline double gauge_sphere_distance(Metric m, const Point& q, double radius) {
  constexpr double pi = std::numbers::pi;
  constexpr int na = 16;
  constexpr int nb = 24;
  auto f = [&](double a, double b) { return dist(m, q, sphere_point(radius, a, b)); };

  struct Cand {
    double v, a, b;
  };
  static const std::vector<Point> unit_grid = [] {
    std::vector<Point> g;
    for (int i = 0; i < na; ++i) {
      for (int j = 0; j < nb; ++j) g.push_back(unit_sphere_point(-pi / 2.0 + (i + 0.5) * pi / na, j * 2.0 * pi / nb));
    }
    return g;
  }();
  std::vector<Cand> cands;
  cands.reserve(na * nb + 3);
  const double r2 = radius * radius;
  for (int i = 0; i < na; ++i) {
    for (int j = 0; j < nb; ++j) {
      const Point& u = unit_grid[i * nb + j];
      cands.push_back({dist(m, q, {radius * u.x, radius * u.y, r2 * u.t}), -pi / 2.0 + (i + 0.5) * pi / na,
                       j * 2.0 * pi / nb});
    }
  }
  cands.push_back({f(pi / 2.0, 0.0), pi / 2.0, 0.0});
  cands.push_back({f(-pi / 2.0, 0.0), -pi / 2.0, 0.0});
  const double g = koranyi_norm(q);
  if (g > 0.0) {
    const double a = std::atan2(q.t, q.x * q.x + q.y * q.y);
    const double b = std::atan2(q.y, q.x);
    cands.push_back({f(a, b), a, b});
  }
  std::partial_sort(cands.begin(), cands.begin() + 2, cands.end(),
                    [](const Cand& l, const Cand& r) { return l.v < r.v; });

  double best = cands.front().v;
  for (int s = 0; s < 2; ++s) {
    Cand c = cands[s];
    double ha = pi / na;
    double hb = 2.0 * pi / nb;
    for (int level = 0; level < 3; ++level) {
      ha /= 3.0;
      hb /= 3.0;
      Cand center = c;
      for (int i = -3; i <= 3; ++i) {
        const double a = std::clamp(center.a + i * ha, -pi / 2.0, pi / 2.0);
        for (int j = -3; j <= 3; ++j) {
          const double b = center.b + j * hb;
          const double v = f(a, b);
          if (v < c.v) c = {v, a, b};
        }
      }
    }
    const auto polished = nelder_mead_2d(
        [&](double a, double b) { return f(std::clamp(a, -pi / 2.0, pi / 2.0), b); }, c.a, c.b, ha, hb);
    c.v = std::min(c.v, polished);
    best = std::min(best, c.v);
  }
  return best;
}

// Largest vertical excursion max (c + 2 rho w) over the metric ball of radius r
// at the origin, where w is the horizontal radius of the ball's center.
inline double vertical_extent(Metric m, double r, double w) {
  if (m == Metric::Koranyi) {
    // max over rho in [0, r] of sqrt(r^4 - rho^4) + 2 rho w; the optimum solves
    // s^3 + w^2 s^2 - w^2 r^4 = 0 with s = rho^2.
    if (w == 0.0) return r * r;
    const double r4 = r * r * r * r;
    double lo = 0.0;
    double hi = r * r;
    for (int it = 0; it < 200 && hi - lo > 1e-17 * r * r; ++it) {
      const double s = 0.5 * (lo + hi);
      (s * s * s + w * w * s * s - w * w * r4 > 0.0 ? hi : lo) = s;
    }
    const double s = 0.5 * (lo + hi);
    const double rho = std::sqrt(s);
    return std::sqrt(std::max(0.0, r4 - s * s)) + 2.0 * rho * w;
  }
  // Sub-Riemannian sphere of radius r: geodesics with half-angle phi in [0, pi]
  // reach |z| = r sin(phi)/phi and |t| = r^2 (phi - sin(phi)cos(phi))/phi^2.
  constexpr double pi = std::numbers::pi;
  auto h = [&](double phi) {
    if (phi < 1e-8) return 2.0 * w * r;
    const double s = std::sin(phi);
    return r * r * (phi - s * std::cos(phi)) / (phi * phi) + 2.0 * w * r * s / phi;
  };
  constexpr int n = 64;
  int best_i = 0;
  double best = h(0.0);
  for (int i = 1; i <= n; ++i) {
    const double v = h(pi * i / n);
    if (v > best) {
      best = v;
      best_i = i;
    }
  }
  double a = pi * std::max(0, best_i - 1) / n;
  double b = pi * std::min(n, best_i + 1) / n;
  const double inv_phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = b - inv_phi * (b - a);
  double x2 = a + inv_phi * (b - a);
  double f1 = h(x1);
  double f2 = h(x2);
  for (int it = 0; it < 90; ++it) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = h(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = h(x1);
    }
  }
  return std::max({best, f1, f2});
}

}  // namespace detail

/// Open connected region with membership and boundary-distance oracles.
class Domain {
 public:
  static Domain koranyi_ball(Point center, double radius) {
    if (!(radius > 0.0) || !std::isfinite(radius)) throw InvalidArgument("ball radius must be positive");
    Domain d(DomainKind::KoranyiBall);
    d.center_ = center;
    d.r_out_ = radius;
    d.tolerance_ = 1e-6 * radius;
    return d;
  }

  /// H^1 minus one point. Sampling draws from the shell |puncture^{-1} p| < window.
  static Domain punctured(Point puncture, double window = 2.0) {
    if (!(window > 0.0)) throw InvalidArgument("sampling window must be positive");
    Domain d(DomainKind::PuncturedSpace);
    d.center_ = puncture;
    d.r_out_ = window;
    d.tolerance_ = 0.0;
    return d;
  }

  static Domain koranyi_annulus(Point center, double r_in, double r_out) {
    if (!(r_in > 0.0) || !(r_out > r_in) || !std::isfinite(r_out)) {
      throw InvalidArgument("annulus needs 0 < r_in < r_out");
    }
    Domain d(DomainKind::KoranyiAnnulus);
    d.center_ = center;
    d.r_in_ = r_in;
    d.r_out_ = r_out;
    d.tolerance_ = 1e-6 * r_in;
    return d;
  }

  static Domain box(Point lo, Point hi) {
    if (!(lo.x < hi.x && lo.y < hi.y && lo.t < hi.t) || !lo.finite() || !hi.finite()) {
      throw InvalidArgument("box needs lo < hi in every coordinate");
    }
    Domain d(DomainKind::Box);
    d.lo_ = lo;
    d.hi_ = hi;
    d.tolerance_ = 1e-12 * std::max({hi.x - lo.x, hi.y - lo.y, hi.t - lo.t});
    return d;
  }

  DomainKind kind() const noexcept { return kind_; }
  const Point& center() const noexcept { return center_; }
  double inner_radius() const noexcept { return r_in_; }
  double outer_radius() const noexcept { return r_out_; }
  const Point& lo() const noexcept { return lo_; }
  const Point& hi() const noexcept { return hi_; }
  double boundary_tolerance() const noexcept { return tolerance_; }

  std::string name() const {
    switch (kind_) {
      case DomainKind::KoranyiBall: return "KoranyiBall";
      case DomainKind::PuncturedSpace: return "PuncturedSpace";
      case DomainKind::KoranyiAnnulus: return "KoranyiAnnulus";
      case DomainKind::Box: return "Box";
    }
    return "?";
  }

  std::string describe() const {
    std::ostringstream os;
    os.precision(17);
    switch (kind_) {
      case DomainKind::KoranyiBall: os << "KoranyiBall(center=" << center_ << ", radius=" << r_out_ << ')'; break;
      case DomainKind::PuncturedSpace: os << "PuncturedSpace(puncture=" << center_ << ')'; break;
      case DomainKind::KoranyiAnnulus:
        os << "KoranyiAnnulus(center=" << center_ << ", r_in=" << r_in_ << ", r_out=" << r_out_ << ')';
        break;
      case DomainKind::Box: os << "Box(lo=" << lo_ << ", hi=" << hi_ << ')'; break;
    }
    return os.str();
  }

  bool bounded() const noexcept { return kind_ != DomainKind::PuncturedSpace; }

  bool contains(const Point& p) const noexcept {
    if (!p.finite()) return false;
    switch (kind_) {
      case DomainKind::KoranyiBall: return koranyi_dist(p, center_) < r_out_;
      case DomainKind::PuncturedSpace: return !(p == center_);
      case DomainKind::KoranyiAnnulus: {
        const double g = koranyi_dist(p, center_);
        return g > r_in_ && g < r_out_;
      }
      case DomainKind::Box: return BoundingBox{lo_, hi_}.contains(p);
    }
    return false;
  }

  /// d(p, boundary) in metric m.
  double boundary_distance(const Point& p, Metric m) const {
    if (!contains(p)) {
      std::ostringstream os;
      os << "point " << p << " is not inside " << describe();
      throw InvalidArgument(os.str());
    }
    switch (kind_) {
      case DomainKind::PuncturedSpace: return dist(m, p, center_);
      case DomainKind::KoranyiBall: {
        const Point q = group_inv(center_) * p;
        return std::max(detail::gauge_sphere_distance(m, q, r_out_), r_out_ - koranyi_norm(q));
      }
      case DomainKind::KoranyiAnnulus: {
        const Point q = group_inv(center_) * p;
        const double g = koranyi_norm(q);
        const double outer = std::max(detail::gauge_sphere_distance(m, q, r_out_), r_out_ - g);
        const double inner = std::max(detail::gauge_sphere_distance(m, q, r_in_), g - r_in_);
        return std::min(outer, inner);
      }
      case DomainKind::Box: return box_distance(p, m);
    }
    return 0.0;
  }

  /// Equivalent to boundary_distance(p, m) > threshold, with cheap bracketing
  /// shortcuts for the gauge-sphere cases.
  bool deeper_than(const Point& p, Metric m, double threshold) const {
    if (!contains(p)) return false;
    if (threshold < 0.0) return true;
    if (kind_ == DomainKind::Box) {
      // B(p, r) lies in the Korányi ball, whose t-extent is r^2 + 2|z| r
      const double mh = std::min({p.x - lo_.x, hi_.x - p.x, p.y - lo_.y, hi_.y - p.y});
      const double mt = std::min(p.t - lo_.t, hi_.t - p.t);
      const double r = threshold * (1 + 1e-9) + 1e-300;
      if (mh > r && mt > r * r + 2.0 * std::hypot(p.x, p.y) * r) return true;
    }
    if (kind_ == DomainKind::KoranyiBall || kind_ == DomainKind::KoranyiAnnulus) {
      const Point q = group_inv(center_) * p;
      const double g = koranyi_norm(q);
      double lower = r_out_ - g;
      if (kind_ == DomainKind::KoranyiAnnulus) lower = std::min(lower, g - r_in_);
      if (lower > threshold) return true;
      if (g > 0.0) {
        const double d_out = dist(m, q, dilate(r_out_ / g, q));
        if (d_out <= threshold) return false;
        if (kind_ == DomainKind::KoranyiAnnulus && dist(m, q, dilate(r_in_ / g, q)) <= threshold) return false;
      }
    }
    return boundary_distance(p, m) > threshold;
  }

  /// Euclidean box enclosing the sampling region.
  BoundingBox bounding_box() const noexcept {
    if (kind_ == DomainKind::Box) return {lo_, hi_};
    return koranyi_ball_bbox(center_, r_out_);
  }

  /// Haar volume of the sampling region (window shell for PuncturedSpace).
  double sampling_volume() const {
    switch (kind_) {
      case DomainKind::KoranyiBall:
      case DomainKind::PuncturedSpace: return koranyi_ball_volume(r_out_);
      case DomainKind::KoranyiAnnulus: return koranyi_ball_volume(r_out_) - koranyi_ball_volume(r_in_);
      case DomainKind::Box: return BoundingBox{lo_, hi_}.volume();
    }
    return 0.0;
  }

  /// Uniform proposal from the sampling region, one per stream.
  Point propose(Stream& s) const {
    if (kind_ == DomainKind::Box) {
      return {s.uniform(lo_.x, hi_.x), s.uniform(lo_.y, hi_.y), s.uniform(lo_.t, hi_.t)};
    }
    for (;;) {
      const Point u{s.uniform(-1.0, 1.0), s.uniform(-1.0, 1.0), s.uniform(-1.0, 1.0)};
      const double g = koranyi_norm(u);
      if (g >= 1.0) continue;
      if (kind_ == DomainKind::KoranyiAnnulus && g * r_out_ <= r_in_) continue;
      if (g == 0.0) continue;
      return center_ * dilate(r_out_, u);
    }
  }

 private:
  explicit Domain(DomainKind k) : kind_(k) {}

  double box_distance(const Point& p, Metric m) const {
    // Largest r with p * B(0, r) inside the box: coordinate projections of the
    // translated ball must fit in each interval.
    const double mx = std::min(p.x - lo_.x, hi_.x - p.x);
    const double my = std::min(p.y - lo_.y, hi_.y - p.y);
    const double mt = std::min(p.t - lo_.t, hi_.t - p.t);
    const double w = horizontal_radius(p);
    double hi = std::min(mx, my);
    if (detail::vertical_extent(m, hi, w) <= mt) return hi;
    double lo = 0.0;
    for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
      const double r = 0.5 * (lo + hi);
      (detail::vertical_extent(m, r, w) > mt ? hi : lo) = r;
    }
    return lo;
  }

  DomainKind kind_;
  Point center_{};
  double r_in_ = 0.0;
  double r_out_ = 0.0;
  Point lo_{};
  Point hi_{};
  double tolerance_ = 0.0;
};

/// n points of dom with boundary distance above collar, uniform on that set.
/// Candidate j is drawn from stream (seed, "sample_interior", j) and the first
/// n accepted candidates in index order are returned.
inline std::vector<Point> sample_interior(const Domain& dom, std::size_t n, std::uint64_t seed, double collar = 0.0,
                                          Metric m = Metric::Koranyi) {
  if (n == 0) throw InvalidArgument("sample count must be at least 1");
  if (!(collar >= 0.0)) throw InvalidArgument("collar must be nonnegative");
  {
    // No metric ball of radius r fits unless r is below these sizes.
    const double scale = m == Metric::Koranyi ? 1.0 : std::sqrt(std::numbers::pi);
    double depth_bound = std::numeric_limits<double>::infinity();
    if (dom.kind() == DomainKind::KoranyiBall || dom.kind() == DomainKind::KoranyiAnnulus) {
      depth_bound = scale * dom.outer_radius();
    } else if (dom.kind() == DomainKind::Box) {
      depth_bound = 0.5 * std::min(dom.hi().x - dom.lo().x, dom.hi().y - dom.lo().y);
    }
    if (collar >= depth_bound) {
      std::ostringstream os;
      os << "collar " << collar << " leaves no interior points in " << dom.describe();
      throw SamplingFailure(os.str());
    }
  }
  std::vector<Point> out;
  out.reserve(n);
  std::size_t tried = 0;
  std::size_t batch = std::max<std::size_t>(256, 2 * n);
  while (out.size() < n) {
    std::vector<Point> pts(batch);
    std::vector<char> ok(batch);
    const std::size_t base = tried;
    parallel_for(batch, [&](std::size_t i) {
      Stream s(seed, "sample_interior", base + i);
      pts[i] = dom.propose(s);
      ok[i] = dom.deeper_than(pts[i], m, collar);
    });
    for (std::size_t i = 0; i < batch && out.size() < n; ++i) {
      if (ok[i]) out.push_back(pts[i]);
    }
    tried += batch;
    if (tried >= 1000000 && static_cast<double>(out.size()) < 1e-6 * static_cast<double>(tried)) {
      std::ostringstream os;
      os << "rejection sampling in " << dom.describe() << " with collar " << collar << " accepted " << out.size()
         << " of " << tried << " proposals";
      throw SamplingFailure(os.str());
    }
    batch = std::min<std::size_t>(batch * 2, 1 << 20);
  }
  return out;
}

}  // namespace heis
