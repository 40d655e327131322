#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "heis/domain.hpp"
#include "heis/errors.hpp"
#include "heis/metric.hpp"
#include "heis/parallel.hpp"
#include "heis/random.hpp"
#include "heis/sampling.hpp"

namespace heis {

/// Relative slack used by disjointness tests.
inline constexpr double kDisjointSlack = 1e-12;

inline bool balls_disjoint(const Ball& a, const Ball& b) {
  return dist(a.metric, a.center, b.center) - (a.radius + b.radius) > kDisjointSlack;
}

namespace detail {

inline std::uint64_t cell_key(long long i, long long j, long long k) noexcept {
  auto pack = [](long long v) { return static_cast<std::uint64_t>(v + (1LL << 20)) & ((1ULL << 21) - 1); };
  return (pack(i) << 42) | (pack(j) << 21) | pack(k);
}

/// Uniform hash grid over ball centers. Queries return every ball whose
/// center lies in the Euclidean box of B(p, reach); sub-Riemannian balls sit
/// inside the Korányi ball of the same radius so the box serves both.
class CenterGrid {
 public:
  CenterGrid(double hxy, double ht) : hxy_(hxy), ht_(ht) {}

  void insert(const Point& c, std::size_t id) {
    cells_[cell_key(idx(c.x, hxy_), idx(c.y, hxy_), idx(c.t, ht_))].push_back(id);
  }

  template <class Fn>
  void visit(const Point& p, double reach, double zmax, Fn&& fn) const {
    const double te = reach * reach + 2.0 * reach * std::max(zmax, horizontal_radius(p));
    const long long x0 = idx(p.x - reach, hxy_), x1 = idx(p.x + reach, hxy_);
    const long long y0 = idx(p.y - reach, hxy_), y1 = idx(p.y + reach, hxy_);
    const long long t0 = idx(p.t - te, ht_), t1 = idx(p.t + te, ht_);
    for (long long i = x0; i <= x1; ++i)
      for (long long j = y0; j <= y1; ++j)
        for (long long k = t0; k <= t1; ++k) {
          auto it = cells_.find(cell_key(i, j, k));
          if (it == cells_.end()) continue;
          for (std::size_t id : it->second) fn(id);
        }
  }

 private:
  static long long idx(double v, double h) { return static_cast<long long>(std::floor(v / h)); }
  double hxy_, ht_;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> cells_;
};

}  // namespace detail

/// Membership queries against a fixed ball family, each ball scaled by `scale`.
class BallIndex {
 public:
  BallIndex(const std::vector<Ball>& balls, double scale = 1.0) : balls_(&balls), scale_(scale) {
    std::map<int, std::vector<std::size_t>> levels;
    for (std::size_t i = 0; i < balls.size(); ++i) {
      int e = 0;
      std::frexp(balls[i].radius, &e);
      levels[e].push_back(i);
    }
    for (auto& [e, ids] : levels) {
      double rmax = 0.0, zmax = 0.0;
      for (std::size_t i : ids) {
        rmax = std::max(rmax, scale * balls[i].radius);
        zmax = std::max(zmax, horizontal_radius(balls[i].center));
      }
      Level lv{detail::CenterGrid(2.0 * rmax, 4.0 * rmax * rmax + 4.0 * rmax * zmax + 1e-300), rmax, zmax};
      for (std::size_t i : ids) lv.grid.insert(balls[i].center, i);
      levels_.push_back(std::move(lv));
    }
  }

  /// Indices of balls containing p, in increasing order.
  std::vector<std::size_t> containing(const Point& p) const {
    std::vector<std::size_t> out;
    for (const auto& lv : levels_) {
      lv.grid.visit(p, lv.rmax, lv.zmax, [&](std::size_t i) {
        const Ball& b = (*balls_)[i];
        if (dist(b.metric, p, b.center) < scale_ * b.radius) out.push_back(i);
      });
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  std::size_t multiplicity(const Point& p) const { return containing(p).size(); }

 private:
  struct Level {
    detail::CenterGrid grid;
    double rmax;
    double zmax;
  };
  const std::vector<Ball>* balls_;
  double scale_;
  std::vector<Level> levels_;
};

struct CoverCertificateEntry {
  std::size_t rejected;   // index into the input list
  std::size_t dominator;  // index into the selected list
};

struct GreedyCover {
  std::vector<Ball> selected;
  std::vector<std::size_t> selected_input;  // input index of each selection
  std::vector<CoverCertificateEntry> certificate;
  double factor = 3.0;
};

/// Greedy disjoint subfamily. Balls are visited by radius descending, ties by
/// lexicographic center; a ball is kept when it misses every kept ball.
inline GreedyCover greedy_disjoint_subcover(const std::vector<Ball>& balls, double factor) {
  if (factor != 3.0 && factor != 5.0) throw InvalidArgument("covering factor must be 3 or 5");
  GreedyCover out;
  out.factor = factor;
  if (balls.empty()) return out;
  const Metric m = balls.front().metric;
  for (const Ball& b : balls)
    if (b.metric != m) throw InvalidArgument("balls in one cover must share a metric");

  std::vector<std::size_t> order(balls.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const Ball &p = balls[a], &q = balls[b];
    if (p.radius != q.radius) return p.radius > q.radius;
    if (p.center.x != q.center.x) return p.center.x < q.center.x;
    if (p.center.y != q.center.y) return p.center.y < q.center.y;
    if (p.center.t != q.center.t) return p.center.t < q.center.t;
    return a < b;
  });

  const double rmax = balls[order.front()].radius;
  double zmax = 0.0;
  for (const Ball& b : balls) zmax = std::max(zmax, horizontal_radius(b.center));
  detail::CenterGrid grid(4.0 * rmax, 16.0 * rmax * rmax + 8.0 * rmax * zmax + 1e-300);

  for (std::size_t i : order) {
    const Ball& b = balls[i];
    std::size_t dom = SIZE_MAX;
    grid.visit(b.center, b.radius + rmax + kDisjointSlack, zmax, [&](std::size_t s) {
      if (s < dom && !balls_disjoint(b, out.selected[s])) dom = s;
    });
    if (dom == SIZE_MAX) {
      grid.insert(b.center, out.selected.size());
      out.selected.push_back(b);
      out.selected_input.push_back(i);
    } else {
      out.certificate.push_back({i, dom});
    }
  }
  return out;
}

struct WhitneyLayer {
  int k = 0;  // 2^(k-1) <= d < 2^k
  std::size_t candidates = 0;
  std::size_t selected = 0;
};

struct WhitneyDecomposition {
  std::vector<Ball> balls;      // emitted (5x enlarged) balls
  std::vector<double> depths;   // d(center, boundary) per ball
  std::vector<Ball> selected;   // pre-enlargement balls, disjoint within a layer
  std::vector<int> ball_layers; // dyadic layer per ball
  double lambda = 0.25;
  double c1 = 0.25 / 8;
  double c2 = 0.25 / 2.25;
  double collar = 0.0;
  Metric metric = Metric::Koranyi;
  std::size_t overlap_bound_observed = 0;
  std::size_t candidates = 0;
  std::vector<WhitneyLayer> layers;
  std::vector<int> skipped_layers;
  std::optional<Domain> domain;
};

namespace detail {

// Rotated R3 low-discrepancy sequence in the unit cube.
inline Point r3_point(std::uint64_t j, const Point& shift) noexcept {
  constexpr double g = 1.2207440846057594;  // real root of x^4 = x + 1
  constexpr double a1 = 1.0 / g, a2 = a1 / g, a3 = a2 / g;
  const double n = static_cast<double>(j + 1);
  auto frac = [](double v) { return v - std::floor(v); };
  return {frac(shift.x + n * a1), frac(shift.y + n * a2), frac(shift.t + n * a3)};
}

inline int dyadic_layer(double d) noexcept {
  int e = 0;
  std::frexp(d, &e);
  return e;
}

}  // namespace detail

/// Whitney-type decomposition of {x in dom : d(x, boundary) > collar}.
/// `grid` quasi-random candidates are spread over the domain's bounding box.
inline WhitneyDecomposition whitney(const Domain& dom, double lambda, double collar, std::size_t grid, Metric m,
                                    std::uint64_t seed) {
  if (!(lambda > 0.0 && lambda < 0.5)) throw InvalidArgument("lambda must lie in (0, 1/2)");
  if (!(collar > 0.0) || !std::isfinite(collar)) throw InvalidArgument("collar must be positive");
  if (grid == 0) throw InvalidArgument("grid must be positive");

  WhitneyDecomposition w;
  w.lambda = lambda;
  w.c1 = lambda / 8.0;
  w.c2 = lambda / (lambda + 2.0);
  w.collar = collar;
  w.metric = m;
  w.domain = dom;
  const double kappa = (w.c1 + w.c2) / 2.0;

  const BoundingBox bb = dom.bounding_box();
  Stream s(seed, "whitney", 0);
  const Point shift{s.uniform(), s.uniform(), s.uniform()};
  std::vector<Point> cand(grid);
  std::vector<double> depth(grid, -1.0);
  parallel_for(grid, [&](std::size_t j) {
    const Point u = detail::r3_point(j, shift);
    const Point p{bb.lo.x + u.x * (bb.hi.x - bb.lo.x), bb.lo.y + u.y * (bb.hi.y - bb.lo.y),
                  bb.lo.t + u.t * (bb.hi.t - bb.lo.t)};
    cand[j] = p;
    if (dom.contains(p) && dom.deeper_than(p, m, collar)) depth[j] = dom.boundary_distance(p, m);
  });

  std::map<int, std::vector<std::size_t>> layers;
  for (std::size_t j = 0; j < grid; ++j)
    if (depth[j] > collar) layers[detail::dyadic_layer(depth[j])].push_back(j);

  // Layers that meet {d > collar} inside the domain's depth range.
  const int k_lo = detail::dyadic_layer(collar);
  int k_hi = k_lo;
  if (!layers.empty()) k_hi = std::max(k_hi, layers.rbegin()->first);
  for (int k = k_lo; k <= k_hi; ++k)
    if (!layers.count(k)) w.skipped_layers.push_back(k);

  for (auto& [k, ids] : layers) {
    std::vector<Ball> balls;
    balls.reserve(ids.size());
    for (std::size_t j : ids) balls.emplace_back(cand[j], kappa * depth[j] / 5.0, m);
    const GreedyCover gc = greedy_disjoint_subcover(balls, 5.0);
    for (std::size_t i = 0; i < gc.selected.size(); ++i) {
      const double d = depth[ids[gc.selected_input[i]]];
      w.selected.push_back(gc.selected[i]);
      w.balls.emplace_back(gc.selected[i].center, kappa * d, m);
      w.depths.push_back(d);
      w.ball_layers.push_back(k);
    }
    w.layers.push_back({k, ids.size(), gc.selected.size()});
    w.candidates += ids.size();
  }
  return w;
}

/// Count of emitted balls violating c1 d <= r <= c2 d (no tolerance).
inline std::size_t whitney_property_violations(const WhitneyDecomposition& w) {
  std::size_t bad = 0;
  for (std::size_t i = 0; i < w.balls.size(); ++i) {
    const double d = w.depths[i], r = w.balls[i].radius;
    if (!(w.c1 * d <= r && r <= w.c2 * d)) ++bad;
  }
  return bad;
}

/// Pairs of pre-enlargement selections that fail the disjointness test. The
/// greedy pass runs per layer, so by default only same-layer pairs count.
inline std::size_t whitney_overlapping_pairs(const WhitneyDecomposition& w, bool across_layers = false) {
  std::size_t bad = 0;
  if (w.selected.empty()) return 0;
  double rmax = 0.0, zmax = 0.0;
  for (const Ball& b : w.selected) {
    rmax = std::max(rmax, b.radius);
    zmax = std::max(zmax, horizontal_radius(b.center));
  }
  detail::CenterGrid grid(2.0 * rmax, 4.0 * rmax * rmax + 4.0 * rmax * zmax + 1e-300);
  for (std::size_t i = 0; i < w.selected.size(); ++i) grid.insert(w.selected[i].center, i);
  for (std::size_t i = 0; i < w.selected.size(); ++i) {
    const Ball& b = w.selected[i];
    grid.visit(b.center, b.radius + rmax + kDisjointSlack, zmax, [&](std::size_t j) {
      if (j > i && (across_layers || w.ball_layers[i] == w.ball_layers[j]) && !balls_disjoint(b, w.selected[j])) ++bad;
    });
  }
  return bad;
}

struct CoverageReport {
  std::size_t probes = 0;
  std::size_t covered = 0;
  double fraction = 0.0;
};

/// Fraction of probe points with d > collar lying in some emitted ball.
inline CoverageReport whitney_coverage(const WhitneyDecomposition& w, const Domain& dom, std::size_t probes,
                                       std::uint64_t seed) {
  const std::vector<Point> pts = sample_interior(dom, probes, seed, w.collar, w.metric);
  const BallIndex idx(w.balls, 1.0);
  std::vector<unsigned char> hit(pts.size(), 0);
  parallel_for(pts.size(), [&](std::size_t i) { hit[i] = idx.multiplicity(pts[i]) > 0; });
  CoverageReport r;
  r.probes = pts.size();
  for (unsigned char h : hit) r.covered += h;
  r.fraction = r.probes ? static_cast<double>(r.covered) / static_cast<double>(r.probes) : 0.0;
  return r;
}

struct OverlapProfile {
  std::size_t max_multiplicity = 0;
  std::map<std::size_t, std::size_t> histogram;  // multiplicity -> probe count
};

/// Multiplicity of the doubled balls at probe points drawn uniformly from
/// {d > collar}. Probes outside every ball count with multiplicity 0.
inline OverlapProfile overlap_profile(const WhitneyDecomposition& w, std::size_t probes, std::uint64_t seed) {
  if (probes == 0) throw InvalidArgument("overlap_profile needs at least one probe");
  OverlapProfile out;
  if (!w.domain) throw InvalidArgument("decomposition carries no domain to probe");
  const std::vector<Point> pts = sample_interior(*w.domain, probes, seed, w.collar, w.metric);
  const BallIndex idx(w.balls, 2.0);
  std::vector<std::size_t> mult(pts.size(), 0);
  parallel_for(pts.size(), [&](std::size_t j) { mult[j] = idx.multiplicity(pts[j]); });
  for (std::size_t k : mult) {
    ++out.histogram[k];
    out.max_multiplicity = std::max(out.max_multiplicity, k);
  }
  return out;
}

inline nlohmann::json to_json(const WhitneyDecomposition& w) {
  nlohmann::json balls = nlohmann::json::array();
  for (const Ball& b : w.balls) balls.push_back({{"center", {b.center.x, b.center.y, b.center.t}}, {"radius", b.radius}});
  return {{"lambda", w.lambda}, {"balls", balls}, {"collar", w.collar}, {"metric", std::string(to_string(w.metric))}};
}

}  // namespace heis
