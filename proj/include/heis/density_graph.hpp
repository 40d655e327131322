#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <queue>
#include <vector>

#include "heis/domain.hpp"
#include "heis/errors.hpp"
#include "heis/metric.hpp"
#include "heis/parallel.hpp"
#include "heis/random.hpp"
#include "heis/sampling.hpp"

namespace heis {

/// Graph approximation of the length metric weighted by rho. Nodes form the
/// left-translated lattice g * L, L = {(i h, j h, 2 h^2 k)}, which is closed
/// under the group law. A node p is joined to p * m for every lattice move m
/// with d_s(0, m) <= reach * h, weighted by rho(midpoint) * d_s(0, m). Edges
/// are generated on demand.
class DensityMetricGraph {
 public:
  struct Edge {
    std::size_t to;
    double weight;
  };

  DensityMetricGraph(Domain dom, ScalarField rho, double resolution, double collar, std::uint64_t seed,
                     double reach = 4.0, double attach_reach = 3.0)
      : dom_(std::move(dom)), rho_(std::move(rho)), h_(resolution), collar_(collar), attach_(attach_reach) {
    if (!(h_ > 0.0) || !std::isfinite(h_)) throw InvalidArgument("graph resolution must be positive");
    if (!(collar_ >= 0.0)) throw InvalidArgument("collar must be nonnegative");
    if (!dom_.bounded() && dom_.kind() != DomainKind::PuncturedSpace)
      throw InvalidArgument("density graph needs a bounded domain");
    Stream s(seed, "density_graph", 0);
    shift_ = {s.uniform(0, h_), s.uniform(0, h_), s.uniform(0, 2 * h_ * h_)};
    if (!(reach >= 1.0)) throw InvalidArgument("stencil reach must be at least one resolution");
    if (!(attach_ >= 1.0)) throw InvalidArgument("attachment reach must be at least one resolution");
    const int ra = static_cast<int>(std::floor(reach));
    const int rc = static_cast<int>(std::ceil(reach * reach / (2.0 * std::numbers::pi)));
    for (int a = -ra; a <= ra; ++a)
      for (int b = -ra; b <= ra; ++b)
        for (int c = -rc; c <= rc; ++c) {
          if (!a && !b && !c) continue;
          const Point m{a * h_, b * h_, 2.0 * h_ * h_ * c};
          const double len = subriemannian_norm(m);
          if (len <= reach * h_ * (1 + 1e-12)) moves_.push_back({a, b, c, len, group_lerp(Point{}, m, 0.5)});
        }

    // Lattice index ranges covering g^-1 (bounding box).
    const BoundingBox bb = dom_.bounding_box();
    const Point ginv = group_inv(shift_);
    double lo[3] = {1e300, 1e300, 1e300}, hi[3] = {-1e300, -1e300, -1e300};
    for (int c = 0; c < 8; ++c) {
      const Point q{c & 1 ? bb.hi.x : bb.lo.x, c & 2 ? bb.hi.y : bb.lo.y, c & 4 ? bb.hi.t : bb.lo.t};
      const Point l = ginv * q;
      lo[0] = std::min(lo[0], l.x), hi[0] = std::max(hi[0], l.x);
      lo[1] = std::min(lo[1], l.y), hi[1] = std::max(hi[1], l.y);
      lo[2] = std::min(lo[2], l.t), hi[2] = std::max(hi[2], l.t);
    }
    const double ht = 2 * h_ * h_;
    i0_ = static_cast<long>(std::floor(lo[0] / h_)), ni_ = static_cast<long>(std::ceil(hi[0] / h_)) - i0_ + 1;
    j0_ = static_cast<long>(std::floor(lo[1] / h_)), nj_ = static_cast<long>(std::ceil(hi[1] / h_)) - j0_ + 1;
    k0_ = static_cast<long>(std::floor(lo[2] / ht)), nk_ = static_cast<long>(std::ceil(hi[2] / ht)) - k0_ + 1;
    const double cells = static_cast<double>(ni_) * static_cast<double>(nj_) * static_cast<double>(nk_);
    if (cells > 4e8) throw ConfigurationError("density graph resolution too fine for the domain");

    const std::size_t n = static_cast<std::size_t>(cells);
    id_.assign(n, kNone);
    std::vector<unsigned char> active(n, 0);
    parallel_for(n, [&](std::size_t c) {
      const Point p = lattice_point(c);
      active[c] = dom_.contains(p) && (collar_ == 0.0 || dom_.deeper_than(p, Metric::SubRiemannian, collar_));
    });
    for (std::size_t c = 0; c < n; ++c) {
      if (!active[c]) continue;
      id_[c] = nodes_.size();
      cell_.push_back(c);
      nodes_.push_back(lattice_point(c));
    }
    if (nodes_.empty()) throw ConfigurationError("density graph has no nodes; refine the resolution");
    std::vector<double> rv(nodes_.size());
    parallel_for(nodes_.size(), [&](std::size_t i) { rv[i] = rho_(nodes_[i]); });
    for (double v : rv)
      if (!(v > 0.0) || !std::isfinite(v)) throw DomainError("density must be positive and finite on the nodes");
    if (components() != 1)
      throw ConfigurationError("density graph is disconnected; use a finer resolution or a smaller collar");
  }

  const Domain& domain() const noexcept { return dom_; }
  const ScalarField& rho() const noexcept { return rho_; }
  double resolution() const noexcept { return h_; }
  double collar() const noexcept { return collar_; }
  const std::vector<Point>& nodes() const noexcept { return nodes_; }
  std::size_t stencil_size() const noexcept { return moves_.size(); }

  /// Outgoing edges of node u, weight rho(midpoint) * d(u, v).
  template <class Fn>
  void for_each_edge(std::size_t u, Fn&& fn) const {
    const std::size_t c = cell_[u];
    const long cc = static_cast<long>(c);
    const long i = cc / (nj_ * nk_) + i0_, j = (cc / nk_) % nj_ + j0_, k = cc % nk_ + k0_;
    for (const Move& m : moves_) {
      const std::size_t v = node_at(i + m.a, j + m.b, k + m.c + m.a * j - m.b * i);
      if (v == kNone) continue;
      fn(Edge{v, rho_(nodes_[u] * m.mid) * m.length});
    }
  }

  std::size_t edge_count() const {
    std::size_t n = 0;
    for (std::size_t u = 0; u < nodes_.size(); ++u) for_each_edge(u, [&](const Edge&) { ++n; });
    return n / 2;
  }

  /// Active nodes within sub-Riemannian distance attach_reach * h of p (at
  /// least the nearest lattice cell), with the weighted leg length to each.
  std::vector<Edge> attachments(const Point& p) const {
    std::vector<Edge> out;
    const double rp = rho_(p);
    for_each_candidate(p, [&](std::size_t v, double) {
      const double ds = dist(Metric::SubRiemannian, p, nodes_[v]);
      if (ds <= attach_ * h_) out.push_back({v, 0.5 * (rp + rho_(nodes_[v])) * ds});
    });
    if (out.empty()) {
      for_each_candidate(p, [&](std::size_t v, double) {
        out.push_back({v, 0.5 * (rp + rho_(nodes_[v])) * dist(Metric::SubRiemannian, p, nodes_[v])});
      });
    }
    return out;
  }

  /// Cheap bracket of distance_to: Korányi legs bound the sub-Riemannian
  /// ones from both sides, d_H <= d_s <= sqrt(pi) d_H.
  std::pair<double, double> distance_bracket(const std::vector<double>& table, const Point& q) const {
    double lo = std::numeric_limits<double>::infinity(), hi = lo;
    const double rq = rho_(q);
    for_each_candidate(q, [&](std::size_t v, double dh) {
      const double rv = rho_(nodes_[v]);
      const double w = 0.5 * (rq + rv);
      lo = std::min(lo, table[v] + w * dh);
      if (std::sqrt(std::numbers::pi) * dh <= attach_ * h_) hi = std::min(hi, table[v] + w * std::sqrt(std::numbers::pi) * dh);
    });
    return {lo, hi};
  }

  /// Nearest attached node in the Korányi gauge, or npos.
  std::size_t nearest_node(const Point& p) const {
    std::size_t best = kNone;
    double bd = std::numeric_limits<double>::infinity();
    for (const Edge& e : attachments(p)) {
      const double d = koranyi_dist(p, nodes_[e.to]);
      if (d < bd) bd = d, best = e.to;
    }
    return best;
  }

  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

  /// Shortest paths from a set of (node, initial cost) sources.
  std::vector<double> distances_from(const std::vector<Edge>& sources) const {
    std::vector<double> dist(nodes_.size(), std::numeric_limits<double>::infinity());
    using Item = std::pair<double, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    for (const Edge& e : sources) {
      if (e.weight < dist[e.to]) {
        dist[e.to] = e.weight;
        pq.push({e.weight, e.to});
      }
    }
    while (!pq.empty()) {
      const auto [d, u] = pq.top();
      pq.pop();
      if (d > dist[u]) continue;
      for_each_edge(u, [&](const Edge& e) {
        const double nd = d + e.weight;
        if (nd < dist[e.to]) {
          dist[e.to] = nd;
          pq.push({nd, e.to});
        }
      });
    }
    return dist;
  }

  std::vector<double> distances_from(std::size_t s) const { return distances_from(std::vector<Edge>{{s, 0.0}}); }

  /// Distance table from an arbitrary point, entering the lattice through
  /// its neighborhood.
  std::vector<double> distances_from(const Point& p) const {
    const auto src = attachments(p);
    if (src.empty()) throw InvalidArgument("source point is not resolved by the graph");
    return distances_from(src);
  }

  /// d_rho(p, q) read off a distance table computed from p.
  double distance_to(const std::vector<double>& table, const Point& q) const {
    double best = std::numeric_limits<double>::infinity();
    for (const Edge& e : attachments(q)) best = std::min(best, table[e.to] + e.weight);
    return best;
  }

  double distance(const Point& p, const Point& q) const { return distance_to(distances_from(p), q); }

 private:
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

  // Active nodes in the lattice box around p that can lie within
  // attach_reach * h, with their Korányi distance to p.
  template <class Fn>
  void for_each_candidate(const Point& p, Fn&& fn) const {
    const Point l = group_inv(shift_) * p;
    const long i = std::lround(l.x / h_), j = std::lround(l.y / h_);
    const long ra = static_cast<long>(std::ceil(attach_)) + 1;
    const double ht = 2 * h_ * h_;
    const double R = attach_ * h_, R4 = R * R * R * R;
    for (long ii = i - ra; ii <= i + ra; ++ii)
      for (long jj = j - ra; jj <= j + ra; ++jj) {
        const double zx = ii * h_ - l.x, zy = jj * h_ - l.y;
        const double z2 = zx * zx + zy * zy;
        if (z2 * z2 > R4) continue;
        const double tr = std::sqrt(R4 - z2 * z2);
        const double tc = l.t + 2.0 * ii * h_ * l.y - 2.0 * jj * h_ * l.x;
        const long k1 = static_cast<long>(std::ceil((tc - tr) / ht)), k2 = static_cast<long>(std::floor((tc + tr) / ht));
        for (long k = k1; k <= k2; ++k) {
          const std::size_t v = node_at(ii, jj, k);
          if (v == kNone) continue;
          fn(v, koranyi_dist(p, nodes_[v]));
        }
      }
  }

  Point lattice_point(std::size_t c) const {
    const long cc = static_cast<long>(c);
    const long i = cc / (nj_ * nk_) + i0_, j = (cc / nk_) % nj_ + j0_, k = cc % nk_ + k0_;
    return shift_ * Point{i * h_, j * h_, 2.0 * h_ * h_ * static_cast<double>(k)};
  }

  std::size_t node_at(long i, long j, long k) const {
    if (i < i0_ || j < j0_ || k < k0_ || i >= i0_ + ni_ || j >= j0_ + nj_ || k >= k0_ + nk_) return kNone;
    return id_[static_cast<std::size_t>(((i - i0_) * nj_ + (j - j0_)) * nk_ + (k - k0_))];
  }

  std::size_t components() const {
    std::vector<unsigned char> seen(nodes_.size(), 0);
    std::size_t comps = 0;
    std::vector<std::size_t> stack;
    for (std::size_t s = 0; s < nodes_.size(); ++s) {
      if (seen[s]) continue;
      ++comps;
      seen[s] = 1;
      stack.push_back(s);
      while (!stack.empty()) {
        const std::size_t u = stack.back();
        stack.pop_back();
        for_each_edge(u, [&](const Edge& e) {
          if (!seen[e.to]) seen[e.to] = 1, stack.push_back(e.to);
        });
      }
    }
    return comps;
  }

  Domain dom_;
  ScalarField rho_;
  double h_;
  double collar_;
  double attach_ = 3.0;
  Point shift_{};
  struct Move {
    long a, b, c;
    double length;
    Point mid;
  };
  std::vector<Move> moves_;
  long i0_ = 0, j0_ = 0, k0_ = 0;
  long ni_ = 0, nj_ = 0, nk_ = 0;
  std::vector<std::size_t> id_;
  std::vector<std::size_t> cell_;
  std::vector<Point> nodes_;
};

inline DensityMetricGraph density_graph_build(const Domain& dom, const ScalarField& rho, double resolution,
                                              double collar, std::uint64_t seed, double reach = 4.0,
                                              double attach_reach = 3.0) {
  return DensityMetricGraph(dom, rho, resolution, collar, seed, reach, attach_reach);
}

struct AhlforsRadius {
  double r = 0.0;
  double mu = 0.0;
  double std_error = 0.0;
};

struct AhlforsReport {
  std::vector<AhlforsRadius> radii;
  double loglog_slope = 0.0;
  double upper_constant = 0.0;  // max mu / r^4
  double lower_constant = 0.0;  // min mu / r^4
};

/// mu_rho(B_rho(x, r)) = integral of rho^4 over {y : d_rho(x, y) < r}, by
/// Monte-Carlo over the domain with graph-distance membership.
inline AhlforsReport ahlfors_audit(const DensityMetricGraph& g, const Point& x, const std::vector<double>& radii,
                                   std::size_t mc_n, std::uint64_t seed) {
  if (radii.size() < 2) throw InvalidArgument("ahlfors_audit needs at least two radii");
  for (double r : radii)
    if (!(r >= 3.0 * g.resolution() * (1.0 - 1e-12))) throw InvalidArgument("ahlfors radius below three graph resolutions");
  if (mc_n < 2) throw InvalidArgument("ahlfors_audit needs mc_n >= 2");
  const auto table = g.distances_from(x);
  const auto pts = sample_interior(g.domain(), mc_n, seed);
  std::vector<double> dist(pts.size()), w(pts.size());
  const double rmax = *std::max_element(radii.begin(), radii.end());
  parallel_for(pts.size(), [&](std::size_t i) {
    // exact legs only when some radius falls inside the cheap bracket
    const auto [lo, hi] = g.distance_bracket(table, pts[i]);
    bool decided = lo >= rmax;
    if (!decided && hi < std::numeric_limits<double>::infinity()) {
      decided = true;
      for (double r : radii) decided = decided && !(lo < r && r <= hi);
    }
    dist[i] = decided ? hi : g.distance_to(table, pts[i]);
    if (lo >= rmax) dist[i] = lo;
    const double r = g.rho()(pts[i]);
    w[i] = r * r * r * r;
  });
  const double vol = g.domain().sampling_volume();
  AhlforsReport out;
  std::vector<double> lx, ly;
  for (double r : radii) {
    std::vector<double> f(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) f[i] = dist[i] < r ? w[i] : 0.0;
    const auto m = detail::summarize(f, seed);
    AhlforsRadius rec{r, vol * m.value, vol * m.std_error};
    out.radii.push_back(rec);
    if (rec.mu > 0.0) {
      lx.push_back(std::log(r));
      ly.push_back(std::log(rec.mu));
    }
    const double c = rec.mu / (r * r * r * r);
    out.upper_constant = out.radii.size() == 1 ? c : std::max(out.upper_constant, c);
    out.lower_constant = out.radii.size() == 1 ? c : std::min(out.lower_constant, c);
  }
  if (lx.size() >= 2) {
    const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / lx.size();
    const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / ly.size();
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) sxy += (lx[i] - mx) * (ly[i] - my), sxx += (lx[i] - mx) * (lx[i] - mx);
    out.loglog_slope = sxy / sxx;
  } else {
    out.loglog_slope = std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

}  // namespace heis
