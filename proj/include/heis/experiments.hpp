#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "heis/covering.hpp"
#include "heis/density_graph.hpp"
#include "heis/domain.hpp"
#include "heis/errors.hpp"
#include "heis/maps.hpp"
#include "heis/metric.hpp"
#include "heis/parallel.hpp"
#include "heis/random.hpp"
#include "heis/sampling.hpp"

namespace heis {

namespace detail {

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t i) {
  return Stream(seed, tag, i).next_u64();
}

// Point of the metric sphere S(center, r) in the direction of the gauge
// sphere point (alpha, beta).
inline Point metric_sphere_point(const Point& center, double r, Metric m, double alpha, double beta) {
  Point u = unit_sphere_point(alpha, beta);
  if (m == Metric::SubRiemannian) u = dilate(1.0 / subriemannian_norm(u), u);
  return center * dilate(r, u);
}

// Gauge-sphere angles for draw i: even draws uniform in sin(alpha) (the
// equator), odd draws uniform in |z|^2 = cos(alpha) (the caps).
inline std::pair<double, double> sphere_angles(Stream& s, std::size_t i) {
  const double beta = s.uniform(0.0, 2.0 * std::numbers::pi);
  if (i % 2 == 0) return {std::asin(s.uniform(-1.0, 1.0)), beta};
  const double a = std::acos(s.uniform());
  return {s.uniform() < 0.5 ? a : -a, beta};
}

inline double max_pairwise(const std::vector<Point>& pts, Metric m) {
  std::vector<double> row(pts.size(), 0.0);
  parallel_for(pts.size(), [&](std::size_t i) {
    double best = 0.0;
    for (std::size_t j = i + 1; j < pts.size(); ++j) best = std::max(best, dist(m, pts[i], pts[j]));
    row[i] = best;
  });
  return pts.empty() ? 0.0 : *std::max_element(row.begin(), row.end());
}

}  // namespace detail

/// f(dom) as a catalog domain, when the pair is one the library maps exactly.
inline std::optional<Domain> exact_image(const SmoothMap& f, const Domain& dom) {
  const MapKind k = f.kind();
  if (k == MapKind::Composition) {
    std::optional<Domain> d = dom;
    const auto& parts = f.parts();
    for (auto it = parts.rbegin(); it != parts.rend() && d; ++it) d = exact_image(*it, *d);
    return d;
  }
  const double a = f.parameter();
  switch (dom.kind()) {
    case DomainKind::PuncturedSpace: {
      // any global bijection moves the puncture; the inversion fixes the origin only
      if (k == MapKind::UserDSL) return std::nullopt;
      const double w = k == MapKind::Dilation ? a * dom.outer_radius() : dom.outer_radius();
      if (k == MapKind::KoranyiInversion) {
        if (!(dom.center() == Point{})) return std::nullopt;
        return Domain::punctured(Point{}, w);
      }
      return Domain::punctured(f.apply(dom.center()), w);
    }
    case DomainKind::KoranyiBall:
    case DomainKind::KoranyiAnnulus: {
      const bool annulus = dom.kind() == DomainKind::KoranyiAnnulus;
      double s = 1.0;
      Point c;
      if (k == MapKind::LeftTranslation || k == MapKind::Rotation) {
        c = f.apply(dom.center());
      } else if (k == MapKind::Dilation) {
        c = f.apply(dom.center()), s = a;
      } else if (k == MapKind::KoranyiInversion && annulus && dom.center() == Point{}) {
        return Domain::koranyi_annulus(Point{}, 1.0 / dom.outer_radius(), 1.0 / dom.inner_radius());
      } else {
        return std::nullopt;
      }
      if (annulus) return Domain::koranyi_annulus(c, s * dom.inner_radius(), s * dom.outer_radius());
      return Domain::koranyi_ball(c, s * dom.outer_radius());
    }
    case DomainKind::Box: {
      const Point lo = dom.lo(), hi = dom.hi();
      if (k == MapKind::Dilation) return Domain::box(f.apply(lo), f.apply(hi));
      if (k == MapKind::HorizontalStretch) return Domain::box(f.apply(lo), f.apply(hi));
      if (k == MapKind::LeftTranslation && f.translation().x == 0.0 && f.translation().y == 0.0)
        return Domain::box(f.apply(lo), f.apply(hi));
      return std::nullopt;
    }
  }
  return std::nullopt;
}

/// Points on the boundary of dom: gauge spheres by angle, box faces by area.
inline std::vector<Point> boundary_samples(const Domain& dom, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw InvalidArgument("boundary sample count must be at least 1");
  std::vector<Point> out(n);
  switch (dom.kind()) {
    case DomainKind::PuncturedSpace: return {dom.center()};
    case DomainKind::KoranyiBall:
    case DomainKind::KoranyiAnnulus:
      parallel_for(n, [&](std::size_t i) {
        Stream s(seed, "boundary", i);
        const bool inner = dom.kind() == DomainKind::KoranyiAnnulus && i % 2 == 1;
        const auto [alpha, beta] = detail::sphere_angles(s, dom.kind() == DomainKind::KoranyiAnnulus ? i / 2 : i);
        out[i] = dom.center() * detail::sphere_point(inner ? dom.inner_radius() : dom.outer_radius(), alpha, beta);
      });
      return out;
    case DomainKind::Box: {
      const Point lo = dom.lo(), hi = dom.hi();
      const double ax = (hi.y - lo.y) * (hi.t - lo.t), ay = (hi.x - lo.x) * (hi.t - lo.t),
                   at = (hi.x - lo.x) * (hi.y - lo.y);
      parallel_for(n, [&](std::size_t i) {
        Stream s(seed, "boundary", i);
        Point p{s.uniform(lo.x, hi.x), s.uniform(lo.y, hi.y), s.uniform(lo.t, hi.t)};
        const double u = s.uniform(0.0, ax + ay + at);
        const bool high = s.uniform() < 0.5;
        if (u < ax) p.x = high ? hi.x : lo.x;
        else if (u < ax + ay) p.y = high ? hi.y : lo.y;
        else p.t = high ? hi.t : lo.t;
        out[i] = p;
      });
      return out;
    }
  }
  return out;
}

/// Distances to the boundary of an image domain: exact for catalog images,
/// otherwise the nearest point of a mapped boundary sample.
class ImageBoundary {
 public:
  static ImageBoundary exact(Domain d) {
    ImageBoundary b;
    b.domain_ = std::move(d);
    return b;
  }

  static ImageBoundary approximate(const SmoothMap& f, const Domain& dom, std::size_t samples, std::uint64_t seed) {
    ImageBoundary b;
    const auto pts = boundary_samples(dom, samples, seed);
    b.mapped_.resize(pts.size());
    parallel_for(pts.size(), [&](std::size_t i) { b.mapped_[i] = f.apply(pts[i]); });
    return b;
  }

  /// Exact when f(dom) is a catalog domain, approximate otherwise.
  static ImageBoundary of(const SmoothMap& f, const Domain& dom, std::size_t samples, std::uint64_t seed) {
    if (auto d = exact_image(f, dom)) return exact(*d);
    return approximate(f, dom, samples, seed);
  }

  bool is_approximate() const noexcept { return !domain_.has_value(); }
  std::string label() const { return domain_ ? "exact" : "approximate boundary"; }
  const std::optional<Domain>& domain() const noexcept { return domain_; }

  bool contains(const Point& q) const { return domain_ ? domain_->contains(q) : q.finite(); }

  double distance(const Point& q, Metric m) const {
    if (domain_) return domain_->boundary_distance(q, m);
    double best = std::numeric_limits<double>::infinity();
    for (const Point& b : mapped_) best = std::min(best, dist(m, q, b));
    return best;
  }

 private:
  std::optional<Domain> domain_;
  std::vector<Point> mapped_;
};

// ---------------------------------------------------------------------------
// Koebe-type distortion

struct KoebeRecord {
  Point x;
  double a_f = 1.0;
  double a_f_log_std_error = 0.0;
  double boundary_distance = 0.0;
  double image_boundary_distance = 0.0;
  double boundary_ratio = 1.0;
  double log_discrepancy = 0.0;
};

struct KoebeReport {
  std::vector<KoebeRecord> records;
  double c_hat = 1.0;
  Metric metric = Metric::Koranyi;
  double shrink = 1.0;
  std::string boundary_mode = "exact";
};

/// Compares a_f(x) with d(f(x), bd f(dom)) / d(x, bd dom) at sampled points.
inline KoebeReport koebe_scan(const SmoothMap& f, const Domain& dom, const ImageBoundary& image, Metric m,
                              std::size_t points, std::size_t mc_n, std::uint64_t seed, double shrink = 1.0) {
  if (points == 0) throw InvalidArgument("koebe_scan needs at least one point");
  KoebeReport out;
  out.metric = m;
  out.shrink = shrink;
  out.boundary_mode = image.label();
  const auto pts = sample_interior(dom, points, seed);
  double worst = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    KoebeRecord r;
    r.x = pts[i];
    const Point fx = f.apply(r.x);
    if (!image.contains(fx)) {
      std::ostringstream os;
      os << "image-domain mismatch: f" << r.x << " = " << fx << " lies outside " << image.domain()->describe();
      throw ConfigurationError(os.str());
    }
    const auto af = average_derivative_estimate(f, dom, r.x, m, shrink, mc_n, detail::derive_seed(seed, "koebe", i));
    r.a_f = af.value;
    r.a_f_log_std_error = 0.25 * af.log_std_error;
    r.boundary_distance = dom.boundary_distance(r.x, m);
    r.image_boundary_distance = image.distance(fx, m);
    r.boundary_ratio = r.image_boundary_distance / r.boundary_distance;
    r.log_discrepancy = std::abs(std::log(r.a_f) - std::log(r.boundary_ratio));
    worst = std::max(worst, r.log_discrepancy);
    out.records.push_back(r);
  }
  out.c_hat = std::exp(worst);
  return out;
}

inline KoebeReport koebe_scan(const SmoothMap& f, const Domain& dom, const Domain& dom_image, Metric m,
                              std::size_t points, std::size_t mc_n, std::uint64_t seed, double shrink = 1.0) {
  return koebe_scan(f, dom, ImageBoundary::exact(dom_image), m, points, mc_n, seed, shrink);
}

// ---------------------------------------------------------------------------
// Ball images

struct BallImageGeometry {
  double diam_image = 0.0;
  double dist_image_to_boundary = 0.0;
  double center_image_boundary_distance = 0.0;
  double inner_radius = 0.0;  // min d(f(x), f(S))
  double outer_radius = 0.0;  // max d(f(x), f(S))
  double k_ratio = 1.0;       // outer / inner: B' in f(B) in k B'
  double diam_over_center_distance = 0.0;
  std::size_t samples = 0;
  std::string boundary_mode = "exact";
};

/// Geometry of f(B) from mapped sphere and interior samples of B. Distances
/// are in the metric of B.
inline BallImageGeometry ball_image_geometry(const SmoothMap& f, const Ball& B, const ImageBoundary& image,
                                             std::size_t boundary_samples, std::uint64_t seed) {
  if (boundary_samples == 0) throw InvalidArgument("ball_image_geometry needs boundary samples");
  const Metric m = B.metric;
  std::vector<Point> sphere;
  for (int q = 0; q < 8; ++q)  // in-plane antipodes first
    sphere.push_back(detail::metric_sphere_point(B.center, B.radius, m, 0.0, q * std::numbers::pi / 4));
  for (std::size_t i = 0; i < boundary_samples; ++i) {
    Stream s(seed, "ball-image", i);
    const auto [alpha, beta] = detail::sphere_angles(s, i);
    sphere.push_back(detail::metric_sphere_point(B.center, B.radius, m, alpha, beta));
  }
  const auto inner = sample_ball(B, std::max<std::size_t>(1, boundary_samples / 4), seed);
  std::vector<Point> img(sphere.size() + inner.size());
  parallel_for(img.size(), [&](std::size_t i) {
    img[i] = f.apply(i < sphere.size() ? sphere[i] : inner[i - sphere.size()]);
  });
  for (const Point& q : img)
    if (!image.contains(q)) throw ConfigurationError("image-domain mismatch: f(B) leaves the image domain");
  const Point fc = f.apply(B.center);
  BallImageGeometry out;
  out.samples = img.size();
  out.boundary_mode = image.label();
  out.diam_image = detail::max_pairwise(img, m);
  std::vector<double> bd(img.size());
  parallel_for(img.size(), [&](std::size_t i) { bd[i] = image.distance(img[i], m); });
  out.dist_image_to_boundary = *std::min_element(bd.begin(), bd.end());
  out.center_image_boundary_distance = image.distance(fc, m);
  out.inner_radius = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < sphere.size(); ++i) {
    const double d = dist(m, fc, img[i]);
    out.inner_radius = std::min(out.inner_radius, d);
    out.outer_radius = std::max(out.outer_radius, d);
  }
  out.k_ratio = out.outer_radius / out.inner_radius;
  out.diam_over_center_distance = out.diam_image / out.center_image_boundary_distance;
  return out;
}

// ---------------------------------------------------------------------------
// Quasisymmetry

struct QSSample {
  double t = 1.0;
  double ratio = 1.0;
};

struct QSProfile {
  double egg_yolk_shrink = 2.0;
  double radius = 0.0;  // egg-yolk ball radius
  std::vector<QSSample> samples;
  std::vector<double> bin_edges;      // log t edges, bins.size() + 1 of them
  std::vector<double> eta_envelope;   // max ratio per bin, NaN when empty
  std::vector<std::size_t> bin_counts;
  double H_f_hat = 1.0;
  double H_scale = 0.0;  // sphere radius used for H_f_hat
};

/// Three-point ratios of f inside B(x, d(x, bd dom)/shrink). Log t bins over
/// [-4, 4]; the end bins absorb the tails. H_f_hat is max/min of
/// d(f(x), f(y)) over y on the sphere of radius e^-4 times the egg-yolk radius.
inline QSProfile qs_profile(const SmoothMap& f, const Domain& dom, const Point& x, double shrink, std::size_t triples,
                            std::uint64_t seed, Metric m = Metric::Koranyi, std::size_t sphere_points = 256,
                            std::size_t bins = 16) {
  if (!(shrink > 1.0)) throw InvalidArgument("egg-yolk shrink must exceed 1");
  if (triples == 0) throw InvalidArgument("qs_profile needs at least one triple");
  if (bins == 0 || sphere_points < 2) throw InvalidArgument("qs_profile needs bins and sphere points");
  QSProfile out;
  out.egg_yolk_shrink = shrink;
  out.radius = dom.boundary_distance(x, m) / shrink;
  const Ball egg(x, out.radius, m);
  out.samples.resize(triples);
  const auto tag = tag_hash("qs-triple");
  parallel_for(triples, [&](std::size_t i) {
    for (std::uint64_t attempt = 0;; ++attempt) {
      const std::uint64_t base = (i * 64 + attempt) * 3;
      const Point p1 = sample_ball_point(egg, seed, tag, base), p2 = sample_ball_point(egg, seed, tag, base + 1),
                  p3 = sample_ball_point(egg, seed, tag, base + 2);
      const double d12 = dist(m, p1, p2), d13 = dist(m, p1, p3);
      if (!(d12 > 0.0) || !(d13 > 0.0)) continue;
      const Point q1 = f.apply(p1);
      const double e12 = dist(m, q1, f.apply(p2)), e13 = dist(m, q1, f.apply(p3));
      if (!(e12 > 0.0) || !(e13 > 0.0)) continue;
      out.samples[i] = {d12 / d13, e12 / e13};
      return;
    }
  });
  const double lo = -4.0, hi = 4.0, w = (hi - lo) / static_cast<double>(bins);
  for (std::size_t b = 0; b <= bins; ++b) out.bin_edges.push_back(lo + w * static_cast<double>(b));
  out.eta_envelope.assign(bins, std::numeric_limits<double>::quiet_NaN());
  out.bin_counts.assign(bins, 0);
  for (const auto& s : out.samples) {
    if (!std::isfinite(s.ratio) || !(s.ratio > 0.0)) throw NumericFailure("non-finite quasisymmetry ratio");
    const double lt = std::log(s.t);
    const auto b = static_cast<std::size_t>(std::clamp(std::floor((lt - lo) / w), 0.0, static_cast<double>(bins - 1)));
    ++out.bin_counts[b];
    if (!(out.eta_envelope[b] >= s.ratio)) out.eta_envelope[b] = s.ratio;
  }
  out.H_scale = out.radius * std::exp(lo);
  const Point fx = f.apply(x);
  std::vector<double> d(sphere_points);
  parallel_for(sphere_points, [&](std::size_t i) {
    Stream s(seed, "qs-sphere", i);
    const double alpha = i < 8 ? 0.0 : std::asin(s.uniform(-1.0, 1.0));
    const double beta = i < 8 ? i * std::numbers::pi / 4 : s.uniform(0.0, 2.0 * std::numbers::pi);
    d[i] = dist(m, fx, f.apply(detail::metric_sphere_point(x, out.H_scale, m, alpha, beta)));
  });
  out.H_f_hat = *std::max_element(d.begin(), d.end()) / *std::min_element(d.begin(), d.end());
  return out;
}

// ---------------------------------------------------------------------------
// Hölder-type distance estimate

struct DistanceEstimatePair {
  Point z1, z2;
  double boundary_distance = 0.0;
  double distance = 0.0;
  double image_distance = 0.0;
  double a_f = 1.0;
  double c_pair = 0.0;
};

struct DistanceEstimateReport {
  double a_exp = 0.5;
  double lambda_knob = 1.0;
  std::vector<DistanceEstimatePair> pairs;
  double c_max = 0.0;
  double c_mean = 0.0;
  double c_median = 0.0;
  double c_p90 = 0.0;
  double bmo_lower_bound = 0.0;
  double premise_threshold = 0.0;  // (2/e) a
  std::string premise_status;      // "violated" or "not refuted"
};

/// c_pair = d(f z1, f z2) / (a_f(z1) d(z1, bd)^a d(z1, z2)^(1-a)) for pairs
/// with d(z1, z2) < d(z1, bd) / (2 lambda_knob). The BMO premise on log J_f
/// can only be refuted, since bmo_estimate is a lower bound.
inline DistanceEstimateReport distance_estimate_audit(const SmoothMap& f, const Domain& dom, double a_exp,
                                                      double lambda_knob, std::size_t pairs, std::size_t mc_n,
                                                      std::uint64_t seed, Metric m = Metric::Koranyi,
                                                      std::size_t bmo_trials = 32) {
  if (!(a_exp > 0.0 && a_exp < 1.0)) throw InvalidArgument("a_exp must lie in (0, 1)");
  if (!(lambda_knob >= 1.0) || !std::isfinite(lambda_knob))
    throw ConfigurationError("pair constraint unsatisfiable: lambda_knob must be a finite real >= 1");
  if (pairs == 0) throw InvalidArgument("distance_estimate_audit needs at least one pair");
  DistanceEstimateReport out;
  out.a_exp = a_exp;
  out.lambda_knob = lambda_knob;
  const auto z1s = sample_interior(dom, pairs, seed);
  out.pairs.resize(pairs);
  const auto tag = tag_hash("dist-est");
  for (std::size_t i = 0; i < pairs; ++i) {
    auto& r = out.pairs[i];
    r.z1 = z1s[i];
    r.boundary_distance = dom.boundary_distance(r.z1, m);
    const double reach = r.boundary_distance / (2.0 * lambda_knob);
    if (!(reach > 0.0)) throw ConfigurationError("pair constraint unsatisfiable: zero admissible radius");
    const Ball b(r.z1, reach, m);
    for (std::uint64_t attempt = 0;; ++attempt) {
      r.z2 = sample_ball_point(b, seed, tag, i * 64 + attempt);
      if (!(r.z2 == r.z1)) break;
    }
    r.distance = dist(m, r.z1, r.z2);
    r.image_distance = dist(m, f.apply(r.z1), f.apply(r.z2));
    r.a_f = average_derivative(f, dom, r.z1, m, 1.0, mc_n, detail::derive_seed(seed, "dist-est-af", i));
    r.c_pair = r.image_distance /
               (r.a_f * std::pow(r.boundary_distance, a_exp) * std::pow(r.distance, 1.0 - a_exp));
  }
  std::vector<double> c(pairs);
  for (std::size_t i = 0; i < pairs; ++i) c[i] = out.pairs[i].c_pair;
  out.c_mean = pairwise_sum(c) / static_cast<double>(pairs);
  std::sort(c.begin(), c.end());
  out.c_max = c.back();
  out.c_median = c[(pairs - 1) / 2];
  out.c_p90 = c[std::min(pairs - 1, static_cast<std::size_t>(std::ceil(0.9 * static_cast<double>(pairs))) - 1)];
  out.premise_threshold = 2.0 / std::numbers::e * a_exp;
  out.bmo_lower_bound = bmo_estimate(log_jacobian_field(f), dom, 3.0, bmo_trials, mc_n,
                                     detail::derive_seed(seed, "dist-est-bmo", 0), m)
                            .norm_lower_bound;
  out.premise_status = out.bmo_lower_bound > out.premise_threshold ? "violated" : "not refuted";
  return out;
}

// ---------------------------------------------------------------------------
// Curve diameters

struct CurveDiameterRecord {
  double length = 0.0;
  double boundary_distance = 0.0;
  double diam_image = 0.0;
  double weighted_length = 0.0;  // integral of a_f ds
  double ratio = 0.0;
  bool alpha_condition = true;   // length >= alpha * d(curve, bd)
};

/// diam f(gamma) against the a_f-weighted length of gamma, a_f taken at the
/// group midpoint of every segment.
inline std::vector<CurveDiameterRecord> curve_diameter_audit(const SmoothMap& f, const Domain& dom,
                                                             const std::vector<Curve>& curves, double alpha,
                                                             std::size_t mc_n, std::uint64_t seed,
                                                             Metric m = Metric::Koranyi) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidArgument("alpha must lie in (0, 1]");
  std::vector<CurveDiameterRecord> out;
  for (std::size_t c = 0; c < curves.size(); ++c) {
    const auto& v = curves[c].vertices;
    if (v.size() < 2) throw InvalidArgument("curves need at least two vertices");
    CurveDiameterRecord r;
    r.boundary_distance = std::numeric_limits<double>::infinity();
    for (const Point& p : v) r.boundary_distance = std::min(r.boundary_distance, dom.boundary_distance(p, m));
    std::vector<double> seg(v.size() - 1);
    for (std::size_t s = 0; s + 1 < v.size(); ++s) {
      const double len = dist(m, v[s], v[s + 1]);
      const Point mid = group_lerp(v[s], v[s + 1], 0.5);
      const double af = average_derivative(f, dom, mid, m, 1.0, mc_n,
                                           detail::derive_seed(seed, "curve-af", c * 1000003 + s));
      r.length += len;
      seg[s] = af * len;
    }
    r.weighted_length = pairwise_sum(seg);
    std::vector<Point> img(v.size());
    parallel_for(v.size(), [&](std::size_t i) { img[i] = f.apply(v[i]); });
    r.diam_image = detail::max_pairwise(img, m);
    r.ratio = r.diam_image / r.weighted_length;
    r.alpha_condition = r.length >= alpha * r.boundary_distance;
    out.push_back(r);
  }
  return out;
}

/// Straight horizontal segment from p in direction (cos theta, sin theta),
/// split into n equal pieces.
inline Curve horizontal_segment(const Point& p, double theta, double length, std::size_t n) {
  if (n == 0 || !(length > 0.0)) throw InvalidArgument("segment needs positive length and pieces");
  Curve c;
  for (std::size_t i = 0; i <= n; ++i) {
    const double s = length * static_cast<double>(i) / static_cast<double>(n);
    c.vertices.push_back(p * Point{s * std::cos(theta), s * std::sin(theta), 0.0});
  }
  return c;
}

struct SharpnessProbe {
  double k_exp = 0.5;
  double r = 0.0;
  double diam_image = 0.0;
  double length = 0.0;
  double ratio = 0.0;
};

/// The x-axis segment [0, r] under z -> z |z|^(k-1): image diameter r^k
/// against length r.
inline SharpnessProbe sharpness_probe(double k_exp, double r) {
  if (!(k_exp > 0.0 && k_exp <= 1.0)) throw InvalidArgument("k_exp must lie in (0, 1]");
  if (!(r > 0.0 && r < 1.0)) throw InvalidArgument("r must lie in (0, 1)");
  SharpnessProbe p{k_exp, r, std::pow(r, k_exp), r, 0.0};
  p.ratio = p.diam_image / p.length;
  return p;
}

// ---------------------------------------------------------------------------
// Integral comparability

struct IntegralComparison {
  double q = 1.0;
  double int_opnorm = 0.0;
  double int_opnorm_std_error = 0.0;
  double int_af = 0.0;
  double int_af_std_error = 0.0;
  double ratio = 1.0;  // int_opnorm / int_af
  double ratio_std_error = 0.0;
};

struct IntegralComparabilityReport {
  std::vector<IntegralComparison> rows;
  double covered_volume = 0.0;  // Haar volume of the union of the balls
  double covered_volume_std_error = 0.0;
  std::size_t samples = 0;
  double p_window = 6.0;
  double collar = 0.0;
};

/// Integrals of ||D_H f||^q and a_f^q over the union of the Whitney balls.
/// Points are drawn from the volume-weighted mixture of the balls and
/// weighted by V_total / multiplicity(p), which makes the estimator unbiased
/// for the union.
inline IntegralComparabilityReport integral_comparability(const SmoothMap& f, const Domain& dom,
                                                          const std::vector<double>& q_list,
                                                          const WhitneyDecomposition& w, std::size_t mc_n,
                                                          std::uint64_t seed, double p_window = 6.0,
                                                          std::size_t af_n = 256) {
  if (q_list.empty()) throw InvalidArgument("q_list is empty");
  if (!(p_window > 2.0)) throw InvalidArgument("p_window must exceed 2 so that (4 - p, p) is nonempty");
  for (double q : q_list) {
    if (q == 0.0) throw InvalidArgument("q = 0 is excluded");
    if (!(q > 4.0 - p_window && q < p_window)) {
      std::ostringstream os;
      os << "q = " << q << " outside the window (" << 4.0 - p_window << ", " << p_window << ')';
      throw InvalidArgument(os.str());
    }
  }
  if (w.balls.empty()) throw InvalidArgument("Whitney decomposition has no balls");
  if (mc_n < 2) throw InvalidArgument("integral_comparability needs mc_n >= 2");

  std::vector<double> cum(w.balls.size());
  double total = 0.0;
  for (std::size_t i = 0; i < w.balls.size(); ++i) cum[i] = total += ball_volume(w.metric, w.balls[i].radius);
  const BallIndex index(w.balls);
  std::vector<double> weight(mc_n), op(mc_n), af(mc_n);
  const auto tag = tag_hash("compare-integrals");
  for (std::size_t j = 0; j < mc_n; ++j) {
    Stream s(seed, "compare-integrals-ball", j);
    const double u = s.uniform() * total;
    const auto b = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
    const Point p = sample_ball_point(w.balls[std::min(b, cum.size() - 1)], seed, tag, j);
    weight[j] = total / static_cast<double>(std::max<std::size_t>(1, index.multiplicity(p)));
    op[j] = f.horizontal_differential(p).op_norm;
    af[j] = average_derivative(f, dom, p, w.metric, 1.0, af_n, detail::derive_seed(seed, "compare-integrals-af", j));
  }
  IntegralComparabilityReport out;
  out.samples = mc_n;
  out.p_window = p_window;
  out.collar = w.collar;
  const auto vol = detail::summarize(weight, seed);
  out.covered_volume = vol.value;
  out.covered_volume_std_error = vol.std_error;
  for (double q : q_list) {
    std::vector<double> a(mc_n), b(mc_n);
    for (std::size_t j = 0; j < mc_n; ++j) a[j] = weight[j] * std::pow(op[j], q), b[j] = weight[j] * std::pow(af[j], q);
    const auto ma = detail::summarize(a, seed), mb = detail::summarize(b, seed);
    IntegralComparison row{q, ma.value, ma.std_error, mb.value, mb.std_error, ma.value / mb.value, 0.0};
    // delta method on the paired samples
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    for (std::size_t j = 0; j < mc_n; ++j) {
      const double da = a[j] - ma.value, db = b[j] - mb.value;
      saa += da * da, sbb += db * db, sab += da * db;
    }
    const double n = static_cast<double>(mc_n);
    const double var = (saa + row.ratio * row.ratio * sbb - 2.0 * row.ratio * sab) / (n - 1.0) / n;
    row.ratio_std_error = std::sqrt(std::max(0.0, var)) / mb.value;
    out.rows.push_back(row);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Harnack inequality for a_f

struct HarnackBall {
  std::size_t ball = 0;
  double ratio = 1.0;
};

struct HarnackReport {
  double max_ball_ratio = 1.0;
  std::vector<HarnackBall> balls;
  double lambda = 0.0;
};

/// max a_f(x)/a_f(y) over sampled pairs inside each Whitney ball. With
/// max_balls > 0 an evenly spaced subset of the balls is audited.
inline HarnackReport harnack_audit(const SmoothMap& f, const Domain& dom, const WhitneyDecomposition& w,
                                   std::size_t pairs_per_ball, std::size_t mc_n, std::uint64_t seed,
                                   std::size_t max_balls = 0, double lambda_max = 0.5) {
  if (pairs_per_ball == 0) throw InvalidArgument("harnack_audit needs at least one pair per ball");
  if (!(w.lambda > 0.0 && w.lambda <= lambda_max)) {
    std::ostringstream os;
    os << "Whitney lambda " << w.lambda << " outside the admissible range (0, " << lambda_max << ']';
    throw ConfigurationError(os.str());
  }
  if (w.balls.empty()) throw InvalidArgument("Whitney decomposition has no balls");
  const std::size_t n = w.balls.size();
  const std::size_t used = max_balls == 0 ? n : std::min(n, max_balls);
  HarnackReport out;
  out.lambda = w.lambda;
  const auto tag = tag_hash("harnack");
  for (std::size_t u = 0; u < used; ++u) {
    const std::size_t i = u * n / used;
    double worst = 1.0;
    for (std::size_t k = 0; k < pairs_per_ball; ++k) {
      const std::uint64_t idx = (static_cast<std::uint64_t>(i) * pairs_per_ball + k) * 2;
      const Point x = sample_ball_point(w.balls[i], seed, tag, idx), y = sample_ball_point(w.balls[i], seed, tag, idx + 1);
      const double ax = average_derivative(f, dom, x, w.metric, 1.0, mc_n, detail::derive_seed(seed, "harnack-af", idx));
      const double ay =
          average_derivative(f, dom, y, w.metric, 1.0, mc_n, detail::derive_seed(seed, "harnack-af", idx + 1));
      worst = std::max({worst, ax / ay, ay / ax});
    }
    out.balls.push_back({i, worst});
    out.max_ball_ratio = std::max(out.max_ball_ratio, worst);
  }
  return out;
}

}  // namespace heis
