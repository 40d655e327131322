#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "heis/domain.hpp"
#include "heis/errors.hpp"
#include "heis/maps.hpp"
#include "heis/metric.hpp"
#include "heis/parallel.hpp"
#include "heis/random.hpp"

namespace heis {

struct ScalarField {
  std::function<double(const Point&)> eval;
  std::string name;

  double operator()(const Point& p) const { return eval(p); }
};

inline ScalarField constant_field(double c) {
  return {[c](const Point&) { return c; }, "constant"};
}

/// log J_f; throws DegenerateMap where the Jacobian is not positive.
inline ScalarField log_jacobian_field(const SmoothMap& f) {
  return {[f](const Point& p) {
            const double j = f.horizontal_differential(p).jacobian;
            if (!(j > 0.0) || !std::isfinite(j)) {
              std::ostringstream os;
              os << f.describe() << " has Jacobian " << j << " at " << p;
              throw DegenerateMap(os.str());
            }
            return std::log(j);
          },
          "log_jacobian(" + f.describe() + ")"};
}

struct MeanEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n = 0;
  std::uint64_t seed = 0;
};

/// Point i of a uniform sample of B, drawn from stream (seed, tag, i).
/// Korányi balls: rejection from the cube around the unit gauge ball, then
/// center * delta_r. Sub-Riemannian balls: the unit sub-Riemannian ball lies
/// inside the unit Korányi ball, so Korányi proposals are filtered by d_s < 1.
inline Point sample_ball_point(const Ball& b, std::uint64_t seed, std::uint64_t tag, std::uint64_t i) {
  Stream s(seed, tag, i);
  for (int attempt = 0; attempt < 100000; ++attempt) {
    const Point u{s.uniform(-1.0, 1.0), s.uniform(-1.0, 1.0), s.uniform(-1.0, 1.0)};
    const double g = koranyi_norm(u);
    if (g >= 1.0) continue;
    if (b.metric == Metric::SubRiemannian && subriemannian_norm(u) >= 1.0) continue;
    return b.center * Point{b.radius * u.x, b.radius * u.y, b.radius * b.radius * u.t};
  }
  throw SamplingFailure("ball sampler exhausted its proposal budget");
}

inline std::vector<Point> sample_ball(const Ball& b, std::size_t n, std::uint64_t seed,
                                      std::uint64_t tag = tag_hash("ball")) {
  std::vector<Point> pts(n);
  parallel_for(n, [&](std::size_t i) { pts[i] = sample_ball_point(b, seed, tag, i); });
  return pts;
}

namespace detail {

inline MeanEstimate summarize(const std::vector<double>& v, std::uint64_t seed) {
  MeanEstimate m;
  m.n = v.size();
  m.seed = seed;
  if (v.empty()) return m;
  if (std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); })) {
    m.value = v.front();
    return m;
  }
  const double n = static_cast<double>(v.size());
  m.value = pairwise_sum(v) / n;
  std::vector<double> sq(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) sq[i] = (v[i] - m.value) * (v[i] - m.value);
  const double var = v.size() > 1 ? pairwise_sum(sq) / (n - 1.0) : 0.0;
  m.std_error = std::sqrt(var / n);
  return m;
}

inline std::vector<double> evaluate(const ScalarField& u, const std::vector<Point>& pts) {
  std::vector<double> v(pts.size());
  parallel_for(pts.size(), [&](std::size_t i) { v[i] = u(pts[i]); });
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      std::ostringstream os;
      os << "field " << u.name << " is not finite at " << pts[i];
      throw NumericFailure(os.str());
    }
  }
  return v;
}

inline void require_samples(std::size_t n) {
  if (n < 2) throw InvalidArgument("Monte-Carlo estimates need at least two samples");
}

// Sample covariance of (a, b) divided by n.
inline double mean_covariance(const std::vector<double>& a, double ma, const std::vector<double>& b, double mb) {
  std::vector<double> prod(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) prod[i] = (a[i] - ma) * (b[i] - mb);
  const double n = static_cast<double>(a.size());
  return pairwise_sum(prod) / (n - 1.0) / n;
}

}  // namespace detail

/// Monte-Carlo mean of u over B.
inline MeanEstimate ball_mean(const ScalarField& u, const Ball& b, std::size_t n, std::uint64_t seed) {
  detail::require_samples(n);
  return detail::summarize(detail::evaluate(u, sample_ball(b, n, seed)), seed);
}

/// Mean of |u - u_B| over B with u_B from the same sample.
inline MeanEstimate mean_oscillation(const ScalarField& u, const Ball& b, std::size_t n, std::uint64_t seed) {
  detail::require_samples(n);
  const auto v = detail::evaluate(u, sample_ball(b, n, seed));
  const double mean = detail::summarize(v, seed).value;
  std::vector<double> dev(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) dev[i] = std::abs(v[i] - mean);
  return detail::summarize(dev, seed);
}

/// exp(mean(log J_f)/4) over B(x, d(x, boundary)/shrink), with the standard
/// error of the log-mean.
struct AverageDerivative {
  double value = 1.0;
  double log_mean = 0.0;
  double log_std_error = 0.0;
  double ball_radius = 0.0;
};

inline AverageDerivative average_derivative_estimate(const SmoothMap& f, const Domain& dom, const Point& x, Metric m,
                                                     double shrink, std::size_t n, std::uint64_t seed) {
  if (!(shrink >= 1.0)) throw InvalidArgument("shrink must be at least 1");
  if (!dom.contains(x)) throw InvalidArgument("average derivative requested outside the domain");
  const double r = dom.boundary_distance(x, m) / shrink;
  const auto est = ball_mean(log_jacobian_field(f), Ball(x, r, m), n, seed);
  return {std::exp(0.25 * est.value), est.value, est.std_error, r};
}

inline double average_derivative(const SmoothMap& f, const Domain& dom, const Point& x, Metric m, double shrink,
                                 std::size_t n, std::uint64_t seed) {
  return average_derivative_estimate(f, dom, x, m, shrink, n, seed).value;
}

struct BMOEstimate {
  double norm_lower_bound = 0.0;
  double admissibility_factor = 1.0;
  std::size_t balls_tried = 0;
  Metric metric = Metric::Koranyi;
  Ball best_ball{};
  double best_std_error = 0.0;
};

/// Admissible ball number j of a BMO scan: center from the domain's sampling
/// region, radius a random fraction of d(center, boundary)/factor.
inline Ball bmo_ball(const Domain& dom, double factor, std::uint64_t seed, std::size_t j, Metric m) {
  Stream s(seed, "bmo-ball", j);
  const Point c = dom.propose(s);
  const double d = dom.boundary_distance(c, m);
  const double frac = s.uniform(0.05, 1.0);
  return Ball(c, frac * d / factor * (1.0 - 1e-9), m);
}

/// Supremum of the mean oscillation over ball_trials admissible balls; a lower
/// bound for the local BMO norm. Nondecreasing in ball_trials.
inline BMOEstimate bmo_estimate(const ScalarField& u, const Domain& dom, double factor, std::size_t ball_trials,
                                std::size_t n_per_ball, std::uint64_t seed, Metric m = Metric::Koranyi) {
  if (!(factor >= 1.0)) throw InvalidArgument("admissibility factor must be at least 1");
  if (ball_trials == 0) throw ConfigurationError("bmo_estimate: no admissible ball requested (ball_trials = 0)");
  BMOEstimate out;
  out.admissibility_factor = factor;
  out.metric = m;
  for (std::size_t j = 0; j < ball_trials; ++j) {
    const Ball b = bmo_ball(dom, factor, seed, j, m);
    const auto osc = mean_oscillation(u, b, n_per_ball, splitmix64(seed ^ (j + 1)));
    if (j == 0 || osc.value > out.norm_lower_bound) {
      out.norm_lower_bound = osc.value;
      out.best_ball = b;
      out.best_std_error = osc.std_error;
    }
    out.balls_tried = j + 1;
  }
  return out;
}

struct AuditReport {
  double lhs = 0.0;
  double rhs = 0.0;
  double ratio = 1.0;
  double std_error = 0.0;
  bool pass = true;
};

/// |u_B1 - u_B2| against (e/2)(log(|B1|/|B2|) + 1) * norm_bound for concentric balls.
inline AuditReport nested_ball_bound_audit(const ScalarField& u, const Point& x, double r1, double r2,
                                           double norm_bound, std::size_t n, std::uint64_t seed,
                                           Metric m = Metric::Koranyi) {
  if (!(r2 <= r1)) throw InvalidArgument("nested balls need r2 <= r1");
  const auto a = ball_mean(u, Ball(x, r1, m), n, seed);
  const auto b = r1 == r2 ? a : ball_mean(u, Ball(x, r2, m), n, splitmix64(seed + 1));
  AuditReport rep;
  rep.lhs = std::abs(a.value - b.value);
  rep.std_error = r1 == r2 ? 0.0 : std::hypot(a.std_error, b.std_error);
  rep.rhs = 0.5 * std::numbers::e * (4.0 * std::log(r1 / r2) + 1.0) * norm_bound;
  rep.ratio = rep.rhs > 0.0 ? rep.lhs / rep.rhs : 0.0;
  rep.pass = rep.lhs <= rep.rhs + 3.0 * rep.std_error;
  return rep;
}

namespace detail {

inline std::vector<double> jacobian_samples(const SmoothMap& f, const Ball& b, std::size_t n, std::uint64_t seed) {
  require_samples(n);
  const auto pts = sample_ball(b, n, seed);
  std::vector<double> j(n);
  parallel_for(n, [&](std::size_t i) { j[i] = f.horizontal_differential(pts[i]).jacobian; });
  for (std::size_t i = 0; i < n; ++i) {
    if (!(j[i] > 0.0) || !std::isfinite(j[i])) {
      std::ostringstream os;
      os << f.describe() << " has Jacobian " << j[i] << " at " << pts[i];
      throw DegenerateMap(os.str());
    }
  }
  return j;
}

// Ratio (mean a)^pa * (mean b)^pb with a delta-method standard error.
inline AuditReport power_ratio(const std::vector<double>& a, double pa, const std::vector<double>& b, double pb,
                               std::uint64_t seed) {
  const auto ma = summarize(a, seed);
  const auto mb = summarize(b, seed);
  AuditReport rep;
  rep.ratio = std::pow(ma.value, pa) * std::pow(mb.value, pb);
  const double ga = pa / ma.value, gb = pb / mb.value;  // d log(ratio)
  const double var_log = ga * ga * ma.std_error * ma.std_error + gb * gb * mb.std_error * mb.std_error +
                         2.0 * ga * gb * mean_covariance(a, ma.value, b, mb.value);
  rep.std_error = rep.ratio * std::sqrt(std::max(0.0, var_log));
  return rep;
}

}  // namespace detail

/// (mean J^{p/4})^{4/p} / mean J over B.
inline AuditReport reverse_holder_audit(const SmoothMap& f, const Ball& b, double p_exp, std::size_t n,
                                        std::uint64_t seed) {
  if (!(p_exp > 4.0)) throw InvalidArgument("reverse Holder exponent must exceed 4");
  const auto j = detail::jacobian_samples(f, b, n, seed);
  std::vector<double> jp(n);
  for (std::size_t i = 0; i < n; ++i) jp[i] = std::pow(j[i], p_exp / 4.0);
  auto rep = detail::power_ratio(jp, 4.0 / p_exp, j, -1.0, seed);
  rep.lhs = std::pow(detail::summarize(jp, seed).value, 4.0 / p_exp);
  rep.rhs = detail::summarize(j, seed).value;
  rep.pass = std::isfinite(rep.ratio) && rep.ratio >= 1.0 - 3.0 * rep.std_error;
  return rep;
}

/// mean J * (mean J^{-(p-4)/4})^{4/(p-4)} over B; at least 1 by Jensen.
inline AuditReport ap_weight_audit(const SmoothMap& f, const Ball& b, double p_exp, std::size_t n,
                                   std::uint64_t seed) {
  if (!(p_exp > 4.0)) throw InvalidArgument("A_p exponent must exceed 4");
  const double s = (p_exp - 4.0) / 4.0;
  const auto j = detail::jacobian_samples(f, b, n, seed);
  std::vector<double> jm(n);
  for (std::size_t i = 0; i < n; ++i) jm[i] = std::pow(j[i], -s);
  auto rep = detail::power_ratio(j, 1.0, jm, 1.0 / s, seed);
  rep.lhs = detail::summarize(j, seed).value;
  rep.rhs = std::pow(detail::summarize(jm, seed).value, -1.0 / s);
  rep.pass = std::isfinite(rep.ratio) && rep.ratio >= 1.0 - 3.0 * rep.std_error;
  return rep;
}

}  // namespace heis
