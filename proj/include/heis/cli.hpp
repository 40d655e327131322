#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "heis/covering.hpp"
#include "heis/density_graph.hpp"
#include "heis/errors.hpp"
#include "heis/experiments.hpp"
#include "heis/io.hpp"
#include "heis/modulus.hpp"
#include "heis/parallel.hpp"
#include "heis/sampling.hpp"

namespace heis::cli {

using heis::detail::derive_seed;

using json = nlohmann::json;

inline constexpr int kExitPass = 0;
inline constexpr int kExitAudit = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kConfigVersion = 1;

/// Overrides applied on top of a config; command-line flags land here.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> out_dir;
};

struct Outcome {
  json report;
  std::string csv;
  bool passed = true;
  std::vector<std::string> failures;
  std::filesystem::path json_path;
  std::filesystem::path csv_path;
};

/// What an experiment handler sees: the parsed top level and its params.
class Context {
 public:
  Context(const json& cfg, std::uint64_t seed)
      : params_store_(cfg.contains("params") ? cfg.at("params") : json::object()),
        top_(cfg, ""),
        params_(params_store_, "params"),
        seed_(seed) {}

  JsonFields& top() { return top_; }
  JsonFields& params() { return params_; }
  std::uint64_t seed() const noexcept { return seed_; }

  SmoothMap map() { return map_from_json(top_.raw("map"), "map"); }
  Domain domain() { return domain_from_json(top_.raw("domain"), "domain"); }
  std::optional<Domain> image_domain() {
    if (!top_.has("image_domain") || top_.raw("image_domain").is_null()) return std::nullopt;
    return domain_from_json(top_.raw("image_domain"), "image_domain");
  }
  Metric metric() {
    const std::string s = top_.string("metric", "koranyi");
    try {
      return parse_metric(s);
    } catch (const Error& e) {
      JsonFields::fail("metric", e.what());
    }
  }

  void mark_common() {
    for (const char* k : {"version", "experiment", "name", "seed", "threads", "params", "expect", "output"}) top_.has(k);
  }

 private:
  json params_store_;
  JsonFields top_;
  JsonFields params_;
  std::uint64_t seed_;

 public:
  // handlers fill these
  json summary = json::object();
  json details = json::object();
  std::string csv;
};

struct ExperimentInfo {
  std::string name;
  std::string operation;  // library call it wraps
  std::string audits;     // the statement under test, in plain words
  std::vector<std::string> keys;  // top-level inputs it reads
  std::vector<std::pair<std::string, std::string>> params;  // name, default/meaning
  std::function<void(Context&)> run;
};

namespace detail {

inline std::vector<Point> points_param(JsonFields& in, const std::string& key) {
  const auto& v = in.raw(key);
  if (!v.is_array() || v.empty()) JsonFields::fail(in.at(key), "expected a nonempty array of [x, y, t]");
  std::vector<Point> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    json wrap = json::object({{"p", v[i]}});
    JsonFields one(wrap, in.at(key) + "[" + std::to_string(i) + "]");
    try {
      out.push_back(one.point("p"));
    } catch (const ConfigurationError&) {
      JsonFields::fail(in.at(key) + "[" + std::to_string(i) + "]", "expected [x, y, t]");
    }
  }
  return out;
}

// Points given explicitly, else `samples` interior points of dom.
inline std::vector<Point> query_points(Context& c, const Domain& dom, std::size_t def_samples) {
  auto& p = c.params();
  if (p.has("points")) return points_param(p, "points");
  return sample_interior(dom, p.count("samples", def_samples), derive_seed(c.seed(), "query", 0));
}

inline double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

inline WhitneyDecomposition whitney_from_params(Context& c, const Domain& dom, Metric m, double def_lambda,
                                                double def_collar, std::size_t def_grid) {
  auto& p = c.params();
  const double lambda = p.positive("lambda", def_lambda);
  const double collar = p.number("collar", def_collar);
  if (!(collar > 0.0)) JsonFields::fail(p.at("collar"), "must be positive");
  const std::size_t grid = p.count("grid", def_grid);
  return whitney(dom, lambda, collar, grid, m, derive_seed(c.seed(), "whitney", 0));
}

// ---------------------------------------------------------------------------

inline void run_dist(Context& c) {
  auto& p = c.params();
  std::vector<std::pair<Point, Point>> pairs;
  if (p.has("pairs")) {
    const auto& v = p.raw("pairs");
    if (!v.is_array() || v.empty()) JsonFields::fail(p.at("pairs"), "expected [[p, q], ...]");
    for (std::size_t i = 0; i < v.size(); ++i) {
      json wrap = json::object({{"pq", v[i]}});
      JsonFields one(wrap, p.at("pairs"));
      const auto pts = points_param(one, "pq");
      if (pts.size() != 2) JsonFields::fail(p.at("pairs") + "[" + std::to_string(i) + "]", "expected [p, q]");
      pairs.emplace_back(pts[0], pts[1]);
    }
  } else {
    const Domain dom = c.domain();
    const std::size_t n = p.count("samples", 1000);
    const auto a = sample_interior(dom, n, derive_seed(c.seed(), "dist-a", 0));
    const auto b = sample_interior(dom, n, derive_seed(c.seed(), "dist-b", 0));
    for (std::size_t i = 0; i < n; ++i) pairs.emplace_back(a[i], b[i]);
  }
  if (c.top().has("metric")) c.metric();
  std::vector<double> dk(pairs.size()), ds(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) {
    dk[i] = dist(Metric::Koranyi, pairs[i].first, pairs[i].second);
    ds[i] = dist(Metric::SubRiemannian, pairs[i].first, pairs[i].second);
  });
  CsvWriter csv({"px", "py", "pt", "qx", "qy", "qt", "koranyi", "subriemannian"});
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    csv.row() << pairs[i].first << pairs[i].second << dk[i] << ds[i];
    if (dk[i] > 0.0) {
      lo = std::min(lo, ds[i] / dk[i]);
      hi = std::max(hi, ds[i] / dk[i]);
    }
  }
  c.summary = {{"pairs", pairs.size()}, {"ratio_min", std::isfinite(lo) ? lo : 1.0}, {"ratio_max", hi}};
  c.csv = csv.str();
}

inline void run_af(Context& c) {
  const SmoothMap f = c.map();
  const Domain dom = c.domain();
  const Metric m = c.metric();
  auto& p = c.params();
  const double shrink = p.number("shrink", 1.0);
  const std::size_t mc_n = p.count("mc_n", 2000, 2);
  const auto pts = query_points(c, dom, 16);
  std::vector<AverageDerivative> out(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i)
    out[i] = average_derivative_estimate(f, dom, pts[i], m, shrink, mc_n, derive_seed(c.seed(), "af", i));
  CsvWriter csv({"x", "y", "t", "a_f", "log_jacobian_mean", "log_jacobian_std_error", "ball_radius"});
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    csv.row() << pts[i] << out[i].value << out[i].log_mean << out[i].log_std_error << out[i].ball_radius;
    lo = std::min(lo, out[i].value);
    hi = std::max(hi, out[i].value);
  }
  c.summary = {{"points", pts.size()}, {"a_f_min", lo}, {"a_f_max", hi}, {"map", f.describe()}};
  c.csv = csv.str();
}

inline void run_bmo(Context& c) {
  const SmoothMap f = c.map();
  const Domain dom = c.domain();
  const Metric m = c.metric();
  auto& p = c.params();
  const double factor = p.number("factor", 3.0);
  const std::size_t trials = p.count("ball_trials", 32);
  const std::size_t mc_n = p.count("mc_n", 2000, 2);
  const auto est = bmo_estimate(log_jacobian_field(f), dom, factor, trials, mc_n, c.seed(), m);
  CsvWriter csv({"norm_lower_bound", "std_error", "cx", "cy", "ct", "radius", "balls_tried", "factor"});
  csv.row() << est.norm_lower_bound << est.best_std_error << est.best_ball.center << est.best_ball.radius
            << est.balls_tried << factor;
  c.summary = {{"norm_lower_bound", est.norm_lower_bound}, {"std_error", est.best_std_error},
               {"balls_tried", est.balls_tried}};
  c.csv = csv.str();
}

inline void run_whitney(Context& c) {
  const Domain dom = c.domain();
  const Metric m = c.metric();
  const auto w = whitney_from_params(c, dom, m, 0.25, 0.1, 20000);
  auto& p = c.params();
  const std::size_t probes = p.count("probes", 20000);
  const auto cov = whitney_coverage(w, dom, probes, derive_seed(c.seed(), "coverage", 0));
  const auto prof = overlap_profile(w, probes, derive_seed(c.seed(), "overlap", 0));
  CsvWriter csv({"cx", "cy", "ct", "radius", "depth", "layer"});
  for (std::size_t i = 0; i < w.balls.size(); ++i)
    csv.row() << w.balls[i].center << w.balls[i].radius << w.depths[i] << w.ball_layers[i];
  json hist = json::object();
  double mean_mult = 0.0;
  std::size_t total = 0;
  for (const auto& [k, n] : prof.histogram) {
    hist[std::to_string(k)] = n;
    mean_mult += static_cast<double>(k * n);
    total += n;
  }
  c.summary = {{"balls", w.balls.size()},
               {"property_violations", whitney_property_violations(w)},
               {"coverage", cov.fraction},
               {"overlapping_selected_pairs", whitney_overlapping_pairs(w)},
               {"max_multiplicity", prof.max_multiplicity},
               {"mean_multiplicity", total ? mean_mult / static_cast<double>(total) : 0.0}};
  c.details = {{"overlap_histogram", hist}, {"decomposition", to_json(w)}};
  c.csv = csv.str();
}

inline void run_modulus(Context& c) {
  auto& p = c.params();
  const Point center = p.point("center", {});
  const double r = p.positive("r", 1.0);
  const auto ks = p.numbers("k", {2.0, 4.0, 8.0, 16.0});
  const std::size_t mc_n = p.count("mc_n", 200000);
  const std::size_t curves = p.count("curves", 512);
  const std::size_t pts = p.count("points_per_curve", 64, 2);
  const std::size_t grid = p.count("grid", 32, 4);
  const std::size_t iterations = p.count("iterations", 2000);
  const double omega4 = p.positive("omega4", 2.0 * std::numbers::pi * std::numbers::pi);
  CsvWriter csv({"k", "upper", "upper_std_error", "reference", "upper_rel_error", "lower", "slack", "lower_over_upper"});
  std::vector<double> lx, ly;
  double worst_rel = 0.0, floor = std::numeric_limits<double>::infinity(), worst_order = -1.0;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    RingSpec spec;
    try {
      spec = RingSpec(center, r, ks[i]);
    } catch (const InvalidArgument& e) {
      JsonFields::fail(p.at("k") + "[" + std::to_string(i) + "]", e.what());
    }
    const auto b = ring_modulus_bounds(spec, mc_n, curves, pts, grid, iterations, derive_seed(c.seed(), "ring", i));
    const double ref = ring_modulus_reference(ks[i], omega4);
    const double rel = std::abs(b.upper / ref - 1.0);
    csv.row() << ks[i] << b.upper << b.upper_std_error << ref << rel << b.lower << b.slack << b.lower / b.upper;
    worst_rel = std::max(worst_rel, rel);
    floor = std::min(floor, b.lower / b.upper);
    worst_order = std::max(worst_order, b.lower - b.upper);
    lx.push_back(std::log(std::log(ks[i])));
    ly.push_back(std::log(b.upper));
  }
  c.summary = {{"rings", ks.size()},
               {"upper_rel_error_max", worst_rel},
               {"lower_over_upper_min", floor},
               {"lower_minus_upper_max", worst_order},
               {"omega4", omega4}};
  if (ks.size() >= 2) c.summary["loglog_slope"] = fit_slope(lx, ly);
  c.csv = csv.str();
}

inline ImageBoundary image_boundary(Context& c, const SmoothMap& f, const Domain& dom) {
  const std::size_t n = c.params().count("boundary_samples", 4096);
  if (auto img = c.image_domain()) return ImageBoundary::exact(*img);
  return ImageBoundary::of(f, dom, n, derive_seed(c.seed(), "image-boundary", 0));
}

inline void run_koebe(Context& c) {
  const SmoothMap f = c.map();
  const Domain dom = c.domain();
  const Metric m = c.metric();
  auto& p = c.params();
  const std::size_t points = p.count("points", 64);
  const std::size_t mc_n = p.count("mc_n", 2000, 2);
  const double shrink = p.number("shrink", 1.0);
  const ImageBoundary img = image_boundary(c, f, dom);
  const auto rep = koebe_scan(f, dom, img, m, points, mc_n, c.seed(), shrink);
  CsvWriter csv({"x", "y", "t", "a_f", "a_f_log_std_error", "boundary_distance", "image_boundary_distance",
                 "boundary_ratio", "log_discrepancy"});
  double max_se = 0.0;
  for (const auto& r : rep.records) {
    csv.row() << r.x << r.a_f << r.a_f_log_std_error << r.boundary_distance << r.image_boundary_distance
              << r.boundary_ratio << r.log_discrepancy;
    max_se = std::max(max_se, r.a_f_log_std_error);
  }
  c.summary = {{"c_hat", rep.c_hat},
               {"points", rep.records.size()},
               {"boundary_mode", rep.boundary_mode},
               {"max_log_std_error", max_se},
               {"map", f.describe()},
               {"domain", dom.describe()}};
  c.csv = csv.str();
}

inline void run_qs(Context& c) {
  const SmoothMap f = c.map();
  const Domain dom = c.domain();
  const Metric m = c.metric();
  auto& p = c.params();
  const Point x = p.point("x");
  const double shrink = p.number("shrink", 5.0);
  const std::size_t triples = p.count("triples", 2000);
  const std::size_t sphere = p.count("sphere_points", 256, 2);
  const std::size_t bins = p.count("bins", 16);
  const auto prof = qs_profile(f, dom, x, shrink, triples, c.seed(), m, sphere, bins);
  CsvWriter csv({"t", "ratio"});
  double worst = 0.0;
  for (const auto& s : prof.samples) {
    csv.row() << s.t << s.ratio;
    worst = std::max(worst, std::max(s.ratio / s.t, s.t / s.ratio));
  }
  json env = json::array();
  for (std::size_t b = 0; b < prof.eta_envelope.size(); ++b) {
    const double e = prof.eta_envelope[b];
    env.push_back({{"log_t_lo", prof.bin_edges[b]},
                   {"log_t_hi", prof.bin_edges[b + 1]},
                   {"count", prof.bin_counts[b]},
                   {"eta", std::isfinite(e) ? json(e) : json(nullptr)}});
  }
  c.summary = {{"H_f_hat", prof.H_f_hat},
               {"egg_yolk_radius", prof.radius},
               {"samples", prof.samples.size()},
               {"ratio_over_t_spread_max", worst}};
  c.details = {{"envelope", env}, {"H_scale", prof.H_scale}};
  c.csv = csv.str();
}

inline void run_ball_image(Context& c) {
  const SmoothMap f = c.map();
  const Metric m = c.metric();
  auto& p = c.params();
  const Point center = p.point("center");
  const double radius = p.positive("radius", 1.0);
  const std::size_t n = p.count("samples", 512);
  const Ball B(center, radius, m);
  std::optional<Domain> dom;
  if (c.top().has("domain")) dom = c.domain();
  ImageBoundary img = [&] {
    if (auto d = c.image_domain()) return ImageBoundary::exact(*d);
    if (!dom) JsonFields::fail("domain", "ball-image needs domain or image_domain");
    return ImageBoundary::of(f, *dom, p.count("boundary_samples", 4096), derive_seed(c.seed(), "image-boundary", 0));
  }();
  const auto g = ball_image_geometry(f, B, img, n, c.seed());
  CsvWriter csv({"diam_image", "dist_image_to_boundary", "center_image_boundary_distance", "inner_radius",
                 "outer_radius", "k_ratio", "diam_over_center_distance"});
  csv.row() << g.diam_image << g.dist_image_to_boundary << g.center_image_boundary_distance << g.inner_radius
            << g.outer_radius << g.k_ratio << g.diam_over_center_distance;
  c.summary = {{"diam_image", g.diam_image},
               {"dist_image_to_boundary", g.dist_image_to_boundary},
               {"center_image_boundary_distance", g.center_image_boundary_distance},
               {"k_ratio", g.k_ratio},
               {"diam_over_center_distance", g.diam_over_center_distance},
               {"boundary_mode", g.boundary_mode}};
  c.csv = csv.str();
}

inline void run_dist_estimate(Context& c) {
  const SmoothMap f = c.map();
  const Domain dom = c.domain();
  const Metric m = c.metric();
  auto& p = c.params();
  const double a = p.number("a_exp", 0.5);
  const double lambda = p.number("lambda", 1.0);
  const std::size_t pairs = p.count("pairs", 200);
  const std::size_t mc_n = p.count("mc_n", 1000, 2);
  const std::size_t bmo_trials = p.count("bmo_trials", 32);
  const auto rep = distance_estimate_audit(f, dom, a, lambda, pairs, mc_n, c.seed(), m, bmo_trials);
  CsvWriter csv({"z1x", "z1y", "z1t", "z2x", "z2y", "z2t", "boundary_distance", "distance", "image_distance", "a_f",
                 "c_pair"});
  for (const auto& q : rep.pairs)
    csv.row() << q.z1 << q.z2 << q.boundary_distance << q.distance << q.image_distance << q.a_f << q.c_pair;
  c.summary = {{"c_max", rep.c_max},
               {"c_mean", rep.c_mean},
               {"c_median", rep.c_median},
               {"c_p90", rep.c_p90},
               {"bmo_lower_bound", rep.bmo_lower_bound},
               {"premise_threshold", rep.premise_threshold},
               {"premise_status", rep.premise_status}};
  c.csv = csv.str();
}

inline void run_curve_diam(Context& c) {
  const SmoothMap f = c.map();
  const Domain dom = c.domain();
  const Metric m = c.metric();
  auto& p = c.params();
  const double alpha = p.number("alpha", 1.0);
  const std::size_t mc_n = p.count("mc_n", 1000, 2);
  const auto& segs = p.raw("segments");
  if (!segs.is_array() || segs.empty()) JsonFields::fail(p.at("segments"), "expected a nonempty array");
  std::vector<Curve> curves;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    JsonFields s(segs[i], p.at("segments") + "[" + std::to_string(i) + "]");
    const Point start = s.point("start");
    const double theta = s.number("theta", 0.0);
    const double length = s.positive("length", 1.0);
    const std::size_t n = s.count("vertices", 33, 2);
    s.finish();
    curves.push_back(horizontal_segment(start, theta, length, n));
  }
  const auto recs = curve_diameter_audit(f, dom, curves, alpha, mc_n, c.seed(), m);
  CsvWriter csv({"curve", "length", "boundary_distance", "diam_image", "weighted_length", "ratio", "alpha_condition"});
  double worst = 0.0;
  std::size_t flagged = 0;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto& r = recs[i];
    csv.row() << i << r.length << r.boundary_distance << r.diam_image << r.weighted_length << r.ratio
              << r.alpha_condition;
    if (r.alpha_condition) worst = std::max(worst, r.ratio);
    else ++flagged;
  }
  c.summary = {{"curves", recs.size()}, {"ratio_max_admissible", worst}, {"alpha_violations", flagged}};
  c.csv = csv.str();
}

inline void run_sharpness(Context& c) {
  auto& p = c.params();
  const double k = p.number("k_exp", 0.5);
  const auto radii = p.numbers("radii", {0.5, 0.1, 0.05, 0.01, 0.005, 0.001});
  CsvWriter csv({"k_exp", "r", "diam_image", "length", "ratio"});
  bool monotone = true;
  double prev_r = 2.0, prev_ratio = 0.0;
  for (double r : radii) {
    const auto s = sharpness_probe(k, r);
    csv.row() << s.k_exp << s.r << s.diam_image << s.length << s.ratio;
    if (r < prev_r && s.ratio < prev_ratio) monotone = false;
    prev_r = r;
    prev_ratio = s.ratio;
  }
  c.summary = {{"k_exp", k}, {"ratio_at_smallest_r", prev_ratio}, {"monotone", monotone}};
  c.csv = csv.str();
}

inline void run_compare_integrals(Context& c) {
  const SmoothMap f = c.map();
  const Domain dom = c.domain();
  const Metric m = c.metric();
  auto& p = c.params();
  const auto qs = p.numbers("q_list");
  const double p_window = p.number("p_window", 6.0);
  for (std::size_t i = 0; i < qs.size(); ++i) {
    if (qs[i] == 0.0) JsonFields::fail(p.at("q_list") + "[" + std::to_string(i) + "]", "q must be nonzero");
    if (!(qs[i] > 4.0 - p_window && qs[i] < p_window))
      JsonFields::fail(p.at("q_list") + "[" + std::to_string(i) + "]", "q outside the (4 - p, p) window");
  }
  const std::size_t mc_n = p.count("mc_n", 20000, 2);
  const std::size_t af_n = p.count("af_n", 256, 2);
  const auto w = whitney_from_params(c, dom, m, 0.25, 0.1, 4000);
  const auto rep = integral_comparability(f, dom, qs, w, mc_n, c.seed(), p_window, af_n);
  CsvWriter csv({"q", "int_opnorm", "int_opnorm_std_error", "int_af", "int_af_std_error", "ratio", "ratio_std_error"});
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (const auto& r : rep.rows) {
    csv.row() << r.q << r.int_opnorm << r.int_opnorm_std_error << r.int_af << r.int_af_std_error << r.ratio
              << r.ratio_std_error;
    lo = std::min(lo, r.ratio);
    hi = std::max(hi, r.ratio);
  }
  c.summary = {{"ratio_min", lo},
               {"ratio_max", hi},
               {"covered_volume", rep.covered_volume},
               {"covered_volume_std_error", rep.covered_volume_std_error},
               {"balls", w.balls.size()}};
  c.csv = csv.str();
}

inline void run_harnack(Context& c) {
  const SmoothMap f = c.map();
  const Domain dom = c.domain();
  const Metric m = c.metric();
  auto& p = c.params();
  const std::size_t pairs = p.count("pairs_per_ball", 8);
  const std::size_t mc_n = p.count("mc_n", 256, 2);
  const std::size_t max_balls = p.count("max_balls", 0, 0);
  const double lambda_max = p.positive("lambda_max", 0.5);
  const auto w = whitney_from_params(c, dom, m, 0.25, 0.1, 4000);
  const auto rep = harnack_audit(f, dom, w, pairs, mc_n, c.seed(), max_balls, lambda_max);
  CsvWriter csv({"ball", "cx", "cy", "ct", "radius", "ratio"});
  for (const auto& b : rep.balls) csv.row() << b.ball << w.balls[b.ball].center << w.balls[b.ball].radius << b.ratio;
  c.summary = {{"max_ball_ratio", rep.max_ball_ratio}, {"balls_audited", rep.balls.size()}, {"lambda", rep.lambda}};
  c.csv = csv.str();
}

inline void run_density_metric(Context& c) {
  const Domain dom = c.domain();
  auto& p = c.params();
  const ScalarField rho =
      p.has("density") ? density_from_json(p.raw("density"), p.at("density")) : constant_field(1.0);
  const double h = p.positive("resolution", 0.05);
  const double collar = p.number("collar", 0.0);
  const double reach = p.positive("reach", 4.0);
  const double attach = p.positive("attach_reach", 3.0);
  const Point x = p.point("x", {});
  const auto radii = p.numbers("radii");
  const std::size_t mc_n = p.count("mc_n", 20000, 2);
  const std::size_t checks = p.count("pair_checks", 0, 0);
  const double check_min = p.number("pair_check_min_distance", 0.0);
  const auto g = density_graph_build(dom, rho, h, collar, derive_seed(c.seed(), "graph", 0), reach, attach);
  const auto rep = ahlfors_audit(g, x, radii, mc_n, derive_seed(c.seed(), "ahlfors", 0));
  CsvWriter csv({"r", "mu", "std_error", "mu_over_r4"});
  for (const auto& r : rep.radii) csv.row() << r.r << r.mu << r.std_error << r.mu / std::pow(r.r, 4);
  c.summary = {{"nodes", g.nodes().size()},
               {"edges", g.edge_count()},
               {"loglog_slope", rep.loglog_slope},
               {"upper_constant", rep.upper_constant},
               {"lower_constant", rep.lower_constant},
               {"constant_spread", rep.upper_constant / rep.lower_constant},
               {"density", rho.name}};
  if (checks > 0) {
    // graph distance against rho(x) * d_s, meaningful for constant densities
    const double scale = rho(x);
    const auto table = g.distances_from(x);
    const auto qs = sample_interior(dom, checks, derive_seed(c.seed(), "pair-check", 0), collar);
    double worst = 0.0;
    std::size_t used = 0;
    for (const Point& q : qs) {
      const double ds = dist(Metric::SubRiemannian, x, q);
      if (ds <= check_min) continue;
      worst = std::max(worst, std::abs(g.distance_to(table, q) / (scale * ds) - 1.0));
      ++used;
    }
    c.summary["pair_checks"] = used;
    c.summary["pair_rel_error_max"] = worst;
  }
  c.csv = csv.str();
}

}  // namespace detail

inline const std::vector<ExperimentInfo>& experiments() {
  static const std::vector<ExperimentInfo> list = {
      {"dist", "dist",
       "Korányi and sub-Riemannian distances for point pairs, with the ratio d_s/d_K, which stays in [1, sqrt(pi)].",
       {"domain (when sampling)"},
       {{"pairs", "[[p, q], ...] explicit pairs"}, {"samples", "1000 random pairs from domain"}},
       detail::run_dist},
      {"af", "average_derivative_estimate",
       "Average derivative a_f(x) = exp(mean of log J_f / 4) over the maximal ball B(x, d(x, bd)/shrink).",
       {"map", "domain", "metric"},
       {{"points", "explicit [x, y, t] list"}, {"samples", "16"}, {"shrink", "1"}, {"mc_n", "2000"}},
       detail::run_af},
      {"bmo", "bmo_estimate",
       "Lower bound for the local BMO norm of log J_f over balls whose factor-enlargement stays in the domain.",
       {"map", "domain", "metric"},
       {{"factor", "3"}, {"ball_trials", "32"}, {"mc_n", "2000"}},
       detail::run_bmo},
      {"whitney", "whitney",
       "Whitney-type cover: every ball has diameter comparable to its boundary distance, probes are covered, "
       "overlap stays bounded.",
       {"domain", "metric"},
       {{"lambda", "0.25"}, {"collar", "0.1"}, {"grid", "20000 candidate centers"}, {"probes", "20000"}},
       detail::run_whitney},
      {"modulus", "ring_modulus_bounds",
       "Modulus of the curve family joining the two boundary spheres of a Korányi ring, against omega4 (log k)^-3.",
       {},
       {{"center", "[0, 0, 0]"},
        {"r", "1"},
        {"k", "[2, 4, 8, 16]"},
        {"mc_n", "200000"},
        {"curves", "512"},
        {"points_per_curve", "64"},
        {"grid", "32"},
        {"iterations", "2000"},
        {"omega4", "2 pi^2"}},
       detail::run_modulus},
      {"koebe", "koebe_scan",
       "Koebe-type distortion: a_f(x) and d(f(x), bd f(dom)) / d(x, bd dom) agree up to a bounded factor c_hat.",
       {"map", "domain", "image_domain (optional)", "metric"},
       {{"points", "64"}, {"mc_n", "2000"}, {"shrink", "1"}, {"boundary_samples", "4096 when f(dom) is not exact"}},
       detail::run_koebe},
      {"qs", "qs_profile",
       "Egg-yolk quasisymmetry: on a shrunken ball the three-point ratio of images is controlled by a function "
       "eta of the original ratio t.",
       {"map", "domain", "metric"},
       {{"x", "ball center (required)"},
        {"shrink", "5"},
        {"triples", "2000"},
        {"sphere_points", "256"},
        {"bins", "16"}},
       detail::run_qs},
      {"ball-image", "ball_image_geometry",
       "Image of a ball: diameter against distance to the image boundary, and the ring B' in f(B) in kB'.",
       {"map", "domain or image_domain", "metric"},
       {{"center", "(required)"}, {"radius", "1"}, {"samples", "512"}, {"boundary_samples", "4096"}},
       detail::run_ball_image},
      {"dist-estimate", "distance_estimate_audit",
       "Hölder-type distance estimate d(f z1, f z2) <= c a_f(z1) d(z1, bd)^a d(z1, z2)^(1-a) for close pairs; "
       "the BMO premise on log J_f is reported as violated or not refuted.",
       {"map", "domain", "metric"},
       {{"a_exp", "0.5"}, {"lambda", "1"}, {"pairs", "200"}, {"mc_n", "1000"}, {"bmo_trials", "32"}},
       detail::run_dist_estimate},
      {"curve-diam", "curve_diameter_audit",
       "Curves long compared with their boundary distance have image diameter at most C times the a_f-weighted "
       "length.",
       {"map", "domain", "metric"},
       {{"segments", "[{start, theta, length, vertices}] horizontal segments"}, {"alpha", "1"}, {"mc_n", "1000"}},
       detail::run_curve_diam},
      {"sharpness", "sharpness_probe",
       "Why the length condition is needed: the x-axis radial stretch gives diameter/length = r^(k-1), unbounded "
       "as r shrinks.",
       {},
       {{"k_exp", "0.5"}, {"radii", "[0.5, 0.1, 0.05, 0.01, 0.005, 0.001]"}},
       detail::run_sharpness},
      {"compare-integrals", "integral_comparability",
       "Integrals of ||D_H f||^q and a_f^q over the collar-restricted domain are comparable for q in (4-p, p).",
       {"map", "domain", "metric"},
       {{"q_list", "(required, nonzero)"},
        {"p_window", "6"},
        {"lambda", "0.25"},
        {"collar", "0.1"},
        {"grid", "4000"},
        {"mc_n", "20000"},
        {"af_n", "256"}},
       detail::run_compare_integrals},
      {"harnack", "harnack_audit",
       "Harnack inequality for a_f: a_f(x) <= C a_f(y) within each small Whitney ball.",
       {"map", "domain", "metric"},
       {{"lambda", "0.25"},
        {"collar", "0.1"},
        {"grid", "4000"},
        {"pairs_per_ball", "8"},
        {"mc_n", "256"},
        {"max_balls", "0 = all"},
        {"lambda_max", "0.5"}},
       detail::run_harnack},
      {"density-metric", "density_graph_build + ahlfors_audit",
       "Density length metric d_rho on a graph; mu_rho(B_rho(x, r)) grows like r^4 (upper Ahlfors regularity, "
       "two-sided for constant densities on quasiconvex domains).",
       {"domain"},
       {{"density", "constant(1) | af(map)"},
        {"resolution", "0.05"},
        {"collar", "0"},
        {"reach", "4"},
        {"attach_reach", "3"},
        {"x", "[0, 0, 0]"},
        {"radii", "(required)"},
        {"mc_n", "20000"},
        {"pair_checks", "0"},
        {"pair_check_min_distance", "0"}},
       detail::run_density_metric},
  };
  return list;
}

inline const ExperimentInfo* find_experiment(const std::string& name) {
  for (const auto& e : experiments())
    if (e.name == name) return &e;
  return nullptr;
}

// ---------------------------------------------------------------------------
// Catalog

inline json catalog_json() {
  json maps = json::array({
      {{"kind", "Identity"}, {"params", json::object()}, {"string", "Identity"}},
      {{"kind", "LeftTranslation"}, {"params", {{"g", "[x, y, t]"}}}, {"string", "LeftTranslation(x, y, t)"}},
      {{"kind", "Dilation"}, {"params", {{"lambda", "> 0"}}}, {"string", "Dilation(lambda)"}},
      {{"kind", "Rotation"}, {"params", {{"theta", "radians"}}}, {"string", "Rotation(theta)"}},
      {{"kind", "HorizontalStretch"}, {"params", {{"a", "> 0"}}}, {"string", "HorizontalStretch(a)"}},
      {{"kind", "Shear"},
       {"params", {{"phi", "expression in x"}}},
       {"string", "Shear(phi)"},
       {"note", "(x, y + phi(x), t + 4 Phi(x) - 2 x phi(x)), Phi' = phi; J = 1"}},
      {{"kind", "KoranyiInversion"}, {"params", json::object()}, {"string", "KoranyiInversion"}},
      {{"kind", "dsl"},
       {"params", {{"fx", "expr"}, {"fy", "expr"}, {"ft", "expr"}}},
       {"string", "UserDSL(fx, fy, ft)"}},
      {{"kind", "Composition"}, {"params", {{"parts", "[outer, ..., inner]"}}}, {"string", "A o B"}},
  });
  json domains = json::array({
      {{"kind", "KoranyiBall"}, {"params", {{"center", "[0, 0, 0]"}, {"radius", "> 0"}}},
       {"string", "KoranyiBall(r[, cx, cy, ct])"}},
      {{"kind", "KoranyiAnnulus"}, {"params", {{"center", "[0, 0, 0]"}, {"r_in", "> 0"}, {"r_out", "> r_in"}}},
       {"string", "KoranyiAnnulus(r_in, r_out[, cx, cy, ct])"}},
      {{"kind", "PuncturedSpace"}, {"params", {{"puncture", "[0, 0, 0]"}, {"window", "2"}}},
       {"string", "PuncturedSpace[(px, py, pt[, window])]"}},
      {{"kind", "Box"}, {"params", {{"lo", "[x, y, t]"}, {"hi", "[x, y, t]"}}},
       {"string", "Box(lo_x, lo_y, lo_t, hi_x, hi_y, hi_t)"}},
  });
  json exps = json::array();
  for (const auto& e : experiments()) {
    json params = json::object();
    for (const auto& [k, v] : e.params) params[k] = v;
    exps.push_back({{"name", e.name}, {"operation", e.operation}, {"audits", e.audits}, {"inputs", e.keys},
                    {"params", params}});
  }
  return {{"maps", maps},
          {"domains", domains},
          {"densities", json::array({"constant(c)", "af(map)"})},
          {"metrics", json::array({"koranyi", "subriemannian"})},
          {"experiments", exps}};
}

inline std::string catalog_text() {
  const json c = catalog_json();
  std::ostringstream os;
  os << "Maps (config object {\"kind\": ...} or string form):\n";
  for (const auto& m : c["maps"]) {
    os << "  " << m["string"].get<std::string>();
    if (m.contains("note")) os << "  " << m["note"].get<std::string>();
    os << '\n';
  }
  os << "\nDomains:\n";
  for (const auto& d : c["domains"]) os << "  " << d["string"].get<std::string>() << '\n';
  os << "\nDensities: constant(c), af(map)\nMetrics: koranyi, subriemannian\n\nExperiments:\n";
  for (const auto& e : c["experiments"]) {
    os << "  " << e["name"].get<std::string>() << "  [" << e["operation"].get<std::string>() << "]\n";
    os << "    " << e["audits"].get<std::string>() << '\n';
    for (auto it = e["params"].begin(); it != e["params"].end(); ++it)
      os << "    params." << it.key() << ": " << it.value().get<std::string>() << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Config loading and execution

/// Parses config text; syntax errors carry line and column.
inline json parse_config_text(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    const std::size_t stop = std::min(e.byte == 0 ? 0 : e.byte - 1, text.size());
    for (std::size_t i = 0; i < stop; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::string what = e.what();
    const auto colon = what.find(": ", what.find("parse error"));
    throw ConfigurationError(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": invalid JSON" +
                             (colon != std::string::npos ? what.substr(colon) : std::string()));
  }
}

inline json load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigurationError(path.string() + ": cannot open config file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

namespace detail {

// Keys are <field>_min or <field>_max. When the stripped name is not a
// summary field the key itself is taken as the field (ratio_min, c_max, ...).
inline std::vector<std::string> check_expectations(const json& expect, const json& summary) {
  std::vector<std::string> failures;
  if (!expect.is_object()) JsonFields::fail("expect", "expected an object");
  for (auto it = expect.begin(); it != expect.end(); ++it) {
    const std::string key = it.key();
    const bool is_min = key.ends_with("_min");
    if (!is_min && !key.ends_with("_max")) JsonFields::fail("expect." + key, "key must end in _min or _max");
    std::string field = key.substr(0, key.size() - 4);
    if (!summary.contains(field)) field = key;
    if (!summary.contains(field) || !(summary[field].is_number() || summary[field].is_boolean()))
      JsonFields::fail("expect." + key, "no numeric summary field '" + field + "'");
    if (!it.value().is_number()) JsonFields::fail("expect." + key, "expected a number");
    const double got = summary[field].is_boolean() ? (summary[field].get<bool>() ? 1.0 : 0.0)
                                                   : summary[field].get<double>();
    const double want = it.value().get<double>();
    if (is_min ? !(got >= want) : !(got <= want))
      failures.push_back(field + " = " + summary[field].dump() + (is_min ? " below " : " above ") + it.value().dump());
  }
  return failures;
}

inline std::string sanitize_stem(std::string s) {
  for (char& ch : s)
    if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.')) ch = '_';
  return s.empty() ? std::string("run") : s;
}

}  // namespace detail

/// Validates cfg, runs the experiment and writes <dir>/<stem>.json and .csv.
/// Throws on configuration problems; audit failures come back in Outcome.
inline Outcome execute(const json& cfg, const Overrides& ov = {}, bool write_files = true) {
  JsonFields top(cfg, "");
  const auto& version = top.raw("version");
  if (!version.is_number_integer() || version.get<int>() != kConfigVersion)
    JsonFields::fail("version", "unsupported config version (expected " + std::to_string(kConfigVersion) + ")");
  const std::string name = top.string("experiment");
  const ExperimentInfo* info = find_experiment(name);
  if (!info) JsonFields::fail("experiment", "unknown experiment '" + name + "'; see the catalog subcommand");

  std::uint64_t seed = 1;
  if (top.has("seed")) {
    const auto& s = cfg.at("seed");
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long long>() >= 0))
      JsonFields::fail("seed", "expected a nonnegative integer");
    seed = s.get<std::uint64_t>();
  }
  if (ov.seed) seed = *ov.seed;
  int nthreads = static_cast<int>(top.count("threads", 0, 0));
  if (ov.threads) nthreads = *ov.threads;

  std::string out_dir = "out", stem = detail::sanitize_stem(top.string("name", name));
  if (top.has("output")) {
    JsonFields out(cfg.at("output"), "output");
    out_dir = out.string("dir", out_dir);
    stem = detail::sanitize_stem(out.string("stem", stem));
    out.finish();
  }
  if (const char* env = std::getenv("HEIS_OUT_DIR"); env && *env) out_dir = env;
  if (ov.out_dir) out_dir = *ov.out_dir;

  set_threads(nthreads);
  Context ctx(cfg, seed);
  ctx.mark_common();
  const auto t0 = std::chrono::steady_clock::now();
  info->run(ctx);
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ctx.params().finish();
  ctx.top().finish();

  Outcome o;
  if (cfg.contains("expect")) o.failures = detail::check_expectations(cfg.at("expect"), ctx.summary);
  o.passed = o.failures.empty();
  o.csv = ctx.csv;
  o.report = {{"version", kConfigVersion},
              {"experiment", name},
              {"operation", info->operation},
              {"seed", seed},
              {"summary", ctx.summary},
              {"passed", o.passed},
              {"failures", o.failures},
              {"config", cfg},
              {"elapsed_seconds", elapsed}};
  if (!ctx.details.empty()) o.report["details"] = ctx.details;

  if (write_files) {
    std::filesystem::create_directories(out_dir);
    o.json_path = std::filesystem::path(out_dir) / (stem + ".json");
    o.csv_path = std::filesystem::path(out_dir) / (stem + ".csv");
    std::ofstream(o.json_path, std::ios::binary) << o.report.dump(2) << '\n';
    std::ofstream(o.csv_path, std::ios::binary) << o.csv;
  }
  return o;
}

/// Maps library errors onto exit codes and prints a one-line diagnostic.
template <class Fn>
int guarded(Fn&& fn, std::ostream& err) {
  try {
    return fn();
  } catch (const ConfigurationError& e) {
    err << "configuration error: " << e.what() << '\n';
  } catch (const InvalidArgument& e) {
    err << "invalid argument: " << e.what() << '\n';
  } catch (const ParseError& e) {
    err << e.what() << '\n';
  } catch (const NameError& e) {
    err << e.what() << '\n';
  } catch (const DomainError& e) {
    err << "domain error: " << e.what() << '\n';
  } catch (const Error& e) {
    err << "runtime failure: " << e.what() << '\n';
    return kExitAudit;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "output error: " << e.what() << '\n';
  }
  return kExitConfig;
}

inline int report_outcome(const Outcome& o, std::ostream& out) {
  out << o.report["experiment"].get<std::string>() << ": " << (o.passed ? "pass" : "FAIL");
  for (auto it = o.report["summary"].begin(); it != o.report["summary"].end(); ++it)
    if (it.value().is_primitive()) out << "  " << it.key() << "=" << it.value().dump();
  out << '\n';
  for (const auto& f : o.failures) out << "  expectation failed: " << f << '\n';
  if (!o.json_path.empty()) out << "  wrote " << o.json_path.string() << " and " << o.csv_path.string() << '\n';
  return o.passed ? kExitPass : kExitAudit;
}

inline int run_file(const std::string& path, const Overrides& ov, std::ostream& out, std::ostream& err) {
  return guarded([&] {
    if (!std::filesystem::exists(path)) throw ConfigurationError(path + ": no such file");
    return report_outcome(execute(load_config(path), ov), out);
  }, err);
}

namespace detail {

// "key=value": value parsed as JSON when it parses, else kept as a string.
inline void assign_kv(json& obj, const std::string& kv, const std::string& flag) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigurationError(flag + " expects key=value, got '" + kv + "'");
  const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
  json v = json::parse(val, nullptr, false);
  obj[key] = v.is_discarded() ? json(val) : v;
}

inline json spec_value(const std::string& s) {
  json v = json::parse(s, nullptr, false);
  return v.is_discarded() || v.is_number() ? json(s) : v;
}

}  // namespace detail

/// Entry point of the heislab binary.
inline int cli_main(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"heislab: quasiconformal analysis laboratory on the Heisenberg group"};
  app.require_subcommand(1);
  Overrides ov;
  std::uint64_t seed = 0;
  int threads = 0;
  std::string out_dir;
  auto* seed_opt = app.add_option("--seed", seed, "Seed for every random stream")->check(CLI::NonNegativeNumber);
  auto* threads_opt = app.add_option("--threads", threads, "Worker threads, 0 = all cores")->check(CLI::NonNegativeNumber);
  auto* out_opt = app.add_option("--out-dir", out_dir, "Output directory (overrides HEIS_OUT_DIR and config)");
  app.fallthrough();

  std::string config_path;
  auto* run = app.add_subcommand("run", "Run a JSON config");
  run->add_option("config", config_path, "Config file")->required();

  bool as_json = false;
  auto* cat = app.add_subcommand("catalog", "List maps, domains and experiments");
  cat->add_flag("--json", as_json, "Machine-readable output");

  struct Sub {
    const ExperimentInfo* info;
    CLI::App* app;
    std::string map, domain, image_domain, metric, name, config;
    std::vector<std::string> params, expect;
  };
  std::vector<std::unique_ptr<Sub>> subs;
  for (const auto& e : experiments()) {
    auto s = std::make_unique<Sub>();
    s->info = &e;
    s->app = app.add_subcommand(e.name, e.audits);
    s->app->add_option("--map", s->map, "Map spec, e.g. Dilation(2) or JSON object");
    s->app->add_option("--domain", s->domain, "Domain spec, e.g. PuncturedSpace or JSON object");
    s->app->add_option("--image-domain", s->image_domain, "Image domain spec");
    s->app->add_option("--metric", s->metric, "koranyi or subriemannian");
    s->app->add_option("--name", s->name, "Output stem");
    s->app->add_option("--param,-p", s->params, "Experiment parameter key=value (JSON value)");
    s->app->add_option("--expect,-e", s->expect, "Pass criterion, e.g. c_hat_max=1.05");
    subs.push_back(std::move(s));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitConfig;
  }
  if (*seed_opt) ov.seed = seed;
  if (*threads_opt) ov.threads = threads;
  if (*out_opt) ov.out_dir = out_dir;

  if (*cat) {
    out << (as_json ? catalog_json().dump(2) + "\n" : catalog_text());
    return kExitPass;
  }
  if (*run) return run_file(config_path, ov, out, err);

  for (const auto& s : subs) {
    if (!*s->app) continue;
    return guarded([&] {
      json cfg = {{"version", kConfigVersion}, {"experiment", s->info->name}};
      if (!s->map.empty()) cfg["map"] = detail::spec_value(s->map);
      if (!s->domain.empty()) cfg["domain"] = detail::spec_value(s->domain);
      if (!s->image_domain.empty()) cfg["image_domain"] = detail::spec_value(s->image_domain);
      if (!s->metric.empty()) cfg["metric"] = s->metric;
      if (!s->name.empty()) cfg["name"] = s->name;
      json params = json::object(), expect = json::object();
      for (const auto& kv : s->params) detail::assign_kv(params, kv, "--param");
      for (const auto& kv : s->expect) detail::assign_kv(expect, kv, "--expect");
      if (!params.empty()) cfg["params"] = params;
      if (!expect.empty()) cfg["expect"] = expect;
      return report_outcome(execute(cfg, ov), out);
    }, err);
  }
  return kExitConfig;
}

}  // namespace heis::cli
