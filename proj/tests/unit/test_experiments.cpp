#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "heis/experiments.hpp"

using namespace heis;

namespace {

const Domain kPunctured = Domain::punctured({0, 0, 0});

double spread(const std::vector<double>& v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return *hi / *lo - 1.0;
}

}  // namespace

TEST(BallVolume, SubRiemannianAgainstRejection) {
  Stream s(4, "sr-volume", 0);
  const int n = 400000;
  int in = 0;
  for (int i = 0; i < n; ++i) {
    const Point u{s.uniform(-1, 1), s.uniform(-1, 1), s.uniform(-1, 1)};
    in += subriemannian_norm(u) < 1.0;
  }
  const double p = static_cast<double>(in) / n;
  const double mc = 8.0 * p, se = 8.0 * std::sqrt(p * (1 - p) / n);
  EXPECT_NEAR(subriemannian_ball_volume(1.0), mc, 4 * se);
  EXPECT_NEAR(ball_volume(Metric::SubRiemannian, 2.0), 16 * subriemannian_ball_volume(1.0), 1e-12);
  EXPECT_LT(subriemannian_ball_volume(1.0), koranyi_ball_volume(1.0));
}

TEST(ExactImage, CatalogPairs) {
  const auto ann = Domain::koranyi_annulus({0, 0, 0}, 0.5, 2.0);
  const auto inv = exact_image(SmoothMap::koranyi_inversion(), ann);
  ASSERT_TRUE(inv);
  EXPECT_EQ(inv->kind(), DomainKind::KoranyiAnnulus);
  EXPECT_DOUBLE_EQ(inv->inner_radius(), 0.5);
  EXPECT_DOUBLE_EQ(inv->outer_radius(), 2.0);

  const auto ball = Domain::koranyi_ball({0.1, 0.2, 0.3}, 0.5);
  const auto f = SmoothMap::compose({SmoothMap::dilation(2.0), SmoothMap::left_translation({1, 0, 0})});
  const auto img = exact_image(f, ball);
  ASSERT_TRUE(img);
  EXPECT_NEAR(img->outer_radius(), 1.0, 1e-15);
  EXPECT_NEAR(koranyi_dist(img->center(), f.apply(ball.center())), 0.0, 1e-15);

  EXPECT_FALSE(exact_image(SmoothMap::koranyi_inversion(), ball));
  EXPECT_FALSE(exact_image(SmoothMap::dsl("x", "y", "t"), ball));
  const auto moved = exact_image(SmoothMap::horizontal_stretch(2.0), Domain::punctured({1, 1, 0}));
  ASSERT_TRUE(moved);
  EXPECT_EQ(moved->center(), (Point{2, 0.5, 0}));
}

TEST(ExactImage, ApproximateBoundaryTracksExact) {
  const auto dom = Domain::koranyi_ball({0, 0, 0}, 1.0);
  const auto f = SmoothMap::dilation(1.5);
  const auto exact = ImageBoundary::exact(*exact_image(f, dom));
  const auto approx = ImageBoundary::approximate(f, dom, 20000, 3);
  EXPECT_TRUE(approx.is_approximate());
  EXPECT_EQ(approx.label(), "approximate boundary");
  for (const Point& p : sample_interior(dom, 30, 5)) {
    const Point q = f.apply(p);
    const double e = exact.distance(q, Metric::Koranyi), a = approx.distance(q, Metric::Koranyi);
    EXPECT_GE(a, e - 1e-9);
    EXPECT_LE(a, e + 0.06);
  }
}

TEST(Koebe, ConformalMapsOnPuncturedSpace) {
  for (const auto& f : {SmoothMap::dilation(2.0), SmoothMap::dilation(0.3), SmoothMap::rotation(0.7)}) {
    const auto rep = koebe_scan(f, kPunctured, *exact_image(f, kPunctured), Metric::Koranyi, 20, 500, 11);
    ASSERT_EQ(rep.records.size(), 20u);
    EXPECT_EQ(rep.boundary_mode, "exact");
    const double lambda = f.kind() == MapKind::Dilation ? f.parameter() : 1.0;
    for (const auto& r : rep.records) {
      EXPECT_NEAR(r.boundary_ratio, lambda, 1e-12 * lambda);
      EXPECT_NEAR(r.a_f, lambda, 1e-12 * lambda);
    }
    EXPECT_GE(rep.c_hat, 1.0);
    EXPECT_LE(rep.c_hat, 1.0 + 1e-9);
  }
}

TEST(Koebe, HorizontalStretchBoundedByA) {
  const double a = 2.0;
  const auto f = SmoothMap::horizontal_stretch(a);
  for (Metric m : {Metric::Koranyi, Metric::SubRiemannian}) {
    const auto rep = koebe_scan(f, kPunctured, kPunctured, m, 40, 200, 2);
    for (const auto& r : rep.records) {
      EXPECT_NEAR(r.a_f, 1.0, 1e-12);
      EXPECT_GE(r.boundary_ratio, 1.0 / a - 1e-12);
      EXPECT_LE(r.boundary_ratio, a + 1e-12);
    }
    EXPECT_LE(rep.c_hat, a + 1e-9);
    EXPECT_GT(rep.c_hat, 1.05);
  }
}

TEST(Koebe, InversionReproducibleAcrossSeeds) {
  const auto ann = Domain::koranyi_annulus({0, 0, 0}, 0.5, 2.0);
  const auto f = SmoothMap::koranyi_inversion();
  std::vector<double> c;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto rep = koebe_scan(f, ann, *exact_image(f, ann), Metric::Koranyi, 60, 2000, seed);
    EXPECT_TRUE(std::isfinite(rep.c_hat));
    c.push_back(rep.c_hat);
  }
  EXPECT_LT(spread(c), 0.10);
}

TEST(Koebe, ImageMismatch) {
  const auto ball = Domain::koranyi_ball({0, 0, 0}, 1.0);
  EXPECT_THROW(koebe_scan(SmoothMap::dilation(3.0), ball, ball, Metric::Koranyi, 20, 50, 1), ConfigurationError);
}

TEST(BallImage, IsometryAndDilation) {
  const auto dom = Domain::koranyi_ball({0, 0, 0}, 2.0);
  const Ball B({0.3, 0.1, 0.2}, 0.5);
  const auto id = SmoothMap::left_translation({0, 0, 0});
  const auto rot = SmoothMap::rotation(1.1);
  const auto g_rot = ball_image_geometry(rot, B, ImageBoundary::exact(*exact_image(rot, dom)), 300, 4);
  EXPECT_NEAR(g_rot.diam_image, 1.0, 1e-12);
  EXPECT_NEAR(g_rot.inner_radius, 0.5, 1e-12);
  EXPECT_NEAR(g_rot.outer_radius, 0.5, 1e-12);
  EXPECT_NEAR(g_rot.k_ratio, 1.0, 1e-12);

  const auto dil = SmoothMap::dilation(1.7);
  const auto g1 = ball_image_geometry(id, B, ImageBoundary::exact(dom), 300, 4);
  const auto g2 = ball_image_geometry(dil, B, ImageBoundary::exact(*exact_image(dil, dom)), 300, 4);
  EXPECT_NEAR(g2.diam_image, 1.7 * g1.diam_image, 1e-9);
  EXPECT_NEAR(g2.dist_image_to_boundary, 1.7 * g1.dist_image_to_boundary, 1e-6);
  EXPECT_NEAR(g2.center_image_boundary_distance, 1.7 * g1.center_image_boundary_distance, 1e-6);
  EXPECT_GT(g1.dist_image_to_boundary, 0.0);
  EXPECT_LT(g1.dist_image_to_boundary, g1.center_image_boundary_distance);
}

TEST(BallImage, InversionAwayFromPuncture) {
  const auto f = SmoothMap::koranyi_inversion();
  const Ball B({1.0, 0.0, 0.2}, 0.3);
  const auto g = ball_image_geometry(f, B, ImageBoundary::exact(kPunctured), 400, 8);
  EXPECT_GT(g.k_ratio, 1.0);
  EXPECT_LT(g.k_ratio, 10.0);
  // mapped interior samples sit inside the outer witness ball
  const Point fc = f.apply(B.center);
  for (const Point& p : sample_ball(B, 200, 9)) EXPECT_LE(koranyi_dist(f.apply(p), fc), g.outer_radius * (1 + 1e-9));
}

TEST(QuasiSymmetry, IsometryRatiosEqualT) {
  const auto dom = Domain::koranyi_ball({0, 0, 0}, 1.0);
  const auto rep = qs_profile(SmoothMap::rotation(0.4), dom, {0.1, 0.1, 0.1}, 3.0, 500, 6);
  ASSERT_EQ(rep.samples.size(), 500u);
  std::size_t total = 0;
  for (auto c : rep.bin_counts) total += c;
  EXPECT_EQ(total, 500u);
  EXPECT_EQ(rep.bin_edges.size(), 17u);
  for (const auto& s : rep.samples) EXPECT_NEAR(s.ratio, s.t, 1e-9 * s.t);
  EXPECT_NEAR(rep.H_f_hat, 1.0, 1e-9);
}

TEST(QuasiSymmetry, StretchEnvelope) {
  const double a = 1.5;
  const auto rep = qs_profile(SmoothMap::horizontal_stretch(a), kPunctured, {0.4, -0.3, 0.2}, 4.0, 2000, 2,
                              Metric::SubRiemannian);
  for (const auto& s : rep.samples) EXPECT_LE(s.ratio, a * a * s.t * (1 + 1e-9));
  EXPECT_GT(rep.H_f_hat, 1.0);
  EXPECT_LE(rep.H_f_hat, a * a * (1 + 1e-9));
}

TEST(QuasiSymmetry, DilationHIsOne) {
  const auto rep = qs_profile(SmoothMap::dilation(3.0), kPunctured, {0.4, -0.3, 0.2}, 2.0, 100, 1);
  EXPECT_NEAR(rep.H_f_hat, 1.0, 1e-9);
  EXPECT_THROW(qs_profile(SmoothMap::dilation(3.0), kPunctured, {1, 0, 0}, 1.0, 10, 1), InvalidArgument);
}

TEST(DistanceEstimate, IsometryClosedForm) {
  const auto dom = Domain::koranyi_ball({0, 0, 0}, 1.0);
  const double a = 0.4, lam = 1.5;
  const auto rep = distance_estimate_audit(SmoothMap::rotation(0.3), dom, a, lam, 50, 100, 3);
  for (const auto& p : rep.pairs) {
    EXPECT_LT(p.distance, p.boundary_distance / (2 * lam));
    EXPECT_NEAR(p.c_pair, std::pow(p.distance / p.boundary_distance, a), 1e-9);
    EXPECT_LE(p.c_pair, 1.0);
  }
  EXPECT_LE(rep.c_median, rep.c_p90);
  EXPECT_LE(rep.c_p90, rep.c_max);
  EXPECT_EQ(rep.premise_status, "not refuted");
  EXPECT_EQ(rep.bmo_lower_bound, 0.0);
}

TEST(DistanceEstimate, DilationMatchesIdentity) {
  const auto dom = Domain::koranyi_ball({0, 0, 0}, 1.0);
  const auto a = distance_estimate_audit(SmoothMap::left_translation({0, 0, 0}), dom, 0.5, 1.0, 30, 100, 8);
  const auto b = distance_estimate_audit(SmoothMap::dilation(2.5), dom, 0.5, 1.0, 30, 100, 8);
  for (std::size_t i = 0; i < 30; ++i) EXPECT_NEAR(a.pairs[i].c_pair, b.pairs[i].c_pair, 1e-9);
}

TEST(DistanceEstimate, InversionStableAndErrors) {
  const auto ann = Domain::koranyi_annulus({0, 0, 0}, 0.5, 2.0);
  std::vector<double> c;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto rep = distance_estimate_audit(SmoothMap::koranyi_inversion(), ann, 0.5, 1.0, 200, 500, seed);
    EXPECT_TRUE(std::isfinite(rep.c_max));
    c.push_back(rep.c_p90);
  }
  EXPECT_LT(spread(c), 0.25);
  EXPECT_THROW(distance_estimate_audit(SmoothMap::rotation(0), ann, 1.0, 1.0, 5, 10, 1), InvalidArgument);
  EXPECT_THROW(distance_estimate_audit(SmoothMap::rotation(0), ann, 0.5, 0.5, 5, 10, 1), ConfigurationError);
}

TEST(CurveDiameter, IsometryDilationAndStretch) {
  std::vector<Curve> curves;
  Stream s(5, "curves", 0);
  for (int i = 0; i < 5; ++i) {
    Curve c;
    Point p{0.8, 0.1 * i, 0.05};
    for (int k = 0; k < 12; ++k) {
      c.vertices.push_back(p);
      p = p * Point{s.uniform(-0.1, 0.1), s.uniform(-0.1, 0.1), s.uniform(-0.01, 0.01)};
    }
    curves.push_back(c);
  }
  const auto iso = curve_diameter_audit(SmoothMap::rotation(0.5), kPunctured, curves, 0.5, 50, 1);
  const auto dil = curve_diameter_audit(SmoothMap::dilation(3.0), kPunctured, curves, 0.5, 50, 1);
  for (std::size_t i = 0; i < curves.size(); ++i) {
    EXPECT_LE(iso[i].ratio, 1.0 + 1e-12);
    EXPECT_NEAR(iso[i].weighted_length, iso[i].length, 1e-12);
    EXPECT_NEAR(dil[i].ratio, iso[i].ratio, 1e-9);
  }

  const double a = 1.8;
  const auto seg = horizontal_segment({0.5, 0, 0}, 0.0, 1.0, 10);
  const auto st = curve_diameter_audit(SmoothMap::horizontal_stretch(a), kPunctured, {seg}, 1.0, 50, 1);
  EXPECT_NEAR(st[0].ratio, a, 1e-12);
  EXPECT_NEAR(st[0].boundary_distance, 0.5, 1e-12);
  EXPECT_TRUE(st[0].alpha_condition);

  // short curve far from the boundary fails the length condition
  const auto tiny = horizontal_segment({1.0, 0, 0}, 0.0, 0.01, 2);
  EXPECT_FALSE(curve_diameter_audit(SmoothMap::rotation(0), kPunctured, {tiny}, 0.5, 20, 1)[0].alpha_condition);
  EXPECT_THROW(curve_diameter_audit(SmoothMap::rotation(0), kPunctured, {seg}, 0.0, 20, 1), InvalidArgument);
}

TEST(Sharpness, AxisPowerLaw) {
  const auto p = sharpness_probe(0.5, 0.01);
  EXPECT_NEAR(p.diam_image, 0.1, 1e-15);
  EXPECT_NEAR(p.length, 0.01, 1e-15);
  EXPECT_NEAR(p.ratio, 10.0, 1e-12);
  EXPECT_DOUBLE_EQ(sharpness_probe(1.0, 0.3).ratio, 1.0);
  double prev = 0.0;
  for (double r : {0.5, 0.1, 0.01, 1e-4, 1e-8}) {
    const double q = sharpness_probe(0.5, r).ratio;
    EXPECT_GT(q, prev);
    prev = q;
  }
  EXPECT_THROW(sharpness_probe(0.5, 1.0), InvalidArgument);
  EXPECT_THROW(sharpness_probe(0.0, 0.5), InvalidArgument);
}

class IntegralFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { w_ = new WhitneyDecomposition(whitney(dom(), 0.4, 0.3, 4000, Metric::Koranyi, 3)); }
  static void TearDownTestSuite() { delete w_; }
  static Domain dom() { return Domain::koranyi_ball({0, 0, 0}, 1.0); }
  static WhitneyDecomposition* w_;
};
WhitneyDecomposition* IntegralFixture::w_ = nullptr;

TEST_F(IntegralFixture, ConstantMapsAndCoveredVolume) {
  const auto rep = integral_comparability(SmoothMap::dilation(1.5), dom(), {-1, 2, 3}, *w_, 4000, 7);
  ASSERT_EQ(rep.rows.size(), 3u);
  for (const auto& r : rep.rows) {
    EXPECT_NEAR(r.ratio, 1.0, 1e-12);
    EXPECT_NEAR(r.int_af, std::pow(1.5, r.q) * rep.covered_volume, 1e-9 * r.int_af);
  }
  // oracle: fraction of uniform points of the domain inside the union
  const BallIndex idx(w_->balls);
  const auto pts = sample_interior(dom(), 40000, 12);
  std::size_t in = 0;
  for (const Point& p : pts) in += idx.multiplicity(p) > 0;
  const double frac = static_cast<double>(in) / pts.size();
  const double vol = koranyi_ball_volume(1.0) * frac;
  const double se = koranyi_ball_volume(1.0) * std::sqrt(frac * (1 - frac) / pts.size());
  EXPECT_NEAR(rep.covered_volume, vol, 4 * std::hypot(se, rep.covered_volume_std_error));

  const auto rot = integral_comparability(SmoothMap::rotation(0.3), dom(), {2}, *w_, 500, 7);
  EXPECT_NEAR(rot.rows[0].ratio, 1.0, 1e-12);
}

TEST_F(IntegralFixture, StretchRatioIsPowerOfA) {
  const double a = 2.0;
  const auto rep = integral_comparability(SmoothMap::horizontal_stretch(a), dom(), {-1, 2, 3}, *w_, 500, 7);
  for (const auto& r : rep.rows) EXPECT_NEAR(r.ratio, std::pow(a, r.q), 1e-9 * std::pow(a, r.q));
}

TEST_F(IntegralFixture, WindowAndErrors) {
  const auto f = SmoothMap::dilation(1.0);
  EXPECT_THROW(integral_comparability(f, dom(), {0.0}, *w_, 100, 1), InvalidArgument);
  EXPECT_THROW(integral_comparability(f, dom(), {6.5}, *w_, 100, 1), InvalidArgument);
  EXPECT_THROW(integral_comparability(f, dom(), {-2.5}, *w_, 100, 1), InvalidArgument);
  EXPECT_NO_THROW(integral_comparability(f, dom(), {-2.5}, *w_, 100, 1, 7.0));
  EXPECT_THROW(integral_comparability(f, dom(), {}, *w_, 100, 1), InvalidArgument);
}

TEST_F(IntegralFixture, HarnackConstantAndInversion) {
  const auto c = harnack_audit(SmoothMap::dilation(2.0), dom(), *w_, 3, 100, 1, 20);
  EXPECT_EQ(c.balls.size(), 20u);
  EXPECT_NEAR(c.max_ball_ratio, 1.0, 1e-12);

  const auto ann = Domain::koranyi_annulus({0, 0, 0}, 0.5, 2.0);
  const auto wa = whitney(ann, 0.4, 0.3, 3000, Metric::Koranyi, 2);
  std::vector<double> r;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto h = harnack_audit(SmoothMap::koranyi_inversion(), ann, wa, 4, 1500, seed, 40);
    EXPECT_TRUE(std::isfinite(h.max_ball_ratio));
    EXPECT_GE(h.max_ball_ratio, 1.0);
    r.push_back(h.max_ball_ratio);
  }
  EXPECT_LT(spread(r), 0.10);
  EXPECT_THROW(harnack_audit(SmoothMap::dilation(2.0), dom(), *w_, 3, 100, 1, 20, 0.3), ConfigurationError);
}
