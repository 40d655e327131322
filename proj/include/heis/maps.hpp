#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "heis/domain.hpp"
#include "heis/errors.hpp"
#include "heis/expr.hpp"
#include "heis/parallel.hpp"
#include "heis/point.hpp"

namespace heis {

/// D_H f in the X, Y frame with its derived scalars.
struct HorizontalDifferential {
  double m11 = 1.0, m12 = 0.0, m21 = 0.0, m22 = 1.0;
  double det = 1.0;
  double op_norm = 1.0;
  double jacobian = 1.0;
  double distortion = 1.0;

  static HorizontalDifferential from(double a, double b, double c, double d) {
    HorizontalDifferential h;
    h.m11 = a;
    h.m12 = b;
    h.m21 = c;
    h.m22 = d;
    h.det = a * d - b * c;
    const double fro = a * a + b * b + c * c + d * d;
    const double disc = std::sqrt(std::max(0.0, fro * fro - 4.0 * h.det * h.det));
    h.op_norm = std::sqrt(0.5 * (fro + disc));
    h.jacobian = h.det * h.det;
    if (h.jacobian > 0.0) {
      const double op2 = h.op_norm * h.op_norm;
      h.distortion = std::max(1.0, op2 * op2 / h.jacobian);
    } else {
      h.distortion = std::numeric_limits<double>::infinity();
    }
    return h;
  }

  /// this * rhs, as matrices.
  HorizontalDifferential times(const HorizontalDifferential& r) const {
    return from(m11 * r.m11 + m12 * r.m21, m11 * r.m12 + m12 * r.m22, m21 * r.m11 + m22 * r.m21,
                m21 * r.m12 + m22 * r.m22);
  }

  bool finite() const noexcept {
    return std::isfinite(m11) && std::isfinite(m12) && std::isfinite(m21) && std::isfinite(m22);
  }
};

enum class MapKind {
  LeftTranslation,
  Dilation,
  Rotation,
  HorizontalStretch,
  Shear,
  KoranyiInversion,
  Composition,
  UserDSL
};

namespace detail {

// Integral of f over [0, x] by composite 8-point Gauss-Legendre.
template <class F>
double integrate_from_zero(const F& f, double x) {
  static constexpr std::array<double, 4> nodes{0.1834346424956498, 0.5255324099163290, 0.7966664774136267,
                                               0.9602898564975363};
  static constexpr std::array<double, 4> weights{0.3626837833783620, 0.3137066458778873, 0.2223810344533745,
                                                 0.1012285362903763};
  if (x == 0.0) return 0.0;
  const int panels = std::max(1, static_cast<int>(std::ceil(std::abs(x) / 0.25)));
  const double h = x / panels;
  double sum = 0.0;
  for (int k = 0; k < panels; ++k) {
    const double mid = (k + 0.5) * h;
    double s = 0.0;
    for (int j = 0; j < 4; ++j) s += weights[j] * (f(mid - 0.5 * h * nodes[j]) + f(mid + 0.5 * h * nodes[j]));
    sum += 0.5 * h * s;
  }
  return sum;
}

}  // namespace detail

/// Evaluatable map of H^1 with an optional closed-form horizontal differential.
class SmoothMap {
 public:
  static SmoothMap left_translation(Point g) {
    SmoothMap m(MapKind::LeftTranslation);
    m.g_ = g;
    return m;
  }
  static SmoothMap dilation(double lambda) {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw InvalidArgument("dilation factor must be positive");
    SmoothMap m(MapKind::Dilation);
    m.a_ = lambda;
    return m;
  }
  static SmoothMap rotation(double theta) {
    if (!std::isfinite(theta)) throw InvalidArgument("rotation angle must be finite");
    SmoothMap m(MapKind::Rotation);
    m.a_ = theta;
    return m;
  }
  /// (a x, y / a, t).
  static SmoothMap horizontal_stretch(double a) {
    if (!(a > 0.0) || !std::isfinite(a)) throw InvalidArgument("stretch factor must be positive");
    SmoothMap m(MapKind::HorizontalStretch);
    m.a_ = a;
    return m;
  }
  /// (x, y + phi(x), t + 4 Phi(x) - 2 x phi(x)) with Phi' = phi, Phi(0) = 0.
  static SmoothMap shear(const std::string& phi_src) {
    SmoothMap m(MapKind::Shear);
    m.src_ = phi_src;
    m.phi_ = Expr::parse(phi_src);
    if (m.phi_.depends_on(1) || m.phi_.depends_on(2)) throw InvalidArgument("shear profile must depend on x only");
    m.dphi_ = m.phi_.derivative(0);
    return m;
  }
  static SmoothMap koranyi_inversion() { return SmoothMap(MapKind::KoranyiInversion); }

  /// parts = {g, f} gives g o f: the rightmost part acts first.
  static SmoothMap compose(std::vector<SmoothMap> parts) {
    if (parts.empty()) throw InvalidArgument("composition needs at least one map");
    SmoothMap m(MapKind::Composition);
    m.parts_ = std::make_shared<const std::vector<SmoothMap>>(std::move(parts));
    return m;
  }
  static SmoothMap dsl(const std::string& fx, const std::string& fy, const std::string& ft) {
    return dsl({Expr::parse(fx), Expr::parse(fy), Expr::parse(ft)}, fx + ", " + fy + ", " + ft);
  }
  static SmoothMap dsl(std::array<Expr, 3> exprs, std::string src) {
    SmoothMap m(MapKind::UserDSL);
    m.exprs_ = std::move(exprs);
    m.src_ = std::move(src);
    return m;
  }

  MapKind kind() const noexcept { return kind_; }
  double parameter() const noexcept { return a_; }
  const Point& translation() const noexcept { return g_; }
  const std::string& source() const noexcept { return src_; }
  /// Factors of a composition, applied last to first.
  const std::vector<SmoothMap>& parts() const {
    if (!parts_) throw InvalidArgument("not a composition");
    return *parts_;
  }

  /// Relative finite-difference step: h = scale * (1 + |p|).
  double fd_scale() const noexcept { return fd_scale_; }
  SmoothMap& set_fd_scale(double s) {
    if (!(s > 0.0)) throw InvalidArgument("fd_step must be positive");
    fd_scale_ = s;
    return *this;
  }

  std::string name() const {
    switch (kind_) {
      case MapKind::LeftTranslation: return "LeftTranslation";
      case MapKind::Dilation: return "Dilation";
      case MapKind::Rotation: return "Rotation";
      case MapKind::HorizontalStretch: return "HorizontalStretch";
      case MapKind::Shear: return "Shear";
      case MapKind::KoranyiInversion: return "KoranyiInversion";
      case MapKind::Composition: return "Composition";
      case MapKind::UserDSL: return "UserDSL";
    }
    return "?";
  }

  std::string describe() const {
    std::ostringstream os;
    os.precision(17);
    switch (kind_) {
      case MapKind::LeftTranslation: os << "LeftTranslation(" << g_ << ')'; break;
      case MapKind::Dilation: os << "Dilation(" << a_ << ')'; break;
      case MapKind::Rotation: os << "Rotation(" << a_ << ')'; break;
      case MapKind::HorizontalStretch: os << "HorizontalStretch(" << a_ << ')'; break;
      case MapKind::Shear: os << "Shear(phi=" << src_ << ')'; break;
      case MapKind::KoranyiInversion: os << "KoranyiInversion"; break;
      case MapKind::Composition: {
        os << "Composition(";
        for (std::size_t i = 0; i < parts_->size(); ++i) os << (i ? ", " : "") << (*parts_)[i].describe();
        os << ')';
        break;
      }
      case MapKind::UserDSL: os << "UserDSL(" << src_ << ')'; break;
    }
    return os.str();
  }

  /// Left translations, rotations and compositions of them.
  bool is_isometry() const noexcept {
    if (kind_ == MapKind::LeftTranslation || kind_ == MapKind::Rotation) return true;
    if (kind_ == MapKind::Composition) {
      return std::all_of(parts_->begin(), parts_->end(), [](const SmoothMap& m) { return m.is_isometry(); });
    }
    return false;
  }

  Point apply(const Point& p) const {
    switch (kind_) {
      case MapKind::LeftTranslation: return g_ * p;
      case MapKind::Dilation: return {a_ * p.x, a_ * p.y, a_ * a_ * p.t};
      case MapKind::Rotation: return rotate(a_, p);
      case MapKind::HorizontalStretch: return {a_ * p.x, p.y / a_, p.t};
      case MapKind::Shear: {
        const double phi = phi_(p.x, 0.0, 0.0);
        const double big_phi = detail::integrate_from_zero([&](double s) { return phi_(s, 0.0, 0.0); }, p.x);
        return {p.x, p.y + phi, p.t + 4.0 * big_phi - 2.0 * p.x * phi};
      }
      case MapKind::KoranyiInversion: {
        const double r2 = p.x * p.x + p.y * p.y;
        const double n4 = r2 * r2 + p.t * p.t;
        if (!(n4 > 0.0)) throw DomainError("Koranyi inversion is undefined at the origin");
        return {(p.x * r2 - p.y * p.t) / n4, (p.y * r2 + p.x * p.t) / n4, -p.t / n4};
      }
      case MapKind::Composition: {
        Point q = p;
        for (auto it = parts_->rbegin(); it != parts_->rend(); ++it) q = it->apply(q);
        return q;
      }
      case MapKind::UserDSL: return {exprs_[0](p), exprs_[1](p), exprs_[2](p)};
    }
    return p;
  }

  Point operator()(const Point& p) const { return apply(p); }

  /// Closed-form D_H f when the map provides one.
  std::optional<HorizontalDifferential> analytic_differential(const Point& p) const {
    switch (kind_) {
      case MapKind::LeftTranslation: return HorizontalDifferential::from(1, 0, 0, 1);
      case MapKind::Dilation: return HorizontalDifferential::from(a_, 0, 0, a_);
      case MapKind::Rotation: {
        const double c = std::cos(a_), s = std::sin(a_);
        return HorizontalDifferential::from(c, -s, s, c);
      }
      case MapKind::HorizontalStretch: return HorizontalDifferential::from(a_, 0, 0, 1.0 / a_);
      case MapKind::Shear: return HorizontalDifferential::from(1, 0, dphi_(p.x, 0.0, 0.0), 1);
      case MapKind::Composition: {
        HorizontalDifferential acc = HorizontalDifferential::from(1, 0, 0, 1);
        Point q = p;
        for (auto it = parts_->rbegin(); it != parts_->rend(); ++it) {
          const auto d = it->analytic_differential(q);
          if (!d) return std::nullopt;
          acc = d->times(acc);
          q = it->apply(q);
        }
        return acc;
      }
      case MapKind::KoranyiInversion:
      case MapKind::UserDSL: return std::nullopt;
    }
    return std::nullopt;
  }

  /// Central differences along s -> p*(s,0,0) and s -> p*(0,s,0).
  HorizontalDifferential fd_differential(const Point& p, double h) const {
    if (!(h > 0.0) || !std::isfinite(h) || h < 1e-300) throw NumericFailure("finite-difference step underflow");
    const Point xp = apply(p * Point{h, 0, 0});
    const Point xm = apply(p * Point{-h, 0, 0});
    const Point yp = apply(p * Point{0, h, 0});
    const Point ym = apply(p * Point{0, -h, 0});
    const double inv = 1.0 / (2.0 * h);
    auto d = HorizontalDifferential::from((xp.x - xm.x) * inv, (yp.x - ym.x) * inv, (xp.y - xm.y) * inv,
                                          (yp.y - ym.y) * inv);
    if (!d.finite()) {
      std::ostringstream os;
      os << "non-finite horizontal differential of " << describe() << " at " << p;
      throw NumericFailure(os.str());
    }
    return d;
  }

  double default_step(const Point& p) const noexcept { return fd_scale_ * (1.0 + koranyi_norm(p)); }

  HorizontalDifferential horizontal_differential(const Point& p) const {
    if (auto d = analytic_differential(p)) {
      if (!d->finite()) throw NumericFailure("non-finite analytic differential");
      return *d;
    }
    return fd_differential(p, default_step(p));
  }

  /// |theta_{f(p)}(f_* T) - det D_H f(p)| with theta = dt - 2y dx + 2x dy.
  /// Zero exactly when f pulls theta back to det(D_H f) * theta along T.
  double contact_defect(const Point& p) const {
    const double h = default_step(p);
    const Point tp = apply(Point{p.x, p.y, p.t + h});
    const Point tm = apply(Point{p.x, p.y, p.t - h});
    const Point q = apply(p);
    const double inv = 1.0 / (2.0 * h);
    const double v1 = (tp.x - tm.x) * inv, v2 = (tp.y - tm.y) * inv, v3 = (tp.t - tm.t) * inv;
    const double theta = v3 - 2.0 * q.y * v1 + 2.0 * q.x * v2;
    const double defect = std::abs(theta - horizontal_differential(p).det);
    if (!std::isfinite(defect)) throw NumericFailure("non-finite contact defect");
    return defect;
  }

 private:
  explicit SmoothMap(MapKind k) : kind_(k) {}

  MapKind kind_;
  double a_ = 1.0;
  Point g_{};
  std::string src_;
  Expr phi_;
  Expr dphi_;
  std::array<Expr, 3> exprs_{};
  std::shared_ptr<const std::vector<SmoothMap>> parts_;
  double fd_scale_ = 1e-5;
};

/// "fx, fy, ft" as a UserDSL map.
inline SmoothMap parse_map(const std::string& src) {
  return SmoothMap::dsl(parse_expr_triple(src), src);
}

struct DistortionSummary {
  double K_hat = 1.0;
  Point worst_point{};
  std::size_t samples = 0;
};

/// Maximum pointwise distortion over n interior samples of dom.
inline DistortionSummary distortion_scan(const SmoothMap& f, const Domain& dom, std::size_t n, std::uint64_t seed) {
  const auto pts = sample_interior(dom, n, seed);
  std::vector<double> k(pts.size());
  std::vector<double> jac(pts.size());
  parallel_for(pts.size(), [&](std::size_t i) {
    const auto d = f.horizontal_differential(pts[i]);
    jac[i] = d.jacobian;
    k[i] = d.distortion;
  });
  DistortionSummary out;
  out.samples = pts.size();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (!(jac[i] > 0.0)) {
      std::ostringstream os;
      os << f.describe() << " has nonpositive Jacobian " << jac[i] << " at " << pts[i];
      throw DegenerateMap(os.str());
    }
    if (i == 0 || k[i] > out.K_hat) {
      out.K_hat = k[i];
      out.worst_point = pts[i];
    }
  }
  return out;
}

}  // namespace heis
