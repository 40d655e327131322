#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "heis/domain.hpp"
#include "heis/errors.hpp"
#include "heis/expr.hpp"
#include "heis/maps.hpp"
#include "heis/metric.hpp"
#include "heis/sampling.hpp"

namespace heis {

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\n\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\n\r");
  return std::string(s.substr(b, e - b + 1));
}

// Splits on sep at parenthesis depth zero.
inline std::vector<std::string> split_top(std::string_view s, std::string_view sep) {
  std::vector<std::string> out;
  int depth = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '(') ++depth;
    else if (s[i] == ')') --depth;
    else if (depth == 0 && s.substr(i, sep.size()) == sep) {
      out.push_back(trim(s.substr(start, i - start)));
      start = i + sep.size();
      i += sep.size() - 1;
    }
  }
  out.push_back(trim(s.substr(start)));
  return out;
}

struct Call {
  std::string name;
  std::string args;  // raw text between the outer parentheses
  bool has_args = false;
};

inline Call parse_call(const std::string& src) {
  const std::string s = trim(src);
  Call c;
  const auto open = s.find('(');
  if (open == std::string::npos) {
    c.name = s;
    return c;
  }
  if (s.back() != ')') throw ConfigurationError("unbalanced parentheses in '" + s + "'");
  c.name = trim(s.substr(0, open));
  c.args = s.substr(open + 1, s.size() - open - 2);
  c.has_args = true;
  return c;
}

inline std::vector<double> parse_numbers(const Call& c) {
  std::vector<double> out;
  if (!c.has_args || trim(c.args).empty()) return out;
  for (const auto& tok : split_top(c.args, ",")) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size() || tok.empty()) throw ConfigurationError("'" + c.name + "': expected a number, got '" + tok + "'");
    out.push_back(v);
  }
  return out;
}

inline void expect_arity(const Call& c, std::initializer_list<std::size_t> allowed, std::size_t got) {
  for (auto a : allowed)
    if (a == got) return;
  std::ostringstream os;
  os << "'" << c.name << "' takes";
  bool first = true;
  for (auto a : allowed) os << (first ? " " : " or ") << a, first = false;
  os << " arguments, got " << got;
  throw ConfigurationError(os.str());
}

}  // namespace detail

/// Catalog map from text: Dilation(l), Rotation(theta), HorizontalStretch(a),
/// LeftTranslation(x, y, t), KoranyiInversion, Identity, Shear(phi(x)),
/// UserDSL(fx, fy, ft). "A o B" composes (B first).
inline SmoothMap parse_map_spec(const std::string& src) {
  const auto parts = detail::split_top(src, " o ");
  if (parts.size() > 1) {
    std::vector<SmoothMap> maps;
    for (const auto& p : parts) maps.push_back(parse_map_spec(p));
    return SmoothMap::compose(std::move(maps));
  }
  const auto c = detail::parse_call(src);
  if (c.name == "Shear") {
    if (!c.has_args) throw ConfigurationError("Shear needs an expression phi(x)");
    return SmoothMap::shear(detail::trim(c.args));
  }
  if (c.name == "UserDSL") {
    if (!c.has_args) throw ConfigurationError("UserDSL needs three expressions");
    return parse_map(c.args);
  }
  const auto v = detail::parse_numbers(c);
  if (c.name == "Dilation") return detail::expect_arity(c, {1}, v.size()), SmoothMap::dilation(v[0]);
  if (c.name == "Rotation") return detail::expect_arity(c, {1}, v.size()), SmoothMap::rotation(v[0]);
  if (c.name == "HorizontalStretch")
    return detail::expect_arity(c, {1}, v.size()), SmoothMap::horizontal_stretch(v[0]);
  if (c.name == "LeftTranslation")
    return detail::expect_arity(c, {3}, v.size()), SmoothMap::left_translation({v[0], v[1], v[2]});
  if (c.name == "KoranyiInversion") return detail::expect_arity(c, {0}, v.size()), SmoothMap::koranyi_inversion();
  if (c.name == "Identity") return detail::expect_arity(c, {0}, v.size()), SmoothMap::left_translation({});
  throw ConfigurationError("unknown map '" + c.name + "'; see the catalog subcommand");
}

/// Catalog domain from text: KoranyiBall(r[, cx, cy, ct]),
/// KoranyiAnnulus(r_in, r_out[, cx, cy, ct]), PuncturedSpace[(px, py, pt[, window])],
/// Box(lo_x, lo_y, lo_t, hi_x, hi_y, hi_t).
inline Domain parse_domain_spec(const std::string& src) {
  const auto c = detail::parse_call(src);
  const auto v = detail::parse_numbers(c);
  if (c.name == "KoranyiBall") {
    detail::expect_arity(c, {1, 4}, v.size());
    return Domain::koranyi_ball(v.size() == 4 ? Point{v[1], v[2], v[3]} : Point{}, v[0]);
  }
  if (c.name == "KoranyiAnnulus") {
    detail::expect_arity(c, {2, 5}, v.size());
    return Domain::koranyi_annulus(v.size() == 5 ? Point{v[2], v[3], v[4]} : Point{}, v[0], v[1]);
  }
  if (c.name == "PuncturedSpace") {
    detail::expect_arity(c, {0, 3, 4}, v.size());
    const Point p = v.size() >= 3 ? Point{v[0], v[1], v[2]} : Point{};
    return Domain::punctured(p, v.size() == 4 ? v[3] : 2.0);
  }
  if (c.name == "Box") {
    detail::expect_arity(c, {6}, v.size());
    return Domain::box({v[0], v[1], v[2]}, {v[3], v[4], v[5]});
  }
  throw ConfigurationError("unknown domain '" + c.name + "'; see the catalog subcommand");
}

/// Pointwise J_f^(1/4); equals a_f whenever J_f is constant.
inline ScalarField af_density(const SmoothMap& f) {
  return {[f](const Point& p) { return std::pow(f.horizontal_differential(p).jacobian, 0.25); },
          "af(" + f.describe() + ")"};
}

/// Density from text: constant(c) or af(map).
inline ScalarField parse_density_spec(const std::string& src) {
  const auto c = detail::parse_call(src);
  if (c.name == "constant") {
    const auto v = detail::parse_numbers(c);
    detail::expect_arity(c, {1}, v.size());
    if (!(v[0] > 0.0)) throw ConfigurationError("constant density must be positive");
    return constant_field(v[0]);
  }
  if (c.name == "af") {
    if (!c.has_args) throw ConfigurationError("af density needs a map");
    return af_density(parse_map_spec(c.args));
  }
  throw ConfigurationError("unknown density '" + c.name + "'; use constant(c) or af(map)");
}

/// Reads fields of one JSON object, tracking the dotted path for messages and
/// rejecting keys nobody asked for.
class JsonFields {
 public:
  JsonFields(const nlohmann::json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) fail(path_, "expected an object");
  }

  const std::string& path() const noexcept { return path_; }
  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  [[noreturn]] static void fail(const std::string& where, const std::string& what) {
    throw ConfigurationError((where.empty() ? std::string("config") : where) + ": " + what);
  }

  bool has(const std::string& key) {
    seen_.push_back(key);
    return obj_.contains(key);
  }

  const nlohmann::json& raw(const std::string& key) {
    if (!has(key)) fail(at(key), "required field missing");
    return obj_.at(key);
  }

  double number(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_number()) fail(at(key), "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) fail(at(key), "expected a finite number");
    return d;
  }
  double number(const std::string& key, double def) { return has(key) ? number(key) : def; }

  double positive(const std::string& key, double def) {
    const double d = number(key, def);
    if (!(d > 0.0)) fail(at(key), "must be positive");
    return d;
  }

  std::size_t count(const std::string& key, std::size_t def, std::size_t min = 1) {
    if (!has(key)) return def;
    const auto& v = obj_.at(key);
    if (!v.is_number_integer() && !v.is_number_unsigned()) fail(at(key), "expected an integer");
    const auto n = v.get<long long>();
    if (n < static_cast<long long>(min)) fail(at(key), "must be at least " + std::to_string(min));
    return static_cast<std::size_t>(n);
  }

  std::string string(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_string()) fail(at(key), "expected a string");
    return v.get<std::string>();
  }
  std::string string(const std::string& key, const std::string& def) { return has(key) ? string(key) : def; }

  bool boolean(const std::string& key, bool def) {
    if (!has(key)) return def;
    const auto& v = obj_.at(key);
    if (!v.is_boolean()) fail(at(key), "expected true or false");
    return v.get<bool>();
  }

  Point point(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_array() || v.size() != 3) fail(at(key), "expected [x, y, t]");
    Point p;
    double* dst[3] = {&p.x, &p.y, &p.t};
    for (std::size_t i = 0; i < 3; ++i) {
      if (!v[i].is_number()) fail(at(key) + "[" + std::to_string(i) + "]", "expected a number");
      *dst[i] = v[i].get<double>();
    }
    return p;
  }
  Point point(const std::string& key, const Point& def) { return has(key) ? point(key) : def; }

  std::vector<double> numbers(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_array() || v.empty()) fail(at(key), "expected a nonempty array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) fail(at(key) + "[" + std::to_string(i) + "]", "expected a number");
      out.push_back(v[i].get<double>());
    }
    return out;
  }
  std::vector<double> numbers(const std::string& key, std::vector<double> def) {
    return has(key) ? numbers(key) : def;
  }

  // Call after all reads; any key not consumed is an error.
  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end()) fail(at(it.key()), "unknown key");
  }

 private:
  const nlohmann::json& obj_;
  std::string path_;
  std::vector<std::string> seen_;
};

/// Map from a config value: a spec string or {"kind": ..., parameters}.
inline SmoothMap map_from_json(const nlohmann::json& j, const std::string& path) {
  auto wrap = [&](auto&& fn) -> SmoothMap {
    try {
      return fn();
    } catch (const ConfigurationError&) {
      throw;
    } catch (const Error& e) {
      JsonFields::fail(path, e.what());
    }
  };
  if (j.is_string()) return wrap([&] { return parse_map_spec(j.get<std::string>()); });
  if (j.is_array()) {
    std::vector<SmoothMap> parts;
    for (std::size_t i = 0; i < j.size(); ++i) parts.push_back(map_from_json(j[i], path + "[" + std::to_string(i) + "]"));
    if (parts.empty()) JsonFields::fail(path, "empty composition");
    return SmoothMap::compose(std::move(parts));
  }
  JsonFields in(j, path);
  const std::string kind = in.string("kind");
  SmoothMap f = wrap([&]() -> SmoothMap {
    if (kind == "Dilation") return SmoothMap::dilation(in.number("lambda"));
    if (kind == "Rotation") return SmoothMap::rotation(in.number("theta"));
    if (kind == "HorizontalStretch") return SmoothMap::horizontal_stretch(in.number("a"));
    if (kind == "LeftTranslation") return SmoothMap::left_translation(in.point("g"));
    if (kind == "KoranyiInversion") return SmoothMap::koranyi_inversion();
    if (kind == "Identity") return SmoothMap::left_translation({});
    if (kind == "Shear") return SmoothMap::shear(in.string("phi"));
    if (kind == "dsl" || kind == "UserDSL") return SmoothMap::dsl(in.string("fx"), in.string("fy"), in.string("ft"));
    if (kind == "Composition") {
      const auto& parts = in.raw("parts");
      if (!parts.is_array()) JsonFields::fail(in.at("parts"), "expected an array of maps");
      return map_from_json(parts, in.at("parts"));
    }
    JsonFields::fail(in.at("kind"), "unknown map kind '" + kind + "'");
  });
  if (in.has("fd_step")) wrap([&] { return f.set_fd_scale(in.number("fd_step")); });
  in.finish();
  return f;
}

/// Domain from a config value: a spec string or {"kind": ..., parameters}.
inline Domain domain_from_json(const nlohmann::json& j, const std::string& path) {
  try {
    if (j.is_string()) return parse_domain_spec(j.get<std::string>());
    JsonFields in(j, path);
    const std::string kind = in.string("kind");
    Domain d = [&] {
      if (kind == "KoranyiBall") return Domain::koranyi_ball(in.point("center", {}), in.number("radius"));
      if (kind == "PuncturedSpace") return Domain::punctured(in.point("puncture", {}), in.number("window", 2.0));
      if (kind == "KoranyiAnnulus")
        return Domain::koranyi_annulus(in.point("center", {}), in.number("r_in"), in.number("r_out"));
      if (kind == "Box") return Domain::box(in.point("lo"), in.point("hi"));
      JsonFields::fail(in.at("kind"), "unknown domain kind '" + kind + "'");
    }();
    in.finish();
    return d;
  } catch (const ConfigurationError&) {
    throw;
  } catch (const Error& e) {
    JsonFields::fail(path, e.what());
  }
}

/// Density from a config value: "constant(c)", "af(map)" or
/// {"kind": "constant", "value": c} / {"kind": "af", "map": ...}.
inline ScalarField density_from_json(const nlohmann::json& j, const std::string& path) {
  if (j.is_string()) {
    try {
      return parse_density_spec(j.get<std::string>());
    } catch (const ConfigurationError&) {
      throw;
    } catch (const Error& e) {
      JsonFields::fail(path, e.what());
    }
  }
  JsonFields in(j, path);
  const std::string kind = in.string("kind");
  ScalarField rho;
  if (kind == "constant") {
    const double c = in.positive("value", 1.0);
    rho = constant_field(c);
  } else if (kind == "af") {
    rho = af_density(map_from_json(in.raw("map"), in.at("map")));
  } else {
    JsonFields::fail(in.at("kind"), "unknown density kind '" + kind + "'");
  }
  in.finish();
  return rho;
}

/// Flat CSV with a fixed header; doubles carry 17 significant digits.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : header_(std::move(header)) {}

  CsvWriter& row() {
    if (!cur_.empty()) flush_row();
    open_ = true;
    return *this;
  }
  CsvWriter& operator<<(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    cur_.push_back(os.str());
    return *this;
  }
  CsvWriter& operator<<(std::size_t v) {
    cur_.push_back(std::to_string(v));
    return *this;
  }
  CsvWriter& operator<<(int v) {
    cur_.push_back(std::to_string(v));
    return *this;
  }
  CsvWriter& operator<<(bool v) {
    cur_.push_back(v ? "1" : "0");
    return *this;
  }
  CsvWriter& operator<<(const std::string& v) {
    cur_.push_back(quote(v));
    return *this;
  }
  CsvWriter& operator<<(const char* v) { return *this << std::string(v); }
  CsvWriter& operator<<(const Point& p) { return *this << p.x << p.y << p.t; }

  std::string str() {
    if (!cur_.empty()) flush_row();
    std::string out;
    for (std::size_t i = 0; i < header_.size(); ++i) out += (i ? "," : "") + header_[i];
    out += '\n';
    return out + body_;
  }

 private:
  static std::string quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    return q + '"';
  }

  void flush_row() {
    if (cur_.size() != header_.size())
      throw InvalidArgument("csv row has " + std::to_string(cur_.size()) + " fields, header has " +
                            std::to_string(header_.size()));
    for (std::size_t i = 0; i < cur_.size(); ++i) body_ += (i ? "," : "") + cur_[i];
    body_ += '\n';
    cur_.clear();
  }

  std::vector<std::string> header_;
  std::vector<std::string> cur_;
  std::string body_;
  bool open_ = false;
};

inline nlohmann::json to_json(const Point& p) { return nlohmann::json::array({p.x, p.y, p.t}); }

}  // namespace heis
