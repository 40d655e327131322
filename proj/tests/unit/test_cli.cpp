#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "heis/cli.hpp"

using namespace heis;
using heis::cli::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run heislab(std::vector<std::string> args) {
  args.insert(args.begin(), "heislab");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = cli::cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("heis_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_config(const fs::path& dir, const std::string& name, const json& cfg) {
  const fs::path p = dir / name;
  std::ofstream(p) << cfg.dump(2);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json koebe_config() {
  return {{"version", 1},
          {"experiment", "koebe"},
          {"seed", 7},
          {"map", {{"kind", "Dilation"}, {"lambda", 2.0}}},
          {"domain", {{"kind", "PuncturedSpace"}}},
          {"image_domain", {{"kind", "PuncturedSpace"}}},
          {"params", {{"points", 16}, {"mc_n", 200}}},
          {"expect", {{"c_hat_max", 1.05}}}};
}

}  // namespace

TEST(SpecStrings, Maps) {
  const Point p{0.3, -0.2, 0.1};
  EXPECT_EQ(parse_map_spec("Dilation(2)").apply(p), SmoothMap::dilation(2).apply(p));
  EXPECT_EQ(parse_map_spec(" HorizontalStretch( 1.5 ) ").kind(), MapKind::HorizontalStretch);
  EXPECT_EQ(parse_map_spec("KoranyiInversion").kind(), MapKind::KoranyiInversion);
  const auto lt = parse_map_spec("LeftTranslation(1, 2, 3)");
  EXPECT_EQ(lt.translation(), (Point{1, 2, 3}));
  // A o B applies B first
  const auto c = parse_map_spec("Dilation(2) o LeftTranslation(1, 0, 0)");
  const Point want = SmoothMap::dilation(2).apply(Point{1, 0, 0} * p);
  EXPECT_NEAR(c.apply(p).x, want.x, 1e-15);
  EXPECT_NEAR(c.apply(p).t, want.t, 1e-15);
  EXPECT_EQ(parse_map_spec("Shear(x^2)").kind(), MapKind::Shear);
  EXPECT_EQ(parse_map_spec("UserDSL(2*x, 2*y, 4*t)").kind(), MapKind::UserDSL);
}

TEST(SpecStrings, Domains) {
  EXPECT_EQ(parse_domain_spec("PuncturedSpace").kind(), DomainKind::PuncturedSpace);
  const auto b = parse_domain_spec("KoranyiBall(2, 1, 0, 0)");
  EXPECT_EQ(b.kind(), DomainKind::KoranyiBall);
  EXPECT_EQ(b.center(), (Point{1, 0, 0}));
  EXPECT_DOUBLE_EQ(b.outer_radius(), 2.0);
  EXPECT_EQ(parse_domain_spec("KoranyiAnnulus(0.5, 2)").kind(), DomainKind::KoranyiAnnulus);
  EXPECT_EQ(parse_domain_spec("Box(-1,-1,-1,1,1,1)").hi(), (Point{1, 1, 1}));
}

TEST(SpecStrings, Errors) {
  EXPECT_THROW(parse_map_spec("Dilatation(2)"), ConfigurationError);
  EXPECT_THROW(parse_map_spec("Dilation(2, 3)"), ConfigurationError);
  EXPECT_THROW(parse_map_spec("Dilation(two)"), ConfigurationError);
  EXPECT_THROW(parse_map_spec("Dilation(2"), ConfigurationError);
  EXPECT_THROW(parse_domain_spec("Box(1, 2)"), ConfigurationError);
  EXPECT_THROW(parse_map_spec("UserDSL(x, y)"), ParseError);
  EXPECT_THROW(parse_map_spec("UserDSL(x, y, q)"), NameError);
}

TEST(SpecStrings, Densities) {
  EXPECT_DOUBLE_EQ(parse_density_spec("constant(2.5)")({0.1, 0.2, 0.3}), 2.5);
  EXPECT_NEAR(parse_density_spec("af(Dilation(3))")({0.1, 0.2, 0.3}), 3.0, 1e-12);
  EXPECT_THROW(parse_density_spec("constant(-1)"), ConfigurationError);
  EXPECT_THROW(parse_density_spec("gaussian(1)"), ConfigurationError);
}

TEST(JsonSpecs, ObjectFormsMatchStrings) {
  const Point p{0.4, 0.1, -0.3};
  const json m = {{"kind", "HorizontalStretch"}, {"a", 2.0}};
  EXPECT_EQ(map_from_json(m, "map").apply(p), parse_map_spec("HorizontalStretch(2)").apply(p));
  const json comp = json::array({"Dilation(2)", {{"kind", "Rotation"}, {"theta", 0.5}}});
  EXPECT_EQ(map_from_json(comp, "map").apply(p), parse_map_spec("Dilation(2) o Rotation(0.5)").apply(p));
  const json dsl = {{"kind", "dsl"}, {"fx", "x"}, {"fy", "y"}, {"ft", "t"}};
  EXPECT_EQ(map_from_json(dsl, "map").apply(p), p);
  const json d = {{"kind", "KoranyiAnnulus"}, {"r_in", 0.5}, {"r_out", 2.0}, {"center", {0, 0, 1}}};
  const auto dom = domain_from_json(d, "domain");
  EXPECT_EQ(dom.center(), (Point{0, 0, 1}));
  EXPECT_DOUBLE_EQ(dom.inner_radius(), 0.5);
}

TEST(JsonSpecs, UnknownKeysNameTheirPath) {
  const json m = {{"kind", "Dilation"}, {"lambda", 2.0}, {"lamda", 3.0}};
  try {
    map_from_json(m, "map");
    ADD_FAILURE() << "expected a configuration error";
  } catch (const ConfigurationError& e) {
    EXPECT_NE(std::string(e.what()).find("map.lamda"), std::string::npos) << e.what();
  }
  const json d = {{"kind", "KoranyiBall"}};
  try {
    domain_from_json(d, "image_domain");
    ADD_FAILURE() << "expected a configuration error";
  } catch (const ConfigurationError& e) {
    EXPECT_NE(std::string(e.what()).find("image_domain.radius"), std::string::npos) << e.what();
  }
  // library argument errors are rewrapped with the path
  EXPECT_THROW(domain_from_json(json{{"kind", "KoranyiBall"}, {"radius", -1}}, "domain"), ConfigurationError);
}

TEST(Csv, DigitsAndQuoting) {
  CsvWriter w({"a", "b", "c"});
  w.row() << 0.1 << std::string("x,y") << std::size_t{3};
  EXPECT_EQ(w.str(), "a,b,c\n0.10000000000000001,\"x,y\",3\n");
  CsvWriter bad({"a", "b"});
  bad.row() << 1.0;
  EXPECT_THROW(bad.str(), InvalidArgument);
}

TEST(Config, SyntaxErrorsCarryLineAndColumn) {
  try {
    cli::parse_config_text("{\n  \"version\": 1,\n  \"seed\": ,\n}", "cfg.json");
    ADD_FAILURE() << "expected a configuration error";
  } catch (const ConfigurationError& e) {
    EXPECT_NE(std::string(e.what()).find("cfg.json:3:"), std::string::npos) << e.what();
  }
}

TEST(Config, Validation) {
  auto cfg = koebe_config();
  cfg["params"]["pointz"] = 3;
  try {
    cli::execute(cfg, {}, false);
    ADD_FAILURE();
  } catch (const ConfigurationError& e) {
    EXPECT_NE(std::string(e.what()).find("params.pointz"), std::string::npos) << e.what();
  }
  cfg = koebe_config();
  cfg["colour"] = "red";
  EXPECT_THROW(cli::execute(cfg, {}, false), ConfigurationError);
  cfg = koebe_config();
  cfg["version"] = 2;
  EXPECT_THROW(cli::execute(cfg, {}, false), ConfigurationError);
  cfg = koebe_config();
  cfg["experiment"] = "koebe-scan";
  EXPECT_THROW(cli::execute(cfg, {}, false), ConfigurationError);
  cfg = koebe_config();
  cfg["expect"] = {{"c_hat", 1.0}};
  EXPECT_THROW(cli::execute(cfg, {}, false), ConfigurationError);
  cfg = koebe_config();
  cfg["params"]["points"] = -4;
  EXPECT_THROW(cli::execute(cfg, {}, false), ConfigurationError);
  cfg = koebe_config();
  cfg["image_domain"] = nullptr;
  EXPECT_EQ(cli::execute(cfg, {}, false).csv, cli::execute(koebe_config(), {}, false).csv);
}

TEST(Run, KoebeDilationPasses) {
  const auto dir = scratch("koebe");
  const auto path = write_config(dir, "k.json", koebe_config());
  const auto r = heislab({"run", path.string(), "--out-dir", (dir / "out").string()});
  EXPECT_EQ(r.code, 0) << r.err;
  const json rep = json::parse(slurp(dir / "out" / "koebe.json"));
  EXPECT_TRUE(rep["summary"].contains("c_hat"));
  EXPECT_LE(rep["summary"]["c_hat"].get<double>(), 1.05);
  const std::string csv = slurp(dir / "out" / "koebe.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "x,y,t,a_f,a_f_log_std_error,boundary_distance,image_boundary_distance,boundary_ratio,log_discrepancy");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 17);
}

TEST(Run, ZeroExponentIsConfigurationError) {
  const auto dir = scratch("q0");
  const json cfg = {{"version", 1},
                    {"experiment", "compare-integrals"},
                    {"map", "Dilation(2)"},
                    {"domain", "KoranyiBall(1)"},
                    {"params", {{"q_list", {2, 0}}}}};
  const auto r = heislab({"run", write_config(dir, "q.json", cfg).string(), "--out-dir", dir.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("q_list[1]"), std::string::npos) << r.err;
}

TEST(Run, MissingFileAndBadArguments) {
  EXPECT_EQ(heislab({"run", "/nonexistent/heis.json"}).code, 2);
  EXPECT_EQ(heislab({"run"}).code, 2);
  EXPECT_EQ(heislab({"--threads", "x", "catalog"}).code, 2);
  EXPECT_EQ(heislab({"koebe", "--map", "Dilation(2", "--domain", "PuncturedSpace"}).code, 2);
  EXPECT_EQ(heislab({"--help"}).code, 0);
}

TEST(Run, BadJsonIsConfigurationError) {
  const auto dir = scratch("badjson");
  std::ofstream(dir / "b.json") << "{\"version\": 1,,}";
  const auto r = heislab({"run", (dir / "b.json").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find(":1:"), std::string::npos) << r.err;
}

TEST(Run, FailedExpectationExitsOne) {
  const auto dir = scratch("expect");
  auto cfg = koebe_config();
  cfg["map"] = "HorizontalStretch(2)";
  cfg["expect"] = {{"c_hat_max", 1.05}};
  const auto r = heislab({"run", write_config(dir, "s.json", cfg).string(), "--out-dir", dir.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("expectation failed"), std::string::npos);
  // the report is still written
  EXPECT_FALSE(json::parse(slurp(dir / "koebe.json"))["passed"].get<bool>());
}

TEST(Run, SubcommandBuildsTheSameConfig) {
  const auto dir = scratch("sub");
  const auto a = heislab({"run", write_config(dir, "k.json", koebe_config()).string(), "--out-dir",
                          (dir / "a").string()});
  const auto b = heislab({"--seed", "7", "koebe", "--map", "Dilation(2)", "--domain", "PuncturedSpace",
                          "--image-domain", "PuncturedSpace", "-p", "points=16", "-p", "mc_n=200", "-e",
                          "c_hat_max=1.05", "--out-dir", (dir / "b").string()});
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(slurp(dir / "a" / "koebe.csv"), slurp(dir / "b" / "koebe.csv"));
}

TEST(Run, OutputDirectoryPrecedence) {
  const auto dir = scratch("outdir");
  auto cfg = koebe_config();
  cfg["output"] = {{"dir", (dir / "from_config").string()}, {"stem", "k"}};
  const auto path = write_config(dir, "k.json", cfg);
  ASSERT_EQ(heislab({"run", path.string()}).code, 0);
  EXPECT_TRUE(fs::exists(dir / "from_config" / "k.csv"));
  ::setenv("HEIS_OUT_DIR", (dir / "from_env").string().c_str(), 1);
  ASSERT_EQ(heislab({"run", path.string()}).code, 0);
  EXPECT_TRUE(fs::exists(dir / "from_env" / "k.csv"));
  ASSERT_EQ(heislab({"run", path.string(), "--out-dir", (dir / "from_flag").string()}).code, 0);
  EXPECT_TRUE(fs::exists(dir / "from_flag" / "k.csv"));
  ::unsetenv("HEIS_OUT_DIR");
}

TEST(Catalog, TextAndJson) {
  const auto t = heislab({"catalog"});
  EXPECT_EQ(t.code, 0);
  EXPECT_NE(t.out.find("HorizontalStretch"), std::string::npos);
  EXPECT_NE(t.out.find("koebe"), std::string::npos);
  EXPECT_NE(t.out.find("Koebe"), std::string::npos);
  const auto j = heislab({"catalog", "--json"});
  EXPECT_EQ(j.code, 0);
  const json c = json::parse(j.out);
  bool koebe = false;
  for (const auto& e : c["experiments"]) koebe |= e["name"] == "koebe" && e["operation"] == "koebe_scan";
  EXPECT_TRUE(koebe);
  // one subcommand per experiment, plus run and catalog
  EXPECT_EQ(c["experiments"].size(), cli::experiments().size());
  for (const auto& e : cli::experiments()) EXPECT_EQ(heislab({e.name, "--help"}).code, 0) << e.name;
}

TEST(Determinism, CsvIdenticalAcrossThreadCounts) {
  const auto dir = scratch("threads");
  const std::vector<json> cfgs = {
      {{"version", 1},
       {"experiment", "koebe"},
       {"map", "KoranyiInversion"},
       {"domain", "KoranyiAnnulus(0.5, 2)"},
       {"params", {{"points", 24}, {"mc_n", 500}}}},
      {{"version", 1},
       {"experiment", "compare-integrals"},
       {"map", "HorizontalStretch(1.5)"},
       {"domain", "KoranyiBall(1)"},
       {"params", {{"q_list", {-1, 2}}, {"lambda", 0.4}, {"collar", 0.3}, {"grid", 1500}, {"mc_n", 3000}}}},
      {{"version", 1},
       {"experiment", "qs"},
       {"map", "KoranyiInversion"},
       {"domain", "PuncturedSpace"},
       {"params", {{"x", {1, 0, 0}}, {"triples", 300}}}},
  };
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    const auto path = write_config(dir, "c" + std::to_string(i) + ".json", cfgs[i]);
    std::string first;
    for (const char* t : {"1", "4", "8"}) {
      const fs::path out = dir / ("t" + std::string(t));
      const auto r = heislab({"run", path.string(), "--threads", t, "--seed", "99", "--out-dir", out.string()});
      ASSERT_EQ(r.code, 0) << r.err;
      const std::string csv = slurp(out / (cfgs[i]["experiment"].get<std::string>() + ".csv"));
      if (first.empty()) first = csv;
      EXPECT_EQ(csv, first) << cfgs[i]["experiment"] << " threads " << t;
    }
  }
  set_threads(0);
}

TEST(Configs, ShippedConfigsValidate) {
  std::size_t n = 0;
  for (const auto& entry : fs::directory_iterator(HEIS_CONFIG_DIR)) {
    if (entry.path().extension() != ".json") continue;
    const json cfg = cli::load_config(entry.path());
    ASSERT_TRUE(cfg.contains("experiment")) << entry.path();
    EXPECT_NE(cli::find_experiment(cfg["experiment"].get<std::string>()), nullptr) << entry.path();
    ++n;
  }
  EXPECT_GE(n, cli::experiments().size());
}
