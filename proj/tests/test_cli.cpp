#include <catch_amalgamated.hpp>

#include <choquard/cli.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace choquard;
using namespace choquard::cli;
using Catch::Matchers::ContainsSubstring;

namespace {

json minimal_3d() {
  return json::parse(R"({
    "mode": "minimize",
    "grid": { "dim": 3, "half_extent": 12.0, "points_per_axis": 32 },
    "model": { "alpha": 2.0, "p": 2.0, "q": 2.0, "mu1": 1.0, "mu2": 1.0,
               "xi": 1.0, "eta": 1.0,
               "coupling": { "kind": "constant", "beta0": 0.1 } }
  })");
}

// Cheap 1D model for runs.
json line_config(const char *mode) {
  json j = json::parse(R"({
    "grid": { "dim": 1, "half_extent": 20.0, "points_per_axis": 256 },
    "model": { "alpha": 0.5, "p": 2.0, "q": 2.0, "mu1": 2.0, "mu2": 2.0,
               "xi": 1.0, "eta": 1.0,
               "coupling": { "kind": "constant", "beta0": 0.1 } },
    "init": { "widths": [1.5, 2.0, 3.0], "jitter": 0.2 },
    "seed": 11
  })");
  j["mode"] = mode;
  return j;
}

ErrorCode parse_error(const json &j, std::string *msg = nullptr) {
  try {
    parse_config_json(j);
  } catch (const Error &e) {
    if (msg)
      *msg = e.detail();
    return e.code();
  }
  FAIL("config was accepted");
  return ErrorCode::InvalidArgument;
}

std::size_t count_lines(const std::string &s) {
  return std::size_t(std::count(s.begin(), s.end(), '\n'));
}

} // namespace

TEST_CASE("minimal subcritical config is valid and echoes defaults") {
  const RunConfig c = parse_config_json(minimal_3d());
  CHECK(c.mode == Mode::minimize);
  CHECK(c.model.dim == 3);
  CHECK(c.model.coupling.beta0 == 0.1);
  const json echo = to_json(c);
  // Every tolerance appears in the echo even though none was given.
  for (const char *k : {"energy_tol", "grad_tol", "max_iters", "min_shift", "armijo"})
    CHECK(echo.at("flow").contains(k));
  for (const char *k : {"fiber_tol", "grad_tol", "s_min", "s_max"})
    CHECK(echo.at("saddle").contains(k));
  CHECK(echo.at("seed").is_number_unsigned());
  CHECK(echo.at("output").at("report") == "report.json");
}

TEST_CASE("echoed config parses back to the same config") {
  for (json j : {minimal_3d(), line_config("scan"), line_config("oracle")}) {
    if (j["mode"] == "scan")
      j["scan"] = json{{"xi", {0.5, 1.0}}, {"eta", {0.5, 1.0}}};
    j["model"]["v1"] = json{{"kind", "gaussian_well"}, {"depth", 0.5}, {"width", 2.0}};
    j["model"]["coupling"] = json{{"kind", "rational_decay"}, {"beta0", 0.05}};
    const json once = to_json(parse_config_json(j));
    const json twice = to_json(parse_config_json(once));
    CHECK(once.dump() == twice.dump());
  }
}

TEST_CASE("critical exponent is a RangeError naming the constraint") {
  json j = minimal_3d();
  j["model"]["p"] = 5.0;
  std::string msg;
  CHECK(parse_error(j, &msg) == ErrorCode::RangeError);
  CHECK_THAT(msg, ContainsSubstring("p < (N+alpha)/(N-2)"));
  j["model"]["p"] = 1.5;
  CHECK(parse_error(j, &msg) == ErrorCode::RangeError);
  CHECK_THAT(msg, ContainsSubstring("1+alpha/N < p"));
}

TEST_CASE("schema errors carry the field path") {
  std::string msg;
  json j = minimal_3d();
  j.erase("mode");
  CHECK(parse_error(j, &msg) == ErrorCode::SchemaError);
  CHECK_THAT(msg, ContainsSubstring("mode"));

  j = minimal_3d();
  j["model"]["coupling"]["betta"] = 0.1;
  CHECK(parse_error(j, &msg) == ErrorCode::SchemaError);
  CHECK_THAT(msg, ContainsSubstring("model.coupling.betta"));

  j = minimal_3d();
  j["grid"]["points_per_axis"] = "many";
  CHECK(parse_error(j, &msg) == ErrorCode::SchemaError);
  CHECK_THAT(msg, ContainsSubstring("grid.points_per_axis"));

  j = minimal_3d();
  j["mode"] = "relax";
  CHECK(parse_error(j, &msg) == ErrorCode::SchemaError);

  j = minimal_3d();
  j["model"]["v2"] = json{{"kind", "harmonic"}, {"omega", -1.0}};
  CHECK(parse_error(j, &msg) == ErrorCode::RangeError);

  j = line_config("scan");
  j["scan"] = json{{"xi", {1.0}}, {"eta", {0.5, 1.0}}};
  CHECK(parse_error(j) == ErrorCode::RangeError);
}

TEST_CASE("config files allow comments; bad files are schema errors") {
  const auto dir = std::filesystem::temp_directory_path() / "choquard_cli_test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "c.json");
    f << "// header\n" << minimal_3d().dump(2) << "\n";
  }
  CHECK(parse_config((dir / "c.json").string()).mode == Mode::minimize);
  {
    std::ofstream f(dir / "bad.json");
    f << "{ \"mode\": ";
  }
  CHECK_THROWS_MATCHES(parse_config((dir / "bad.json").string()), Error,
                       Catch::Matchers::Predicate<Error>(
                           [](const Error &e) { return e.code() == ErrorCode::SchemaError; }));
  CHECK_THROWS_AS(parse_config((dir / "missing.json").string()), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("minimize run: report content and byte-identical repeats") {
  json j = line_config("minimize");
  j["threads"] = 1;
  const RunConfig c = parse_config_json(j);
  const RunResult a = run(c);
  const RunResult b = run(c);
  REQUIRE(a.exit_code == exit_ok);
  CHECK(a.report.dump() == b.report.dump());
  CHECK(a.profiles_csv == b.profiles_csv);

  const json &r = a.report;
  CHECK(r.at("schema") == kReportSchema);
  CHECK(r.at("status") == "ok");
  CHECK(r.at("config").dump() == to_json(c).dump());
  const json &res = r.at("result");
  CHECK(res.at("converged") == true);
  CHECK(res.at("energy").at("total").get<double>() < 0.0);
  CHECK(res.at("multipliers").contains("lambda1"));
  CHECK(res.at("residuals").at("el").get<double>() < c.flow.grad_tol);
  CHECK(!res.at("regime").get<std::string>().empty());
  CHECK(a.profiles_csv.rfind("r,u,v,V1,V2,beta\n", 0) == 0);
  CHECK(count_lines(a.profiles_csv) > 10);

  // Thread count changes the schedule, not the numbers.
  j["threads"] = 3;
  const RunResult t = run(parse_config_json(j));
  const double e1 = r.at("result").at("energy").at("total").get<double>();
  const double e3 = t.report.at("result").at("energy").at("total").get<double>();
  CHECK(std::abs(e1 - e3) <= 1e-10 * std::max(1.0, std::abs(e1)));

  // A different seed draws different start widths.
  j["threads"] = 1;
  j["seed"] = 12;
  const RunResult s = run(parse_config_json(j));
  CHECK(s.report.at("result").at("start_width") != r.at("result").at("start_width"));
}

TEST_CASE("scan mode on a 2x2 grid with wells") {
  json j = line_config("scan");
  j["model"]["v1"] = json{{"kind", "gaussian_well"}, {"depth", 0.5}, {"width", 2.0}};
  j["model"]["v2"] = json{{"kind", "gaussian_well"}, {"depth", 0.5}, {"width", 2.0}};
  j["scan"] = json{{"xi", {0.75, 1.0}}, {"eta", {0.75, 1.0}}};
  j["threads"] = 2;
  const RunResult r = run(parse_config_json(j));
  REQUIRE(r.exit_code == exit_ok);
  CHECK(count_lines(r.scan_csv) == 5); // header + 4 rows
  const json &res = r.report.at("result");
  CHECK(res.at("cells").size() == 4);
  CHECK(res.at("all_converged") == true);
  CHECK(res.at("monotone") == true);
  CHECK(res.at("monotonicity").size() == 4);
  CHECK(r.profiles_csv.empty());
}

TEST_CASE("check mode on an inadmissible coupling enumerates the conditions") {
  json j = minimal_3d();
  j["mode"] = "check";
  j["model"]["p"] = j["model"]["q"] = 3.0;
  j["model"]["mu1"] = j["model"]["mu2"] = 5.0;
  j["model"]["xi"] = j["model"]["eta"] = 2.0;
  j["model"]["coupling"] = json{{"kind", "gaussian"}, {"beta0", 0.02}, {"width", 1.0}};
  const RunResult r = run(parse_config_json(j));
  CHECK(r.exit_code == exit_validation);
  CHECK(r.report.at("status") == "validation_failed");
  const json &cp = r.report.at("result").at("coupling");
  CHECK(cp.at("passed") == false);
  std::string names;
  bool iii_failed = false;
  for (const auto &ch : cp.at("checks")) {
    names += ch.at("name").get<std::string>() + ";";
    if (ch.at("name").get<std::string>().rfind("(iii)", 0) == 0) {
      iii_failed = ch.at("passed") == false;
      CHECK(ch.contains("location"));
    }
  }
  CHECK_THAT(names, ContainsSubstring("(i)"));
  CHECK_THAT(names, ContainsSubstring("(ii)"));
  CHECK_THAT(names, ContainsSubstring("(iii)"));
  CHECK(iii_failed);
  CHECK(r.report.at("result").at("regime").at("label").is_string());

  // The admissible constant coupling passes, geometry included.
  j["model"]["coupling"] = json{{"kind", "constant"}, {"beta0", 0.02}};
  const RunResult ok = run(parse_config_json(j));
  CHECK(ok.exit_code == exit_ok);
  CHECK(ok.report.at("result").at("geometry").at("consistent") == true);
}

TEST_CASE("oracle mode") {
  json j = line_config("oracle");
  j["oracle"] = json::parse(R"({ "cases": [
      { "dim": 1, "points_per_axis": 64, "half_extent": 5.0, "alpha": 0.5 },
      { "dim": 2, "points_per_axis": 16, "half_extent": 5.0, "alpha": 1.0 } ],
    "fields": 2 })");
  const RunResult r = run(parse_config_json(j));
  CHECK(r.exit_code == exit_ok);
  const json &cases = r.report.at("result").at("cases");
  REQUIRE(cases.size() == 2);
  for (const auto &c : cases)
    CHECK(c.at("max_rel_linf_error").get<double>() < 1e-8);
}

TEST_CASE("solver errors map to exit codes and error records") {
  CHECK(exit_code_for(ErrorCode::SchemaError) == exit_config);
  CHECK(exit_code_for(ErrorCode::RangeError) == exit_config);
  CHECK(exit_code_for(ErrorCode::NoDescentStep) == exit_solver);
  CHECK(exit_code_for(ErrorCode::NotSupercritical) == exit_solver);

  // Saddle mode in the subcritical regime fails inside the run.
  json j = line_config("saddle");
  const RunConfig c = parse_config_json(j);
  try {
    run(c);
    FAIL("saddle run accepted a subcritical model");
  } catch (const Error &e) {
    CHECK(exit_code_for(e.code()) == exit_solver);
    const json rec = error_record(e.code(), e.detail(), exit_solver, c);
    CHECK(rec.at("schema") == kErrorSchema);
    CHECK(rec.at("code") == std::string(to_string(e.code())));
    CHECK(rec.at("config").dump() == to_json(c).dump());
  }

  // An iteration cap too small to converge is a solver failure, not a throw.
  j = line_config("minimize");
  j["flow"] = json{{"max_iters", 2}};
  const RunResult r = run(parse_config_json(j));
  CHECK(r.exit_code == exit_solver);
  CHECK(r.report.at("status") == "not_converged");
}

TEST_CASE("outputs are written to the configured directory") {
  const auto dir = std::filesystem::temp_directory_path() / "choquard_cli_out";
  std::filesystem::remove_all(dir);
  json j = line_config("minimize");
  j["output"] = json{{"dir", dir.string()}};
  const RunConfig c = parse_config_json(j);
  const RunResult r = run(c);
  write_outputs(c, r);
  CHECK(std::filesystem::exists(dir / "report.json"));
  CHECK(std::filesystem::exists(dir / "profiles.csv"));
  CHECK(!std::filesystem::exists(dir / "scan.csv"));
  std::ifstream in(dir / "report.json");
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(json::parse(ss.str()).dump() == r.report.dump());
  std::filesystem::remove_all(dir);
}
