#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include <unistd.h>

#include "densereg/data.hpp"
#include "densereg/errors.hpp"

using namespace densereg;
namespace fs = std::filesystem;

namespace {

double reference_target(const std::array<double, 7>& x) {
  double s = 1.0;
  for (int i = 1; i < 7; ++i) s += std::pow(x[i], i);
  if (s < 400) return s;
  if (s < 800) return 400;
  if (s < 1200) return 800;
  return 1200;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("densereg_data_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path file(const std::string& name, const std::string& contents) const {
    std::ofstream(path / name) << contents;
    return path / name;
  }
};

std::string load_error(const fs::path& p, const std::string& target = "y") {
  try {
    load_csv(p, {}, target);
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("piecewise target values") {
  CHECK(piecewise_target(std::array<double, 7>{0, 0, 0, 0, 0, 0, 0}) == 1.0);
  CHECK(piecewise_target(std::array<double, 7>{4, 4, 4, 4, 4, 4, 4}) == 1200.0);
  CHECK(piecewise_target(std::array<double, 7>{2, 1, 1, 1, 1, 1, 1}) == 7.0);
  // 1 + 3 + 9 + 27 + 81 + 243 + 729 = 1093 lands on the 800 plateau.
  CHECK(piecewise_target(std::array<double, 7>{3, 3, 3, 3, 3, 3, 3}) == 800.0);
  // 1 + x6^6 straddling the first plateau edge.
  CHECK(piecewise_target(std::array<double, 7>{0, 0, 0, 0, 0, 0, std::pow(399.0, 1.0 / 6.0) - 1e-9}) < 400.0);
  CHECK(piecewise_target(std::array<double, 7>{0, 0, 0, 0, 0, 0, std::pow(399.0, 1.0 / 6.0) + 1e-9}) == 400.0);
}

TEST_CASE("piecewise target agrees with a pow-based reference") {
  Rng rng(1);
  for (int i = 0; i < 5000; ++i) {
    std::array<double, 7> x;
    for (auto& v : x) v = rng.uniform(0.0, 4.0);
    const double expected = reference_target(x);
    CHECK(piecewise_target(x) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("piecewise target domain") {
  CHECK_THROWS_AS(piecewise_target(std::array<double, 6>{}), ShapeError);
  CHECK_THROWS_AS(piecewise_target(std::array<double, 7>{0, 0, 0, 0, 0, 0, 4.5}), DomainError);
  CHECK_THROWS_AS(piecewise_target(std::array<double, 7>{-0.1, 0, 0, 0, 0, 0, 0}), DomainError);
  CHECK_THROWS_AS(piecewise_target(std::array<double, 7>{std::nan(""), 0, 0, 0, 0, 0, 0}, true), DomainError);
  CHECK(piecewise_target(std::array<double, 7>{0, 0, 0, 0, 0, 0, 4.5}, true) == 1200.0);
}

TEST_CASE("generate_piecewise") {
  Rng r1(7), r2(7);
  const Dataset a = generate_piecewise(500, r1);
  const Dataset b = generate_piecewise(500, r2);
  CHECK(a.features == b.features);
  CHECK(a.targets == b.targets);
  CHECK(a.dim() == 7);
  CHECK(a.feature_names.front() == "x0");
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (double v : a.features.row(i)) {
      REQUIRE(v >= 0.0);
      REQUIRE(v < 4.0);
    }
    CHECK(a.targets[i] == piecewise_target(a.features.row(i)));
  }
  std::set<double> plateaus(a.targets.begin(), a.targets.end());
  CHECK(plateaus.count(1200.0) == 1);
  Rng r3(7);
  CHECK_THROWS_AS(generate_piecewise(0, r3), DomainError);
}

TEST_CASE("humidity-like data inverts back to relative humidity") {
  Rng rng(3);
  const Dataset ds = generate_humidity_like(2000, rng, 0.0);
  CHECK(ds.feature_names == std::vector<std::string>{"temperature", "specific_humidity"});
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double t = ds.features(i, 0), q = ds.features(i, 1);
    REQUIRE(t >= 265.0);
    REQUIRE(t < 305.0);
    // Vapour pressure from specific humidity, then divide by saturation.
    const double e = q * 1000.0 / (0.622 + 0.378 * q);
    const double es = 6.112 * std::exp(17.67 * (t - 273.15) / (t - 273.15 + 243.5));
    CHECK(100.0 * e / es == doctest::Approx(ds.targets[i]).epsilon(1e-9));
  }
}

TEST_CASE("split sizes and disjointness") {
  Rng rng(2);
  Dataset ds = generate_piecewise(1000, rng);
  for (std::size_t i = 0; i < ds.size(); ++i) ds.features(i, 0) = static_cast<double>(i);  // row id
  const Split s = split(ds, SplitSpec{});
  CHECK(s.train.size() == 675);
  CHECK(s.val.size() == 75);
  CHECK(s.test.size() == 250);
  std::set<double> ids;
  for (const Dataset* part : {&s.train, &s.val, &s.test})
    for (std::size_t i = 0; i < part->size(); ++i) ids.insert(part->features(i, 0));
  CHECK(ids.size() == 1000);

  const Split again = split(ds, SplitSpec{});
  CHECK(again.test.features == s.test.features);
  SplitSpec other;
  other.seed = 43;
  CHECK(split(ds, other).test.features != s.test.features);

  CHECK_THROWS_AS(split(ds, SplitSpec{0.5, 0.5, 0.5, 1}), ConfigError);
  CHECK_THROWS_AS(split(ds, SplitSpec{1.2, -0.2, 0.0, 1}), ConfigError);
  CHECK(split(ds, SplitSpec{1.0, 0.0, 0.0, 1}).train.size() == 1000);
}

TEST_CASE("csv round trip is exact") {
  TempDir dir;
  Rng rng(4);
  const Dataset ds = generate_piecewise(200, rng);
  write_csv(dir.path / "d.csv", ds);
  const Dataset back = load_csv(dir.path / "d.csv", {}, "y");
  CHECK(back.features == ds.features);
  CHECK(back.targets == ds.targets);
  CHECK(back.feature_names == ds.feature_names);
  CHECK(back.provenance == Provenance::csv);

  std::ifstream in(dir.path / "d.csv");
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == 201);

  for (double v : {0.1, 1.0 / 3.0, 1e-300, -2.5e17, 5e-324}) CHECK(std::strtod(format_double(v).c_str(), nullptr) == v);
}

TEST_CASE("csv column selection") {
  TempDir dir;
  const auto p = dir.file("c.csv", "a,b,target,c\n1,2,3,4\n5,6,7,8\n\n");
  const std::vector<std::string> pick{"c", "a"};
  const Dataset ds = load_csv(p, pick, "target");
  CHECK(ds.features == Matrix{{4.0, 1.0}, {8.0, 5.0}});
  CHECK(ds.targets == Vector{3.0, 7.0});
  CHECK(load_csv(p, {}, "target").feature_names == std::vector<std::string>{"a", "b", "c"});
  CHECK(load_feature_csv(p, pick) == Matrix{{4.0, 1.0}, {8.0, 5.0}});
  const std::vector<std::string> missing{"zz"};
  CHECK_THROWS_AS(load_csv(p, missing, "target"), DataError);
  CHECK_THROWS_AS(load_csv(p, {}, "nope"), DataError);
}

TEST_CASE("csv errors name the line") {
  TempDir dir;
  CHECK(load_error(dir.file("1.csv", "x,y\n1,2\n3,\n")).find("line 3") != std::string::npos);
  CHECK(load_error(dir.file("2.csv", "x,y\n1,2\nabc,4\n")).find("line 3") != std::string::npos);
  CHECK(load_error(dir.file("3.csv", "x,y\n1,nan\n")).find("non-finite") != std::string::npos);
  CHECK(load_error(dir.file("4.csv", "x,y\n1,2,3\n")).find("line 2") != std::string::npos);
  CHECK(load_error(dir.file("5.csv", "")).find("empty") != std::string::npos);
  CHECK(load_error(dir.file("6.csv", "x,y\n")).find("no data rows") != std::string::npos);
  CHECK(load_error(dir.path / "missing.csv").find("cannot open") != std::string::npos);
  CHECK_NOTHROW(load_csv(dir.file("7.csv", "x,y\r\n+1.5, -2e3\r\n"), {}, "y"));
}

TEST_CASE("dataset validation and subsets") {
  Dataset ds;
  ds.features = Matrix{{1.0}, {2.0}};
  ds.targets = {1.0};
  CHECK_THROWS_AS(ds.validate(), DataError);
  ds.targets = {1.0, INFINITY};
  CHECK_THROWS_AS(ds.validate(), DataError);
  ds.targets = {1.0, 2.0};
  CHECK_NOTHROW(ds.validate());
  const std::vector<std::size_t> idx{1};
  CHECK(ds.subset(idx).targets == Vector{2.0});
}
