#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pmdi/runner.hpp"

using namespace pmdi;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// a deliberately cheap configuration for end-to-end runner tests
RunConfig tiny_config(const std::string& tag) {
  RunConfig cfg;
  cfg.distances_km = {0.0, 40.0};
  cfg.pair_budget = {1e-2, 1u << 16, 1u << 14};
  cfg.key_budget = {1e-2, 1u << 16, 1u << 14};
  cfg.opt_budget = {3e-2, 1u << 14, 1u << 13};
  cfg.rings = 3;
  cfg.active_optimize = false;
  const auto dir = std::filesystem::temp_directory_path() / "pmdi_tests";
  std::filesystem::create_directories(dir);
  cfg.csv_path = (dir / (tag + ".csv")).string();
  cfg.manifest_path = (dir / (tag + ".manifest.json")).string();
  return cfg;
}

}  // namespace

TEST_CASE("config text round-trips through the parser") {
  const char* text = R"(
# reference setup
[channel]
loss_db_per_km = 0.21
dark_count_prob = 2e-6
detector_efficiency = 0.5
misalignment_a = 0.004
misalignment_b = 0.006
misalignment_axis = 0 1 0

[layout]
mu_max = 1.0
delta_z = 0.03
delta_xy = 0.004
delta_phi = 0.006
t1 = 0.004
t2 = 0.04
t3 = 0.7

[decoy]
n_max = 9
lp_slack_sigma = 2.5

[keyrate]
f_ec = 1.2
rings = 12
key_density = reshaped
key_band = 0

[integration]
rel_tol = 2e-3
max_evals = 1000000
opt_max_evals = 100000

[optimize]
delta_z_lo = 0.002
t3_hi = 0.95
rounds = 3

[active]
optimize = false
intensities = 0.4, 0.12, 0.01

[scan]
distances_km = 0 25 50
seed = 7
threads = 2
mode = optimize

[output]
csv = out.csv
cache_dir = cache
)";
  const RunConfig cfg = parse_config_text(text, "test.ini");
  CHECK(cfg.loss_db_per_km == 0.21);
  CHECK(cfg.dark_count_prob == 2e-6);
  CHECK(cfg.detector_efficiency == 0.5);
  CHECK(cfg.misalignment_b == 0.006);
  CHECK(cfg.layout.delta_z == 0.03);
  CHECK(cfg.layout.t3 == 0.7);
  CHECK(cfg.n_max == 9);
  CHECK(cfg.lp_slack_sigma == 2.5);
  CHECK(cfg.f_ec == 1.2);
  CHECK(cfg.rings == 12);
  CHECK(cfg.key_density == KeyDensity::Reshaped);
  CHECK(cfg.key_band == 0);
  CHECK(cfg.pair_budget.rel_tol == 2e-3);
  CHECK(cfg.opt_budget.max_evals == 100000);
  CHECK(cfg.delta_z_range.lo == 0.002);
  CHECK(cfg.t3_range.hi == 0.95);
  CHECK(cfg.opt_rounds == 3);
  CHECK_FALSE(cfg.active_optimize);
  CHECK(cfg.active_intensities[1] == 0.12);
  CHECK(cfg.distances_km == std::vector<double>{0.0, 25.0, 50.0});
  CHECK(cfg.seed == 7);
  CHECK(cfg.threads == 2);
  CHECK(cfg.mode == RunMode::Optimize);
  CHECK(cfg.csv_path == "out.csv");
  CHECK(cfg.manifest_path == "out.csv.manifest.json");
  CHECK(cfg.cache_dir == "cache");
  cfg.validate();

  // the misalignment maps to the standard error-probability rotation
  const ChannelParams ch = cfg.channel_at(12.5);
  CHECK(ch.distance_km == 12.5);
  CHECK(ch.misalignment_a.angle ==
        doctest::Approx(2.0 * std::asin(std::sqrt(0.004))));
}

TEST_CASE("config errors carry file and line") {
  const auto expect_error = [](const char* text, const char* needle) {
    try {
      parse_config_text(text, "bad.ini");
      FAIL("expected a parse error");
    } catch (const ConfigError& e) {
      const std::string what = e.what();
      CHECK(what.find("bad.ini:") != std::string::npos);
      CHECK(what.find(needle) != std::string::npos);
    }
  };
  expect_error("[channel]\nnope = 1\n", "unknown key 'nope'");
  expect_error("[nope]\n", "unknown section");
  expect_error("[channel]\nloss_db_per_km == 0.2\n", "expected a number");
  expect_error("[scan]\nmode = warp\n", "unknown mode");
  expect_error("[scan]\ndistances_km =\n", "empty value");
  expect_error("loss = 1\n", "unknown key");
}

TEST_CASE("validation rejects inconsistent run setups") {
  RunConfig cfg;
  cfg.distances_km.clear();
  CHECK_THROWS_WITH_AS(cfg.validate(), "no scan points", ConfigError);

  cfg = RunConfig{};
  cfg.distances_km = {50.0, 10.0};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = RunConfig{};
  cfg.layout.t2 = 0.9;  // above t3
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("csv formatting is stable and traceable") {
  RunConfig cfg = tiny_config("fmt");
  std::vector<DistanceResult> rows(1);
  rows[0].distance_km = 12.0;
  rows[0].rate_passive = 1.234567891e-7;
  rows[0].converged_passive = true;
  const std::string csv = format_csv(cfg, rows);
  CHECK(csv.find("distance_km,rate_passive") == 0);
  CHECK(csv.find("\r\n") != std::string::npos);
  CHECK(csv.find("1.23456789e-07") != std::string::npos);  // nine digits
  char hash[24];
  std::snprintf(hash, sizeof hash, "%016llx",
                static_cast<unsigned long long>(cfg.config_hash()));
  CHECK(csv.find(hash) != std::string::npos);
}

TEST_CASE("scan runs write byte-identical outputs per seed") {
  RunConfig cfg = tiny_config("det_a");
  const RunArtifacts a = run(cfg);
  CHECK(a.exit_code == 0);
  REQUIRE(a.rows.size() == 2);
  const std::string first = slurp(cfg.csv_path);

  RunConfig again = tiny_config("det_b");
  const RunArtifacts b = run(again);
  const std::string second = slurp(again.csv_path);
  CHECK(first == second);

  RunConfig other = tiny_config("det_c");
  other.seed = 2;
  run(other);
  CHECK(slurp(other.csv_path) != first);  // the seed is part of the output

  // rows decay with distance
  CHECK(a.rows[0].rate_passive >= a.rows[1].rate_passive);
}

TEST_CASE("threads do not change the numbers") {
  RunConfig one = tiny_config("thr1");
  one.threads = 1;
  RunConfig two = tiny_config("thr2");
  two.threads = 2;
  run(one);
  run(two);
  CHECK(slurp(one.csv_path).substr(0, 400) ==
        slurp(two.csv_path).substr(0, 400));
}

TEST_CASE("statistics cache lets a scan resume") {
  RunConfig cfg = tiny_config("cache_a");
  const auto dir = std::filesystem::temp_directory_path() / "pmdi_tests" /
                   "stats_cache";
  std::filesystem::remove_all(dir);
  cfg.cache_dir = dir.string();
  run(cfg);
  CHECK(std::filesystem::exists(dir));
  std::size_t files = 0;
  for (auto& e : std::filesystem::directory_iterator(dir)) {
    (void)e;
    ++files;
  }
  CHECK(files == 2);  // one blob per distance

  RunConfig resumed = tiny_config("cache_b");
  resumed.cache_dir = dir.string();
  run(resumed);
  CHECK(slurp(cfg.csv_path) == slurp(resumed.csv_path));
}

TEST_CASE("verify mode reports a clean property suite") {
  RunConfig cfg = tiny_config("verify");
  cfg.mode = RunMode::Verify;
  const RunArtifacts art = run(cfg);
  CHECK(art.exit_code == 0);
}

TEST_CASE("baseline mode fills only the active column") {
  RunConfig cfg = tiny_config("baseline");
  cfg.mode = RunMode::Baseline;
  cfg.distances_km = {0.0};
  const RunArtifacts art = run(cfg);
  REQUIRE(art.rows.size() == 1);
  CHECK(art.rows[0].rate_active > 0.0);
  CHECK(art.rows[0].rate_passive == 0.0);
}

TEST_CASE("smallring mode records the ring-doubling shift") {
  RunConfig cfg = tiny_config("smallring");
  cfg.mode = RunMode::SmallRing;
  cfg.distances_km = {0.0};
  const RunArtifacts art = run(cfg);
  REQUIRE(art.rows.size() == 1);
  CHECK(art.rows[0].rate_smallring >= art.rows[0].rate_passive * (1.0 - 1e-9));
  const std::string manifest = slurp(cfg.manifest_path);
  CHECK(manifest.find("ring_doubling_shift") != std::string::npos);
}
