#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pmdi/channel.hpp"
#include "pmdi/keyrate.hpp"
#include "pmdi/statistics.hpp"

namespace pmdi {

enum class RunMode { Scan, Optimize, SmallRing, Baseline, Verify };
const char* to_string(RunMode m);
RunMode run_mode_from_string(const std::string& s);

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything one invocation needs, with defaults that reproduce the
/// reference parameter set of the study configuration shipped in configs/.
struct RunConfig {
  // [channel]
  double loss_db_per_km = 0.2;
  double dark_count_prob = 1e-6;
  double detector_efficiency = 1.0;
  double misalignment_a = 0.005;  // single-photon error probability per arm
  double misalignment_b = 0.005;
  Vec3 misalignment_axis{0.0, 1.0, 0.0};

  // [layout]
  RegionLayout layout{0.02, 0.005, 0.005, 0.005, 0.05, 0.5, 1.0};

  // [decoy]
  int n_max = 8;
  double lp_slack_sigma = 3.0;

  // [keyrate]
  double f_ec = 1.16;
  int rings = 10;
  KeyDensity key_density = KeyDensity::Raw;
  int key_band = 3;

  // [integration]
  IntegrationBudget pair_budget{1e-3, 2'000'000, 1u << 17};
  IntegrationBudget key_budget{1e-3, 4'000'000, 1u << 18};
  IntegrationBudget opt_budget{3e-3, 1u << 18, 1u << 15};

  // [optimize]
  OptRange delta_z_range{0.001, 0.05};
  OptRange t3_range{0.001, 0.99};
  int opt_rounds = 2;
  double opt_tol = 0.02;

  // [active]
  bool active_optimize = true;
  std::array<double, 3> active_intensities{0.5, 0.1, 0.005};

  // [scan]
  std::vector<double> distances_km{0, 10, 20, 30, 40, 50,
                                   60, 70, 80, 90, 100, 110};
  std::uint64_t seed = 1;
  int threads = 0;  // 0 = library default
  RunMode mode = RunMode::Scan;

  // [output]
  std::string csv_path = "results.csv";
  std::string manifest_path;  // default: csv_path + ".manifest.json"
  std::string cache_dir;

  /// Channel parameters at a given distance, misalignment rotations built
  /// from the per-arm error probabilities.
  ChannelParams channel_at(double distance_km) const;

  void validate() const;  // throws ConfigError

  /// Hash over the canonical key=value rendering; lands in the CSV rows and
  /// the manifest so outputs stay traceable.
  std::uint64_t config_hash() const;
  std::string canonical_text() const;
};

/// Parses the sectioned key=value format. Unknown keys, bad values, and
/// malformed lines raise ConfigError with "file:line: message".
RunConfig parse_config_file(const std::string& path);
RunConfig parse_config_text(const std::string& text,
                            const std::string& filename = "<config>");

}  // namespace pmdi
