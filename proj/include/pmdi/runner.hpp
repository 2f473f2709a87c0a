#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pmdi/config.hpp"

namespace pmdi {

struct DistanceResult {
  double distance_km = 0.0;
  double rate_passive = 0.0;
  double rate_smallring = 0.0;
  double rate_active = 0.0;
  double y11_lower = 0.0;
  double e11_upper = 0.5;
  double q_z = 0.0;
  double qber_z = 0.0;
  bool converged_passive = false;
  bool converged_smallring = false;
  bool converged_active = false;
  RegionLayout layout;  // the layout the row was computed with
};

struct RunArtifacts {
  std::vector<DistanceResult> rows;
  std::string csv_path;
  std::string manifest_path;
  std::uint64_t config_hash = 0;
  double wall_seconds = 0.0;
  int exit_code = 0;
};

/// Full passive pipeline at one distance: statistics, decoy bounds, bulk and
/// ring-resolved rates. `budget_override` swaps the pair budget (used for
/// optimizer probes).
DistanceResult evaluate_distance(
    const RunConfig& cfg, double distance_km, const RegionLayout& layout,
    PassMemo* memo,
    const std::optional<IntegrationBudget>& budget_override = std::nullopt,
    bool with_active = true, bool with_rings = true);

/// Per-distance layout optimization over (delta_z, t3) with probe-budget
/// line searches and a full-budget final evaluation.
DistanceResult optimize_distance(const RunConfig& cfg, double distance_km,
                                 PassMemo* memo);

/// Executes the configured mode, writes the CSV and the manifest, returns
/// the rows. Numeric non-convergence marks rows; config errors throw.
RunArtifacts run(const RunConfig& cfg);

std::string format_csv(const RunConfig& cfg,
                       const std::vector<DistanceResult>& rows);

}  // namespace pmdi
