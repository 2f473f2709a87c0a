#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pmdi/channel.hpp"
#include "pmdi/source.hpp"

namespace pmdi {

inline std::strong_ordering operator<=>(const RegionId& a, const RegionId& b) {
  if (auto c = a.state <=> b.state; c != 0) return c;
  return a.band <=> b.band;
}
inline bool operator<(const RegionId& a, const RegionId& b) {
  return (a <=> b) < 0;
}

enum class KeyDensity { Reshaped, Raw };
const char* to_string(KeyDensity d);

struct IntegrationBudget {
  double rel_tol = 1e-3;
  std::uint64_t max_evals = 2'000'000;
  std::uint64_t min_evals = 65'536;
};

/// Everything the decoy analysis and the key-rate formula consume, for one
/// (layout, channel) configuration.
struct ObservedStatistics {
  struct PairValue {
    double gain = 0.0;
    double error_gain = 0.0;
    double gain_sigma = 0.0;
    double error_sigma = 0.0;
    std::uint64_t evals = 0;
    bool converged = true;
  };

  // conditional expectations per state-region pair (same basis both sides)
  std::map<std::pair<RegionId, RegionId>, PairValue> gains;

  // basis-level rows: both Z (or X) sectors pooled, indexed by band pair
  PairValue union_rows[2][3][3];

  // <P_n> per basis/band under the reshaped density (identical for the two
  // states of a basis, and for the two parties)
  std::vector<double> poisson_a[2][3];
  std::vector<double> poisson_b[2][3];
  double series_tail[2][3][3];  // 1 - sum_nm <P_n><P_m>

  std::map<RegionId, double> region_probs;  // per emitted pulse, reshaped

  // key-generation block (Z sectors, one band, configurable density)
  struct KeyBlock {
    double p_z_a = 0.0, p_z_b = 0.0;  // sifting probability per party
    double p1_a = 0.0, p1_b = 0.0;    // <P_1> over the key region
    double q_z = 0.0, qe_z = 0.0;     // pooled gain / error-gain
    double q_sigma = 0.0, qe_sigma = 0.0;
    bool converged = true;
    std::vector<double> ring_edges;    // polar angle, 0 .. delta_z
    std::vector<double> ring_weight;   // mass fractions, sum to 1
    std::vector<double> ring_p1;       // <P_1> conditioned on the ring
    std::vector<double> ring_gain;     // rings x rings, row-major
    std::vector<double> ring_error;
  } key;

  RegionLayout layout;
  ChannelParams channel;
  int n_max = 8;
  KeyDensity key_density = KeyDensity::Raw;
  int key_band = 3;
  std::uint64_t seed = 1;

  std::string to_json() const;
  static ObservedStatistics from_json(const std::string& text);
};

struct StatisticsOptions {
  int n_max = 8;
  int rings = 10;
  KeyDensity key_density = KeyDensity::Raw;
  int key_band = 3;  // 0 pools all three bands into the key region
  IntegrationBudget pair_budget;
  IntegrationBudget key_budget;
  std::uint64_t seed = 1;
  bool parallel = true;
};

/// Memoizes pass results across engine instances so a layout optimizer does
/// not recompute sectors its current line search leaves untouched.
class PassMemo {
 public:
  bool lookup(std::uint64_t key, std::vector<double>& out) const;
  void store(std::uint64_t key, const std::vector<double>& data);
  std::size_t size() const { return map_.size(); }

 private:
  std::map<std::uint64_t, std::vector<double>> map_;
};

class StatisticsEngine {
 public:
  StatisticsEngine(const RegionLayout& layout, const ChannelParams& channel,
                   const StatisticsOptions& options, PassMemo* memo = nullptr);

  /// Runs every pass and assembles the full statistics block.
  ObservedStatistics compute() const;

  /// Conditional gain <Q> for one state-region pair.
  double expected_gain(const RegionId& a, const RegionId& b) const;
  /// Conditional error-gain <QE> for one state-region pair.
  double expected_error_gain(const RegionId& a, const RegionId& b) const;

  const RegionLayout& layout() const { return layout_; }
  const ChannelParams& channel() const { return channel_; }

  struct PassResult;  // pass-level payload, exposed for the memo layer

 private:
  PassResult run_pair_pass(Basis basis, int band_a, int band_b) const;
  void fill_key_block(ObservedStatistics& out) const;

  RegionLayout layout_;
  ChannelParams channel_;
  StatisticsOptions opt_;
  PassMemo* memo_;
};

/// Stable 64-bit hash of the strings fed to it; used for cache keys.
std::uint64_t fnv1a(const std::string& text);

// --- Photon-number oracles ----------------------------------------------------
//
// Conditional yields for exact (n, m) photon-number pairs under the
// classical routing model: each photon independently survives the channel,
// picks an output leg of the relay splitter, and projects onto H/V.

/// Yield (or error-weighted yield) for an (n, m) photon pair with the given
/// pre-channel Bloch coordinates. The basis fixes the error bookkeeping:
/// Z labels by hemisphere, X by the azimuth window.
double photon_pair_yield(int n, int m, Basis basis, const BlochCoords& a,
                         const BlochCoords& b, const ChannelParams& channel,
                         bool error_side = false);

/// Y_mixed^{nm}: the photon-pair yield averaged over the basis sectors with
/// the (sin theta + cos theta)^n weights the reshaped density induces. The
/// result carries no dependence on the decoy band.
double decoupled_yield_oracle(int n, int m, Basis basis,
                              const RegionLayout& layout,
                              const ChannelParams& channel,
                              bool error_side = false);

/// <P_n P_m Y_nm> over a pooled band pair: the coupled form, integrated
/// brute force over (r_a, theta_a, r_b, theta_b).
double paired_yield_moment(int n, int m, Basis basis, int band_a, int band_b,
                           const RegionLayout& layout,
                           const ChannelParams& channel,
                           bool error_side = false);

/// Pooled-sector <P_n> for a basis/band (equal for both sector states).
double pooled_poisson_moment(int n, Basis basis, int band,
                             const RegionLayout& layout);

/// Gain and error at a fully specified state pair, averaged over the relay
/// phase; the degenerate-region limit of expected_gain.
GainContribution phase_averaged_gain(BasisState sa, BasisState sb,
                                     const SourceSample& a,
                                     const SourceSample& b,
                                     const ChannelParams& channel);

}  // namespace pmdi
