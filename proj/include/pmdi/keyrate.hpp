#pragma once

#include <array>
#include <functional>
#include <vector>

#include "pmdi/decoy_lp.hpp"
#include "pmdi/statistics.hpp"

namespace pmdi {

/// h2(x) = -x log2 x - (1-x) log2 (1-x), continuous at 0 and 1.
double binary_entropy(double x);

struct KeyRateInputs {
  double p_z_a = 0.0, p_z_b = 0.0;
  double p1_a = 0.0, p1_b = 0.0;
  double y11_lower = 0.0;
  double e11_upper = 0.5;
  double q_z = 0.0, qe_z = 0.0;
  double f_ec = 1.16;
};

/// Asymptotic secret fraction per emitted pulse pair, clamped at zero.
double key_rate(const KeyRateInputs& in);

struct RingPartition {
  std::vector<double> edges;    // polar angle, increasing, edges[0] = 0
  std::vector<double> weights;  // region mass fractions, one per ring
};

struct RingObservables {
  std::vector<double> p1_a, p1_b;  // <P_1> conditioned on each ring
  std::vector<double> gain;        // rings x rings, conditional <Q>
  std::vector<double> error_gain;  // rings x rings, conditional <QE>
};

struct SharedKeyTerms {
  double p_z_a = 0.0, p_z_b = 0.0;
  double y11_lower = 0.0;
  double e11_upper = 0.5;
  double f_ec = 1.16;
};

/// Ring-resolved rate: the privacy-amplification bound is shared, only the
/// error-correction cost varies per ring pair, and negative ring pairs are
/// dropped. Always at least the pooled rate, by convexity of h2.
double small_ring_rate(const RingPartition& a, const RingPartition& b,
                       const RingObservables& obs, const SharedKeyTerms& k);

struct ActiveOptions {
  int n_max = 8;
  double f_ec = 1.16;
  double phase_rel_tol = 1e-9;
};

struct ActiveResult {
  double rate = 0.0;
  double y11_lower = 0.0;
  double e11_upper = 0.5;
  double q_z = 0.0;
  double qber_z = 0.0;
  LpStatus z_status = LpStatus::Optimal;
  LpStatus x_status = LpStatus::Optimal;
};

/// Reference curve: point intensities, actively chosen BB84 states, the same
/// click model and decoy machinery. Intensities must be distinct in (0, 1].
ActiveResult active_baseline(const ChannelParams& channel,
                             std::array<double, 3> intensities,
                             const ActiveOptions& opt = {});

// --- Deterministic derivative-free maximization --------------------------------

struct GoldenResult {
  double x = 0.0;
  double value = 0.0;
  int evals = 0;
};

/// Golden-section maximization on [lo, hi]; endpoints are probed too, so
/// boundary optima are found.
GoldenResult golden_max(const std::function<double(double)>& f, double lo,
                        double hi, double x_tol, int max_evals = 40);

struct OptRange {
  double lo = 0.0, hi = 1.0;
};

struct LayoutOptimum {
  RegionLayout layout;
  double rate = 0.0;
  bool converged = true;
  int evals = 0;
};

struct OptimizeOptions {
  int rounds = 2;
  double x_tol_frac = 0.02;  // of the range width
  int max_evals_per_line = 16;
};

/// Coordinate descent over (delta_z, t3) with the other layout parameters
/// held fixed. t3 is clipped above t2 to keep the bands ordered.
LayoutOptimum optimize_layout(
    const RegionLayout& base, OptRange delta_z_range, OptRange t3_range,
    const std::function<double(const RegionLayout&)>& rate_fn,
    const OptimizeOptions& opt = {});

/// Coordinate descent over the three active intensities with the ordering
/// omega < nu < mu enforced.
std::pair<std::array<double, 3>, ActiveResult> optimize_active(
    const ChannelParams& channel, std::array<double, 3> start,
    const ActiveOptions& aopt = {}, const OptimizeOptions& opt = {});

}  // namespace pmdi
