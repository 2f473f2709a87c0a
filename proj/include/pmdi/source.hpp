#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>

namespace pmdi {

inline constexpr double kPi = 3.141592653589793238462643383279;
inline constexpr double kTwoPi = 2.0 * kPi;
inline constexpr double kHalfPi = 0.5 * kPi;

enum class BasisState : std::uint8_t { H, V, Plus, Minus };
enum class Basis : std::uint8_t { Z, X };

inline Basis basis_of(BasisState s) {
  return (s == BasisState::H || s == BasisState::V) ? Basis::Z : Basis::X;
}
const char* to_string(BasisState s);
const char* to_string(Basis b);

/// One emission of the passive source: per-leg mean photon numbers and the
/// two phases the interferometer leaves free.
struct SourceSample {
  double mu_h = 0.0;
  double mu_v = 0.0;
  double phi_hv = 0.0;      // relative phase, [0, 2pi)
  double phi_global = 0.0;  // integrated out downstream
};

struct BlochCoords {
  double mu = 0.0;        // total intensity
  double theta_hv = 0.0;  // polar angle, [0, pi]; H pole at 0
  double phi_hv = 0.0;    // azimuth, [0, 2pi)
};

/// Post-selection geometry. delta_z and delta_xy are intensity fractions:
/// the H region keeps samples whose minority-leg share mu_v / (mu_h + mu_v)
/// = sin^2(theta_hv / 2) stays below delta_z (a polar cap of Bloch angle
/// 2 asin(sqrt(delta_z))), V mirrors it, and the X band keeps the share
/// within delta_xy of one half, cut to azimuth windows of half-width
/// delta_phi around 0 and pi. Decoy bands are radial shells
/// r in (t_{k-1}, t_k] * mu_max in the intensity plane, with t_0 = 0.
struct RegionLayout {
  double delta_z = 0.02;
  double delta_xy = 0.005;
  double delta_phi = 0.005;
  double t1 = 0.005;
  double t2 = 0.05;
  double t3 = 0.5;
  double mu_max = 1.0;

  void validate() const;  // throws std::invalid_argument
  double band_lo(int band) const;
  double band_hi(int band) const;

  /// Bloch polar angle of the Z cap edge, 2 asin(sqrt(delta_z)).
  double z_cap_angle() const { return 2.0 * std::asin(std::sqrt(delta_z)); }
  /// Bloch polar angles bounding the X band around the equator.
  double x_band_lo_angle() const {
    return 2.0 * std::asin(std::sqrt(0.5 - delta_xy));
  }
  double x_band_hi_angle() const {
    return 2.0 * std::asin(std::sqrt(0.5 + delta_xy));
  }
};

struct RegionId {
  BasisState state = BasisState::H;
  int band = 1;  // 1..3
  friend bool operator==(const RegionId&, const RegionId&) = default;
};

// --- Bloch <-> intensity-plane geometry -------------------------------------
//
// Intensity-plane polar coordinates: mu_h = r cos(theta_p), mu_v = r
// sin(theta_p) with theta_p in [0, pi/2]. The Bloch polar angle relates by
// tan(theta_p) = tan^2(theta_hv / 2).

double plane_from_bloch(double theta_hv);
double bloch_from_plane(double theta_p);

/// sin(theta_p) + cos(theta_p); total intensity is mu = r * leg_sum(theta_p).
inline double leg_sum(double theta_p);

BlochCoords bloch_coords(const SourceSample& s);  // throws on vacuum input
SourceSample from_bloch(const BlochCoords& c, double phi_global = 0.0);

// --- Densities ---------------------------------------------------------------

/// Product-arcsine intensity density times the uniform phase density,
/// evaluated at the sample. Returns +infinity on the boundary mu in
/// {0, mu_max} (integrable); callers sample open intervals.
double base_density(const SourceSample& s, double mu_max);

/// Intensity part of base_density (without the 1/2pi phase factor).
double arcsine_pair_density(double mu_h, double mu_v, double mu_max);

/// Exponential density left after the reshaping post-selection, normalized
/// over (0, mu_max)^2, times the uniform phase density.
double reshaped_density(const SourceSample& s, double mu_max);

/// Acceptance probability of the reshaping post-selection, scaled by its
/// supremum so the maximum over the square is exactly 1.
double reshaping_acceptance(const SourceSample& s, double mu_max);

/// Fraction of emitted pulses that survive the reshaping post-selection,
/// i.e. the constant C with accepted density C * exp(mu_h + mu_v).
double acceptance_norm(double mu_max);

/// Inverse CDF of the single-leg arcsine density: mu_max * sin^2(pi u / 2).
double arcsine_quantile(double u, double mu_max);

// --- Region geometry and classification --------------------------------------

std::optional<RegionId> classify(const SourceSample& s, const RegionLayout& l);

/// A state region restricted to one decoy band, as a rectangle in
/// (r, theta_p); the azimuthal window is carried separately since the
/// density does not depend on phi.
struct RegionGeometry {
  double r_lo = 0.0, r_hi = 0.0;
  double th_lo = 0.0, th_hi = 0.0;  // theta_p
  double phi_fraction = 1.0;        // accepted share of the phase circle
};

RegionGeometry region_geometry(const RegionId& id, const RegionLayout& l);

/// Integral of exp(r * leg_sum(theta)) * r over the geometry rectangle;
/// the (r, theta) mass of the reshaped density up to the global constant.
double region_mass(const RegionGeometry& g);

/// Same mass under the raw arcsine density. Requires r_hi < mu_max.
double region_mass_raw(const RegionGeometry& g, double mu_max);

/// Region probability per emitted pulse, reshaping acceptance included.
double region_probability(const RegionId& id, const RegionLayout& l);

/// Region probability per emitted pulse when no reshaping is applied.
double region_probability_raw(const RegionId& id, const RegionLayout& l);

/// <P_n>: the Poisson term mu^n e^{-mu} / n! with mu = mu_h + mu_v, averaged
/// over the region under the reshaped density. The e^{-mu} cancels against
/// the density, leaving a polynomial integrand in (r, theta).
double poisson_region_moment(int n, const RegionId& id, const RegionLayout& l);
double poisson_region_moment(int n, const RegionGeometry& g);

/// Same moment under the raw arcsine density.
double poisson_region_moment_raw(int n, const RegionGeometry& g, double mu_max);

inline constexpr int kMaxPhotonOrder = 64;

namespace detail {

/// Raw-density weight rho(r, theta) * r * dtheta/dc under the substitution
/// theta = c^2 (H pole) or theta = pi/2 - c^2 (V pole), written so the
/// arcsine edge singularity cancels analytically. Returns theta through the
/// out-parameter.
double raw_polar_weight_warped(double r, double c, double mu_max, bool v_pole,
                               double& theta);

/// rho(r, theta) * r away from the poles.
double raw_polar_weight(double r, double theta, double mu_max);

double factorial(int n);

}  // namespace detail

// -----------------------------------------------------------------------------

inline double leg_sum(double theta_p) {
  return std::sin(theta_p) + std::cos(theta_p);
}

}  // namespace pmdi
