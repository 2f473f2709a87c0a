#pragma once

#include <array>
#include <cmath>
#include <utility>

#include "pmdi/source.hpp"

namespace pmdi {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  double norm() const { return std::sqrt(x * x + y * y + z * z); }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  Vec3 operator*(double a) const { return {x * a, y * a, z * a}; }
  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
};

/// Axis-angle rotation; the axis is stored unit length.
struct Rotation3D {
  Vec3 axis{0.0, 0.0, 1.0};
  double angle = 0.0;

  static Rotation3D about(Vec3 axis, double angle);
  static Rotation3D identity() { return {}; }

  /// v cos(a) + (k x v) sin(a) + k (k.v)(1 - cos(a))
  Vec3 apply(const Vec3& v) const {
    const double c = std::cos(angle), s = std::sin(angle);
    const Vec3 kxv = axis.cross(v);
    const double kv = axis.dot(v);
    return v * c + kxv * s + axis * (kv * (1.0 - c));
  }
};

struct ChannelParams {
  double distance_km = 0.0;
  double loss_db_per_km = 0.2;
  double detector_efficiency = 1.0;
  double dark_count_prob = 1e-6;
  Rotation3D misalignment_a;
  Rotation3D misalignment_b;

  void validate() const;
  /// 10^(-alpha L / 10) * eta_d, the end-to-end intensity factor per arm.
  double arm_transmittance() const {
    return std::pow(10.0, -loss_db_per_km * distance_km / 10.0) *
           detector_efficiency;
  }
};

/// A pulse as it reaches the relay: rotated, attenuated, relative phase kept.
struct RelayPulse {
  double mu_h = 0.0;
  double mu_v = 0.0;
  double phi_hv = 0.0;
};

/// Click probabilities of the four threshold detectors, H/V on each output
/// leg of the relay beam splitter.
struct DetectorClicks {
  double c_h = 0.0, c_v = 0.0, d_h = 0.0, d_v = 0.0;
};

struct BsmOutcome {
  double p_psi_minus = 0.0;  // cross-pattern two-fold coincidence
  double p_psi_plus = 0.0;   // same-leg two-fold coincidence
};

/// Rotates the polarization on the Bloch sphere; total intensity unchanged.
/// The induced global-phase change drops out under the relay-phase average.
BlochCoords rotate_state(const BlochCoords& c, const Rotation3D& rot);

double apply_loss(double mu, const ChannelParams& p);

/// 50:50 interference of two intensities with the given phase difference.
/// Returns the output pair (c, d); c + d = mu1 + mu2 exactly.
std::pair<double, double> interfere(double mu1, double mu2, double phase_diff);

/// Full per-arm propagation: misalignment rotation followed by loss.
RelayPulse through_channel(const SourceSample& s, const Rotation3D& rot,
                           double transmittance);

DetectorClicks detector_click_probs(const RelayPulse& a, const RelayPulse& b,
                                    double phi_r, double dark_count_prob);

/// Probability of the two Bell-type coincidence patterns, "exactly two
/// detectors click" with the other two silent.
BsmOutcome bsm_probabilities(const RelayPulse& a, const RelayPulse& b,
                             double phi_r, const ChannelParams& p);

struct GainContribution {
  double gain = 0.0;
  double error = 0.0;
};

/// Gain and error-gain contribution at one relay phase. In the Z basis a
/// successful projection implies anti-correlated bits, so equal-state pairs
/// count their whole gain as error; in the X basis psi- implies
/// anti-correlation and psi+ correlation. Throws if the regions mix bases.
GainContribution sample_gain_and_error(const RegionId& region_a,
                                       const RegionId& region_b,
                                       const RelayPulse& a, const RelayPulse& b,
                                       double phi_r, const ChannelParams& p);

GainContribution split_gain_and_error(BasisState state_a, BasisState state_b,
                                      const BsmOutcome& o);

}  // namespace pmdi
