#include "pmdi/channel.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pmdi {

Rotation3D Rotation3D::about(Vec3 axis, double angle) {
  const double n = axis.norm();
  if (!(n > 0.0))
    throw std::invalid_argument("Rotation3D: axis must be nonzero");
  return {axis * (1.0 / n), angle};
}

void ChannelParams::validate() const {
  if (distance_km < 0.0)
    throw std::invalid_argument("channel: distance must be >= 0");
  if (detector_efficiency < 0.0 || detector_efficiency > 1.0)
    throw std::invalid_argument("channel: detector efficiency outside [0,1]");
  if (dark_count_prob < 0.0 || dark_count_prob > 1.0)
    throw std::invalid_argument("channel: dark count outside [0,1]");
  if (std::abs(misalignment_a.axis.norm() - 1.0) > 1e-12 ||
      std::abs(misalignment_b.axis.norm() - 1.0) > 1e-12)
    throw std::invalid_argument("channel: rotation axes must be unit length");
}

BlochCoords rotate_state(const BlochCoords& c, const Rotation3D& rot) {
  if (!(c.mu > 0.0))
    throw std::domain_error("rotate_state: vacuum has no polarization");
  const double st = std::sin(c.theta_hv), ct = std::cos(c.theta_hv);
  const Vec3 s{st * std::cos(c.phi_hv), st * std::sin(c.phi_hv), ct};
  const Vec3 r = rot.apply(s);
  BlochCoords out;
  out.mu = c.mu;
  out.theta_hv = std::acos(std::clamp(r.z, -1.0, 1.0));
  out.phi_hv = std::atan2(r.y, r.x);
  if (out.phi_hv < 0.0) out.phi_hv += kTwoPi;
  return out;
}

double apply_loss(double mu, const ChannelParams& p) {
  if (mu < 0.0) throw std::domain_error("apply_loss: negative intensity");
  return mu * p.arm_transmittance();
}

std::pair<double, double> interfere(double mu1, double mu2, double phase_diff) {
  const double sum = mu1 + mu2;
  const double cross = std::sqrt(mu1 * mu2) * std::sin(phase_diff);
  double c = std::clamp(0.5 * sum - cross, 0.0, sum);
  // snap onto the grid of the total so the complement is representable and
  // the two legs sum back to the input energy without rounding
  c = std::clamp((c + sum) - sum, 0.0, sum);
  return {c, sum - c};
}

RelayPulse through_channel(const SourceSample& s, const Rotation3D& rot,
                           double transmittance) {
  const double mu = s.mu_h + s.mu_v;
  if (!(mu > 0.0)) return RelayPulse{0.0, 0.0, 0.0};
  BlochCoords c = bloch_coords(s);
  if (rot.angle != 0.0) c = rotate_state(c, rot);
  const double ch = std::cos(0.5 * c.theta_hv);
  const double sh = std::sin(0.5 * c.theta_hv);
  return RelayPulse{mu * transmittance * ch * ch, mu * transmittance * sh * sh,
                    c.phi_hv};
}

DetectorClicks detector_click_probs(const RelayPulse& a, const RelayPulse& b,
                                    double phi_r, double dark_count_prob) {
  // H legs interfere with the relay phase, V legs with the relay phase
  // offset by the two relative phases.
  const auto [ch, dh] = interfere(a.mu_h, b.mu_h, phi_r);
  const auto [cv, dv] = interfere(a.mu_v, b.mu_v, phi_r + a.phi_hv - b.phi_hv);
  const double keep = 1.0 - dark_count_prob;
  DetectorClicks k;
  k.c_h = 1.0 - keep * std::exp(-ch);
  k.c_v = 1.0 - keep * std::exp(-cv);
  k.d_h = 1.0 - keep * std::exp(-dh);
  k.d_v = 1.0 - keep * std::exp(-dv);
  return k;
}

BsmOutcome bsm_probabilities(const RelayPulse& a, const RelayPulse& b,
                             double phi_r, const ChannelParams& p) {
  const DetectorClicks k =
      detector_click_probs(a, b, phi_r, p.dark_count_prob);
  BsmOutcome o;
  o.p_psi_minus = k.c_h * k.d_v * (1.0 - k.c_v) * (1.0 - k.d_h) +
                  k.c_v * k.d_h * (1.0 - k.c_h) * (1.0 - k.d_v);
  o.p_psi_plus = k.c_h * k.c_v * (1.0 - k.d_h) * (1.0 - k.d_v) +
                 k.d_h * k.d_v * (1.0 - k.c_h) * (1.0 - k.c_v);
  return o;
}

GainContribution split_gain_and_error(BasisState state_a, BasisState state_b,
                                      const BsmOutcome& o) {
  GainContribution g;
  g.gain = o.p_psi_minus + o.p_psi_plus;
  if (basis_of(state_a) == Basis::Z) {
    // anti-correlated bits are the correct outcome
    g.error = (state_a == state_b) ? g.gain : 0.0;
  } else {
    // psi- flags anti-correlation, psi+ correlation
    g.error = (state_a == state_b) ? o.p_psi_minus : o.p_psi_plus;
  }
  return g;
}

GainContribution sample_gain_and_error(const RegionId& region_a,
                                       const RegionId& region_b,
                                       const RelayPulse& a, const RelayPulse& b,
                                       double phi_r, const ChannelParams& p) {
  if (basis_of(region_a.state) != basis_of(region_b.state))
    throw std::invalid_argument(
        "sample_gain_and_error: region pair mixes bases");
  return split_gain_and_error(region_a.state, region_b.state,
                              bsm_probabilities(a, b, phi_r, p));
}

}  // namespace pmdi
