#include "doctest.h"

#include <cmath>
#include <random>

#include "pmdi/channel.hpp"

using namespace pmdi;

namespace {

// independent 3x3 rotation-matrix oracle
std::array<double, 9> rot_matrix(const Vec3& axis, double angle) {
  const double c = std::cos(angle), s = std::sin(angle), ic = 1.0 - c;
  const double x = axis.x, y = axis.y, z = axis.z;
  return {c + x * x * ic,     x * y * ic - z * s, x * z * ic + y * s,
          y * x * ic + z * s, c + y * y * ic,     y * z * ic - x * s,
          z * x * ic - y * s, z * y * ic + x * s, c + z * z * ic};
}

Vec3 bloch_vec(const BlochCoords& c) {
  return {std::sin(c.theta_hv) * std::cos(c.phi_hv),
          std::sin(c.theta_hv) * std::sin(c.phi_hv), std::cos(c.theta_hv)};
}

}  // namespace

TEST_CASE("rotation basics") {
  const BlochCoords state{0.4, 1.1, 2.2};

  // zero angle is the identity
  const BlochCoords same = rotate_state(state, Rotation3D::about({1, 0, 0}, 0.0));
  CHECK(same.theta_hv == doctest::Approx(state.theta_hv));
  CHECK(same.phi_hv == doctest::Approx(state.phi_hv));

  // a half turn about X maps the H pole to the V pole
  const BlochCoords pole = rotate_state({0.4, 0.0, 0.0},
                                        Rotation3D::about({1, 0, 0}, kPi));
  CHECK(pole.theta_hv == doctest::Approx(kPi));
  CHECK(pole.mu == doctest::Approx(0.4));

  CHECK_THROWS_AS(rotate_state({0.0, 0.0, 0.0}, Rotation3D::about({1, 0, 0}, 1.0)),
                  std::domain_error);
  CHECK_THROWS_AS(Rotation3D::about({0, 0, 0}, 1.0), std::invalid_argument);
}

TEST_CASE("rotation agrees with the matrix oracle and preserves norms") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    const Vec3 raw{2.0 * u(rng) - 1.0, 2.0 * u(rng) - 1.0, 2.0 * u(rng) - 1.0};
    if (raw.norm() < 1e-3) continue;
    const double angle = kTwoPi * u(rng);
    const Rotation3D rot = Rotation3D::about(raw, angle);
    const BlochCoords in{1.0, kPi * u(rng), kTwoPi * u(rng)};
    const Vec3 v = bloch_vec(in);
    const auto m = rot_matrix(rot.axis, angle);
    const Vec3 expect{m[0] * v.x + m[1] * v.y + m[2] * v.z,
                      m[3] * v.x + m[4] * v.y + m[5] * v.z,
                      m[6] * v.x + m[7] * v.y + m[8] * v.z};
    const Vec3 got = bloch_vec(rotate_state(in, rot));
    CHECK(std::abs(got.x - expect.x) < 1e-12);
    CHECK(std::abs(got.y - expect.y) < 1e-12);
    CHECK(std::abs(got.z - expect.z) < 1e-12);
    CHECK(std::abs(got.norm() - 1.0) < 1e-12);
  }
}

TEST_CASE("loss factors") {
  ChannelParams p;
  p.distance_km = 0.0;
  p.detector_efficiency = 1.0;
  CHECK(apply_loss(0.37, p) == doctest::Approx(0.37));

  p.distance_km = 50.0;
  p.loss_db_per_km = 0.2;
  CHECK(p.arm_transmittance() == 0.1);  // 10 dB is one decade

  p.distance_km = 10.0;
  p.detector_efficiency = 0.5;
  CHECK(apply_loss(1.0, p) == doctest::Approx(0.31547867224009662));
  CHECK_THROWS_AS(apply_loss(-1.0, p), std::domain_error);
}

TEST_CASE("splitter interference") {
  auto [c0, d0] = interfere(0.1, 0.1, 0.0);
  CHECK(c0 == doctest::Approx(0.1));
  CHECK(d0 == doctest::Approx(0.1));

  auto [c1, d1] = interfere(0.1, 0.1, kHalfPi);
  CHECK(c1 == doctest::Approx(0.0));
  CHECK(d1 == doctest::Approx(0.2));

  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 300; ++i) {
    const double m1 = 2.0 * u(rng), m2 = 2.0 * u(rng), ph = kTwoPi * u(rng);
    auto [c, d] = interfere(m1, m2, ph);
    CHECK(c + d == m1 + m2);  // energy conservation is exact
  }
}

TEST_CASE("bsm outcome probabilities") {
  ChannelParams p;
  const RelayPulse dark_a{0.0, 0.0, 0.0}, dark_b{0.0, 0.0, 0.0};

  p.dark_count_prob = 0.0;
  BsmOutcome o = bsm_probabilities(dark_a, dark_b, 0.7, p);
  CHECK(o.p_psi_minus == 0.0);
  CHECK(o.p_psi_plus == 0.0);

  p.dark_count_prob = 1e-6;
  o = bsm_probabilities(dark_a, dark_b, 0.7, p);
  const double pd = 1e-6;
  const double pattern = pd * pd * (1.0 - pd) * (1.0 - pd);
  CHECK(o.p_psi_minus == doctest::Approx(2.0 * pattern));
  CHECK(o.p_psi_plus == doctest::Approx(2.0 * pattern));

  // periodic in the relay phase
  const RelayPulse a{0.3, 0.1, 1.1}, b{0.2, 0.15, 0.4};
  const BsmOutcome o1 = bsm_probabilities(a, b, 1.234, p);
  const BsmOutcome o2 = bsm_probabilities(a, b, 1.234 + kTwoPi, p);
  CHECK(std::abs(o1.p_psi_minus - o2.p_psi_minus) < 1e-12);
  CHECK(std::abs(o1.p_psi_plus - o2.p_psi_plus) < 1e-12);
}

TEST_CASE("swapping the parties keeps the total gain") {
  ChannelParams p;
  p.dark_count_prob = 1e-6;
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const RelayPulse a{0.5 * u(rng), 0.5 * u(rng), kTwoPi * u(rng)};
    const RelayPulse b{0.5 * u(rng), 0.5 * u(rng), kTwoPi * u(rng)};
    const double phi = kTwoPi * u(rng);
    const BsmOutcome ab = bsm_probabilities(a, b, phi, p);
    const BsmOutcome ba = bsm_probabilities(b, a, -phi, p);
    CHECK(ab.p_psi_minus + ab.p_psi_plus ==
          doctest::Approx(ba.p_psi_minus + ba.p_psi_plus).epsilon(1e-13));
  }
}

TEST_CASE("error bookkeeping per basis") {
  BsmOutcome o{0.3, 0.2};
  GainContribution g = split_gain_and_error(BasisState::H, BasisState::V, o);
  CHECK(g.gain == doctest::Approx(0.5));
  CHECK(g.error == 0.0);  // anti-correlated is the correct Z outcome
  g = split_gain_and_error(BasisState::V, BasisState::V, o);
  CHECK(g.error == doctest::Approx(0.5));
  g = split_gain_and_error(BasisState::Plus, BasisState::Plus, o);
  CHECK(g.error == doctest::Approx(0.3));  // psi- flags anti-correlation
  g = split_gain_and_error(BasisState::Plus, BasisState::Minus, o);
  CHECK(g.error == doctest::Approx(0.2));

  const RelayPulse a{0.1, 0.0, 0.0}, b{0.0, 0.1, 0.0};
  ChannelParams p;
  CHECK_THROWS_AS(sample_gain_and_error(RegionId{BasisState::H, 1},
                                        RegionId{BasisState::Plus, 1}, a, b,
                                        0.0, p),
                  std::invalid_argument);
}

TEST_CASE("through_channel composes rotation and loss") {
  ChannelParams p;
  p.distance_km = 50.0;
  const double eta = p.arm_transmittance();
  const RelayPulse out = through_channel({0.3, 0.0, 0.0, 0.0},
                                         Rotation3D::about({1, 0, 0}, kPi), eta);
  CHECK(out.mu_h == doctest::Approx(0.0));
  CHECK(out.mu_v == doctest::Approx(0.3 * eta));
}

TEST_CASE("click model matches a Monte-Carlo simulator") {
  // sample Poisson photon counts and dark flips per detector, count the
  // exact two-fold patterns
  ChannelParams p;
  p.dark_count_prob = 2e-3;
  const RelayPulse a{0.25, 0.08, 0.9}, b{0.18, 0.12, 0.35};
  const double phi_r = 1.1;
  const BsmOutcome expect = bsm_probabilities(a, b, phi_r, p);

  const auto [ch, dh] = interfere(a.mu_h, b.mu_h, phi_r);
  const auto [cv, dv] = interfere(a.mu_v, b.mu_v, phi_r + a.phi_hv - b.phi_hv);

  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto click = [&](double mu) {
    // Poisson threshold detector: clicks unless zero photons and no dark
    std::poisson_distribution<int> pois(mu);
    return pois(rng) > 0 || u(rng) < p.dark_count_prob;
  };
  const std::int64_t n = 10'000'000;
  std::int64_t minus = 0, plus = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const bool kch = click(ch), kcv = click(cv), kdh = click(dh),
               kdv = click(dv);
    if (kch + kcv + kdh + kdv != 2) continue;
    if ((kch && kdv) || (kcv && kdh)) ++minus;
    if ((kch && kcv) || (kdh && kdv)) ++plus;
  }
  const double mc_minus = static_cast<double>(minus) / n;
  const double mc_plus = static_cast<double>(plus) / n;
  const double s_minus = std::sqrt(expect.p_psi_minus / n);
  const double s_plus = std::sqrt(expect.p_psi_plus / n);
  CHECK(std::abs(mc_minus - expect.p_psi_minus) < 4.0 * s_minus);
  CHECK(std::abs(mc_plus - expect.p_psi_plus) < 4.0 * s_plus);
}
