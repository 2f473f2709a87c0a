#include "doctest.h"

#include <cmath>
#include <random>

#include "pmdi/statistics.hpp"

using namespace pmdi;

namespace {

StatisticsOptions fast_options(std::uint64_t seed = 1) {
  StatisticsOptions o;
  o.pair_budget = {3e-3, 1u << 19, 1u << 15};
  o.key_budget = {3e-3, 1u << 19, 1u << 15};
  o.rings = 4;
  o.seed = seed;
  return o;
}

RegionLayout fig_layout() {
  RegionLayout l;
  l.delta_z = 0.02;
  l.delta_xy = 0.005;
  l.delta_phi = 0.005;
  l.t1 = 0.005;
  l.t2 = 0.05;
  l.t3 = 0.6;
  return l;
}

ChannelParams fig_channel(double distance) {
  ChannelParams c;
  c.distance_km = distance;
  c.loss_db_per_km = 0.2;
  c.dark_count_prob = 1e-6;
  const double beta = 2.0 * std::asin(std::sqrt(0.005));
  c.misalignment_a = Rotation3D::about({0, 1, 0}, beta);
  c.misalignment_b = Rotation3D::about({0, 1, 0}, beta);
  return c;
}

// rejection sampler for the reshaped density on one sector/band rectangle
struct RegionSampler {
  RegionGeometry g;
  double envelope;
  explicit RegionSampler(const RegionGeometry& geom)
      : g(geom), envelope(std::exp(g.r_hi * std::sqrt(2.0)) * g.r_hi) {}
  template <class Rng>
  std::pair<double, double> draw(Rng& rng,
                                 std::uniform_real_distribution<double>& u) {
    while (true) {
      const double r = g.r_lo + (g.r_hi - g.r_lo) * u(rng);
      const double th = g.th_lo + (g.th_hi - g.th_lo) * u(rng);
      if (u(rng) * envelope <= std::exp(r * leg_sum(th)) * r) return {r, th};
    }
  }
};

}  // namespace

TEST_CASE("no light means no gain") {
  RegionLayout l = fig_layout();
  ChannelParams c = fig_channel(2000.0);  // 400 dB of fibre
  c.dark_count_prob = 0.0;
  StatisticsEngine eng(l, c, fast_options());
  const double q =
      eng.expected_gain(RegionId{BasisState::H, 3}, RegionId{BasisState::V, 3});
  CHECK(q < 1e-12);
}

TEST_CASE("perfect channel keeps anti-correlated pairs error free") {
  RegionLayout l = fig_layout();
  ChannelParams c = fig_channel(0.0);
  c.misalignment_a = c.misalignment_b = Rotation3D::identity();
  c.dark_count_prob = 0.0;
  StatisticsEngine eng(l, c, fast_options());
  const double qe = eng.expected_error_gain(RegionId{BasisState::H, 3},
                                            RegionId{BasisState::V, 3});
  CHECK(qe < 1e-9);
}

TEST_CASE("tiny regions collapse to the phase-averaged point gain") {
  RegionLayout l = fig_layout();
  l.delta_z = 1e-5;
  l.t2 = 0.3;
  l.t3 = 0.3002;
  ChannelParams c = fig_channel(0.0);
  c.misalignment_a = c.misalignment_b = Rotation3D::identity();
  StatisticsEngine eng(l, c, fast_options());
  const double q =
      eng.expected_gain(RegionId{BasisState::H, 3}, RegionId{BasisState::V, 3});
  const double mu = 0.3001;
  const GainContribution point = phase_averaged_gain(
      BasisState::H, BasisState::V, {mu, 0.0, 0.0, 0.0}, {0.0, mu, 0.0, 0.0}, c);
  CHECK(std::abs(q - point.gain) / point.gain < 2e-2);
}

TEST_CASE("dark-dominated statistics split errors evenly") {
  RegionLayout l = fig_layout();
  ChannelParams c = fig_channel(2000.0);
  StatisticsOptions o = fast_options();
  o.key_density = KeyDensity::Reshaped;
  StatisticsEngine eng(l, c, o);
  const ObservedStatistics st = eng.compute();
  const auto& row = st.union_rows[0][2][2];
  CHECK(row.gain > 0.0);
  CHECK(row.error_gain / row.gain == doctest::Approx(0.5).epsilon(2e-3));
}

TEST_CASE("pooled gain matches an end-to-end Monte-Carlo simulation") {
  RegionLayout l = fig_layout();
  ChannelParams c = fig_channel(0.0);
  StatisticsOptions o = fast_options();
  o.pair_budget = {1e-3, 1u << 21, 1u << 18};
  StatisticsEngine eng(l, c, o);
  const RegionId ha{BasisState::H, 3}, vb{BasisState::V, 3};
  const double expect = eng.expected_gain(ha, vb);

  RegionSampler sa(region_geometry(ha, l));
  RegionSampler sb(region_geometry(vb, l));
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double eta = c.arm_transmittance();
  const std::int64_t n = 10'000'000;
  std::int64_t hits = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const auto [ra, tha] = sa.draw(rng, u);
    const auto [rb, thb] = sb.draw(rng, u);
    const SourceSample xa =
        from_bloch({ra * leg_sum(tha), bloch_from_plane(tha), kTwoPi * u(rng)});
    const SourceSample xb =
        from_bloch({rb * leg_sum(thb), bloch_from_plane(thb), kTwoPi * u(rng)});
    const RelayPulse pa = through_channel(xa, c.misalignment_a, eta);
    const RelayPulse pb = through_channel(xb, c.misalignment_b, eta);
    const DetectorClicks k =
        detector_click_probs(pa, pb, kTwoPi * u(rng), c.dark_count_prob);
    const bool ch = u(rng) < k.c_h, cv = u(rng) < k.c_v, dh = u(rng) < k.d_h,
               dv = u(rng) < k.d_v;
    if (ch + cv + dh + dv != 2) continue;
    if ((ch && dv) || (cv && dh) || (ch && cv) || (dh && dv)) ++hits;
  }
  const double mc = static_cast<double>(hits) / n;
  const double sigma = std::sqrt(expect / n);
  CHECK(std::abs(mc - expect) < 4.0 * sigma + 1e-3 * expect);
}

TEST_CASE("X-basis error share matches the same simulation") {
  RegionLayout l = fig_layout();
  ChannelParams c = fig_channel(0.0);
  StatisticsOptions o = fast_options();
  o.pair_budget = {1e-3, 1u << 21, 1u << 18};
  StatisticsEngine eng(l, c, o);
  const RegionId pa{BasisState::Plus, 3}, pb{BasisState::Plus, 3};
  const double q = eng.expected_gain(pa, pb);
  const double qe = eng.expected_error_gain(pa, pb);
  CHECK(qe > 0.0);
  CHECK(qe < q);

  RegionSampler s(region_geometry(pa, l));
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double eta = c.arm_transmittance();
  const std::int64_t n = 10'000'000;
  std::int64_t gain_hits = 0, err_hits = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const auto [ra, tha] = s.draw(rng, u);
    const auto [rb, thb] = s.draw(rng, u);
    const double phia = -l.delta_phi + 2.0 * l.delta_phi * u(rng);
    const double phib = -l.delta_phi + 2.0 * l.delta_phi * u(rng);
    const RelayPulse qa = through_channel(
        from_bloch({ra * leg_sum(tha), bloch_from_plane(tha), phia}),
        c.misalignment_a, eta);
    const RelayPulse qb = through_channel(
        from_bloch({rb * leg_sum(thb), bloch_from_plane(thb), phib}),
        c.misalignment_b, eta);
    const DetectorClicks k =
        detector_click_probs(qa, qb, kTwoPi * u(rng), c.dark_count_prob);
    const bool ch = u(rng) < k.c_h, cv = u(rng) < k.c_v, dh = u(rng) < k.d_h,
               dv = u(rng) < k.d_v;
    if (ch + cv + dh + dv != 2) continue;
    const bool minus = (ch && dv) || (cv && dh);
    const bool plus = (ch && cv) || (dh && dv);
    if (minus || plus) ++gain_hits;
    if (minus) ++err_hits;  // equal X states should correlate
  }
  const double mc_q = static_cast<double>(gain_hits) / n;
  const double mc_qe = static_cast<double>(err_hits) / n;
  CHECK(std::abs(mc_q - q) < 4.0 * std::sqrt(q / n) + 1e-3 * q);
  CHECK(std::abs(mc_qe - qe) < 4.0 * std::sqrt(qe / n) + 2e-3 * qe);
}

TEST_CASE("vacuum yields are pure dark-count combinatorics") {
  ChannelParams c = fig_channel(0.0);
  const double pd = c.dark_count_prob;
  const double expect = 4.0 * pd * pd * (1.0 - pd) * (1.0 - pd);
  const double y00 =
      photon_pair_yield(0, 0, Basis::Z, {1.0, 0.0, 0.0}, {1.0, kPi, 0.0}, c);
  CHECK(y00 == doctest::Approx(expect).epsilon(1e-12));

  c.dark_count_prob = 0.0;
  CHECK(photon_pair_yield(0, 0, Basis::Z, {1.0, 0.0, 0.0}, {1.0, kPi, 0.0},
                          c) == 0.0);
}

TEST_CASE("decoupling identity on a coarse layout") {
  RegionLayout l;
  l.delta_z = 0.2;
  l.delta_xy = 0.05;
  l.delta_phi = 0.5;
  l.t1 = 0.2;
  l.t2 = 0.5;
  l.t3 = 0.9;
  ChannelParams c = fig_channel(0.0);
  c.misalignment_a = c.misalignment_b = Rotation3D::identity();

  for (auto [n, m] : {std::pair{0, 0}, {1, 1}, {2, 1}}) {
    const double y_mix = decoupled_yield_oracle(n, m, Basis::Z, l, c);
    for (auto [ba, bb] : {std::pair{1, 1}, {3, 3}, {1, 3}}) {
      const double lhs = paired_yield_moment(n, m, Basis::Z, ba, bb, l, c);
      const double rhs = pooled_poisson_moment(n, Basis::Z, ba, l) *
                         pooled_poisson_moment(m, Basis::Z, bb, l) * y_mix;
      CHECK(std::abs(lhs - rhs) <= 5e-3 * rhs + 1e-12);
    }
    // the ratio reconstructed from different bands must agree: this is the
    // property that makes one linear programme serve all decoy settings
    const double from_11 =
        paired_yield_moment(n, m, Basis::Z, 1, 1, l, c) /
        (pooled_poisson_moment(n, Basis::Z, 1, l) *
         pooled_poisson_moment(m, Basis::Z, 1, l));
    const double from_33 =
        paired_yield_moment(n, m, Basis::Z, 3, 3, l, c) /
        (pooled_poisson_moment(n, Basis::Z, 3, l) *
         pooled_poisson_moment(m, Basis::Z, 3, l));
    CHECK(std::abs(from_11 - from_33) / from_33 < 1e-2);
  }
}

TEST_CASE("pooled gain falls with distance") {
  RegionLayout l = fig_layout();
  StatisticsOptions o = fast_options();
  o.key_density = KeyDensity::Reshaped;
  double prev = 1.0;
  for (double d : {0.0, 25.0, 50.0}) {
    StatisticsEngine eng(l, fig_channel(d), o);
    const double q =
        eng.expected_gain(RegionId{BasisState::H, 3}, RegionId{BasisState::V, 3});
    CHECK(q < prev);
    prev = q;
  }
}

TEST_CASE("computed statistics satisfy the basic inequalities") {
  RegionLayout l = fig_layout();
  StatisticsOptions o = fast_options();
  StatisticsEngine eng(l, fig_channel(20.0), o);
  const ObservedStatistics st = eng.compute();

  for (const auto& [key, v] : st.gains) {
    CHECK(v.gain >= 0.0);
    CHECK(v.gain <= 1.0);
    CHECK(v.error_gain >= 0.0);
    CHECK(v.error_gain <= v.gain + 1e-15);
  }
  double prob_sum = 0.0;
  for (const auto& [id, p] : st.region_probs) {
    CHECK(p >= 0.0);
    prob_sum += p;
  }
  CHECK(prob_sum <= 1.0);
  CHECK(st.key.q_z > 0.0);
  CHECK(st.key.qe_z <= st.key.q_z);
  double wsum = 0.0;
  for (double w : st.key.ring_weight) wsum += w;
  CHECK(wsum == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("statistics serialize and reload bit-for-bit") {
  RegionLayout l = fig_layout();
  StatisticsOptions o = fast_options();
  o.rings = 3;
  StatisticsEngine eng(l, fig_channel(10.0), o);
  const ObservedStatistics st = eng.compute();
  const ObservedStatistics back = ObservedStatistics::from_json(st.to_json());

  CHECK(back.layout.delta_z == st.layout.delta_z);
  CHECK(back.channel.distance_km == st.channel.distance_km);
  CHECK(back.gains.size() == st.gains.size());
  for (const auto& [key, v] : st.gains) {
    const auto& w = back.gains.at(key);
    CHECK(w.gain == v.gain);
    CHECK(w.error_gain == v.error_gain);
  }
  CHECK(back.key.q_z == st.key.q_z);
  CHECK(back.key.ring_gain == st.key.ring_gain);
  CHECK(back.series_tail[1][2][2] == st.series_tail[1][2][2]);
}

TEST_CASE("the pass memo returns identical results") {
  RegionLayout l = fig_layout();
  PassMemo memo;
  StatisticsOptions o = fast_options();
  StatisticsEngine a(l, fig_channel(15.0), o, &memo);
  const ObservedStatistics first = a.compute();
  const std::size_t passes = memo.size();
  StatisticsEngine b(l, fig_channel(15.0), o, &memo);
  const ObservedStatistics second = b.compute();
  CHECK(memo.size() == passes);  // everything was a hit
  CHECK(first.union_rows[0][2][2].gain == second.union_rows[0][2][2].gain);
  CHECK(first.key.q_z == second.key.q_z);
}
