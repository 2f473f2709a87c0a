#include "pmdi/verification.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>

#include "pmdi/channel.hpp"
#include "pmdi/cubature.hpp"
#include "pmdi/decoy_lp.hpp"
#include "pmdi/keyrate.hpp"
#include "pmdi/source.hpp"

namespace pmdi {

namespace {

using cdbl = std::complex<double>;
using Mat4 = std::array<std::array<cdbl, 4>, 4>;
using Vec4 = std::array<cdbl, 4>;

Vec4 kron(const std::array<cdbl, 2>& a, const std::array<cdbl, 2>& b) {
  return {a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]};
}

void add_projector(Mat4& m, const Vec4& v, double scale) {
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) m[i][j] += scale * v[i] * std::conj(v[j]);
}

double max_abs(const Mat4& m) {
  double d = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) d = std::max(d, std::abs(m[i][j]));
  return d;
}

}  // namespace

double projector_completeness_error(double theta_a, double theta_b,
                                    double phi) {
  const double ca = std::cos(0.5 * theta_a), sa = std::sin(0.5 * theta_a);
  const double cb = std::cos(0.5 * theta_b), sb = std::sin(0.5 * theta_b);
  const cdbl e = std::polar(1.0, phi);

  // a polarized basis pair per party: the tilted state and its orthogonal
  const std::array<cdbl, 2> ha = {ca, sa};
  const std::array<cdbl, 2> va = {sa, -ca};
  const std::array<cdbl, 2> hb = {cb, e * sb};
  const std::array<cdbl, 2> vb = {sb, -e * cb};

  Mat4 sum{};
  add_projector(sum, kron(ha, hb), 1.0);
  add_projector(sum, kron(ha, vb), 1.0);
  add_projector(sum, kron(va, hb), 1.0);
  add_projector(sum, kron(va, vb), 1.0);
  for (int i = 0; i < 4; ++i) sum[i][i] -= 1.0;
  return max_abs(sum);
}

HhDecomposition hh_family_decomposition(double theta_a, double theta_b,
                                        double phi) {
  const double ca = std::cos(0.5 * theta_a), sa = std::sin(0.5 * theta_a);
  const double cb = std::cos(0.5 * theta_b), sb = std::sin(0.5 * theta_b);

  // pool the azimuth-antipodal pairs: phi_a in {0, pi}, phi_b in {phi, phi+pi}
  Mat4 rho{};
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const cdbl ea = i == 0 ? cdbl(1.0) : cdbl(-1.0);
      const cdbl eb = std::polar(1.0, phi + (j == 0 ? 0.0 : kPi));
      add_projector(rho, kron({ca, ea * sa}, {cb, eb * sb}), 0.25);
    }
  }

  HhDecomposition out;
  out.coeffs = {std::cos(theta_a) * std::cos(theta_b),
                std::cos(theta_a) * sb * sb, std::cos(theta_b) * sa * sa,
                sa * sa * sb * sb};

  Mat4 target{};
  const auto add_diag = [&](std::array<double, 4> d, double w) {
    for (int i = 0; i < 4; ++i) target[i][i] += w * d[i];
  };
  add_diag({1, 0, 0, 0}, out.coeffs[0]);  // perfect HH
  add_diag({1, 1, 0, 0}, out.coeffs[1]);  // H (x) I
  add_diag({1, 0, 1, 0}, out.coeffs[2]);  // I (x) H
  add_diag({1, 1, 1, 1}, out.coeffs[3]);  // I (x) I

  Mat4 diff{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) diff[i][j] = rho[i][j] - target[i][j];
  out.deviation = max_abs(diff);
  return out;
}

namespace {

double uniform(std::uint64_t& state, double lo, double hi) {
  return lo + (hi - lo) * (splitmix64(state) >> 11) * 0x1p-53;
}

CheckReport check_projector_identity(std::uint64_t seed) {
  CheckReport r;
  r.name = "two-party projector completeness";
  std::uint64_t s = seed;
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double d = projector_completeness_error(
        uniform(s, 0.0, kPi), uniform(s, 0.0, kPi), uniform(s, 0.0, kTwoPi));
    worst = std::max(worst, d);
  }
  r.metric = worst;
  r.pass = worst < 1e-12;
  r.detail = "10000 random angle triples";
  return r;
}

CheckReport check_hh_decomposition(std::uint64_t seed) {
  CheckReport r;
  r.name = "pooled HH-family decomposition";
  std::uint64_t s = seed ^ 0x9e3779b9ull;
  double worst = 0.0;
  bool coeffs_ok = true;
  for (int i = 0; i < 10000; ++i) {
    const HhDecomposition d = hh_family_decomposition(
        uniform(s, 0.0, kHalfPi), uniform(s, 0.0, kHalfPi),
        uniform(s, 0.0, kTwoPi));
    worst = std::max(worst, d.deviation);
    for (int k = 1; k < 4; ++k) coeffs_ok = coeffs_ok && d.coeffs[k] >= 0.0;
  }
  r.metric = worst;
  r.pass = worst < 1e-12 && coeffs_ok;
  r.detail = coeffs_ok ? "noise coefficients nonnegative"
                       : "negative noise coefficient";
  return r;
}

CheckReport check_channel_micro() {
  CheckReport r;
  r.name = "channel micro-properties";
  double worst = 0.0;

  // energy conservation through the splitter
  std::uint64_t s = 12345;
  for (int i = 0; i < 200; ++i) {
    const double m1 = uniform(s, 0.0, 2.0), m2 = uniform(s, 0.0, 2.0);
    const double ph = uniform(s, 0.0, kTwoPi);
    const auto [c, d] = interfere(m1, m2, ph);
    worst = std::max(worst, std::abs(c + d - (m1 + m2)));
  }

  // rotations preserve the Bloch norm
  for (int i = 0; i < 200; ++i) {
    const Rotation3D rot = Rotation3D::about(
        {uniform(s, -1.0, 1.0), uniform(s, -1.0, 1.0), uniform(s, -1.0, 1.0)},
        uniform(s, 0.0, kTwoPi));
    const BlochCoords c{1.0, uniform(s, 0.0, kPi), uniform(s, 0.0, kTwoPi)};
    const BlochCoords o = rotate_state(c, rot);
    const Vec3 v{std::sin(o.theta_hv) * std::cos(o.phi_hv),
                 std::sin(o.theta_hv) * std::sin(o.phi_hv),
                 std::cos(o.theta_hv)};
    worst = std::max(worst, std::abs(v.norm() - 1.0));
  }

  // fifty kilometres of 0.2 dB/km is exactly one order of magnitude
  ChannelParams p;
  p.distance_km = 50.0;
  p.loss_db_per_km = 0.2;
  worst = std::max(worst, std::abs(p.arm_transmittance() - 0.1));

  // relay-phase periodicity
  const RelayPulse a{0.3, 0.1, 1.1}, b{0.2, 0.15, 0.4};
  ChannelParams q;
  for (int i = 0; i < 50; ++i) {
    const double phi = uniform(s, 0.0, kTwoPi);
    const BsmOutcome o1 = bsm_probabilities(a, b, phi, q);
    const BsmOutcome o2 = bsm_probabilities(a, b, phi + kTwoPi, q);
    worst = std::max(worst, std::abs(o1.p_psi_minus - o2.p_psi_minus));
    worst = std::max(worst, std::abs(o1.p_psi_plus - o2.p_psi_plus));
  }

  r.metric = worst;
  r.pass = worst < 1e-12;
  r.detail = "splitter, rotation, loss factor, phase periodicity";
  return r;
}

CheckReport check_lp_soundness(std::uint64_t seed) {
  CheckReport r;
  r.name = "decoy bounds sound on synthetic yields";
  std::uint64_t s = seed ^ 0xabcdefull;
  const int n_max = 6, n_gen = 20;
  int bad = 0;
  double margin = 1.0;
  for (int inst = 0; inst < 20; ++inst) {
    std::vector<double> y(n_gen * n_gen), ey(n_gen * n_gen);
    for (int i = 0; i < n_gen * n_gen; ++i) {
      y[i] = uniform(s, 0.0, 1.0);
      ey[i] = y[i] * uniform(s, 0.0, 0.5);
    }
    const std::array<double, 3> mus = {uniform(s, 0.01, 0.1),
                                       uniform(s, 0.1, 0.4),
                                       uniform(s, 0.4, 1.0)};
    DecoyConstraintSet q, e;
    q.n_max = e.n_max = n_max;
    e.error_side = true;
    for (int ia = 0; ia < 3; ++ia)
      for (int ib = 0; ib < 3; ++ib) {
        DecoyRow rq, re;
        rq.band_a = re.band_a = ia + 1;
        rq.band_b = re.band_b = ib + 1;
        rq.coeff.resize((n_max + 1) * (n_max + 1));
        re.coeff.resize((n_max + 1) * (n_max + 1));
        const auto pn = [](int n, double mu) {
          double p = std::exp(-mu);
          for (int k = 1; k <= n; ++k) p *= mu / k;
          return p;
        };
        double obs_q = 0.0, obs_e = 0.0, csum = 0.0;
        for (int n = 0; n < n_gen; ++n)
          for (int m = 0; m < n_gen; ++m) {
            const double c = pn(n, mus[ia]) * pn(m, mus[ib]);
            obs_q += c * y[n * n_gen + m];
            obs_e += c * ey[n * n_gen + m];
            if (n <= n_max && m <= n_max) {
              rq.coeff[n * (n_max + 1) + m] = c;
              re.coeff[n * (n_max + 1) + m] = c;
              csum += c;
            }
          }
        rq.tail = re.tail = std::max(0.0, 1.0 - csum);
        rq.observed = obs_q;
        re.observed = obs_e;
        q.rows.push_back(rq);
        e.rows.push_back(re);
      }
    const double y11 = y[1 * n_gen + 1];
    const double e11y11 = ey[1 * n_gen + 1];
    const YieldBounds lb = solve_y11_lower(q);
    const YieldBounds ub = solve_e11y11_upper(e);
    if (lb.lp_status != LpStatus::Optimal ||
        ub.lp_status != LpStatus::Optimal || lb.y11_lower > y11 + 1e-9 ||
        ub.e11y11_upper < e11y11 - 1e-9)
      ++bad;
    margin = std::min({margin, y11 - lb.y11_lower, ub.e11y11_upper - e11y11});
  }
  r.metric = margin;
  r.pass = bad == 0;
  char buf[96];
  std::snprintf(buf, sizeof buf, "20 instances, %d violations", bad);
  r.detail = buf;
  return r;
}

CheckReport check_ring_convexity(std::uint64_t seed) {
  CheckReport r;
  r.name = "ring pooling never loses rate";
  std::uint64_t s = seed ^ 0x5555aaaaull;
  double worst = 1.0;
  bool ok = true;
  for (int inst = 0; inst < 50; ++inst) {
    const int n = 2 + static_cast<int>(splitmix64(s) % 7);
    RingPartition part;
    part.edges.resize(n + 1);
    for (int k = 0; k <= n; ++k) part.edges[k] = 0.05 * k / n;
    part.weights.assign(n, 0.0);
    double wsum = 0.0;
    for (int k = 0; k < n; ++k) {
      part.weights[k] = uniform(s, 0.1, 1.0);
      wsum += part.weights[k];
    }
    for (int k = 0; k < n; ++k) part.weights[k] /= wsum;

    RingObservables obs;
    obs.p1_a.assign(n, 0.0);
    obs.p1_b.assign(n, 0.0);
    obs.gain.assign(n * n, 0.0);
    obs.error_gain.assign(n * n, 0.0);
    for (int k = 0; k < n; ++k)
      obs.p1_a[k] = obs.p1_b[k] = uniform(s, 0.2, 0.4);
    for (int i = 0; i < n * n; ++i) {
      obs.gain[i] = uniform(s, 1e-4, 1e-2);
      obs.error_gain[i] = obs.gain[i] * uniform(s, 0.0, 0.3);
    }

    SharedKeyTerms terms;
    terms.p_z_a = terms.p_z_b = uniform(s, 1e-3, 1e-1);
    terms.y11_lower = uniform(s, 0.05, 0.5);
    terms.e11_upper = uniform(s, 0.0, 0.4);
    terms.f_ec = 1.16;

    const double ringed = small_ring_rate(part, part, obs, terms);

    // pooled equivalent
    double q = 0.0, qe = 0.0, p1 = 0.0;
    for (int ka = 0; ka < n; ++ka) {
      p1 += part.weights[ka] * obs.p1_a[ka];
      for (int kb = 0; kb < n; ++kb) {
        q += part.weights[ka] * part.weights[kb] * obs.gain[ka * n + kb];
        qe += part.weights[ka] * part.weights[kb] * obs.error_gain[ka * n + kb];
      }
    }
    KeyRateInputs in;
    in.p_z_a = terms.p_z_a;
    in.p_z_b = terms.p_z_b;
    in.p1_a = in.p1_b = p1;
    in.y11_lower = terms.y11_lower;
    in.e11_upper = terms.e11_upper;
    in.q_z = q;
    in.qe_z = qe;
    in.f_ec = terms.f_ec;
    const double pooled = key_rate(in);

    // the privacy term pools exactly; the correction term obeys Jensen
    if (ringed < pooled * (1.0 - 1e-9) - 1e-18) ok = false;
    if (pooled > 0.0) worst = std::min(worst, ringed / pooled);
  }
  r.metric = worst;
  r.pass = ok;
  r.detail = "50 synthetic ring configurations";
  return r;
}

}  // namespace

std::vector<CheckReport> run_property_suite(std::uint64_t seed) {
  std::vector<CheckReport> out;
  out.push_back(check_projector_identity(seed));
  out.push_back(check_hh_decomposition(seed));
  out.push_back(check_channel_micro());
  out.push_back(check_lp_soundness(seed));
  out.push_back(check_ring_convexity(seed));
  return out;
}

}  // namespace pmdi
