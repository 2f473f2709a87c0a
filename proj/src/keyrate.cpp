#include "pmdi/keyrate.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pmdi/cubature.hpp"

namespace pmdi {

double binary_entropy(double x) {
  if (x < 0.0 || x > 1.0)
    throw std::domain_error("binary_entropy: argument outside [0,1]");
  if (x == 0.0 || x == 1.0) return 0.0;
  return -x * std::log2(x) - (1.0 - x) * std::log2(1.0 - x);
}

double key_rate(const KeyRateInputs& in) {
  const double privacy = in.p1_a * in.p1_b * in.y11_lower *
                         (1.0 - binary_entropy(std::min(in.e11_upper, 0.5)));
  double correction = 0.0;
  if (in.q_z > 0.0) {
    const double e = std::clamp(in.qe_z / in.q_z, 0.0, 1.0);
    correction = in.f_ec * in.q_z * binary_entropy(e);
  } else {
    return 0.0;
  }
  return std::max(0.0, in.p_z_a * in.p_z_b * (privacy - correction));
}

double small_ring_rate(const RingPartition& a, const RingPartition& b,
                       const RingObservables& obs, const SharedKeyTerms& k) {
  const int na = static_cast<int>(a.weights.size());
  const int nb = static_cast<int>(b.weights.size());
  if (na < 1 || nb < 1)
    throw std::invalid_argument("small_ring_rate: need at least one ring");
  if (a.edges.size() != a.weights.size() + 1 ||
      b.edges.size() != b.weights.size() + 1)
    throw std::invalid_argument("small_ring_rate: edges/weights mismatch");
  for (const RingPartition* p : {&a, &b}) {
    for (std::size_t i = 1; i < p->edges.size(); ++i)
      if (!(p->edges[i] > p->edges[i - 1]))
        throw std::invalid_argument("small_ring_rate: edges must increase");
    for (double w : p->weights)
      if (w < 0.0) throw std::invalid_argument("small_ring_rate: weight < 0");
  }

  const double pa_term =
      k.y11_lower * (1.0 - binary_entropy(std::min(k.e11_upper, 0.5)));
  double total = 0.0;
  for (int ka = 0; ka < na; ++ka) {
    for (int kb = 0; kb < nb; ++kb) {
      const double q = obs.gain[ka * nb + kb];
      const double qe = std::min(obs.error_gain[ka * nb + kb], q);
      double ring = obs.p1_a[ka] * obs.p1_b[kb] * pa_term;
      if (q > 0.0)
        ring -= k.f_ec * q * binary_entropy(std::clamp(qe / q, 0.0, 1.0));
      if (ring > 0.0) total += a.weights[ka] * b.weights[kb] * ring;
    }
  }
  return k.p_z_a * k.p_z_b * total;
}

// --- Active reference ----------------------------------------------------------

namespace {

SourceSample active_state(BasisState s, double mu) {
  switch (s) {
    case BasisState::H: return {mu, 0.0, 0.0, 0.0};
    case BasisState::V: return {0.0, mu, 0.0, 0.0};
    case BasisState::Plus: return {0.5 * mu, 0.5 * mu, 0.0, 0.0};
    default: return {0.5 * mu, 0.5 * mu, kPi, 0.0};
  }
}

struct ActiveGains {
  // [basis][intensity_a][intensity_b] pooled over the four state pairs
  double q[2][3][3] = {};
  double qe[2][3][3] = {};
};

ActiveGains active_gains(const ChannelParams& channel,
                         const std::array<double, 3>& mus, double phase_tol) {
  ActiveGains g;
  const double eta = channel.arm_transmittance();
  for (int bi = 0; bi < 2; ++bi) {
    const Basis basis = bi == 0 ? Basis::Z : Basis::X;
    const BasisState s0 = basis == Basis::Z ? BasisState::H : BasisState::Plus;
    const BasisState s1 = basis == Basis::Z ? BasisState::V : BasisState::Minus;
    const BasisState states[2] = {s0, s1};
    for (int ia = 0; ia < 3; ++ia) {
      for (int ib = 0; ib < 3; ++ib) {
        double q = 0.0, qe = 0.0;
        for (int ca = 0; ca < 2; ++ca) {
          for (int cb = 0; cb < 2; ++cb) {
            const RelayPulse pa = through_channel(
                active_state(states[ca], mus[ia]), channel.misalignment_a, eta);
            const RelayPulse pb = through_channel(
                active_state(states[cb], mus[ib]), channel.misalignment_b, eta);
            q += phase_average(
                [&](double phi) {
                  return split_gain_and_error(
                             states[ca], states[cb],
                             bsm_probabilities(pa, pb, phi, channel))
                      .gain;
                },
                phase_tol);
            qe += phase_average(
                [&](double phi) {
                  return split_gain_and_error(
                             states[ca], states[cb],
                             bsm_probabilities(pa, pb, phi, channel))
                      .error;
                },
                phase_tol);
          }
        }
        g.q[bi][ia][ib] = 0.25 * q;
        g.qe[bi][ia][ib] = 0.25 * qe;
      }
    }
  }
  return g;
}

double poisson_term(int n, double mu) {
  double p = std::exp(-mu);
  for (int k = 1; k <= n; ++k) p *= mu / k;
  return p;
}

DecoyConstraintSet active_constraints(const ActiveGains& g,
                                      const std::array<double, 3>& mus,
                                      Basis basis, int n_max, bool error_side) {
  DecoyConstraintSet cs;
  cs.basis = basis;
  cs.n_max = n_max;
  cs.error_side = error_side;
  const int bi = basis == Basis::Z ? 0 : 1;
  for (int ia = 0; ia < 3; ++ia) {
    for (int ib = 0; ib < 3; ++ib) {
      DecoyRow r;
      r.band_a = ia + 1;
      r.band_b = ib + 1;
      r.coeff.resize((n_max + 1) * (n_max + 1));
      double csum = 0.0;
      for (int n = 0; n <= n_max; ++n)
        for (int m = 0; m <= n_max; ++m) {
          const double c = poisson_term(n, mus[ia]) * poisson_term(m, mus[ib]);
          r.coeff[n * (n_max + 1) + m] = c;
          csum += c;
        }
      r.tail = std::max(0.0, 1.0 - csum);
      r.observed = error_side ? g.qe[bi][ia][ib] : g.q[bi][ia][ib];
      r.sigma = 0.0;
      cs.rows.push_back(std::move(r));
    }
  }
  return cs;
}

}  // namespace

ActiveResult active_baseline(const ChannelParams& channel,
                             std::array<double, 3> intensities,
                             const ActiveOptions& opt) {
  for (double mu : intensities)
    if (!(mu > 0.0 && mu <= 1.0))
      throw std::invalid_argument("active_baseline: intensity outside (0,1]");

  const ActiveGains g = active_gains(channel, intensities, opt.phase_rel_tol);

  const auto zq = active_constraints(g, intensities, Basis::Z, opt.n_max, false);
  const auto xq = active_constraints(g, intensities, Basis::X, opt.n_max, false);
  const auto xe = active_constraints(g, intensities, Basis::X, opt.n_max, true);

  const YieldBounds yz = solve_y11_lower(zq);
  const YieldBounds yx = solve_y11_lower(xq);
  const YieldBounds ex = solve_e11y11_upper(xe);

  ActiveResult out;
  out.z_status = yz.lp_status;
  out.x_status = ex.lp_status == LpStatus::Optimal ? yx.lp_status : ex.lp_status;
  out.y11_lower = yz.y11_lower;
  out.e11_upper = e11_upper_bound(ex.e11y11_upper, yx.y11_lower);

  // key generation from the largest intensity
  int s = 0;
  for (int i = 1; i < 3; ++i)
    if (intensities[i] > intensities[s]) s = i;
  out.q_z = g.q[0][s][s];
  out.qber_z = out.q_z > 0.0 ? g.qe[0][s][s] / out.q_z : 0.0;

  const double p1 = poisson_term(1, intensities[s]);
  KeyRateInputs in;
  in.p_z_a = in.p_z_b = 1.0;  // asymptotically the key basis dominates
  in.p1_a = in.p1_b = p1;
  in.y11_lower = out.y11_lower;
  in.e11_upper = out.e11_upper;
  in.q_z = out.q_z;
  in.qe_z = g.qe[0][s][s];
  in.f_ec = opt.f_ec;
  out.rate = key_rate(in);
  return out;
}

// --- Optimizers -----------------------------------------------------------------

GoldenResult golden_max(const std::function<double(double)>& f, double lo,
                        double hi, double x_tol, int max_evals) {
  constexpr double inv_phi = 0.6180339887498948482;
  GoldenResult best;
  best.x = lo;
  best.value = f(lo);
  best.evals = 1;
  const auto consider = [&](double x, double v) {
    if (v > best.value) {
      best.value = v;
      best.x = x;
    }
  };
  {
    const double vhi = f(hi);
    ++best.evals;
    consider(hi, vhi);
  }
  double a = lo, b = hi;
  double x1 = b - inv_phi * (b - a), x2 = a + inv_phi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  best.evals += 2;
  consider(x1, f1);
  consider(x2, f2);
  while (b - a > x_tol && best.evals < max_evals) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = f(x2);
      consider(x2, f2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = f(x1);
      consider(x1, f1);
    }
    ++best.evals;
  }
  return best;
}

LayoutOptimum optimize_layout(
    const RegionLayout& base, OptRange delta_z_range, OptRange t3_range,
    const std::function<double(const RegionLayout&)>& rate_fn,
    const OptimizeOptions& opt) {
  if (!(delta_z_range.lo < delta_z_range.hi) || !(t3_range.lo < t3_range.hi))
    throw std::invalid_argument("optimize_layout: empty search range");

  RegionLayout cur = base;
  // keep the band ordering valid
  const double t3_lo = std::max(t3_range.lo, base.t2 * 1.0001 + 1e-9);
  const double t3_hi = t3_range.hi;
  cur.delta_z = std::clamp(cur.delta_z, delta_z_range.lo, delta_z_range.hi);
  cur.t3 = std::clamp(cur.t3, t3_lo, t3_hi);

  LayoutOptimum out;
  out.evals = 0;
  double rate = rate_fn(cur);
  ++out.evals;

  for (int round = 0; round < opt.rounds; ++round) {
    {
      const GoldenResult r = golden_max(
          [&](double dz) {
            RegionLayout l = cur;
            l.delta_z = dz;
            return rate_fn(l);
          },
          delta_z_range.lo, delta_z_range.hi,
          opt.x_tol_frac * (delta_z_range.hi - delta_z_range.lo),
          opt.max_evals_per_line);
      out.evals += r.evals;
      if (r.value > rate) {
        rate = r.value;
        cur.delta_z = r.x;
      }
    }
    {
      const GoldenResult r = golden_max(
          [&](double t3) {
            RegionLayout l = cur;
            l.t3 = t3;
            return rate_fn(l);
          },
          t3_lo, t3_hi, opt.x_tol_frac * (t3_hi - t3_lo),
          opt.max_evals_per_line);
      out.evals += r.evals;
      if (r.value > rate) {
        rate = r.value;
        cur.t3 = r.x;
      }
    }
  }
  out.layout = cur;
  out.rate = rate;
  out.converged = true;
  return out;
}

std::pair<std::array<double, 3>, ActiveResult> optimize_active(
    const ChannelParams& channel, std::array<double, 3> start,
    const ActiveOptions& aopt, const OptimizeOptions& opt) {
  std::array<double, 3> mus = start;  // {mu, nu, omega}, decreasing
  std::sort(mus.begin(), mus.end(), std::greater<>());
  const double gap = 1e-4;

  const auto rate_of = [&](const std::array<double, 3>& m) {
    return active_baseline(channel, m, aopt).rate;
  };

  for (int round = 0; round < opt.rounds; ++round) {
    for (int i = 0; i < 3; ++i) {
      const double lo = i == 2 ? 1e-4 : mus[i + 1] + gap;
      const double hi = i == 0 ? 1.0 : mus[i - 1] - gap;
      if (!(lo < hi)) continue;
      const GoldenResult r = golden_max(
          [&](double x) {
            std::array<double, 3> m = mus;
            m[i] = x;
            return rate_of(m);
          },
          lo, hi, opt.x_tol_frac * (hi - lo), opt.max_evals_per_line);
      mus[i] = r.x;
    }
  }
  return {mus, active_baseline(channel, mus, aopt)};
}

}  // namespace pmdi
