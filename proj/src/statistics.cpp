#include "pmdi/statistics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "json.hpp"
#include "pmdi/cubature.hpp"

namespace pmdi {

const char* to_string(KeyDensity d) {
  return d == KeyDensity::Reshaped ? "reshaped" : "raw";
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

bool PassMemo::lookup(std::uint64_t key, std::vector<double>& out) const {
  auto it = map_.find(key);
  if (it == map_.end()) return false;
  out = it->second;
  return true;
}

void PassMemo::store(std::uint64_t key, const std::vector<double>& data) {
  map_[key] = data;
}

namespace {

std::array<double, 9> rotation_matrix(const Rotation3D& rot) {
  const double c = std::cos(rot.angle), s = std::sin(rot.angle);
  const double kx = rot.axis.x, ky = rot.axis.y, kz = rot.axis.z;
  const double ic = 1.0 - c;
  return {c + kx * kx * ic,      kx * ky * ic - kz * s, kx * kz * ic + ky * s,
          ky * kx * ic + kz * s, c + ky * ky * ic,      ky * kz * ic - kx * s,
          kz * kx * ic - ky * s, kz * ky * ic + kx * s, c + kz * kz * ic};
}

struct PartyGeom {
  Basis basis = Basis::Z;
  bool raw = false;
  double mu_max = 1.0;
  double r_lo = 0.0, r_wid = 0.0;
  double zw = 0.0, zw_c = 0.0;  // Z cap width in theta_p, and its sqrt
  double x_lo = 0.0, x_wid = 0.0;
  double phi_hw = 0.0;
  double eta = 1.0;
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};
  int rings = 0;
  double ring_scale = 0.0;  // rings / cap angle
  double jac = 0.0;         // dr/du * total phi width
};

struct PartyOut {
  double mu_h, mu_v;
  double cphi, sphi;
  int state;
  int ring;
  double w;
};

inline void eval_party(const PartyGeom& g, double ur, double uth, double uphi,
                       PartyOut& o) {
  const double r = g.r_lo + ur * g.r_wid;
  double th, w, phi;
  o.ring = 0;
  if (g.basis == Basis::Z) {
    const bool vpole = uth >= 0.5;
    const double t = vpole ? 2.0 * uth - 1.0 : 2.0 * uth;
    if (!g.raw) {
      const double off = g.zw * t;
      th = vpole ? kHalfPi - off : off;
      w = std::exp(r * leg_sum(th)) * r * (2.0 * g.zw);
    } else {
      const double c = g.zw_c * t;
      w = detail::raw_polar_weight_warped(r, c, g.mu_max, vpole, th);
      w *= 2.0 * g.zw_c;  // dc/du
    }
    o.state = vpole ? 1 : 0;
    phi = kTwoPi * uphi;
    if (g.rings > 0) {
      const double b = bloch_from_plane(th);
      const double dist = vpole ? kPi - b : b;
      o.ring = std::min(static_cast<int>(dist * g.ring_scale), g.rings - 1);
    }
  } else {
    th = g.x_lo + uth * g.x_wid;
    w = std::exp(r * leg_sum(th)) * r * g.x_wid;
    const bool minus = uphi >= 0.5;
    const double t = minus ? 2.0 * uphi - 1.0 : 2.0 * uphi;
    phi = (minus ? kPi : 0.0) - g.phi_hw + 2.0 * g.phi_hw * t;
    o.state = minus ? 1 : 0;
  }

  // post-rotation pulse at the relay, closed forms throughout
  const double s_ls = leg_sum(th);
  const double mu = r * s_ls;
  const double ct = std::cos(th), st = std::sin(th);
  const double cthv = (ct - st) / s_ls;
  const double sthv = 2.0 * std::sqrt(std::max(st * ct, 0.0)) / s_ls;
  const double cp = std::cos(phi), sp = std::sin(phi);
  const double vx = sthv * cp, vy = sthv * sp, vz = cthv;
  const double rx = g.m[0] * vx + g.m[1] * vy + g.m[2] * vz;
  const double ry = g.m[3] * vx + g.m[4] * vy + g.m[5] * vz;
  const double rz = g.m[6] * vx + g.m[7] * vy + g.m[8] * vz;
  o.mu_h = 0.5 * mu * g.eta * (1.0 + rz);
  o.mu_v = 0.5 * mu * g.eta * (1.0 - rz);
  const double rho = std::sqrt(rx * rx + ry * ry);
  if (rho > 0.0) {
    o.cphi = rx / rho;
    o.sphi = ry / rho;
  } else {
    o.cphi = 1.0;
    o.sphi = 0.0;
  }
  o.w = w;
}

inline void pair_gain(const PartyOut& a, const PartyOut& b, double cphi_r,
                      double sphi_r, double dark, bool z_basis, double& q,
                      double& qe) {
  // V legs interfere with the relay phase offset by the two relative phases
  const double cd = a.cphi * b.cphi + a.sphi * b.sphi;
  const double sd = a.sphi * b.cphi - a.cphi * b.sphi;
  const double sin_v = sphi_r * cd + cphi_r * sd;

  const double hh = 0.5 * (a.mu_h + b.mu_h);
  const double xh = std::sqrt(a.mu_h * b.mu_h) * sphi_r;
  const double vv = 0.5 * (a.mu_v + b.mu_v);
  const double xv = std::sqrt(a.mu_v * b.mu_v) * sin_v;

  const double keep = 1.0 - dark;
  const double pch = 1.0 - keep * std::exp(-(hh - xh));
  const double pdh = 1.0 - keep * std::exp(-(hh + xh));
  const double pcv = 1.0 - keep * std::exp(-(vv - xv));
  const double pdv = 1.0 - keep * std::exp(-(vv + xv));

  const double minus = pch * pdv * (1.0 - pcv) * (1.0 - pdh) +
                       pcv * pdh * (1.0 - pch) * (1.0 - pdv);
  const double plus = pch * pcv * (1.0 - pdh) * (1.0 - pdv) +
                      pdh * pdv * (1.0 - pch) * (1.0 - pcv);
  q = minus + plus;
  if (z_basis)
    qe = (a.state == b.state) ? q : 0.0;
  else
    qe = (a.state == b.state) ? minus : plus;
}

struct SectorInfo {
  // per-state (r, theta) masses and phase-circle share
  double mass[2];
  double phi_width;
  double jac;
};

PartyGeom make_party_geom(Basis basis, int band_lo_idx, int band_hi_idx,
                          const RegionLayout& l, const Rotation3D& rot,
                          double eta, bool raw, int rings) {
  PartyGeom g;
  g.basis = basis;
  g.raw = raw;
  g.mu_max = l.mu_max;
  g.r_lo = l.band_lo(band_lo_idx);
  g.r_wid = l.band_hi(band_hi_idx) - g.r_lo;
  g.zw = plane_from_bloch(l.z_cap_angle());
  g.zw_c = std::sqrt(g.zw);
  g.x_lo = plane_from_bloch(l.x_band_lo_angle());
  g.x_wid = plane_from_bloch(l.x_band_hi_angle()) - g.x_lo;
  g.phi_hw = l.delta_phi;
  g.eta = eta;
  g.m = rotation_matrix(rot);
  g.rings = rings;
  g.ring_scale = rings > 0 ? rings / l.z_cap_angle() : 0.0;
  g.jac = g.r_wid * (basis == Basis::Z ? kTwoPi : 4.0 * l.delta_phi);
  return g;
}

SectorInfo sector_info(Basis basis, int band_lo_idx, int band_hi_idx,
                       const RegionLayout& l, bool raw) {
  SectorInfo s;
  const BasisState st0 = basis == Basis::Z ? BasisState::H : BasisState::Plus;
  const BasisState st1 = basis == Basis::Z ? BasisState::V : BasisState::Minus;
  RegionGeometry g0 = region_geometry(RegionId{st0, band_hi_idx}, l);
  RegionGeometry g1 = region_geometry(RegionId{st1, band_hi_idx}, l);
  g0.r_lo = g1.r_lo = l.band_lo(band_lo_idx);
  s.mass[0] = raw ? region_mass_raw(g0, l.mu_max) : region_mass(g0);
  s.mass[1] = raw ? region_mass_raw(g1, l.mu_max) : region_mass(g1);
  s.phi_width = basis == Basis::Z ? kTwoPi : 2.0 * l.delta_phi;
  s.jac = (l.band_hi(band_hi_idx) - l.band_lo(band_lo_idx)) *
          (basis == Basis::Z ? kTwoPi : 4.0 * l.delta_phi);
  return s;
}

std::string channel_tag(const ChannelParams& c) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%.17g|%.17g|%.17g|%.17g|", c.distance_km,
                c.loss_db_per_km, c.detector_efficiency, c.dark_count_prob);
  std::string s(buf);
  for (const auto& m : {rotation_matrix(c.misalignment_a),
                        rotation_matrix(c.misalignment_b)})
    for (double v : m) {
      std::snprintf(buf, sizeof buf, "%.17g,", v);
      s += buf;
    }
  return s;
}

std::string layout_tag(const RegionLayout& l) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%.17g|%.17g|%.17g|%.17g|%.17g|%.17g|%.17g",
                l.delta_z, l.delta_xy, l.delta_phi, l.t1, l.t2, l.t3, l.mu_max);
  return buf;
}

}  // namespace

// --- Pass machinery -----------------------------------------------------------

struct StatisticsEngine::PassResult {
  double gain[4] = {0, 0, 0, 0};
  double egain[4] = {0, 0, 0, 0};
  double gain_sigma[4] = {0, 0, 0, 0};
  double egain_sigma[4] = {0, 0, 0, 0};
  double union_gain = 0.0, union_egain = 0.0;
  double union_gain_sigma = 0.0, union_egain_sigma = 0.0;
  double evals = 0.0;
  double converged = 1.0;
  std::vector<double> ring_gain, ring_egain;  // rings^2, conditional

  std::vector<double> flatten() const {
    std::vector<double> v;
    v.reserve(22 + ring_gain.size() * 2);
    for (int i = 0; i < 4; ++i) v.push_back(gain[i]);
    for (int i = 0; i < 4; ++i) v.push_back(egain[i]);
    for (int i = 0; i < 4; ++i) v.push_back(gain_sigma[i]);
    for (int i = 0; i < 4; ++i) v.push_back(egain_sigma[i]);
    v.push_back(union_gain);
    v.push_back(union_egain);
    v.push_back(union_gain_sigma);
    v.push_back(union_egain_sigma);
    v.push_back(evals);
    v.push_back(converged);
    v.insert(v.end(), ring_gain.begin(), ring_gain.end());
    v.insert(v.end(), ring_egain.begin(), ring_egain.end());
    return v;
  }

  static PassResult unflatten(const std::vector<double>& v, int rings) {
    PassResult r;
    std::size_t k = 0;
    for (int i = 0; i < 4; ++i) r.gain[i] = v[k++];
    for (int i = 0; i < 4; ++i) r.egain[i] = v[k++];
    for (int i = 0; i < 4; ++i) r.gain_sigma[i] = v[k++];
    for (int i = 0; i < 4; ++i) r.egain_sigma[i] = v[k++];
    r.union_gain = v[k++];
    r.union_egain = v[k++];
    r.union_gain_sigma = v[k++];
    r.union_egain_sigma = v[k++];
    r.evals = v[k++];
    r.converged = v[k++];
    const std::size_t n = static_cast<std::size_t>(rings) * rings;
    r.ring_gain.assign(v.begin() + k, v.begin() + k + n);
    r.ring_egain.assign(v.begin() + k + n, v.begin() + k + 2 * n);
    return r;
  }
};

namespace {

// One QMC pass over a band pair (optionally ring-resolved). Returns combo-
// and union-conditional gains with replicate-spread error estimates.
StatisticsEngine::PassResult run_pass(
    Basis basis, const PartyGeom& ga, const PartyGeom& gb,
    const SectorInfo& sa, const SectorInfo& sb, double dark,
    const IntegrationBudget& budget, std::uint64_t seed, int rings,
    const std::vector<double>& ring_mass, bool parallel) {
  const bool z_basis = basis == Basis::Z;
  const int n_ring = rings > 0 ? rings * rings : 0;
  const int n_slots = 12 + 2 * n_ring;

  SobolSequence seq(7);
  std::array<std::array<std::uint32_t, kSobolMaxDim>, kQmcReplicates> shifts;
  for (int r = 0; r < kQmcReplicates; ++r)
    make_digital_shift(seed * 1000003ull + r, 7, shifts[r].data());

  std::vector<std::vector<double>> sums(kQmcReplicates,
                                        std::vector<double>(n_slots, 0.0));
  std::uint64_t per_rep = 0;
  std::uint64_t block = std::max<std::uint64_t>(
      kQmcChunk,
      (std::max<std::uint64_t>(budget.min_evals, 1u << 15) / kQmcReplicates /
       kQmcChunk) *
          kQmcChunk);

  const auto point = [&](const double* u, double* acc) {
    PartyOut a, b;
    eval_party(ga, u[0], u[1], u[2], a);
    eval_party(gb, u[3], u[4], u[5], b);
    const double phi_r = kTwoPi * u[6];
    double q, qe;
    pair_gain(a, b, std::cos(phi_r), std::sin(phi_r), dark, z_basis, q, qe);
    const double w = a.w * b.w;
    double* slot = acc + (a.state * 2 + b.state) * 3;
    slot[0] += w;
    slot[1] += w * q;
    slot[2] += w * qe;
    if (n_ring > 0) {
      double* rs = acc + 12 + (a.ring * rings + b.ring) * 2;
      rs[0] += w * q;
      rs[1] += w * qe;
    }
  };

  const double jac2 = ga.jac * gb.jac;
  const double union_den = (sa.mass[0] + sa.mass[1]) * sa.phi_width *
                           (sb.mass[0] + sb.mass[1]) * sb.phi_width;

  StatisticsEngine::PassResult res;
  while (true) {
    for (int r = 0; r < kQmcReplicates; ++r)
      sobol_accumulate(seq, shifts[r].data(), per_rep, block, n_slots, point,
                       sums[r].data(), parallel);
    per_rep += block;
    res.evals = static_cast<double>(per_rep) * kQmcReplicates;

    // union estimates and replicate spread
    double uq = 0.0, ue = 0.0, vq = 0.0, ve = 0.0;
    std::array<double, kQmcReplicates> rq{}, re{};
    for (int r = 0; r < kQmcReplicates; ++r) {
      double nq = 0.0, ne = 0.0;
      for (int c = 0; c < 4; ++c) {
        nq += sums[r][c * 3 + 1];
        ne += sums[r][c * 3 + 2];
      }
      rq[r] = jac2 * nq / per_rep / union_den;
      re[r] = jac2 * ne / per_rep / union_den;
      uq += rq[r];
      ue += re[r];
    }
    uq /= kQmcReplicates;
    ue /= kQmcReplicates;
    for (int r = 0; r < kQmcReplicates; ++r) {
      vq += (rq[r] - uq) * (rq[r] - uq);
      ve += (re[r] - ue) * (re[r] - ue);
    }
    vq /= kQmcReplicates - 1;
    ve /= kQmcReplicates - 1;
    res.union_gain = uq;
    res.union_egain = ue;
    res.union_gain_sigma = 2.5 * std::sqrt(vq / kQmcReplicates);
    res.union_egain_sigma = 2.5 * std::sqrt(ve / kQmcReplicates);

    const double tol_q = budget.rel_tol * std::abs(uq);
    const double tol_e =
        std::max(budget.rel_tol * std::abs(ue), budget.rel_tol * std::abs(uq));
    if ((res.union_gain_sigma <= tol_q && res.union_egain_sigma <= tol_e) ||
        uq == 0.0) {
      res.converged = 1.0;
      break;
    }
    const std::uint64_t cap = budget.max_evals / kQmcReplicates;
    const std::uint64_t room =
        per_rep < cap ? ((cap - per_rep) / kQmcChunk) * kQmcChunk : 0;
    const std::uint64_t next = std::min(block * 2, room);
    if (next == 0) {
      res.converged = 0.0;
      break;
    }
    block = next;
  }

  // per-combo conditionals
  const std::uint64_t n_tot = per_rep * kQmcReplicates;
  for (int c = 0; c < 4; ++c) {
    const int ia = c / 2, ib = c % 2;
    const double den =
        sa.mass[ia] * sa.phi_width * sb.mass[ib] * sb.phi_width;
    double nq = 0.0, ne = 0.0;
    std::array<double, kQmcReplicates> cq{}, ce{};
    for (int r = 0; r < kQmcReplicates; ++r) {
      nq += sums[r][c * 3 + 1];
      ne += sums[r][c * 3 + 2];
      cq[r] = jac2 * sums[r][c * 3 + 1] / per_rep / den;
      ce[r] = jac2 * sums[r][c * 3 + 2] / per_rep / den;
    }
    res.gain[c] = jac2 * nq / n_tot / den;
    res.egain[c] = jac2 * ne / n_tot / den;
    double vq = 0.0, ve = 0.0;
    for (int r = 0; r < kQmcReplicates; ++r) {
      vq += (cq[r] - res.gain[c]) * (cq[r] - res.gain[c]);
      ve += (ce[r] - res.egain[c]) * (ce[r] - res.egain[c]);
    }
    res.gain_sigma[c] = 2.5 * std::sqrt(vq / (kQmcReplicates - 1.0) /
                                        kQmcReplicates);
    res.egain_sigma[c] = 2.5 * std::sqrt(ve / (kQmcReplicates - 1.0) /
                                         kQmcReplicates);
  }

  if (n_ring > 0) {
    res.ring_gain.assign(n_ring, 0.0);
    res.ring_egain.assign(n_ring, 0.0);
    for (int ka = 0; ka < rings; ++ka) {
      for (int kb = 0; kb < rings; ++kb) {
        // both Z sectors pool into each ring, hence the factor 2 per party
        const double den = 2.0 * ring_mass[ka] * sa.phi_width * 2.0 *
                           ring_mass[kb] * sb.phi_width;
        double nq = 0.0, ne = 0.0;
        for (int r = 0; r < kQmcReplicates; ++r) {
          nq += sums[r][12 + (ka * rings + kb) * 2];
          ne += sums[r][12 + (ka * rings + kb) * 2 + 1];
        }
        res.ring_gain[ka * rings + kb] = jac2 * nq / n_tot / den;
        res.ring_egain[ka * rings + kb] = jac2 * ne / n_tot / den;
      }
    }
  }
  return res;
}

}  // namespace

StatisticsEngine::StatisticsEngine(const RegionLayout& layout,
                                   const ChannelParams& channel,
                                   const StatisticsOptions& options,
                                   PassMemo* memo)
    : layout_(layout), channel_(channel), opt_(options), memo_(memo) {
  layout_.validate();
  channel_.validate();
  if (opt_.n_max < 1 || opt_.n_max > kMaxPhotonOrder)
    throw std::invalid_argument("statistics: n_max out of range");
  if (opt_.rings < 1) throw std::invalid_argument("statistics: rings >= 1");
  if (opt_.key_band < 0 || opt_.key_band > 3)
    throw std::invalid_argument("statistics: key_band must be 0..3");
}

StatisticsEngine::PassResult StatisticsEngine::run_pair_pass(Basis basis,
                                                             int band_a,
                                                             int band_b) const {
  char tag[160];
  std::snprintf(tag, sizeof tag,
                "pair|%s|%d|%d|tol=%.17g|max=%llu|min=%llu|seed=%llu|",
                to_string(basis), band_a, band_b, opt_.pair_budget.rel_tol,
                static_cast<unsigned long long>(opt_.pair_budget.max_evals),
                static_cast<unsigned long long>(opt_.pair_budget.min_evals),
                static_cast<unsigned long long>(opt_.seed));
  const std::uint64_t key =
      fnv1a(tag + layout_tag(layout_) + channel_tag(channel_));

  std::vector<double> cached;
  if (memo_ && memo_->lookup(key, cached))
    return PassResult::unflatten(cached, 0);

  const double eta = channel_.arm_transmittance();
  const PartyGeom ga = make_party_geom(basis, band_a, band_a, layout_,
                                       channel_.misalignment_a, eta, false, 0);
  const PartyGeom gb = make_party_geom(basis, band_b, band_b, layout_,
                                       channel_.misalignment_b, eta, false, 0);
  const SectorInfo sa = sector_info(basis, band_a, band_a, layout_, false);
  const SectorInfo sb = sector_info(basis, band_b, band_b, layout_, false);

  PassResult res =
      run_pass(basis, ga, gb, sa, sb, channel_.dark_count_prob,
               opt_.pair_budget, key ^ opt_.seed, 0, {}, opt_.parallel);
  if (memo_) memo_->store(key, res.flatten());
  return res;
}

void StatisticsEngine::fill_key_block(ObservedStatistics& out) const {
  const bool raw = opt_.key_density == KeyDensity::Raw;
  const int rings = opt_.rings;
  const int lo_band = opt_.key_band == 0 ? 1 : opt_.key_band;
  const int hi_band = opt_.key_band == 0 ? 3 : opt_.key_band;
  auto& key = out.key;

  // ring geometry: uniform polar-angle edges across the Z cap
  const double cap = layout_.z_cap_angle();
  key.ring_edges.resize(rings + 1);
  for (int k = 0; k <= rings; ++k) key.ring_edges[k] = cap * k / rings;

  const double r_lo = layout_.band_lo(lo_band);
  const double r_hi = layout_.band_hi(hi_band);
  std::vector<double> ring_mass(rings);
  key.ring_p1.resize(rings);
  double mass_tot = 0.0;
  for (int k = 0; k < rings; ++k) {
    RegionGeometry g;
    g.r_lo = r_lo;
    g.r_hi = r_hi;
    g.th_lo = plane_from_bloch(key.ring_edges[k]);
    g.th_hi = plane_from_bloch(key.ring_edges[k + 1]);
    ring_mass[k] = raw ? region_mass_raw(g, layout_.mu_max) : region_mass(g);
    key.ring_p1[k] = raw ? poisson_region_moment_raw(1, g, layout_.mu_max)
                         : poisson_region_moment(1, g);
    mass_tot += ring_mass[k];
  }
  key.ring_weight.resize(rings);
  for (int k = 0; k < rings; ++k) key.ring_weight[k] = ring_mass[k] / mass_tot;

  // sifting probability and single-photon moment over the key region
  const double phi_frac = 1.0;  // Z sectors keep the whole phase circle
  if (raw) {
    key.p_z_a = key.p_z_b = 2.0 * mass_tot * phi_frac;
  } else {
    key.p_z_a = key.p_z_b =
        2.0 * acceptance_norm(layout_.mu_max) * mass_tot * phi_frac;
  }
  key.p1_a = key.p1_b = 0.0;
  for (int k = 0; k < rings; ++k)
    key.p1_a += key.ring_weight[k] * key.ring_p1[k];
  key.p1_b = key.p1_a;

  // ring-resolved gain pass
  char tag[192];
  std::snprintf(tag, sizeof tag,
                "key|%s|band=%d|rings=%d|tol=%.17g|max=%llu|min=%llu|seed=%llu|",
                to_string(opt_.key_density), opt_.key_band, rings,
                opt_.key_budget.rel_tol,
                static_cast<unsigned long long>(opt_.key_budget.max_evals),
                static_cast<unsigned long long>(opt_.key_budget.min_evals),
                static_cast<unsigned long long>(opt_.seed));
  const std::uint64_t hkey =
      fnv1a(tag + layout_tag(layout_) + channel_tag(channel_));

  PassResult res;
  std::vector<double> cached;
  if (memo_ && memo_->lookup(hkey, cached)) {
    res = PassResult::unflatten(cached, rings);
  } else {
    const double eta = channel_.arm_transmittance();
    const PartyGeom ga =
        make_party_geom(Basis::Z, lo_band, hi_band, layout_,
                        channel_.misalignment_a, eta, raw, rings);
    const PartyGeom gb =
        make_party_geom(Basis::Z, lo_band, hi_band, layout_,
                        channel_.misalignment_b, eta, raw, rings);
    const SectorInfo sa = sector_info(Basis::Z, lo_band, hi_band, layout_, raw);
    const SectorInfo sb = sector_info(Basis::Z, lo_band, hi_band, layout_, raw);
    res = run_pass(Basis::Z, ga, gb, sa, sb, channel_.dark_count_prob,
                   opt_.key_budget, hkey ^ opt_.seed, rings, ring_mass,
                   opt_.parallel);
    if (memo_) memo_->store(hkey, res.flatten());
  }

  key.ring_gain = res.ring_gain;
  key.ring_error = res.ring_egain;
  key.q_sigma = res.union_gain_sigma;
  key.qe_sigma = res.union_egain_sigma;
  key.converged = res.converged != 0.0;

  // pool the bulk values from the ring sums so that the single-ring and the
  // ring-resolved paths agree identically
  double q = 0.0, qe = 0.0;
  for (int ka = 0; ka < rings; ++ka)
    for (int kb = 0; kb < rings; ++kb) {
      const double w = key.ring_weight[ka] * key.ring_weight[kb];
      q += w * key.ring_gain[ka * rings + kb];
      qe += w * key.ring_error[ka * rings + kb];
    }
  key.q_z = q;
  key.qe_z = std::min(qe, q);
}

ObservedStatistics StatisticsEngine::compute() const {
  ObservedStatistics out;
  out.layout = layout_;
  out.channel = channel_;
  out.n_max = opt_.n_max;
  out.key_density = opt_.key_density;
  out.key_band = opt_.key_band;
  out.seed = opt_.seed;

  for (int bi = 0; bi < 2; ++bi) {
    const Basis basis = bi == 0 ? Basis::Z : Basis::X;
    const BasisState s0 = basis == Basis::Z ? BasisState::H : BasisState::Plus;
    const BasisState s1 = basis == Basis::Z ? BasisState::V : BasisState::Minus;

    for (int band = 1; band <= 3; ++band) {
      std::vector<double> mom(opt_.n_max + 1);
      for (int n = 0; n <= opt_.n_max; ++n)
        mom[n] = pooled_poisson_moment(n, basis, band, layout_);
      out.poisson_a[bi][band - 1] = mom;
      out.poisson_b[bi][band - 1] = mom;
      out.region_probs[RegionId{s0, band}] =
          region_probability(RegionId{s0, band}, layout_);
      out.region_probs[RegionId{s1, band}] =
          region_probability(RegionId{s1, band}, layout_);
    }

    for (int ba = 1; ba <= 3; ++ba) {
      for (int bb = 1; bb <= 3; ++bb) {
        const PassResult res = run_pair_pass(basis, ba, bb);
        auto& row = out.union_rows[bi][ba - 1][bb - 1];
        row.gain = res.union_gain;
        row.error_gain = std::min(res.union_egain, res.union_gain);
        row.gain_sigma = res.union_gain_sigma;
        row.error_sigma = res.union_egain_sigma;
        row.evals = static_cast<std::uint64_t>(res.evals);
        row.converged = res.converged != 0.0;

        const BasisState states[2] = {s0, s1};
        for (int c = 0; c < 4; ++c) {
          ObservedStatistics::PairValue pv;
          pv.gain = res.gain[c];
          pv.error_gain = std::min(res.egain[c], res.gain[c]);
          pv.gain_sigma = res.gain_sigma[c];
          pv.error_sigma = res.egain_sigma[c];
          pv.evals = static_cast<std::uint64_t>(res.evals);
          pv.converged = res.converged != 0.0;
          out.gains[{RegionId{states[c / 2], ba}, RegionId{states[c % 2], bb}}] =
              pv;
        }

        double suma = 0.0, sumb = 0.0;
        for (int n = 0; n <= opt_.n_max; ++n) {
          suma += out.poisson_a[bi][ba - 1][n];
          sumb += out.poisson_b[bi][bb - 1][n];
        }
        out.series_tail[bi][ba - 1][bb - 1] = std::max(0.0, 1.0 - suma * sumb);
      }
    }
  }

  fill_key_block(out);
  return out;
}

double StatisticsEngine::expected_gain(const RegionId& a,
                                       const RegionId& b) const {
  if (basis_of(a.state) != basis_of(b.state))
    throw std::invalid_argument("expected_gain: region pair mixes bases");
  const PassResult res = run_pair_pass(basis_of(a.state), a.band, b.band);
  const int ia = (a.state == BasisState::V || a.state == BasisState::Minus);
  const int ib = (b.state == BasisState::V || b.state == BasisState::Minus);
  return res.gain[ia * 2 + ib];
}

double StatisticsEngine::expected_error_gain(const RegionId& a,
                                             const RegionId& b) const {
  if (basis_of(a.state) != basis_of(b.state))
    throw std::invalid_argument("expected_error_gain: region pair mixes bases");
  const PassResult res = run_pair_pass(basis_of(a.state), a.band, b.band);
  const int ia = (a.state == BasisState::V || a.state == BasisState::Minus);
  const int ib = (b.state == BasisState::V || b.state == BasisState::Minus);
  return res.egain[ia * 2 + ib];
}

// --- Photon-number oracles ----------------------------------------------------

namespace {

// P(exactly the two detectors in `pattern` click) by inclusion-exclusion,
// with photons routed independently and darks on every detector.
struct PatternModel {
  double qa[4];  // per-photon landing probabilities, Alice
  double qb[4];
  int n, m;
  double dark;

  double subset_prob(unsigned mask) const {
    // probability that no detector outside `mask` clicks
    double qa_out = 0.0, qb_out = 0.0;
    int outside = 0;
    for (int k = 0; k < 4; ++k) {
      if (mask & (1u << k)) continue;
      qa_out += qa[k];
      qb_out += qb[k];
      ++outside;
    }
    return std::pow(1.0 - dark, outside) * std::pow(1.0 - qa_out, n) *
           std::pow(1.0 - qb_out, m);
  }

  double exact_pair(int k1, int k2) const {
    const unsigned t = (1u << k1) | (1u << k2);
    return subset_prob(t) - subset_prob(1u << k1) - subset_prob(1u << k2) +
           subset_prob(0);
  }
};

}  // namespace

double photon_pair_yield(int n, int m, Basis basis, const BlochCoords& a,
                         const BlochCoords& b, const ChannelParams& channel,
                         bool error_side) {
  if (n < 0 || m < 0 || n > kMaxPhotonOrder || m > kMaxPhotonOrder)
    throw std::invalid_argument("photon_pair_yield: order out of range");
  const double eta = channel.arm_transmittance();

  const auto rotated = [&](const BlochCoords& c, const Rotation3D& rot) {
    BlochCoords r = c;
    r.mu = 1.0;
    if (rot.angle != 0.0) r = rotate_state(r, rot);
    return r;
  };
  const BlochCoords ra = rotated(a, channel.misalignment_a);
  const BlochCoords rb = rotated(b, channel.misalignment_b);

  PatternModel pm;
  pm.n = n;
  pm.m = m;
  pm.dark = channel.dark_count_prob;
  const double ca2 = 0.5 * (1.0 + std::cos(ra.theta_hv));
  const double cb2 = 0.5 * (1.0 + std::cos(rb.theta_hv));
  // detector order: cH, cV, dH, dV
  pm.qa[0] = pm.qa[2] = 0.5 * eta * ca2;
  pm.qa[1] = pm.qa[3] = 0.5 * eta * (1.0 - ca2);
  pm.qb[0] = pm.qb[2] = 0.5 * eta * cb2;
  pm.qb[1] = pm.qb[3] = 0.5 * eta * (1.0 - cb2);

  const double psi_minus = pm.exact_pair(0, 3) + pm.exact_pair(1, 2);
  const double psi_plus = pm.exact_pair(0, 1) + pm.exact_pair(2, 3);
  if (!error_side) return psi_minus + psi_plus;

  // error weighting uses the state labels of the unrotated coordinates
  if (basis == Basis::Z) {
    const bool equal = (a.theta_hv < kHalfPi) == (b.theta_hv < kHalfPi);
    return equal ? psi_minus + psi_plus : 0.0;
  }
  const auto plus_window = [](double phi) {
    double p = std::fmod(phi, kTwoPi);
    if (p < 0.0) p += kTwoPi;
    return p < kHalfPi || p > 3.0 * kHalfPi;
  };
  const bool equal = plus_window(a.phi_hv) == plus_window(b.phi_hv);
  return equal ? psi_minus : psi_plus;
}

double pooled_poisson_moment(int n, Basis basis, int band,
                             const RegionLayout& layout) {
  const BasisState s = basis == Basis::Z ? BasisState::H : BasisState::Plus;
  return poisson_region_moment(n, RegionId{s, band}, layout);
}

namespace {

struct SectorIntervals {
  // theta_p intervals with the matching azimuth window centres
  std::vector<std::pair<double, double>> th;
  std::vector<double> phi_center;
};

SectorIntervals sector_intervals(Basis basis, const RegionLayout& l) {
  SectorIntervals s;
  if (basis == Basis::Z) {
    const double w = plane_from_bloch(l.z_cap_angle());
    s.th = {{0.0, w}, {kHalfPi - w, kHalfPi}};
    s.phi_center = {0.0, 0.0};
  } else {
    const double lo = plane_from_bloch(l.x_band_lo_angle());
    const double hi = plane_from_bloch(l.x_band_hi_angle());
    s.th = {{lo, hi}, {lo, hi}};
    s.phi_center = {0.0, kPi};
  }
  return s;
}

}  // namespace

double decoupled_yield_oracle(int n, int m, Basis basis,
                              const RegionLayout& layout,
                              const ChannelParams& channel, bool error_side) {
  const SectorIntervals si = sector_intervals(basis, layout);

  double num = 0.0, den = 0.0;
  for (std::size_t ia = 0; ia < si.th.size(); ++ia) {
    for (std::size_t ib = 0; ib < si.th.size(); ++ib) {
      IntegrationRequest rn;
      rn.bounds = {{si.th[ia].first, si.th[ia].second},
                   {si.th[ib].first, si.th[ib].second}};
      rn.integrand = [&](std::span<const double> x) {
        const BlochCoords ca{1.0, bloch_from_plane(x[0]), si.phi_center[ia]};
        const BlochCoords cb{1.0, bloch_from_plane(x[1]), si.phi_center[ib]};
        return std::pow(leg_sum(x[0]), n) * std::pow(leg_sum(x[1]), m) *
               photon_pair_yield(n, m, basis, ca, cb, channel, error_side);
      };
      rn.rel_tol = 1e-8;
      rn.abs_tol = 1e-30;
      rn.max_evals = 500000;
      num += integrate(rn).value;

      IntegrationRequest rd = rn;
      rd.integrand = [&](std::span<const double> x) {
        return std::pow(leg_sum(x[0]), n) * std::pow(leg_sum(x[1]), m);
      };
      den += integrate(rd).value;
    }
  }
  return num / den;
}

double paired_yield_moment(int n, int m, Basis basis, int band_a, int band_b,
                           const RegionLayout& layout,
                           const ChannelParams& channel, bool error_side) {
  const SectorIntervals si = sector_intervals(basis, layout);
  const double fn = detail::factorial(n), fm = detail::factorial(m);

  double num = 0.0, den = 0.0;
  for (std::size_t ia = 0; ia < si.th.size(); ++ia) {
    for (std::size_t ib = 0; ib < si.th.size(); ++ib) {
      IntegrationRequest rq;
      rq.bounds = {{layout.band_lo(band_a), layout.band_hi(band_a)},
                   {si.th[ia].first, si.th[ia].second},
                   {layout.band_lo(band_b), layout.band_hi(band_b)},
                   {si.th[ib].first, si.th[ib].second}};
      rq.integrand = [&](std::span<const double> x) {
        // e^{-mu} of the Poisson terms cancels against the reshaped density
        const double mu_a = x[0] * leg_sum(x[1]);
        const double mu_b = x[2] * leg_sum(x[3]);
        const BlochCoords ca{1.0, bloch_from_plane(x[1]), si.phi_center[ia]};
        const BlochCoords cb{1.0, bloch_from_plane(x[3]), si.phi_center[ib]};
        return std::pow(mu_a, n) / fn * x[0] * std::pow(mu_b, m) / fm * x[2] *
               photon_pair_yield(n, m, basis, ca, cb, channel, error_side);
      };
      rq.rel_tol = 3e-5;
      rq.abs_tol = 1e-30;
      rq.max_evals = 4'000'000;
      rq.seed = 977;
      num += integrate(rq).value;

      RegionGeometry g;
      g.r_lo = layout.band_lo(band_a);
      g.r_hi = layout.band_hi(band_a);
      g.th_lo = si.th[ia].first;
      g.th_hi = si.th[ia].second;
      RegionGeometry h = g;
      h.r_lo = layout.band_lo(band_b);
      h.r_hi = layout.band_hi(band_b);
      h.th_lo = si.th[ib].first;
      h.th_hi = si.th[ib].second;
      den += region_mass(g) * region_mass(h);
    }
  }
  return num / den;
}

GainContribution phase_averaged_gain(BasisState sa, BasisState sb,
                                     const SourceSample& a,
                                     const SourceSample& b,
                                     const ChannelParams& channel) {
  const double eta = channel.arm_transmittance();
  const RelayPulse pa = through_channel(a, channel.misalignment_a, eta);
  const RelayPulse pb = through_channel(b, channel.misalignment_b, eta);
  GainContribution out;
  out.gain = phase_average([&](double phi_r) {
    return split_gain_and_error(sa, sb, bsm_probabilities(pa, pb, phi_r, channel))
        .gain;
  });
  out.error = phase_average([&](double phi_r) {
    return split_gain_and_error(sa, sb, bsm_probabilities(pa, pb, phi_r, channel))
        .error;
  });
  return out;
}

// --- Serialization -------------------------------------------------------------

namespace {

using nlohmann::json;

json to_json(const ObservedStatistics::PairValue& v) {
  return json{{"gain", v.gain},
              {"error_gain", v.error_gain},
              {"gain_sigma", v.gain_sigma},
              {"error_sigma", v.error_sigma},
              {"evals", v.evals},
              {"converged", v.converged}};
}

ObservedStatistics::PairValue pair_from_json(const json& j) {
  ObservedStatistics::PairValue v;
  v.gain = j.at("gain");
  v.error_gain = j.at("error_gain");
  v.gain_sigma = j.at("gain_sigma");
  v.error_sigma = j.at("error_sigma");
  v.evals = j.at("evals");
  v.converged = j.at("converged");
  return v;
}

int state_code(BasisState s) { return static_cast<int>(s); }
BasisState state_from_code(int c) { return static_cast<BasisState>(c); }

}  // namespace

std::string ObservedStatistics::to_json() const {
  json j;
  j["layout"] = {{"delta_z", layout.delta_z},   {"delta_xy", layout.delta_xy},
                 {"delta_phi", layout.delta_phi}, {"t1", layout.t1},
                 {"t2", layout.t2},             {"t3", layout.t3},
                 {"mu_max", layout.mu_max}};
  j["channel"] = {{"distance_km", channel.distance_km},
                  {"loss_db_per_km", channel.loss_db_per_km},
                  {"detector_efficiency", channel.detector_efficiency},
                  {"dark_count_prob", channel.dark_count_prob},
                  {"mis_a_axis", {channel.misalignment_a.axis.x,
                                  channel.misalignment_a.axis.y,
                                  channel.misalignment_a.axis.z}},
                  {"mis_a_angle", channel.misalignment_a.angle},
                  {"mis_b_axis", {channel.misalignment_b.axis.x,
                                  channel.misalignment_b.axis.y,
                                  channel.misalignment_b.axis.z}},
                  {"mis_b_angle", channel.misalignment_b.angle}};
  j["n_max"] = n_max;
  j["key_density"] = key_density == KeyDensity::Raw ? "raw" : "reshaped";
  j["key_band"] = key_band;
  j["seed"] = seed;

  json jg = json::array();
  for (const auto& [k, v] : gains)
    jg.push_back(json{{"a_state", state_code(k.first.state)},
                      {"a_band", k.first.band},
                      {"b_state", state_code(k.second.state)},
                      {"b_band", k.second.band},
                      {"value", pmdi::to_json(v)}});
  j["gains"] = jg;

  json ju = json::array();
  for (int b = 0; b < 2; ++b)
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k)
        ju.push_back(pmdi::to_json(union_rows[b][i][k]));
  j["union_rows"] = ju;

  json jp = json::array();
  for (int b = 0; b < 2; ++b)
    for (int i = 0; i < 3; ++i) jp.push_back(poisson_a[b][i]);
  j["poisson"] = jp;

  json jt = json::array();
  for (int b = 0; b < 2; ++b)
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) jt.push_back(series_tail[b][i][k]);
  j["series_tail"] = jt;

  json jr = json::array();
  for (const auto& [k, v] : region_probs)
    jr.push_back(json{{"state", state_code(k.state)}, {"band", k.band},
                      {"prob", v}});
  j["region_probs"] = jr;

  j["key"] = {{"p_z_a", key.p_z_a},       {"p_z_b", key.p_z_b},
              {"p1_a", key.p1_a},         {"p1_b", key.p1_b},
              {"q_z", key.q_z},           {"qe_z", key.qe_z},
              {"q_sigma", key.q_sigma},   {"qe_sigma", key.qe_sigma},
              {"converged", key.converged},
              {"ring_edges", key.ring_edges},
              {"ring_weight", key.ring_weight},
              {"ring_p1", key.ring_p1},
              {"ring_gain", key.ring_gain},
              {"ring_error", key.ring_error}};
  return j.dump();
}

ObservedStatistics ObservedStatistics::from_json(const std::string& text) {
  const json j = json::parse(text);
  ObservedStatistics o;
  const json& jl = j.at("layout");
  o.layout.delta_z = jl.at("delta_z");
  o.layout.delta_xy = jl.at("delta_xy");
  o.layout.delta_phi = jl.at("delta_phi");
  o.layout.t1 = jl.at("t1");
  o.layout.t2 = jl.at("t2");
  o.layout.t3 = jl.at("t3");
  o.layout.mu_max = jl.at("mu_max");
  const json& jc = j.at("channel");
  o.channel.distance_km = jc.at("distance_km");
  o.channel.loss_db_per_km = jc.at("loss_db_per_km");
  o.channel.detector_efficiency = jc.at("detector_efficiency");
  o.channel.dark_count_prob = jc.at("dark_count_prob");
  o.channel.misalignment_a.axis = {jc.at("mis_a_axis")[0], jc.at("mis_a_axis")[1],
                                   jc.at("mis_a_axis")[2]};
  o.channel.misalignment_a.angle = jc.at("mis_a_angle");
  o.channel.misalignment_b.axis = {jc.at("mis_b_axis")[0], jc.at("mis_b_axis")[1],
                                   jc.at("mis_b_axis")[2]};
  o.channel.misalignment_b.angle = jc.at("mis_b_angle");
  o.n_max = j.at("n_max");
  o.key_density =
      j.at("key_density") == "raw" ? KeyDensity::Raw : KeyDensity::Reshaped;
  o.key_band = j.at("key_band");
  o.seed = j.at("seed");

  for (const auto& e : j.at("gains"))
    o.gains[{RegionId{state_from_code(e.at("a_state")), e.at("a_band")},
             RegionId{state_from_code(e.at("b_state")), e.at("b_band")}}] =
        pair_from_json(e.at("value"));

  std::size_t idx = 0;
  for (int b = 0; b < 2; ++b)
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k)
        o.union_rows[b][i][k] = pair_from_json(j.at("union_rows")[idx++]);

  idx = 0;
  for (int b = 0; b < 2; ++b)
    for (int i = 0; i < 3; ++i) {
      o.poisson_a[b][i] = j.at("poisson")[idx++].get<std::vector<double>>();
      o.poisson_b[b][i] = o.poisson_a[b][i];
    }

  idx = 0;
  for (int b = 0; b < 2; ++b)
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) o.series_tail[b][i][k] = j.at("series_tail")[idx++];

  for (const auto& e : j.at("region_probs"))
    o.region_probs[RegionId{state_from_code(e.at("state")), e.at("band")}] =
        e.at("prob");

  const json& jk = j.at("key");
  o.key.p_z_a = jk.at("p_z_a");
  o.key.p_z_b = jk.at("p_z_b");
  o.key.p1_a = jk.at("p1_a");
  o.key.p1_b = jk.at("p1_b");
  o.key.q_z = jk.at("q_z");
  o.key.qe_z = jk.at("qe_z");
  o.key.q_sigma = jk.at("q_sigma");
  o.key.qe_sigma = jk.at("qe_sigma");
  o.key.converged = jk.at("converged");
  o.key.ring_edges = jk.at("ring_edges").get<std::vector<double>>();
  o.key.ring_weight = jk.at("ring_weight").get<std::vector<double>>();
  o.key.ring_p1 = jk.at("ring_p1").get<std::vector<double>>();
  o.key.ring_gain = jk.at("ring_gain").get<std::vector<double>>();
  o.key.ring_error = jk.at("ring_error").get<std::vector<double>>();
  return o;
}

}  // namespace pmdi
