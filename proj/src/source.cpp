#include "pmdi/source.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pmdi/cubature.hpp"

namespace pmdi {

const char* to_string(BasisState s) {
  switch (s) {
    case BasisState::H: return "H";
    case BasisState::V: return "V";
    case BasisState::Plus: return "+";
    default: return "-";
  }
}

const char* to_string(Basis b) { return b == Basis::Z ? "Z" : "X"; }

void RegionLayout::validate() const {
  if (!(mu_max > 0.0)) throw std::invalid_argument("layout: mu_max must be > 0");
  if (!(0.0 < t1 && t1 < t2 && t2 < t3 && t3 <= 1.0))
    throw std::invalid_argument("layout: need 0 < t1 < t2 < t3 <= 1");
  if (!(delta_z > 0.0 && delta_xy > 0.0 && delta_phi > 0.0))
    throw std::invalid_argument("layout: region widths must be positive");
  // state regions must stay pairwise disjoint
  if (!(delta_z + delta_xy < 0.5))
    throw std::invalid_argument("layout: Z caps overlap the X band");
  if (!(delta_phi < kHalfPi))
    throw std::invalid_argument("layout: +/- azimuth windows overlap");
}

double RegionLayout::band_lo(int band) const {
  switch (band) {
    case 1: return 0.0;
    case 2: return t1 * mu_max;
    case 3: return t2 * mu_max;
    default: throw std::invalid_argument("band must be 1..3");
  }
}

double RegionLayout::band_hi(int band) const {
  switch (band) {
    case 1: return t1 * mu_max;
    case 2: return t2 * mu_max;
    case 3: return t3 * mu_max;
    default: throw std::invalid_argument("band must be 1..3");
  }
}

double plane_from_bloch(double theta_hv) {
  const double c = std::cos(0.5 * theta_hv);
  const double s = std::sin(0.5 * theta_hv);
  return std::atan2(s * s, c * c);
}

double bloch_from_plane(double theta_p) {
  const double c = std::cos(theta_p);
  const double s = std::sin(theta_p);
  return 2.0 * std::atan2(std::sqrt(std::max(s, 0.0)),
                          std::sqrt(std::max(c, 0.0)));
}

BlochCoords bloch_coords(const SourceSample& s) {
  const double mu = s.mu_h + s.mu_v;
  if (!(mu > 0.0))
    throw std::domain_error("bloch_coords: vacuum sample has no polarization");
  BlochCoords c;
  c.mu = mu;
  c.theta_hv = 2.0 * std::atan2(std::sqrt(s.mu_v), std::sqrt(s.mu_h));
  c.phi_hv = s.phi_hv;
  return c;
}

SourceSample from_bloch(const BlochCoords& c, double phi_global) {
  const double ch = std::cos(0.5 * c.theta_hv);
  const double sh = std::sin(0.5 * c.theta_hv);
  return SourceSample{c.mu * ch * ch, c.mu * sh * sh, c.phi_hv, phi_global};
}

double arcsine_pair_density(double mu_h, double mu_v, double mu_max) {
  if (mu_h < 0.0 || mu_h > mu_max || mu_v < 0.0 || mu_v > mu_max)
    throw std::domain_error("arcsine density: intensity outside [0, mu_max]");
  const double a = mu_h * (mu_max - mu_h);
  const double b = mu_v * (mu_max - mu_v);
  if (a == 0.0 || b == 0.0) return std::numeric_limits<double>::infinity();
  return 1.0 / (kPi * kPi * std::sqrt(a) * std::sqrt(b));
}

double base_density(const SourceSample& s, double mu_max) {
  return arcsine_pair_density(s.mu_h, s.mu_v, mu_max) / kTwoPi;
}

double reshaped_density(const SourceSample& s, double mu_max) {
  if (s.mu_h < 0.0 || s.mu_h > mu_max || s.mu_v < 0.0 || s.mu_v > mu_max)
    throw std::domain_error("reshaped density: intensity outside [0, mu_max]");
  const double em = std::expm1(mu_max);
  return std::exp(s.mu_h + s.mu_v) / (em * em) / kTwoPi;
}

namespace {

// max over (0, mu_max) of sqrt(mu (mu_max - mu)) e^mu, by golden section
double leg_weight_peak(double mu_max) {
  const auto g = [mu_max](double mu) {
    return std::sqrt(mu * (mu_max - mu)) * std::exp(mu);
  };
  constexpr double inv_phi = 0.6180339887498948482;
  double a = 0.0, b = mu_max;
  double x1 = b - inv_phi * (b - a), x2 = a + inv_phi * (b - a);
  double f1 = g(x1), f2 = g(x2);
  for (int i = 0; i < 200 && (b - a) > 1e-15 * mu_max; ++i) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = g(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = g(x1);
    }
  }
  return g(0.5 * (a + b));
}

}  // namespace

double reshaping_acceptance(const SourceSample& s, double mu_max) {
  const double peak = leg_weight_peak(mu_max);
  const double gh = std::sqrt(s.mu_h * (mu_max - s.mu_h)) * std::exp(s.mu_h);
  const double gv = std::sqrt(s.mu_v * (mu_max - s.mu_v)) * std::exp(s.mu_v);
  return gh * gv / (peak * peak);
}

double acceptance_norm(double mu_max) {
  const double peak = leg_weight_peak(mu_max);
  return 1.0 / (kPi * kPi * peak * peak);
}

double arcsine_quantile(double u, double mu_max) {
  const double s = std::sin(kHalfPi * u);
  return mu_max * s * s;
}

std::optional<RegionId> classify(const SourceSample& s, const RegionLayout& l) {
  const double r = std::hypot(s.mu_h, s.mu_v);
  if (!(r > 0.0)) return std::nullopt;

  int band = 0;
  if (r <= l.band_hi(1))
    band = 1;
  else if (r <= l.band_hi(2))
    band = 2;
  else if (r <= l.band_hi(3))
    band = 3;
  else
    return std::nullopt;

  // the minority-leg intensity share, sin^2(theta_hv / 2)
  const double f = s.mu_v / (s.mu_h + s.mu_v);
  if (f <= l.delta_z) return RegionId{BasisState::H, band};
  if (f >= 1.0 - l.delta_z) return RegionId{BasisState::V, band};

  if (std::abs(f - 0.5) <= l.delta_xy) {
    // wrap the azimuth difference into (-pi, pi]
    const auto wrap = [](double x) {
      x = std::fmod(x, kTwoPi);
      if (x > kPi) x -= kTwoPi;
      if (x <= -kPi) x += kTwoPi;
      return x;
    };
    if (std::abs(wrap(s.phi_hv)) <= l.delta_phi)
      return RegionId{BasisState::Plus, band};
    if (std::abs(wrap(s.phi_hv - kPi)) <= l.delta_phi)
      return RegionId{BasisState::Minus, band};
  }
  return std::nullopt;
}

RegionGeometry region_geometry(const RegionId& id, const RegionLayout& l) {
  l.validate();
  RegionGeometry g;
  g.r_lo = l.band_lo(id.band);
  g.r_hi = l.band_hi(id.band);
  switch (id.state) {
    case BasisState::H:
      g.th_lo = 0.0;
      g.th_hi = plane_from_bloch(l.z_cap_angle());
      g.phi_fraction = 1.0;
      break;
    case BasisState::V:
      g.th_lo = kHalfPi - plane_from_bloch(l.z_cap_angle());
      g.th_hi = kHalfPi;
      g.phi_fraction = 1.0;
      break;
    default:
      g.th_lo = plane_from_bloch(l.x_band_lo_angle());
      g.th_hi = plane_from_bloch(l.x_band_hi_angle());
      g.phi_fraction = l.delta_phi / kPi;
      break;
  }
  return g;
}

double region_mass(const RegionGeometry& g) {
  if (g.th_hi <= g.th_lo || g.r_hi <= g.r_lo) return 0.0;
  // integral of r e^{r s} dr is e^{r s}(r s - 1)/s^2, leaving one dimension
  const auto antideriv = [](double r, double s) {
    return std::exp(r * s) * (r * s - 1.0) / (s * s);
  };
  IntegrationRequest req;
  req.bounds = {{g.th_lo, g.th_hi}};
  req.integrand = [&](std::span<const double> x) {
    const double s = leg_sum(x[0]);
    return antideriv(g.r_hi, s) - antideriv(g.r_lo, s);
  };
  req.rel_tol = 1e-12;
  req.abs_tol = 1e-300;
  req.max_evals = 200000;
  return integrate(req).value;
}

namespace detail {

double factorial(int n) {
  double f = 1.0;
  for (int k = 2; k <= n; ++k) f *= k;
  return f;
}

namespace {
// sin(x)/x with a series fallback near zero
double sinc(double x) {
  if (std::abs(x) < 1e-4) return 1.0 - x * x / 6.0;
  return std::sin(x) / x;
}
}  // namespace

double raw_polar_weight_warped(double r, double c, double mu_max, bool v_pole,
                               double& theta) {
  if (!v_pole) {
    theta = c * c;
    const double mu_h = r * std::cos(theta);
    const double mu_v = r * std::sin(theta);
    const double q = sinc(theta);  // sin(c^2)/c^2
    return 2.0 * r /
           (kPi * kPi * std::sqrt(mu_h * (mu_max - mu_h)) *
            std::sqrt(r * q * (mu_max - mu_v)));
  }
  theta = kHalfPi - c * c;
  const double mu_h = r * std::cos(theta);
  const double mu_v = r * std::sin(theta);
  const double q = sinc(kHalfPi - theta);  // cos(theta)/c^2
  return 2.0 * r /
         (kPi * kPi * std::sqrt(mu_v * (mu_max - mu_v)) *
          std::sqrt(r * q * (mu_max - mu_h)));
}

double raw_polar_weight(double r, double theta, double mu_max) {
  return r * arcsine_pair_density(r * std::cos(theta), r * std::sin(theta),
                                  mu_max);
}

}  // namespace detail

namespace {

using detail::factorial;

// Coordinate map that absorbs the arcsine edge singularity: regions touching
// theta_p = 0 (H pole) or pi/2 (V pole) are integrated in c with theta = c^2
// off the singular edge, which cancels the 1/sqrt divergence exactly.
struct RawThetaMap {
  enum Kind { Linear, HPole, VPole } kind = Linear;
  double lo = 0.0, hi = 0.0;  // integration variable range

  static RawThetaMap make(double th_lo, double th_hi) {
    RawThetaMap m;
    if (th_hi <= kPi / 4.0 + 1e-12) {
      m.kind = HPole;
      m.lo = std::sqrt(th_lo);
      m.hi = std::sqrt(th_hi);
    } else if (th_lo >= kPi / 4.0 - 1e-12) {
      m.kind = VPole;
      m.lo = std::sqrt(kHalfPi - th_hi);
      m.hi = std::sqrt(kHalfPi - th_lo);
    } else {
      m.kind = Linear;
      m.lo = th_lo;
      m.hi = th_hi;
    }
    return m;
  }

  void eval(double c, double r, double mu_max, double& theta,
            double& weight) const {
    switch (kind) {
      case HPole:
        weight = detail::raw_polar_weight_warped(r, c, mu_max, false, theta);
        break;
      case VPole:
        weight = detail::raw_polar_weight_warped(r, c, mu_max, true, theta);
        break;
      default:
        theta = c;
        weight = detail::raw_polar_weight(r, theta, mu_max);
        break;
    }
  }
};

double raw_region_integral(const RegionGeometry& g, double mu_max, int n) {
  // n < 0 integrates the bare density; n >= 0 weights by the Poisson term
  if (g.th_hi <= g.th_lo || g.r_hi <= g.r_lo) return 0.0;
  if (g.r_hi >= mu_max)
    throw std::domain_error("raw region integral requires r_hi < mu_max");
  const RawThetaMap map = RawThetaMap::make(g.th_lo, g.th_hi);
  const double fact = n > 0 ? factorial(n) : 1.0;
  IntegrationRequest req;
  req.bounds = {{g.r_lo, g.r_hi}, {map.lo, map.hi}};
  req.integrand = [&](std::span<const double> x) {
    double theta, w;
    map.eval(x[1], x[0], mu_max, theta, w);
    if (n < 0) return w;
    const double mu = x[0] * leg_sum(theta);
    return w * std::pow(mu, n) * std::exp(-mu) / fact;
  };
  req.rel_tol = 1e-10;
  req.abs_tol = 1e-300;
  req.max_evals = 2000000;
  return integrate(req).value;
}

}  // namespace

double region_mass_raw(const RegionGeometry& g, double mu_max) {
  return raw_region_integral(g, mu_max, -1);
}

double region_probability(const RegionId& id, const RegionLayout& l) {
  const RegionGeometry g = region_geometry(id, l);
  return acceptance_norm(l.mu_max) * region_mass(g) * g.phi_fraction;
}

double region_probability_raw(const RegionId& id, const RegionLayout& l) {
  const RegionGeometry g = region_geometry(id, l);
  return region_mass_raw(g, l.mu_max) * g.phi_fraction;
}

double poisson_region_moment(int n, const RegionId& id, const RegionLayout& l) {
  return poisson_region_moment(n, region_geometry(id, l));
}

double poisson_region_moment(int n, const RegionGeometry& g) {
  if (n < 0 || n > kMaxPhotonOrder)
    throw std::invalid_argument("poisson_region_moment: order out of range");
  const double fact = factorial(n);
  const bool flat_r = g.r_hi <= g.r_lo;
  const bool flat_th = g.th_hi <= g.th_lo;

  if (flat_r && flat_th) {
    const double mu = g.r_lo * leg_sum(g.th_lo);
    return std::pow(mu, n) * std::exp(-mu) / fact;
  }

  // The e^{-mu} of the Poisson term cancels against the reshaped density,
  // so the numerator integrand is the plain polynomial (r s)^n r / n!.
  IntegrationRequest num, den;
  num.rel_tol = den.rel_tol = 1e-12;
  num.abs_tol = den.abs_tol = 1e-300;
  num.max_evals = den.max_evals = 2000000;

  if (flat_th) {
    const double s = leg_sum(g.th_lo);
    num.bounds = den.bounds = {{g.r_lo, g.r_hi}};
    num.integrand = [&, s](std::span<const double> x) {
      return std::pow(x[0] * s, n) * x[0] / fact;
    };
    den.integrand = [&, s](std::span<const double> x) {
      return std::exp(x[0] * s) * x[0];
    };
  } else if (flat_r) {
    const double r = g.r_lo;
    num.bounds = den.bounds = {{g.th_lo, g.th_hi}};
    num.integrand = [&, r](std::span<const double> x) {
      return std::pow(r * leg_sum(x[0]), n) / fact;
    };
    den.integrand = [&, r](std::span<const double> x) {
      return std::exp(r * leg_sum(x[0]));
    };
  } else {
    num.bounds = den.bounds = {{g.r_lo, g.r_hi}, {g.th_lo, g.th_hi}};
    num.integrand = [&](std::span<const double> x) {
      return std::pow(x[0] * leg_sum(x[1]), n) * x[0] / fact;
    };
    den.integrand = [&](std::span<const double> x) {
      return std::exp(x[0] * leg_sum(x[1])) * x[0];
    };
  }
  return integrate(num).value / integrate(den).value;
}

double poisson_region_moment_raw(int n, const RegionGeometry& g, double mu_max) {
  if (n < 0 || n > kMaxPhotonOrder)
    throw std::invalid_argument("poisson_region_moment: order out of range");
  if (g.th_hi <= g.th_lo || g.r_hi <= g.r_lo) {
    const double mu = g.r_lo * leg_sum(g.th_lo);
    return std::pow(mu, n) * std::exp(-mu) / factorial(n);
  }
  return raw_region_integral(g, mu_max, n) / raw_region_integral(g, mu_max, -1);
}

}  // namespace pmdi
