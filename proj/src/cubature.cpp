#include "pmdi/cubature.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <queue>

namespace pmdi {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

void make_digital_shift(std::uint64_t seed, int dim, std::uint32_t* shift) {
  std::uint64_t s = seed ^ 0xd1b54a32d192ed03ull;
  for (int d = 0; d < dim; ++d)
    shift[d] = static_cast<std::uint32_t>(splitmix64(s) >> 32);
}

namespace {

// Primitive polynomials and initial direction numbers for dimensions 2..10
// (first dimension is the van der Corput sequence).
struct SobolPoly {
  int s;
  std::uint32_t a;
  std::array<std::uint32_t, 5> m;
};

constexpr std::array<SobolPoly, 9> kSobolPolys = {{
    {1, 0, {1, 0, 0, 0, 0}},
    {2, 1, {1, 3, 0, 0, 0}},
    {3, 1, {1, 3, 1, 0, 0}},
    {3, 2, {1, 1, 1, 0, 0}},
    {4, 1, {1, 1, 3, 3, 0}},
    {4, 4, {1, 3, 5, 13, 0}},
    {5, 2, {1, 1, 5, 5, 17}},
    {5, 4, {1, 1, 5, 5, 5}},
    {5, 7, {1, 1, 7, 11, 19}},
}};

}  // namespace

SobolSequence::SobolSequence(int dim) : dim_(dim) {
  if (dim < 1 || dim > kSobolMaxDim)
    throw std::invalid_argument("SobolSequence: dimension out of range");
  for (int j = 0; j < 32; ++j) v_[0][j] = 1u << (31 - j);
  for (int d = 1; d < dim_; ++d) {
    const SobolPoly& p = kSobolPolys[d - 1];
    for (int j = 0; j < p.s; ++j) v_[d][j] = p.m[j] << (31 - j);
    for (int j = p.s; j < 32; ++j) {
      std::uint32_t x = v_[d][j - p.s];
      x ^= x >> p.s;
      for (int k = 1; k < p.s; ++k)
        if ((p.a >> (p.s - 1 - k)) & 1u) x ^= v_[d][j - k];
      v_[d][j] = x;
    }
  }
}

namespace {

// --- Randomized QMC driver for the std::function interface -----------------

IntegrationResult integrate_qmc(const IntegrationRequest& req) {
  const int dim = req.dimension();
  SobolSequence seq(dim);

  double volume = 1.0;
  for (const Interval& b : req.bounds) volume *= b.width();

  std::array<std::array<std::uint32_t, kSobolMaxDim>, kQmcReplicates> shifts;
  for (int r = 0; r < kQmcReplicates; ++r)
    make_digital_shift(req.seed * 1000003ull + r, dim, shifts[r].data());

  const auto eval = [&](const double* u, double* x) {
    for (int d = 0; d < dim; ++d)
      x[d] = req.bounds[d].lo + u[d] * req.bounds[d].width();
    return req.integrand(std::span<const double>(x, dim));
  };

  // A NaN from the integrand propagates into the running sum; the offending
  // point is recovered by a serial rescan only on the error path.
  const auto rescan_for_nan = [&](const std::uint32_t* shift,
                                  std::uint64_t upto) {
    double u[kSobolMaxDim], x[kSobolMaxDim];
    for (std::uint64_t i = 0; i < upto; ++i) {
      seq.point(i, shift, u);
      if (std::isnan(eval(u, x)))
        throw IntegrandNanError("integrand returned NaN",
                                std::vector<double>(x, x + dim));
    }
  };

  // Each replicate sees the same underlying sequence under its own digital
  // shift; replicate spread gives the error estimate.
  std::array<double, kQmcReplicates> rep_sum{};
  std::uint64_t per_rep = 0;

  std::uint64_t block = std::max<std::uint64_t>(
      kQmcChunk, (std::max<std::uint64_t>(req.min_evals, 1u << 15) /
                  kQmcReplicates / kQmcChunk) *
                     kQmcChunk);

  IntegrationResult out;

  while (true) {
    for (int r = 0; r < kQmcReplicates; ++r) {
      const std::uint32_t* shift = shifts[r].data();
      auto f = [&](const double* u, double* acc) {
        double x[kSobolMaxDim];
        acc[0] += eval(u, x);
      };
      sobol_accumulate(seq, shift, per_rep, block, 1, f, &rep_sum[r], true);
      if (std::isnan(rep_sum[r])) rescan_for_nan(shift, per_rep + block);
    }
    per_rep += block;
    out.evals_used = per_rep * kQmcReplicates;

    double mean = 0.0;
    for (double s : rep_sum) mean += s;
    mean /= static_cast<double>(kQmcReplicates) * per_rep;

    double var = 0.0;
    for (double s : rep_sum) {
      const double d = s / per_rep - mean;
      var += d * d;
    }
    var /= kQmcReplicates - 1;

    out.value = mean * volume;
    out.error_estimate = 2.5 * std::sqrt(var / kQmcReplicates) * std::abs(volume);

    const double target = std::max(req.rel_tol * std::abs(out.value), req.abs_tol);
    if (out.error_estimate <= target && out.evals_used >= req.min_evals) {
      out.converged = true;
      return out;
    }
    const std::uint64_t cap = req.max_evals / kQmcReplicates;
    const std::uint64_t room =
        per_rep < cap ? ((cap - per_rep) / kQmcChunk) * kQmcChunk : 0;
    block = std::min(block * 2, room);
    if (block == 0) return out;
  }
}

// --- Globally adaptive tensor Gauss-Kronrod for dimensions 1..3 ------------

// QUADPACK 15-point Kronrod abscissae/weights with the embedded 7-point
// Gauss rule.
constexpr std::array<double, 8> kXgk = {
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000};
constexpr std::array<double, 8> kWgk = {
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714};
constexpr std::array<double, 4> kWg = {
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327};

struct Rule1d {
  std::array<double, 15> x;   // nodes on [-1,1]
  std::array<double, 15> wk;  // Kronrod weights
  std::array<double, 15> wg;  // Gauss weights (zero on Kronrod-only nodes)
};

Rule1d make_rule() {
  Rule1d r{};
  for (int i = 0; i < 7; ++i) {
    r.x[i] = -kXgk[i];
    r.x[14 - i] = kXgk[i];
    r.wk[i] = r.wk[14 - i] = kWgk[i];
  }
  r.x[7] = 0.0;
  r.wk[7] = kWgk[7];
  // Gauss nodes sit at the odd Kronrod indices.
  r.wg[1] = r.wg[13] = kWg[0];
  r.wg[3] = r.wg[11] = kWg[1];
  r.wg[5] = r.wg[9] = kWg[2];
  r.wg[7] = kWg[3];
  return r;
}

const Rule1d& rule1d() {
  static const Rule1d r = make_rule();
  return r;
}

struct Patch {
  std::array<double, 3> lo{}, hi{};
  double value = 0.0;
  double error = 0.0;
  std::uint64_t seq = 0;
};

struct PatchOrder {
  bool operator()(const Patch& a, const Patch& b) const {
    if (a.error != b.error) return a.error < b.error;
    return a.seq > b.seq;  // older first on ties
  }
};

template <int Dim>
void eval_patch(const IntegrationRequest& req, Patch& p, std::uint64_t& evals) {
  const Rule1d& r = rule1d();
  double mid[Dim], half[Dim];
  double scale = 1.0;
  for (int d = 0; d < Dim; ++d) {
    mid[d] = 0.5 * (p.lo[d] + p.hi[d]);
    half[d] = 0.5 * (p.hi[d] - p.lo[d]);
    scale *= half[d];
  }
  double ik = 0.0, ig = 0.0;
  int idx[Dim] = {};
  double x[Dim];
  while (true) {
    double wk = 1.0, wg = 1.0;
    for (int d = 0; d < Dim; ++d) {
      x[d] = mid[d] + half[d] * r.x[idx[d]];
      wk *= r.wk[idx[d]];
      wg *= r.wg[idx[d]];
    }
    const double fx = req.integrand(std::span<const double>(x, Dim));
    ++evals;
    if (std::isnan(fx))
      throw IntegrandNanError("integrand returned NaN",
                              std::vector<double>(x, x + Dim));
    ik += wk * fx;
    ig += wg * fx;
    int d = 0;
    for (; d < Dim; ++d) {
      if (++idx[d] < 15) break;
      idx[d] = 0;
    }
    if (d == Dim) break;
  }
  p.value = ik * scale;
  p.error = std::abs(ik - ig) * scale;
}

template <int Dim>
IntegrationResult integrate_adaptive(const IntegrationRequest& req) {
  IntegrationResult out;
  std::uint64_t seq = 0;

  Patch root;
  for (int d = 0; d < Dim; ++d) {
    root.lo[d] = req.bounds[d].lo;
    root.hi[d] = req.bounds[d].hi;
  }
  root.seq = seq++;
  eval_patch<Dim>(req, root, out.evals_used);

  std::priority_queue<Patch, std::vector<Patch>, PatchOrder> heap;
  heap.push(root);
  double total = root.value, err = root.error;

  while (true) {
    const double target = std::max(req.rel_tol * std::abs(total), req.abs_tol);
    if (err <= target) {
      out.converged = true;
      break;
    }
    if (out.evals_used >= req.max_evals || heap.empty()) break;

    Patch worst = heap.top();
    heap.pop();
    total -= worst.value;
    err -= worst.error;

    int split = 0;
    double widest = -1.0;
    for (int d = 0; d < Dim; ++d) {
      const double rel = (worst.hi[d] - worst.lo[d]) / req.bounds[d].width();
      if (rel > widest) {
        widest = rel;
        split = d;
      }
    }
    const double cut = 0.5 * (worst.lo[split] + worst.hi[split]);
    Patch left = worst, right = worst;
    left.hi[split] = cut;
    right.lo[split] = cut;
    left.seq = seq++;
    right.seq = seq++;
    eval_patch<Dim>(req, left, out.evals_used);
    eval_patch<Dim>(req, right, out.evals_used);
    total += left.value + right.value;
    err += left.error + right.error;
    heap.push(left);
    heap.push(right);
  }
  out.value = total;
  out.error_estimate = err;
  return out;
}

}  // namespace

IntegrationResult integrate(const IntegrationRequest& req) {
  const int dim = req.dimension();
  if (dim < 1 || dim > 7)
    throw std::invalid_argument("integrate: dimension must be 1..7");
  if (!req.integrand) throw std::invalid_argument("integrate: empty integrand");
  if (req.rel_tol <= 0.0 && req.abs_tol <= 0.0)
    throw std::invalid_argument("integrate: tolerances must be positive");
  for (const Interval& b : req.bounds)
    if (!(b.hi >= b.lo)) throw std::invalid_argument("integrate: bad interval");

  IntegrationMethod m = req.method;
  if (m == IntegrationMethod::Auto)
    m = dim <= 3 ? IntegrationMethod::Adaptive : IntegrationMethod::Qmc;
  if (m == IntegrationMethod::Adaptive && dim > 3)
    throw std::invalid_argument("adaptive subdivision supports dimension <= 3");

  if (m == IntegrationMethod::Qmc) return integrate_qmc(req);
  switch (dim) {
    case 1:
      return integrate_adaptive<1>(req);
    case 2:
      return integrate_adaptive<2>(req);
    default:
      return integrate_adaptive<3>(req);
  }
}

double phase_average(const std::function<double(double)>& f, double rel_tol,
                     int max_points) {
  constexpr double two_pi = 6.283185307179586476925286766559;
  int n = 16;
  double sum = 0.0, fmax = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = f(two_pi * i / n);
    sum += v;
    fmax = std::max(fmax, std::abs(v));
  }
  double prev = sum / n;
  while (n < max_points) {
    // refine by the midpoints of the current grid
    for (int i = 0; i < n; ++i) {
      const double v = f(two_pi * (i + 0.5) / n);
      sum += v;
      fmax = std::max(fmax, std::abs(v));
    }
    n *= 2;
    const double cur = sum / n;
    if (std::abs(cur - prev) <=
        std::max(rel_tol * std::abs(cur), 1e-14 * fmax))
      return cur;
    prev = cur;
  }
  return prev;
}

}  // namespace pmdi
