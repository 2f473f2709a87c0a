#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pmdi {

struct Interval {
  double lo = 0.0;
  double hi = 1.0;
  double width() const { return hi - lo; }
};

enum class IntegrationMethod { Auto, Adaptive, Qmc };

/// A bounded integral over a hyper-rectangle, dimensions 1 through 7.
/// The integrand must be finite on the closed domain; integrable endpoint
/// singularities have to be removed by a change of variables on the caller
/// side before the request is built.
struct IntegrationRequest {
  std::vector<Interval> bounds;
  std::function<double(std::span<const double>)> integrand;
  double rel_tol = 1e-3;
  double abs_tol = 0.0;
  std::uint64_t max_evals = 2'000'000;
  std::uint64_t min_evals = 0;
  std::uint64_t seed = 1;
  IntegrationMethod method = IntegrationMethod::Auto;

  int dimension() const { return static_cast<int>(bounds.size()); }
};

struct IntegrationResult {
  double value = 0.0;
  double error_estimate = 0.0;
  std::uint64_t evals_used = 0;
  bool converged = false;
};

/// Thrown when the integrand produces a NaN; carries the offending point.
class IntegrandNanError : public std::runtime_error {
 public:
  IntegrandNanError(std::string what, std::vector<double> point)
      : std::runtime_error(std::move(what)), point_(std::move(point)) {}
  const std::vector<double>& point() const { return point_; }

 private:
  std::vector<double> point_;
};

IntegrationResult integrate(const IntegrationRequest& req);

/// Mean of a 2pi-periodic function over one period. Uses the trapezoid
/// rule with doubling; on periodic integrands this converges spectrally.
double phase_average(const std::function<double(double)>& f,
                     double rel_tol = 1e-12, int max_points = 1 << 16);

// ---------------------------------------------------------------------------
// Low-level deterministic QMC machinery. The statistics kernels instantiate
// the templates below directly so the hot loop stays inlineable; integrate()
// wraps the same code path behind std::function.
// ---------------------------------------------------------------------------

inline constexpr int kSobolMaxDim = 10;
inline constexpr std::uint64_t kQmcChunk = 4096;
inline constexpr int kQmcReplicates = 8;

std::uint64_t splitmix64(std::uint64_t& state);

/// Sobol' low-discrepancy sequence with 32-bit direction numbers, random
/// access by index so chunks can be evaluated in any order.
class SobolSequence {
 public:
  explicit SobolSequence(int dim);

  int dim() const { return dim_; }

  /// Point `index` of the sequence, XOR-scrambled by a per-dimension
  /// 32-bit digital shift. Components lie in [0, 1).
  void point(std::uint64_t index, const std::uint32_t* shift, double* u) const {
    for (int d = 0; d < dim_; ++d) {
      std::uint32_t x = 0;
      std::uint64_t i = index;
      int bit = 0;
      while (i) {
        if (i & 1u) x ^= v_[d][bit];
        i >>= 1;
        ++bit;
      }
      u[d] = (x ^ shift[d]) * 0x1p-32;
    }
  }

 private:
  int dim_;
  std::array<std::array<std::uint32_t, 32>, kSobolMaxDim> v_{};
};

/// Fills `dim` 32-bit digital-shift masks derived from `seed`.
void make_digital_shift(std::uint64_t seed, int dim, std::uint32_t* shift);

/// Accumulates an n_out-component integrand over Sobol points
/// [first, first+count). Work is split into fixed chunks whose partial sums
/// are combined in chunk order, so the result does not depend on the thread
/// count. `first` and `count` must be multiples of kQmcChunk.
///
/// F has signature void(const double* u, double* acc): it must *add* its
/// contributions into acc[0..n_out).
template <class F>
void sobol_accumulate(const SobolSequence& seq, const std::uint32_t* shift,
                      std::uint64_t first, std::uint64_t count, int n_out,
                      F&& f, double* sums, bool parallel);

}  // namespace pmdi

// Template implementation ----------------------------------------------------

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pmdi {

template <class F>
void sobol_accumulate(const SobolSequence& seq, const std::uint32_t* shift,
                      std::uint64_t first, std::uint64_t count, int n_out,
                      F&& f, double* sums, bool parallel) {
  if (count == 0) return;
  const std::int64_t n_chunks =
      static_cast<std::int64_t>((count + kQmcChunk - 1) / kQmcChunk);
  std::vector<double> partial(static_cast<std::size_t>(n_chunks) * n_out, 0.0);

#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (parallel)
#endif
  for (std::int64_t c = 0; c < n_chunks; ++c) {
    double u[kSobolMaxDim];
    double* acc = partial.data() + static_cast<std::size_t>(c) * n_out;
    const std::uint64_t begin = first + static_cast<std::uint64_t>(c) * kQmcChunk;
    const std::uint64_t end = std::min(begin + kQmcChunk, first + count);
    for (std::uint64_t i = begin; i < end; ++i) {
      seq.point(i, shift, u);
      f(u, acc);
    }
  }
  (void)parallel;

  // Serial combine in chunk order keeps the reduction deterministic.
  for (std::int64_t c = 0; c < n_chunks; ++c) {
    const double* acc = partial.data() + static_cast<std::size_t>(c) * n_out;
    for (int k = 0; k < n_out; ++k) sums[k] += acc[k];
  }
}

}  // namespace pmdi
