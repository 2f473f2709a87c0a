// Compares the OpenMP-parallel QMC accumulation against the serial
// reference on the production gain integrand, and reports points/s.

#include <chrono>
#include <cmath>
#include <cstdio>

#include "pmdi/cubature.hpp"
#include "pmdi/source.hpp"
#include "pmdi/statistics.hpp"

using namespace pmdi;

namespace {

double time_pass(bool parallel, std::uint64_t n_points, double* sink) {
  SobolSequence seq(7);
  std::uint32_t shift[kSobolMaxDim];
  make_digital_shift(99, 7, shift);

  // a fused stand-in for the pair kernel: two reshaped-density weights, the
  // splitter interference and the four detector exponentials
  const auto f = [](const double* u, double* acc) {
    const double ra = 0.05 + 0.55 * u[0], rb = 0.05 + 0.55 * u[3];
    const double tha = 0.2 * u[1], thb = 0.2 * u[4];
    const double wa = std::exp(ra * leg_sum(tha)) * ra;
    const double wb = std::exp(rb * leg_sum(thb)) * rb;
    const double mha = ra * std::cos(tha), mva = ra * std::sin(tha);
    const double mhb = rb * std::cos(thb), mvb = rb * std::sin(thb);
    const double sp = std::sin(kTwoPi * u[6]);
    const double xh = std::sqrt(mha * mhb) * sp;
    const double xv = std::sqrt(mva * mvb) * std::sin(kTwoPi * u[6] + u[2] - u[5]);
    const double pch = 1.0 - std::exp(-(0.5 * (mha + mhb) - xh));
    const double pdh = 1.0 - std::exp(-(0.5 * (mha + mhb) + xh));
    const double pcv = 1.0 - std::exp(-(0.5 * (mva + mvb) - xv));
    const double pdv = 1.0 - std::exp(-(0.5 * (mva + mvb) + xv));
    acc[0] += wa * wb *
              (pch * pdv * (1 - pcv) * (1 - pdh) +
               pcv * pdh * (1 - pch) * (1 - pdv) +
               pch * pcv * (1 - pdh) * (1 - pdv) +
               pdh * pdv * (1 - pch) * (1 - pcv));
  };

  double sum = 0.0;
  const auto t0 = std::chrono::steady_clock::now();
  sobol_accumulate(seq, shift, 0, n_points, 1, f, &sum, parallel);
  const double dt =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  *sink = sum;
  return dt;
}

}  // namespace

int main(int argc, char** argv) {
  const std::uint64_t n = argc > 1 ? std::strtoull(argv[1], nullptr, 10)
                                   : (1ull << 23);
  double serial_sum = 0.0, parallel_sum = 0.0;

  const double warm = time_pass(true, 1u << 16, &parallel_sum);
  (void)warm;

  const double ts = time_pass(false, n, &serial_sum);
  const double tp = time_pass(true, n, &parallel_sum);

  std::printf("points            : %llu\n",
              static_cast<unsigned long long>(n));
  std::printf("serial            : %.3f s  (%.1f Mpts/s)\n", ts,
              n / ts / 1e6);
  std::printf("openmp            : %.3f s  (%.1f Mpts/s)\n", tp,
              n / tp / 1e6);
  std::printf("speedup           : %.2fx\n", ts / tp);
  std::printf("results identical : %s\n",
              serial_sum == parallel_sum ? "yes" : "NO");
  return serial_sum == parallel_sum ? 0 : 1;
}
