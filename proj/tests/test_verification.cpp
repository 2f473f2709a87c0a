#include "doctest.h"

#include <cmath>
#include <random>

#include "pmdi/source.hpp"
#include "pmdi/verification.hpp"

using namespace pmdi;

TEST_CASE("polarized projector quartets pool to the identity") {
  CHECK(projector_completeness_error(0.0, 0.0, 0.0) < 1e-15);
  CHECK(projector_completeness_error(0.3, 1.2, 2.5) < 1e-14);

  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 2000; ++i)
    worst = std::max(worst,
                     projector_completeness_error(kPi * u(rng), kPi * u(rng),
                                                  kTwoPi * u(rng)));
  CHECK(worst < 1e-12);
}

TEST_CASE("HH family decomposes into the perfect state plus noise") {
  std::mt19937_64 rng(20);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 2000; ++i) {
    const double ta = kHalfPi * u(rng), tb = kHalfPi * u(rng);
    const HhDecomposition d = hh_family_decomposition(ta, tb, kTwoPi * u(rng));
    CHECK(d.deviation < 1e-12);
    // the three noisy terms carry half error each and must not be negative
    CHECK(d.coeffs[1] >= -1e-15);
    CHECK(d.coeffs[2] >= -1e-15);
    CHECK(d.coeffs[3] >= -1e-15);
    // the four weights cover the pooled state exactly
    const double trace = d.coeffs[0] + 2.0 * d.coeffs[1] + 2.0 * d.coeffs[2] +
                         4.0 * d.coeffs[3];
    CHECK(trace == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("beyond the equator the perfect weight changes sign") {
  const HhDecomposition d = hh_family_decomposition(2.5, 0.3, 0.0);
  CHECK(d.deviation < 1e-12);  // the algebra still holds
  CHECK(d.coeffs[0] < 0.0);    // but it is no longer a mixture
}

TEST_CASE("property suite passes end to end") {
  const auto reports = run_property_suite(123);
  REQUIRE(reports.size() == 5);
  for (const CheckReport& r : reports) {
    INFO(r.name, ": ", r.detail);
    CHECK(r.pass);
  }
}
