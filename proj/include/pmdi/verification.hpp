#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace pmdi {

/// Max entrywise deviation of the sum of the four two-party projectors
/// built from a polarized basis pair (angles theta_a, theta_b, relative
/// azimuth phi) from the 4x4 identity. Zero in exact arithmetic: the four
/// mixed states pool to the fully mixed state.
double projector_completeness_error(double theta_a, double theta_b,
                                    double phi);

struct HhDecomposition {
  double deviation = 0.0;              // max entrywise residual
  std::array<double, 4> coeffs{};      // perfect, H(x)I, I(x)H, I(x)I weights
};

/// Pools the four azimuth-paired HH projectors and decomposes the result
/// into the perfect encoding plus three maximally-noisy terms.
HhDecomposition hh_family_decomposition(double theta_a, double theta_b,
                                        double phi);

struct CheckReport {
  std::string name;
  bool pass = false;
  double metric = 0.0;  // worst observed deviation or margin
  std::string detail;
};

/// Fast self-checks: the projector identities above on random draws, the
/// channel micro-properties, LP soundness on synthetic instances, and the
/// ring-rate convexity inequality. Used by the CLI verify mode.
std::vector<CheckReport> run_property_suite(std::uint64_t seed);

}  // namespace pmdi
