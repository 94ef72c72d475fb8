#pragma once

#include "lowreg/core.hpp"

#include <cstdint>
#include <string_view>
#include <vector>

namespace lowreg {

struct SamplerSpec {
  std::size_t count = 1000;
  std::uint64_t seed = 1;
  /// Adds the 2^n box vertices to point samples (sup estimates are often
  /// attained on the boundary).
  bool include_corners = true;
};

/// Derives an independent seed for a named stream.
std::uint64_t derive_seed(std::uint64_t base, std::string_view stream);

/// Halton sequence with a seeded Cranley-Patterson rotation.
class HaltonSequence {
 public:
  HaltonSequence(int dim, std::uint64_t seed);

  int dim() const { return static_cast<int>(shift_.size()); }
  /// Coordinate j of sample k, in [0, 1).
  double coord(std::size_t k, int j) const;
  std::vector<double> sample(std::size_t k) const;

 private:
  std::vector<double> shift_;
};

/// Maps n uniforms in (0,1) to a Euclidean unit vector (Gaussian + normalize).
Vec sphere_direction(const double* uniforms, int n);

/// Deterministic point samples in a box: corners first (if enabled), then Halton.
std::vector<Vec> sample_points(const ChartDomain& box, const SamplerSpec& spec);

/// Deterministic Euclidean unit vectors in R^n.
std::vector<Vec> sample_directions(int n, const SamplerSpec& spec);

struct PointDirection {
  Vec point;
  Vec direction;
};

/// Joint low-discrepancy samples of (point in box, unit direction), drawn from
/// one 2n-dimensional sequence so both components are well spread together.
std::vector<PointDirection> sample_point_directions(const ChartDomain& box, const SamplerSpec& spec);

/// Points in the closed Euclidean ball of radius r around the origin; the
/// first samples sit on the sphere.
std::vector<Vec> sample_ball(int n, double r, const SamplerSpec& spec);

}  // namespace lowreg
