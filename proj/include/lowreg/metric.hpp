#pragma once

#include "lowreg/core.hpp"
#include "lowreg/sampling.hpp"

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace lowreg {

enum class Regularity { C0, C0_1, C1_1, Smooth };

std::string_view to_string(Regularity r);
Regularity parse_regularity(std::string_view s);

/// Metric components and their first coordinate derivatives at a point;
/// dg[k] holds the matrix of partial derivatives along coordinate k.
struct MetricJet {
  Mat g;
  std::array<Mat, kMaxDim> dg;
};

struct MetricDefinition {
  std::string name;
  ChartDomain domain;
  std::function<Mat(const Vec&)> components;
  /// Optional analytic first derivatives; finite differences are used otherwise.
  std::function<void(const Vec&, std::array<Mat, kMaxDim>&)> derivatives;
  /// Continuous timelike field fixing the time orientation. Defaults to the
  /// coordinate vector of time_axis.
  std::function<Vec(const Vec&)> time_orientation;
  Regularity regularity = Regularity::Smooth;
  int time_axis = 0;
  /// Coordinates the components (and the orientation field) depend on.
  /// Unset means "all".
  std::optional<std::vector<int>> active_axes;
  /// Hyperplanes {x^axis = value} across which the second derivatives may
  /// jump. Integrators split steps exactly at crossings.
  std::vector<std::pair<int, double>> derivative_jumps;
};

/// Lorentzian metric on a chart box. Immutable; copies share the evaluators.
class MetricField {
 public:
  explicit MetricField(MetricDefinition def);

  const std::string& name() const { return def_.name; }
  int dim() const { return def_.domain.dim(); }
  const ChartDomain& domain() const { return def_.domain; }
  Regularity regularity() const { return def_.regularity; }
  int time_axis() const { return def_.time_axis; }
  const std::vector<int>& active_axes() const { return active_; }
  const std::vector<std::pair<int, double>>& derivative_jumps() const { return def_.derivative_jumps; }
  bool has_analytic_derivatives() const { return static_cast<bool>(def_.derivatives); }
  /// Default finite-difference step: 1e-5 times the domain diameter.
  double fd_step() const { return fd_step_; }

  /// Components at p; throws DomainError outside the chart.
  Mat at(const Vec& p) const;
  /// Components without the domain check (finite-difference stencils may
  /// poke slightly past the box).
  Mat raw(const Vec& p) const { return def_.components(p); }
  MetricJet jet(const Vec& p) const;
  MetricJet jet(const Vec& p, double fd_step) const;
  Vec time_orientation(const Vec& p) const;

  double apply(const Vec& p, const Vec& v, const Vec& w) const { return v.dot(at(p) * w); }

  MetricField with_reversed_orientation() const;
  MetricField with_domain(const ChartDomain& d) const;
  MetricField with_active_axes(std::vector<int> axes) const;
  MetricField with_name(std::string name) const;
  const MetricDefinition& definition() const { return def_; }

 private:
  MetricDefinition def_;
  std::vector<int> active_;
  double fd_step_ = 1e-5;
};

/// Smooth Riemannian background; the default is the chart-Euclidean identity.
class RiemannianBackground {
 public:
  RiemannianBackground() = default;
  explicit RiemannianBackground(std::function<Mat(const Vec&)> h) : h_(std::move(h)) {}

  bool is_identity() const { return !h_; }
  Mat at(const Vec& p) const;
  double norm2(const Vec& p, const Vec& v) const;
  double norm(const Vec& p, const Vec& v) const;

 private:
  std::function<Mat(const Vec&)> h_;
};

struct TangentVector {
  Vec base;
  Vec components;
};

enum class CausalClass { Timelike, Null, Spacelike, ZeroVector };
enum class TimeDirection { Future, Past, None };

std::string_view to_string(CausalClass c);
std::string_view to_string(TimeDirection d);

struct CausalCharacter {
  CausalClass kind = CausalClass::ZeroVector;
  TimeDirection direction = TimeDirection::None;
  /// g(v,v) / |v|_h^2.
  double normalized_value = 0.0;
};

/// Pointwise classification with the relative null band
/// |g(v,v)| <= tol |v|_h^2.
CausalCharacter classify_vector(const Mat& g, const Vec& orientation, const Mat& h, const Vec& v, double tol);
CausalCharacter causal_character(const MetricField& g, const TangentVector& v, double tol,
                                 const RiemannianBackground& h = {});

int negative_eigenvalue_count(const Mat& g);
bool is_lorentzian(const Mat& g);

/// Future-pointing timelike axis of g relative to h (generalized eigenvector
/// of the negative eigenvalue), oriented so that g(axis, orientation) < 0.
Vec future_axis(const Mat& g, const Mat& h, const Vec& orientation);

/// Moves a direction u into the closed cone {g(v,v) <= level |v|_h^2} by
/// bisection along the time axis; returns an h-unit vector. Directions already
/// inside are only normalized.
Vec project_to_cone(const Mat& g, const Mat& h, const Vec& axis, const Vec& u, double level = 0.0);

struct MetricDistance {
  double value = 0.0;
  std::size_t points = 0;
  Vec worst_point;
};

/// Sampled sup over region points of sup_{X,Y} |g1(X,Y) - g2(X,Y)| / (|X|_h |Y|_h).
/// The inner sup over vector pairs is evaluated exactly (largest generalized
/// eigenvalue modulus), so the estimate is a lower bound only through point
/// sampling.
MetricDistance metric_distance(const MetricField& g1, const MetricField& g2, const ChartDomain& region,
                               const SamplerSpec& sampler, const RiemannianBackground& h = {});

struct ConeComparison {
  std::size_t samples = 0;
  std::size_t violations = 0;
  /// min over samples of -wider(v,v) / |v|_h^2; positive means strictly inside.
  double worst_margin = 0.0;
  Vec worst_point;
  Vec worst_vector;
};

/// Checks g < wider at p: every sampled nonzero g-causal v must be
/// wider-timelike.
ConeComparison cone_comparison(const MetricField& g, const MetricField& wider, const Vec& p,
                               const SamplerSpec& sampler, const RiemannianBackground& h = {});

/// Same check over joint (point, direction) samples of a region.
ConeComparison cone_comparison(const MetricField& g, const MetricField& wider, const ChartDomain& region,
                               const SamplerSpec& sampler, const RiemannianBackground& h = {});

/// Christoffel symbols of the second kind, stored as gamma(k, i, j).
class Christoffel {
 public:
  explicit Christoffel(int n) : n_(n) { data_.fill(0.0); }
  int dim() const { return n_; }
  double operator()(int k, int i, int j) const { return data_[static_cast<std::size_t>((k * kMaxDim + i) * kMaxDim + j)]; }
  double& operator()(int k, int i, int j) { return data_[static_cast<std::size_t>((k * kMaxDim + i) * kMaxDim + j)]; }

 private:
  int n_;
  std::array<double, kMaxDim * kMaxDim * kMaxDim> data_;
};

Christoffel christoffel(const MetricField& g, const Vec& p, double fd_step);
Christoffel christoffel(const MetricJet& jet);

/// -Gamma^k_ij v^i v^j without forming the full symbol array.
Vec geodesic_acceleration(const MetricJet& jet, const Vec& v);

struct MetricCheck {
  std::size_t points = 0;
  double max_asymmetry = 0.0;
  std::size_t signature_failures = 0;
  std::size_t orientation_failures = 0;
  bool ok() const { return max_asymmetry < 1e-12 && signature_failures == 0 && orientation_failures == 0; }
};

/// Samples the MetricField invariants (symmetry, signature, timelike
/// orientation field) over a region.
MetricCheck check_metric(const MetricField& g, const ChartDomain& region, const SamplerSpec& sampler);

}  // namespace lowreg
