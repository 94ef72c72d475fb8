#pragma once

#include "lowreg/metric.hpp"
#include "lowreg/regularize.hpp"
#include "lowreg/sampling.hpp"

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <vector>

namespace lowreg {

/// Fixed-step classical RK4. The step is shrunk so that an integer number of
/// steps lands exactly on the end parameter.
struct IntegratorSpec {
  double step = 1.0 / 128.0;
  int refinement = 2;  // Richardson step-halving factor
  std::size_t max_steps = 1u << 22;
};

struct GeodesicPath {
  std::vector<double> t;
  std::vector<Vec> x;
  std::vector<Vec> v;
  /// The path left the chart before t_end; samples stop at the last point
  /// whose RK stages all stayed inside.
  bool truncated = false;
  /// max |x_h - x_{h/r}| + |v_h - v_{h/r}| over shared samples (0 if not requested).
  double error_estimate = 0.0;

  const Vec& end_point() const { return x.back(); }
  const Vec& end_velocity() const { return v.back(); }
  /// Cubic Hermite interpolation of (x, v) at parameter s inside the sampled range.
  Vec point_at(double s) const;
};

GeodesicPath integrate_geodesic(const MetricField& g, const Vec& p, const Vec& v, double t_end,
                                const IntegratorSpec& spec = {}, bool estimate_error = false);

struct OrderMeasurement {
  double error_coarse = 0.0;  // |x_h - x_ref|
  double error_fine = 0.0;    // |x_{h/2} - x_ref|
  double ratio = 0.0;
  double order = 0.0;  // log2(ratio)
};

/// Realized convergence order of the endpoint against a reference run with
/// step reference_step.
OrderMeasurement measure_order(const MetricField& g, const Vec& p, const Vec& v, double t_end, double step,
                               double reference_step);

struct Shot {
  Vec point;
  Vec velocity;
};

struct InverseOptions {
  std::optional<Vec> guess;
  std::optional<double> tolerance;
  /// Starting Jacobian for quasi-Newton updates (e.g. from a neighbouring solve).
  std::optional<Mat> jacobian;
};

struct InverseResult {
  Vec v;
  double residual = 0.0;
  int iterations = 0;
  std::vector<double> history;
  Mat jacobian;
};

/// exp_p by geodesic shooting with a shot cache; exp_p(0) = p.
class ExponentialMap {
 public:
  ExponentialMap(MetricField g, Vec p, IntegratorSpec spec = {}, std::optional<double> shooting_tol = {});
  ExponentialMap(const ExponentialMap& other);

  const MetricField& metric() const { return g_; }
  const Vec& base() const { return p_; }
  const IntegratorSpec& integrator() const { return spec_; }
  double shooting_tolerance() const { return tol_; }

  /// End point and end velocity of the geodesic with initial velocity v at
  /// parameter 1. Throws DomainError if the geodesic leaves the chart.
  Shot shoot(const Vec& v) const;
  Vec exp(const Vec& v) const { return shoot(v).point; }

  /// Damped Newton on exp_p(v) = q with a forward-difference Jacobian
  /// (step 1e-6 |v|); the initial guess is the chart difference q - p.
  InverseResult inverse(const Vec& q, const InverseOptions& options = {}) const;

  /// Restricts inverse() to tangent vectors of norm <= r (the certified image).
  void restrict_to(double radius) { certified_radius_ = radius; }
  std::optional<double> certified_radius() const { return certified_radius_; }

 private:
  Mat fd_jacobian(const Vec& v, const Vec& fv) const;

  MetricField g_;
  Vec p_;
  IntegratorSpec spec_;
  double tol_;
  std::optional<double> certified_radius_;
  mutable std::mutex mutex_;
  mutable std::map<std::array<double, kMaxDim>, Shot> cache_;
};

/// Diagnostic only: max over sampled unit v of |exp_p(s v) - p - s v| / s.
/// Tends to 0 with s when d exp_p(0) is the identity.
double exp_difference_quotient_at_zero(const ExponentialMap& expmap, double s, const SamplerSpec& directions = {32, 3, false});

struct NormalRadiusSpec {
  double initial = 0.5;
  double floor = 1.0 / 1024.0;
  int max_doublings = 4;
  SamplerSpec samples{40, 11, false};
};

struct NormalNeighborhood {
  Vec p;
  double radius = 0.0;
  double lipschitz_forward = 0.0;
  double lipschitz_inverse = 0.0;
  double shooting_tol = 0.0;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  /// Radii tried in order and whether each passed.
  std::vector<std::pair<double, bool>> trials;
};

/// Largest tested tangent-ball radius on which sampled shots stay in the
/// chart, exp is sampled-injective, and shooting inverts every sampled target.
NormalNeighborhood normal_radius(const ExponentialMap& expmap, const NormalRadiusSpec& spec = {});

struct TotallyNormalSpec {
  double initial = 0.25;
  double floor = 1.0 / 1024.0;
  IntegratorSpec integrator;
  SamplerSpec targets{24, 17, false};
};

struct TotallyNormalBall {
  Vec p;
  double radius = 0.0;
  std::vector<Vec> probes;
  std::vector<NormalNeighborhood> certificates;
  double lipschitz_forward = 0.0;
  double lipschitz_inverse = 0.0;
};

/// Chart ball B around p such that every probe q in B (center and +-r/2 along
/// each axis) has a certified normal neighbourhood containing B.
TotallyNormalBall totally_normal_radius(const MetricField& g, const Vec& p, const TotallyNormalSpec& spec = {});

/// Largest chart distance from the ball centre reached by the shooting
/// geodesics joining all probe pairs, divided by the ball radius.
double geodesic_connectedness(const MetricField& g, const TotallyNormalBall& ball, const IntegratorSpec& spec = {});

struct GaussSpec {
  std::vector<double> t_grid{0.25, 0.5, 0.75, 1.0};
  std::vector<double> s_grid{-0.2, -0.1, 0.0, 0.1, 0.2};
  double s_step = 1e-3;
};

struct GaussPoint {
  double t = 0.0;
  double s = 0.0;
  double residual = 0.0;
};

struct GaussReport {
  Vec p, v, w;
  std::vector<GaussPoint> rows;
  double s_step = 0.0;
  double integrator_step = 0.0;
  double max_residual = 0.0;
};

/// Residual |g(f_t, f_s) - t g_p(v + s w, w)| for f(t,s) = exp_p(t (v + s w));
/// at (t, s) = (1, 0) this is |<T exp(v), T exp(w)> - <v, w>|.
GaussReport gauss_residual(const ExponentialMap& expmap, const Vec& v, const Vec& w, const GaussSpec& spec = {});

struct PositionData {
  Vec v;  // exp_p^{-1}(q)
  Vec P;  // velocity of the shooting geodesic at q
  double Q = 0.0;
};

PositionData position_field(const ExponentialMap& expmap, const Vec& q, const InverseOptions& options = {});
double world_function_Q(const ExponentialMap& expmap, const Vec& q);

struct GradQCheck {
  Vec grad;
  Vec two_p;
  double relative_error = 0.0;
};

/// Chart gradient of Q by central differences, index raised with g(q),
/// compared with 2P.
GradQCheck gradQ_check(const ExponentialMap& expmap, const Vec& q, double fd_step = 1e-4,
                       const RiemannianBackground& h = {});

struct ConvergenceRow {
  double epsilon = 0.0;
  double error_outer = 0.0;
  double error_inner = 0.0;
  double error = 0.0;           // max of the two
  double integrator_error = 0.0;  // largest step-halving estimate among the runs
};

/// C^1 distance on t_grid between the g-geodesic from (p, v) and the geodesics
/// of the inner and outer members of each pair. With match_norm the initial
/// velocity is rescaled to keep its squared norm under each approximating metric.
std::vector<ConvergenceRow> exp_convergence(const MetricField& g, const std::vector<ConeAdaptedPair>& family,
                                            const Vec& p, const Vec& v, const std::vector<double>& t_grid,
                                            const IntegratorSpec& spec = {}, bool match_norm = false,
                                            const RiemannianBackground& h = {});

}  // namespace lowreg
