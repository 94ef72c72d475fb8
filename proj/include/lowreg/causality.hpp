#pragma once

#include "lowreg/geodesics.hpp"
#include "lowreg/metric.hpp"
#include "lowreg/regularize.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace lowreg {

/// Sampled locally Lipschitz curve with tangents.
struct CausalCurve {
  std::vector<double> t;
  std::vector<Vec> x;
  std::vector<Vec> tangent;

  /// Tangents by central differences (one-sided at the ends).
  static CausalCurve from_points(std::vector<double> t, std::vector<Vec> x);
  /// Samples f (and its derivative df, if given) at n equally spaced parameters.
  static CausalCurve from_function(const std::function<Vec(double)>& f, double t0, double t1, std::size_t n,
                                   const std::function<Vec(double)>& df = {});

  std::size_t size() const { return t.size(); }
  /// max_k |x_{k+1} - x_k|_h / (t_{k+1} - t_k).
  double lipschitz_constant(const RiemannianBackground& h = {}) const;
  /// Linear interpolation of the samples at parameter s.
  Vec at(double s) const;
  /// Resampled at `grid` equally spaced fractions s in [0, 1] of h-arclength.
  CausalCurve arclength_reparametrized(std::size_t grid, const RiemannianBackground& h = {}) const;
};

/// Future-directed g(p)-null vector (a, spatial) with spatial part given
/// (time axis 0).
Vec future_null_vector(const MetricField& g, const Vec& p, const Vec& spatial);

enum class CurveClass { Timelike, Causal, Null, NonCausal };
std::string_view to_string(CurveClass c);

struct CurveClassification {
  CurveClass kind = CurveClass::NonCausal;
  TimeDirection direction = TimeDirection::None;
  /// First sample that broke the class (size() if none).
  std::size_t failing_sample = 0;
  /// Largest normalized g(a', a') / |a'|_h^2 over samples.
  double worst_value = 0.0;
};

/// Conjunction of pointwise classifications; a single spacelike or zero
/// tangent, or a change of time direction, yields NonCausal.
CurveClassification classify_curve(const MetricField& g, const CausalCurve& curve, double tol,
                                   const RiemannianBackground& h = {});

enum class Relation { InIPlus, InJPlusOnly, Outside };
std::string_view to_string(Relation r);

struct RelationCertificate {
  Relation verdict = Relation::Outside;
  Vec v;                     // exp_p^{-1}(q)
  double q_tilde = 0.0;      // g_p(v, v)
  double normalized = 0.0;   // g_p(v, v) / |v|_h^2
  TimeDirection direction = TimeDirection::None;
  /// p == q: p is in J+(p) by the reflexive convention.
  bool reflexive = false;
  double tol = 0.0;
  double shooting_residual = 0.0;
};

/// Future relation of q to the base point of expmap via v = exp_p^{-1}(q).
RelationCertificate relate(const ExponentialMap& expmap, const Vec& q, double tol = 1e-6,
                           const InverseOptions& options = {}, const RiemannianBackground& h = {});
inline bool in_I_plus(const RelationCertificate& c) { return c.verdict == Relation::InIPlus; }
inline bool in_J_plus(const RelationCertificate& c) { return c.verdict != Relation::Outside; }

/// Arrow pq = exp_p^{-1}(q).
Vec arrow(const ExponentialMap& expmap, const Vec& q);

/// max |pq - p'q'| / (|p - p'| + |q - q'|) over perturbed pairs.
/// Each endpoint is perturbed once along its own Halton direction of size delta.
double arrow_continuity(const MetricField& g, const std::vector<std::pair<Vec, Vec>>& pairs, double delta,
                        std::uint64_t seed, const IntegratorSpec& spec = {});

struct BrokenGeodesic {
  std::vector<Vec> nodes;
  std::vector<Vec> velocities;  // initial velocity of each leg
  std::vector<CausalCurve> legs;
  std::vector<CurveClassification> leg_classes;
};

/// Re-integrates every leg and re-classifies it; true iff all legs have the
/// required class (Timelike or Causal) and are future directed.
bool verify_broken_geodesic(const MetricField& g, const BrokenGeodesic& path, CurveClass required, double tol,
                            const IntegratorSpec& spec = {});

struct OracleSpec {
  int branching = 5;
  int max_legs = 6;
  int beam = 5;
  /// Null band for leg classification; kept below the relation tolerance so
  /// that the band excluded from comparisons dominates leg-shape effects.
  double tol = 2.5e-7;
  /// Legs are steered into {g(v,v) <= -cone_margin |v|_h^2}.
  double cone_margin = 0.05;
  IntegratorSpec integrator;
};

/// Curve-construction oracle: beam search over broken geodesics from p whose
/// legs are steered between the chord to q and the future time axis, closing
/// each node to q by shooting. Returns a witness with all legs of the
/// required class, or nothing.
std::optional<BrokenGeodesic> broken_geodesic_search(const MetricField& g, const Vec& p, const Vec& q,
                                                     CurveClass required, const OracleSpec& spec = {});

struct PushUpResult {
  BrokenGeodesic witness;
  /// Parameter along the q -> r leg where the witness joins it (0 means the
  /// direct radial geodesic p -> r was already timelike).
  double join_parameter = 0.0;
};

/// Given p <= q and q << r, builds a verified timelike broken geodesic p -> r.
PushUpResult push_up(const MetricField& g, const Vec& p, const Vec& q, const Vec& r, double tol = 1e-6,
                     const IntegratorSpec& spec = {});

/// Replaces a curve by a broken geodesic through a subset of its samples,
/// refining until every leg keeps the curve's class.
BrokenGeodesic broken_geodesic_approx(const MetricField& g, const CausalCurve& curve, double tol = 1e-6,
                                      const IntegratorSpec& spec = {}, int max_refinements = 8);

enum class BoundaryVerdict { OnBoundary, NotOnBoundary };
std::string_view to_string(BoundaryVerdict v);

struct BoundaryNullReport {
  BoundaryVerdict verdict = BoundaryVerdict::NotOnBoundary;
  std::vector<double> normalized_q;  // g_p(beta, beta) / |beta|^2 per sample
  double max_collinearity = 0.0;     // max |beta' - f beta| / |beta'|
  std::vector<double> sigma;         // affine parameter per sample
  Vec null_vector;                   // end tangent vector v*
  double sup_distance = 0.0;         // vs. the directly integrated null geodesic
  bool matches_geodesic = false;     // sup_distance < distance_tol
  std::size_t first_interior_sample = 0;
};

struct BoundaryNullSpec {
  double null_tol = 1e-6;
  double collinearity_tol = 1e-4;
  double exclude_fraction = 0.05;
  double distance_tol = 1e-6;
  /// Step of the directly integrated comparison geodesic.
  double reference_step = 1.0 / 2048.0;
};

/// Pulls back a causal curve from p through exp_p^{-1}, checks that it stays
/// on the null cone and is radial, and compares its affine reparametrization
/// with the null geodesic.
BoundaryNullReport boundary_null_check(const ExponentialMap& expmap, const CausalCurve& curve,
                                       const BoundaryNullSpec& spec = {});

struct CylinderSpec {
  double half_width = 0.5;
  int max_halvings = 16;
  SamplerSpec points{200, 5, true};
  std::size_t directions = 64;
};

struct CylindricalNeighborhood {
  Vec p;
  /// Chart point x = p + frame * y in the new coordinates y.
  Mat frame;
  double half_width = 0.0;
  double frame_error = 0.0;  // max |frame^T g(p) frame - eta|
  double min_slope = 0.0;
  double max_slope = 0.0;
  int halvings = 0;
};

/// |v^0| / |spatial v| for the two null vectors of g(q) (in frame
/// coordinates) with the given spatial direction.
std::pair<double, double> null_slopes(const Mat& g_frame, const Vec& spatial_direction);

CylindricalNeighborhood cylindrical_neighborhood(const MetricField& g, const Vec& p, const CylinderSpec& spec = {});

struct LuTimelikeResult {
  bool success = false;
  double epsilon = 0.0;
  std::size_t index = 0;
  /// Largest inner(a', a') / |a'|_h^2 under the accepted member (or the last tried).
  double worst_value = 0.0;
};

/// Scans the family by decreasing epsilon and returns the first inner metric
/// for which every tangent sample is strictly timelike.
LuTimelikeResult lu_timelike_check(const CausalCurve& curve, const std::vector<ConeAdaptedPair>& family,
                                   const RiemannianBackground& h = {});

struct RasterSpec {
  ChartDomain box;  // 2D raster box
  std::size_t cells = 200;
  double tol = 1e-6;
  IntegratorSpec integrator{1.0 / 32.0, 2, 1u << 22};
};

struct PlainnessRow {
  double epsilon = 0.0;
  double gap_cells = 0.0;
  std::size_t inner_cells = 0;
  std::size_t boundary_cells = 0;
};

struct PlainnessReport {
  std::size_t cells = 0;
  std::size_t j_plus_cells = 0;
  std::vector<PlainnessRow> rows;
  std::vector<unsigned char> j_plus_mask;  // row-major, index = i * cells + j (i: axis 0)
  std::vector<std::vector<unsigned char>> inner_masks;
};

/// Membership raster of J+(p) under g and I+(p) under each inner metric.
std::vector<unsigned char> relation_raster(const MetricField& g, const Vec& p, const RasterSpec& spec, bool timelike);

/// Hausdorff distance in cell units between the internal boundaries of two masks.
double boundary_gap(const std::vector<unsigned char>& a, const std::vector<unsigned char>& b, std::size_t cells);

PlainnessReport causal_plainness_probe(const MetricField& g, const Vec& p,
                                       const std::vector<ConeAdaptedPair>& family, const RasterSpec& spec);

struct ContinuousCausalSpec {
  double tol = 1e-6;
  double radius = 0.25;  // chart radius of the neighbourhood checked around each sample
  IntegratorSpec integrator;
};

struct ContinuousCausalReport {
  bool passed = false;
  std::size_t failing_sample = 0;
  double lipschitz = 0.0;
  std::size_t relations_checked = 0;
};

/// Checks that samples after (before) each sample within its neighbourhood
/// lie in its causal future (past).
ContinuousCausalReport continuous_causal_check(const MetricField& g, const CausalCurve& curve,
                                               const ContinuousCausalSpec& spec = {});

struct AccumulationSpec {
  double tol = 1e-3;
  std::size_t grid = 201;
  int max_rounds = 20;
  double classify_tol = 1e-3;
};

struct AccumulationResult {
  CausalCurve limit;
  std::vector<std::size_t> subsequence;
  /// Sup distance between the limit and the last member of the subsequence.
  double tail_distance = 0.0;
  /// Sup distance between two extrapolations from shifted member triples.
  double error_estimate = 0.0;
  bool converged = false;
  CurveClassification classification;
  int rounds = 0;
};

/// Accumulation curve of a sequence of causal curves starting near p.
AccumulationResult accumulation_curve(const MetricField& g, const std::vector<CausalCurve>& curves, const Vec& p,
                                      const AccumulationSpec& spec = {}, const RiemannianBackground& h = {});

}  // namespace lowreg
