#include "lowreg/causality.hpp"

#include "lowreg/parallel.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace lowreg {

std::string_view to_string(CurveClass c) {
  switch (c) {
    case CurveClass::Timelike: return "Timelike";
    case CurveClass::Causal: return "Causal";
    case CurveClass::Null: return "Null";
    case CurveClass::NonCausal: return "NonCausal";
  }
  return "?";
}

std::string_view to_string(Relation r) {
  switch (r) {
    case Relation::InIPlus: return "InIPlus";
    case Relation::InJPlusOnly: return "InJPlusOnly";
    case Relation::Outside: return "Outside";
  }
  return "?";
}

std::string_view to_string(BoundaryVerdict v) {
  return v == BoundaryVerdict::OnBoundary ? "OnBoundary" : "NotOnBoundary";
}

// ---------------------------------------------------------------- curves

CausalCurve CausalCurve::from_points(std::vector<double> t, std::vector<Vec> x) {
  if (t.size() != x.size()) throw ConfigError("curve parameter and point counts differ");
  for (std::size_t k = 1; k < t.size(); ++k) {
    if (!(t[k] > t[k - 1])) throw ConfigError("curve parameters must be strictly increasing");
  }
  CausalCurve c;
  c.t = std::move(t);
  c.x = std::move(x);
  const std::size_t n = c.t.size();
  c.tangent.resize(n);
  if (n < 2) {
    if (n == 1) c.tangent[0] = Vec::Zero(c.x[0].size());
    return c;
  }
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t a = k == 0 ? 0 : k - 1;
    const std::size_t b = k + 1 == n ? k : k + 1;
    c.tangent[k] = (c.x[b] - c.x[a]) / (c.t[b] - c.t[a]);
  }
  return c;
}

CausalCurve CausalCurve::from_function(const std::function<Vec(double)>& f, double t0, double t1, std::size_t n,
                                       const std::function<Vec(double)>& df) {
  if (n < 2 || !(t1 > t0)) throw ConfigError("curve sampling needs n >= 2 and t1 > t0");
  std::vector<double> t(n);
  std::vector<Vec> x(n);
  for (std::size_t k = 0; k < n; ++k) {
    t[k] = k + 1 == n ? t1 : t0 + (t1 - t0) * static_cast<double>(k) / static_cast<double>(n - 1);
    x[k] = f(t[k]);
  }
  if (!df) return from_points(std::move(t), std::move(x));
  CausalCurve c;
  c.t = std::move(t);
  c.x = std::move(x);
  c.tangent.resize(n);
  for (std::size_t k = 0; k < n; ++k) c.tangent[k] = df(c.t[k]);
  return c;
}

double CausalCurve::lipschitz_constant(const RiemannianBackground& h) const {
  double L = 0.0;
  for (std::size_t k = 1; k < t.size(); ++k) {
    const Vec mid = 0.5 * (x[k] + x[k - 1]);
    L = std::max(L, h.norm(mid, x[k] - x[k - 1]) / (t[k] - t[k - 1]));
  }
  return L;
}

Vec CausalCurve::at(double s) const {
  if (t.empty()) throw ConfigError("empty curve");
  const double slack = 1e-12 * std::max(1.0, std::abs(t.back() - t.front()));
  if (s < t.front() - slack || s > t.back() + slack) throw DomainError("parameter outside the curve range");
  if (s <= t.front()) return x.front();
  if (s >= t.back()) return x.back();
  const auto it = std::upper_bound(t.begin(), t.end(), s);
  const std::size_t k = static_cast<std::size_t>(it - t.begin());
  const double u = (s - t[k - 1]) / (t[k] - t[k - 1]);
  return (1.0 - u) * x[k - 1] + u * x[k];
}

Vec future_null_vector(const MetricField& g, const Vec& p, const Vec& spatial) {
  const int n = g.dim();
  if (spatial.size() != n - 1 || spatial.norm() == 0.0) throw ConfigError("null vector needs a nonzero spatial part");
  const Mat G = g.at(p);
  Vec e = Vec::Zero(n);
  e.tail(n - 1) = spatial;
  const double A = G(0, 0);
  const double B = G.row(0).dot(e);
  const double C = e.dot(G * e);
  const double disc = B * B - A * C;
  if (!(A < 0) || disc < 0) throw NumericalError("time axis is not timelike at the base point");
  const Vec X = g.time_orientation(p);
  for (double sign : {1.0, -1.0}) {
    Vec v = e;
    v(0) = (-B + sign * std::sqrt(disc)) / A;
    if (v.dot(G * X) < 0) return v;
  }
  throw NumericalError("no future-directed null vector with the given spatial part");
}

CurveClassification classify_curve(const MetricField& g, const CausalCurve& curve, double tol,
                                   const RiemannianBackground& h) {
  if (curve.size() < 2) throw ConfigError("curve classification needs at least 2 samples");
  if (curve.tangent.size() != curve.size()) throw ConfigError("curve tangents missing");
  if (!(tol > 0)) throw ConfigError("classification tolerance must be positive");
  CurveClassification out;
  out.failing_sample = curve.size();
  out.worst_value = -std::numeric_limits<double>::infinity();
  bool all_timelike = true;
  bool all_null = true;
  TimeDirection dir = TimeDirection::None;
  for (std::size_t k = 0; k < curve.size(); ++k) {
    const Vec& x = curve.x[k];
    const CausalCharacter c = classify_vector(g.at(x), g.time_orientation(x), h.at(x), curve.tangent[k], tol);
    out.worst_value = std::max(out.worst_value, c.normalized_value);
    const bool broken = c.kind == CausalClass::Spacelike || c.kind == CausalClass::ZeroVector ||
                        (k > 0 && c.direction != dir);
    if (k == 0) dir = c.direction;
    if (broken) {
      out.kind = CurveClass::NonCausal;
      out.direction = TimeDirection::None;
      out.failing_sample = k;
      return out;
    }
    all_timelike = all_timelike && c.kind == CausalClass::Timelike;
    all_null = all_null && c.kind == CausalClass::Null;
  }
  out.kind = all_timelike ? CurveClass::Timelike : all_null ? CurveClass::Null : CurveClass::Causal;
  out.direction = dir;
  return out;
}

// ---------------------------------------------------------------- relations

namespace {

struct RelationSolve {
  RelationCertificate cert;
  Mat jacobian;
};

RelationSolve relate_impl(const ExponentialMap& em, const Vec& q, double tol, const InverseOptions& options,
                          const RiemannianBackground& h) {
  if (!(tol > 0)) throw ConfigError("relation tolerance must be positive");
  RelationSolve out;
  RelationCertificate& c = out.cert;
  c.tol = tol;
  const Vec& p = em.base();
  const MetricField& g = em.metric();
  if ((q - p).norm() <= 1e-14 * std::max(1.0, p.norm())) {
    c.verdict = Relation::InJPlusOnly;
    c.reflexive = true;
    c.v = Vec::Zero(p.size());
    return out;
  }
  const InverseResult inv = em.inverse(q, options);
  out.jacobian = inv.jacobian;
  c.v = inv.v;
  c.shooting_residual = inv.residual;
  const Mat gp = g.at(p);
  c.q_tilde = c.v.dot(gp * c.v);
  const CausalCharacter ch = classify_vector(gp, g.time_orientation(p), h.at(p), c.v, tol);
  c.normalized = ch.normalized_value;
  c.direction = ch.direction;
  if (ch.direction == TimeDirection::Future && ch.kind == CausalClass::Timelike) {
    c.verdict = Relation::InIPlus;
  } else if (ch.direction == TimeDirection::Future && ch.kind == CausalClass::Null) {
    c.verdict = Relation::InJPlusOnly;
  } else {
    c.verdict = Relation::Outside;
  }
  return out;
}

bool accepts(CurveClass required, CurveClass got) {
  switch (required) {
    case CurveClass::Timelike: return got == CurveClass::Timelike;
    case CurveClass::Null: return got == CurveClass::Null;
    case CurveClass::Causal: return got != CurveClass::NonCausal;
    case CurveClass::NonCausal: return true;
  }
  return false;
}

CausalCurve curve_of(const GeodesicPath& path) {
  CausalCurve c;
  c.t = path.t;
  c.x = path.x;
  c.tangent = path.v;
  return c;
}

struct Leg {
  Vec v;
  CausalCurve curve;
  CurveClassification cls;
};

// Radial geodesic a -> b, re-integrated from the shooting solution.
std::optional<Leg> radial_leg(const MetricField& g, const Vec& a, const Vec& b, const IntegratorSpec& spec, double tol,
                              const InverseOptions& options = {}) {
  try {
    const ExponentialMap em(g, a, spec);
    const InverseResult inv = em.inverse(b, options);
    const GeodesicPath path = integrate_geodesic(g, a, inv.v, 1.0, spec);
    if (path.truncated) return std::nullopt;
    Leg leg{inv.v, curve_of(path), {}};
    leg.cls = classify_curve(g, leg.curve, tol);
    return leg;
  } catch (const DomainError&) {
    return std::nullopt;
  } catch (const NumericalError&) {
    return std::nullopt;
  }
}

bool leg_ok(const Leg& leg, CurveClass required) {
  return accepts(required, leg.cls.kind) && leg.cls.direction == TimeDirection::Future;
}

void append_leg(BrokenGeodesic& path, const Vec& to, Leg leg) {
  path.nodes.push_back(to);
  path.velocities.push_back(leg.v);
  path.leg_classes.push_back(leg.cls);
  path.legs.push_back(std::move(leg.curve));
}

}  // namespace

RelationCertificate relate(const ExponentialMap& expmap, const Vec& q, double tol, const InverseOptions& options,
                           const RiemannianBackground& h) {
  return relate_impl(expmap, q, tol, options, h).cert;
}

Vec arrow(const ExponentialMap& expmap, const Vec& q) {
  if ((q - expmap.base()).norm() == 0.0) return Vec::Zero(q.size());
  return expmap.inverse(q).v;
}

double arrow_continuity(const MetricField& g, const std::vector<std::pair<Vec, Vec>>& pairs, double delta,
                        std::uint64_t seed, const IntegratorSpec& spec) {
  if (!(delta > 0)) throw ConfigError("perturbation size must be positive");
  if (pairs.empty()) return 0.0;
  const int n = g.dim();
  const auto dirs_p = sample_directions(n, SamplerSpec{pairs.size(), derive_seed(seed, "arrow-p"), false});
  const auto dirs_q = sample_directions(n, SamplerSpec{pairs.size(), derive_seed(seed, "arrow-q"), false});
  std::vector<double> ratio(pairs.size(), 0.0);
  parallel_for(pairs.size(), [&](std::size_t i) {
    const auto& [p, q] = pairs[i];
    const Vec dp = delta * dirs_p[i];
    const Vec dq = delta * dirs_q[i];
    const Vec a = arrow(ExponentialMap(g, p, spec), q);
    const ExponentialMap em2(g, p + dp, spec);
    InverseOptions opt;
    opt.guess = a;
    const Vec b = em2.inverse(q + dq, opt).v;
    ratio[i] = (a - b).norm() / (dp.norm() + dq.norm());
  });
  return *std::max_element(ratio.begin(), ratio.end());
}

// ---------------------------------------------------------------- broken geodesics

bool verify_broken_geodesic(const MetricField& g, const BrokenGeodesic& path, CurveClass required, double tol,
                            const IntegratorSpec& spec) {
  if (path.nodes.size() < 2 || path.velocities.size() + 1 != path.nodes.size()) return false;
  for (std::size_t k = 0; k + 1 < path.nodes.size(); ++k) {
    const GeodesicPath leg = integrate_geodesic(g, path.nodes[k], path.velocities[k], 1.0, spec);
    if (leg.truncated) return false;
    const Vec& target = path.nodes[k + 1];
    if ((leg.end_point() - target).norm() > 1e-5 * std::max(1.0, target.norm())) return false;
    const CurveClassification cls = classify_curve(g, curve_of(leg), tol);
    if (!accepts(required, cls.kind) || cls.direction != TimeDirection::Future) return false;
  }
  return true;
}

std::optional<BrokenGeodesic> broken_geodesic_search(const MetricField& g, const Vec& p, const Vec& q,
                                                     CurveClass required, const OracleSpec& spec) {
  if (required != CurveClass::Timelike && required != CurveClass::Causal)
    throw ConfigError("search class must be Timelike or Causal");
  if (spec.branching < 1 || spec.max_legs < 1 || spec.beam < 1) throw ConfigError("invalid oracle limits");

  struct Node {
    BrokenGeodesic path;
    double score = 0.0;
  };
  std::vector<Node> beam(1);
  beam[0].path.nodes.push_back(p);

  for (int depth = 0; depth < spec.max_legs; ++depth) {
    for (const Node& node : beam) {
      const Vec& x = node.path.nodes.back();
      if (auto leg = radial_leg(g, x, q, spec.integrator, spec.tol); leg && leg_ok(*leg, required)) {
        BrokenGeodesic out = node.path;
        append_leg(out, q, std::move(*leg));
        out.nodes.back() = q;
        return out;
      }
    }
    if (depth + 1 == spec.max_legs) break;

    std::vector<Node> children;
    for (const Node& node : beam) {
      const Vec& x = node.path.nodes.back();
      const Vec chord = q - x;
      const double L = 0.5 * chord.norm();
      if (!(L > 0)) continue;
      const Mat G = g.at(x);
      const Mat H = Mat::Identity(x.size(), x.size());
      const Vec axis = future_axis(G, H, g.time_orientation(x));
      const Vec inside = project_to_cone(G, H, axis, chord, -spec.cone_margin);
      for (int b = 0; b < spec.branching; ++b) {
        const double s = spec.branching == 1 ? 0.0 : static_cast<double>(b) / static_cast<double>(spec.branching);
        Vec u = (1.0 - s) * inside + s * axis.normalized();
        u.normalize();
        const Vec v = L * u;
        GeodesicPath path;
        try {
          path = integrate_geodesic(g, x, v, 1.0, spec.integrator);
        } catch (const DomainError&) {
          continue;
        }
        if (path.truncated) continue;
        Leg leg{v, curve_of(path), {}};
        leg.cls = classify_curve(g, leg.curve, spec.tol);
        if (!leg_ok(leg, CurveClass::Timelike)) continue;
        Node child{node.path, 0.0};
        const Vec y = path.end_point();
        append_leg(child.path, y, std::move(leg));
        const Vec rest = q - y;
        const double r2 = rest.squaredNorm();
        child.score = r2 > 0 ? rest.dot(g.at(y) * rest) / r2 : -1.0;
        children.push_back(std::move(child));
      }
    }
    if (children.empty()) break;
    std::stable_sort(children.begin(), children.end(),
                     [](const Node& a, const Node& b) { return a.score < b.score; });
    if (children.size() > static_cast<std::size_t>(spec.beam)) children.resize(static_cast<std::size_t>(spec.beam));
    beam = std::move(children);
  }
  return std::nullopt;
}

PushUpResult push_up(const MetricField& g, const Vec& p, const Vec& q, const Vec& r, double tol,
                     const IntegratorSpec& spec) {
  PushUpResult out;
  out.witness.nodes.push_back(p);
  if (auto leg = radial_leg(g, p, r, spec, tol); leg && leg_ok(*leg, CurveClass::Timelike)) {
    append_leg(out.witness, r, std::move(*leg));
    return out;
  }
  // Join the timelike q -> r geodesic part way and finish along it.
  const auto qr = radial_leg(g, q, r, spec, tol);
  if (!qr || !leg_ok(*qr, CurveClass::Timelike))
    throw NumericalError("push_up: the q -> r leg does not verify as timelike");
  std::string failure = "direct leg p -> r is not timelike";
  for (int k = 1; k < 16; ++k) {
    const double s = 1.0 - std::ldexp(1.0, -k);
    const GeodesicPath arc = integrate_geodesic(g, q, qr->v, s, spec);
    if (arc.truncated) continue;
    const Vec m = arc.end_point();
    auto first = radial_leg(g, p, m, spec, tol);
    if (!first || !leg_ok(*first, CurveClass::Timelike)) {
      failure = "leg p -> q(s) not timelike at s = " + std::to_string(s);
      continue;
    }
    auto second = radial_leg(g, m, r, spec, tol);
    if (!second || !leg_ok(*second, CurveClass::Timelike)) {
      failure = "leg q(s) -> r not timelike at s = " + std::to_string(s);
      continue;
    }
    append_leg(out.witness, m, std::move(*first));
    append_leg(out.witness, r, std::move(*second));
    out.join_parameter = s;
    return out;
  }
  throw NumericalError("push_up failed: " + failure);
}

BrokenGeodesic broken_geodesic_approx(const MetricField& g, const CausalCurve& curve, double tol,
                                      const IntegratorSpec& spec, int max_refinements) {
  const CurveClassification cls = classify_curve(g, curve, tol);
  if (cls.kind == CurveClass::NonCausal || cls.direction != TimeDirection::Future)
    throw ConfigError("broken_geodesic_approx needs a future-directed causal curve");
  const std::size_t n = curve.size();
  std::size_t stride = n - 1;
  for (int round = 0; round <= max_refinements; ++round) {
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < n - 1; k += stride) idx.push_back(k);
    idx.push_back(n - 1);
    BrokenGeodesic out;
    out.nodes.push_back(curve.x.front());
    bool ok = true;
    for (std::size_t k = 0; k + 1 < idx.size() && ok; ++k) {
      auto leg = radial_leg(g, curve.x[idx[k]], curve.x[idx[k + 1]], spec, tol);
      ok = leg && leg_ok(*leg, cls.kind);
      if (ok) append_leg(out, curve.x[idx[k + 1]], std::move(*leg));
    }
    if (ok) return out;
    if (stride == 1) break;
    stride = std::max<std::size_t>(1, stride / 2);
  }
  throw NumericalError("broken_geodesic_approx: subdivision floor reached without a class-preserving approximation");
}

// ---------------------------------------------------------------- boundary null check

BoundaryNullReport boundary_null_check(const ExponentialMap& expmap, const CausalCurve& curve,
                                       const BoundaryNullSpec& spec) {
  const std::size_t n = curve.size();
  if (n < 3) throw ConfigError("boundary_null_check needs at least 3 samples");
  const Vec& p = expmap.base();
  const MetricField& g = expmap.metric();
  if ((curve.x.front() - p).norm() > 1e-9 * std::max(1.0, p.norm()))
    throw ConfigError("boundary_null_check: curve must start at the base point");

  BoundaryNullReport out;
  const Mat gp = g.at(p);
  const double t0 = curve.t.front();
  const double t_max = curve.t.back() - t0;

  std::vector<Vec> beta(n, Vec::Zero(p.size()));
  InverseOptions opt;
  for (std::size_t k = 1; k < n; ++k) {
    // Q and f are normalized by |beta|^2, so the shooting residual must
    // shrink with the distance to p.
    opt.tolerance = std::max(1e-14, std::min(expmap.shooting_tolerance(), 1e-4 * spec.null_tol * (curve.x[k] - p).norm()));
    const InverseResult inv = expmap.inverse(curve.x[k], opt);
    beta[k] = inv.v;
    opt.guess = inv.v;
    opt.jacobian = inv.jacobian;
  }

  out.first_interior_sample = n;
  bool on_cone = true;
  for (std::size_t k = 1; k < n; ++k) {
    if (curve.t[k] - t0 < spec.exclude_fraction * t_max) continue;
    if (out.first_interior_sample == n) out.first_interior_sample = k;
    const double q = beta[k].dot(gp * beta[k]) / beta[k].squaredNorm();
    out.normalized_q.push_back(q);
    if (std::abs(q) > spec.null_tol) on_cone = false;

    const std::size_t a = k - 1;
    const std::size_t b = k + 1 == n ? k : k + 1;
    const Vec dbeta = (beta[b] - beta[a]) / (curve.t[b] - curve.t[a]);
    const double f = dbeta.dot(beta[k]) / beta[k].squaredNorm();
    const double dn = dbeta.norm();
    if (dn > 0) out.max_collinearity = std::max(out.max_collinearity, (dbeta - f * beta[k]).norm() / dn);
  }

  out.null_vector = beta.back();
  const double vn2 = out.null_vector.squaredNorm();
  IntegratorSpec ref = expmap.integrator();
  ref.step = spec.reference_step;
  const GeodesicPath geo = integrate_geodesic(g, p, out.null_vector, 1.0, ref);
  if (geo.truncated) throw DomainError("reference null geodesic leaves the chart");
  out.sigma.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    out.sigma[k] = std::clamp(beta[k].dot(out.null_vector) / vn2, 0.0, 1.0);
    out.sup_distance = std::max(out.sup_distance, (geo.point_at(out.sigma[k]) - curve.x[k]).norm());
  }
  out.matches_geodesic = out.sup_distance < spec.distance_tol;
  const bool radial = out.max_collinearity < spec.collinearity_tol;
  out.verdict = on_cone && radial ? BoundaryVerdict::OnBoundary : BoundaryVerdict::NotOnBoundary;
  return out;
}

// ---------------------------------------------------------------- cylindrical neighbourhoods

std::pair<double, double> null_slopes(const Mat& G, const Vec& d) {
  const int n = static_cast<int>(G.rows());
  Vec e = Vec::Zero(n);
  e.tail(n - 1) = d;
  // G00 a^2 + 2 b a + c = 0 for v = (a, d).
  const double A = G(0, 0);
  const double B = G.row(0).dot(e);
  const double C = e.dot(G * e);
  const double disc = B * B - A * C;
  if (!(A < 0) || disc < 0) return {0.0, std::numeric_limits<double>::infinity()};
  const double sq = std::sqrt(disc);
  const double dn = d.norm();
  const double r1 = std::abs((-B + sq) / A) / dn;
  const double r2 = std::abs((-B - sq) / A) / dn;
  return {std::min(r1, r2), std::max(r1, r2)};
}

CylindricalNeighborhood cylindrical_neighborhood(const MetricField& g, const Vec& p, const CylinderSpec& spec) {
  if (!g.domain().contains(p)) throw DomainError("cylinder centre outside the chart");
  const int n = g.dim();
  const Mat G = g.at(p);
  Eigen::SelfAdjointEigenSolver<Mat> es(G);
  const Vec ev = es.eigenvalues();
  const Mat E = es.eigenvectors();
  if (!(ev(0) < 0) || !(ev(1) > 0)) throw NumericalError("metric at the cylinder centre is not Lorentzian");

  CylindricalNeighborhood out;
  out.p = p;
  out.frame = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i) out.frame.col(i) = E.col(i) / std::sqrt(std::abs(ev(i)));
  if (out.frame.col(0).dot(G * g.time_orientation(p)) > 0) out.frame.col(0) *= -1.0;
  Mat eta = Mat::Identity(n, n);
  eta(0, 0) = -1.0;
  out.frame_error = (out.frame.transpose() * G * out.frame - eta).cwiseAbs().maxCoeff();

  std::vector<Vec> dirs;
  if (n == 2) {
    dirs = {make_vec({1.0}), make_vec({-1.0})};
  } else {
    dirs = sample_directions(n - 1, SamplerSpec{spec.directions, derive_seed(spec.points.seed, "cyl-dirs"), false});
    for (int i = 0; i < n - 1; ++i) dirs.push_back(unit_vector(n - 1, i));
  }

  double w = spec.half_width;
  for (int halvings = 0; halvings <= spec.max_halvings; ++halvings, w *= 0.5) {
    const ChartDomain ybox = ChartDomain::cube(n, w);
    bool corners_in = true;
    for (unsigned mask = 0; mask < (1u << n) && corners_in; ++mask) {
      Vec y(n);
      for (int i = 0; i < n; ++i) y(i) = (mask >> i) & 1u ? w : -w;
      corners_in = g.domain().contains(p + out.frame * y);
    }
    if (!corners_in) continue;
    SamplerSpec ps = spec.points;
    ps.include_corners = true;
    std::vector<Vec> ys = sample_points(ybox, ps);
    ys.push_back(Vec::Zero(n));
    double lo = std::numeric_limits<double>::infinity();
    double hi = 0.0;
    bool ok = true;
    for (const Vec& y : ys) {
      const Mat Gf = out.frame.transpose() * g.at(p + out.frame * y) * out.frame;
      if (!(Gf(0, 0) < 0)) ok = false;
      for (int i = 1; i < n && ok; ++i) ok = Gf(i, i) > 0;
      for (const Vec& d : dirs) {
        if (!ok) break;
        const auto [a, b] = null_slopes(Gf, d);
        lo = std::min(lo, a);
        hi = std::max(hi, b);
        ok = a > 0.5 && b < 2.0;
      }
      if (!ok) break;
    }
    if (!ok) continue;
    out.half_width = w;
    out.min_slope = lo;
    out.max_slope = hi;
    out.halvings = halvings;
    return out;
  }
  throw NumericalError("cylindrical_neighborhood: halving floor reached");
}

// ---------------------------------------------------------------- l.u.-timelike

LuTimelikeResult lu_timelike_check(const CausalCurve& curve, const std::vector<ConeAdaptedPair>& family,
                                   const RiemannianBackground& h) {
  if (curve.size() < 2) throw ConfigError("curve needs at least 2 samples");
  std::vector<std::size_t> order(family.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return family[a].epsilon > family[b].epsilon; });
  LuTimelikeResult out;
  for (std::size_t i : order) {
    const MetricField& inner = family[i].inner;
    double worst = -std::numeric_limits<double>::infinity();
    bool ok = true;
    for (std::size_t k = 0; k < curve.size() && ok; ++k) {
      if (!inner.domain().contains(curve.x[k])) {
        ok = false;
        break;
      }
      const Vec& a = curve.tangent[k];
      const double n2 = h.norm2(curve.x[k], a);
      const double val = n2 > 0 ? a.dot(inner.at(curve.x[k]) * a) / n2 : 0.0;
      worst = std::max(worst, val);
      ok = val < 0;
    }
    out.epsilon = family[i].epsilon;
    out.index = i;
    out.worst_value = worst;
    if (ok) {
      out.success = true;
      return out;
    }
  }
  out.success = false;
  return out;
}

// ---------------------------------------------------------------- plainness probe

std::vector<unsigned char> relation_raster(const MetricField& g, const Vec& p, const RasterSpec& spec, bool timelike) {
  if (g.dim() != 2 || spec.box.dim() != 2) throw ConfigError("relation rasters are two-dimensional");
  if (spec.cells < 2) throw ConfigError("raster needs at least 2 cells per side");
  const std::size_t N = spec.cells;
  const Vec lo = spec.box.lower();
  const Vec hi = spec.box.upper();
  const double dt = (hi(0) - lo(0)) / static_cast<double>(N);
  const double dx = (hi(1) - lo(1)) / static_cast<double>(N);
  const ExponentialMap em(g, p, spec.integrator);
  std::vector<unsigned char> mask(N * N, 0);
  parallel_for(N, [&](std::size_t i) {
    InverseOptions opt;
    for (std::size_t j = 0; j < N; ++j) {
      const Vec q = make_vec({lo(0) + (static_cast<double>(i) + 0.5) * dt, lo(1) + (static_cast<double>(j) + 0.5) * dx});
      RelationSolve r;
      try {
        r = relate_impl(em, q, spec.tol, opt, {});
      } catch (const NumericalError&) {
        r = relate_impl(em, q, spec.tol, {}, {});
      }
      if (r.cert.reflexive) {
        opt = {};
      } else {
        opt.guess = r.cert.v;
        opt.jacobian = r.jacobian;
      }
      mask[i * N + j] = timelike ? in_I_plus(r.cert) : in_J_plus(r.cert);
    }
  });
  return mask;
}

namespace {

std::vector<std::pair<int, int>> internal_boundary(const std::vector<unsigned char>& m, std::size_t cells) {
  const int N = static_cast<int>(cells);
  std::vector<std::pair<int, int>> out;
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j) {
      if (!m[static_cast<std::size_t>(i * N + j)]) continue;
      const int di[4] = {1, -1, 0, 0};
      const int dj[4] = {0, 0, 1, -1};
      for (int k = 0; k < 4; ++k) {
        const int a = i + di[k];
        const int b = j + dj[k];
        if (a < 0 || b < 0 || a >= N || b >= N) continue;
        if (!m[static_cast<std::size_t>(a * N + b)]) {
          out.emplace_back(i, j);
          break;
        }
      }
    }
  }
  return out;
}

double directed_hausdorff(const std::vector<std::pair<int, int>>& a, const std::vector<std::pair<int, int>>& b) {
  double worst = 0.0;
  for (const auto& [ai, aj] : a) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [bi, bj] : b) best = std::min(best, std::hypot(double(ai - bi), double(aj - bj)));
    worst = std::max(worst, best);
  }
  return worst;
}

}  // namespace

double boundary_gap(const std::vector<unsigned char>& a, const std::vector<unsigned char>& b, std::size_t cells) {
  if (a.size() != cells * cells || b.size() != cells * cells) throw ConfigError("raster size mismatch");
  const auto ba = internal_boundary(a, cells);
  const auto bb = internal_boundary(b, cells);
  if (ba.empty() && bb.empty()) return 0.0;
  if (ba.empty() || bb.empty()) return std::numeric_limits<double>::infinity();
  return std::max(directed_hausdorff(ba, bb), directed_hausdorff(bb, ba));
}

PlainnessReport causal_plainness_probe(const MetricField& g, const Vec& p,
                                       const std::vector<ConeAdaptedPair>& family, const RasterSpec& spec) {
  PlainnessReport out;
  out.cells = spec.cells;
  out.j_plus_mask = relation_raster(g, p, spec, false);
  out.j_plus_cells = static_cast<std::size_t>(std::count(out.j_plus_mask.begin(), out.j_plus_mask.end(), 1));
  std::vector<std::size_t> order(family.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return family[a].epsilon > family[b].epsilon; });
  for (std::size_t i : order) {
    auto mask = relation_raster(family[i].inner, p, spec, true);
    PlainnessRow row;
    row.epsilon = family[i].epsilon;
    row.inner_cells = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
    row.boundary_cells = internal_boundary(mask, spec.cells).size();
    row.gap_cells = boundary_gap(out.j_plus_mask, mask, spec.cells);
    out.rows.push_back(row);
    out.inner_masks.push_back(std::move(mask));
  }
  return out;
}

// ---------------------------------------------------------------- continuous causal curves

ContinuousCausalReport continuous_causal_check(const MetricField& g, const CausalCurve& curve,
                                               const ContinuousCausalSpec& spec) {
  if (curve.size() < 2) throw ConfigError("curve needs at least 2 samples");
  ContinuousCausalReport out;
  out.lipschitz = curve.lipschitz_constant();
  const MetricField past = g.with_reversed_orientation();
  const std::size_t n = curve.size();
  std::vector<std::size_t> fail(n, n);
  std::vector<std::size_t> checked(n, 0);
  parallel_for(n, [&](std::size_t k) {
    const Vec& x = curve.x[k];
    const ExponentialMap fut(g, x, spec.integrator);
    const ExponentialMap pst(past, x, spec.integrator);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == k || (curve.x[j] - x).norm() > spec.radius) continue;
      const RelationCertificate c = relate(j > k ? fut : pst, curve.x[j], spec.tol);
      ++checked[k];
      if (!in_J_plus(c)) {
        fail[k] = j;
        return;
      }
    }
  });
  out.passed = true;
  out.failing_sample = n;
  for (std::size_t k = 0; k < n; ++k) {
    out.relations_checked += checked[k];
    if (fail[k] < n && out.passed) {
      out.passed = false;
      out.failing_sample = fail[k];
    }
  }
  return out;
}

// ---------------------------------------------------------------- accumulation curves

namespace {

// Points at equally spaced fractions of h-arclength.
std::vector<Vec> arclength_resample(const CausalCurve& c, std::size_t grid, const RiemannianBackground& h) {
  const std::size_t n = c.size();
  std::vector<double> s(n, 0.0);
  for (std::size_t k = 1; k < n; ++k) s[k] = s[k - 1] + h.norm(0.5 * (c.x[k] + c.x[k - 1]), c.x[k] - c.x[k - 1]);
  std::vector<Vec> out(grid);
  const double L = s.back();
  std::size_t k = 1;
  for (std::size_t j = 0; j < grid; ++j) {
    const double target = L * static_cast<double>(j) / static_cast<double>(grid - 1);
    if (!(L > 0)) {
      out[j] = c.x.front();
      continue;
    }
    while (k + 1 < n && s[k] < target) ++k;
    const double span = s[k] - s[k - 1];
    const double u = span > 0 ? std::clamp((target - s[k - 1]) / span, 0.0, 1.0) : 1.0;
    out[j] = (1.0 - u) * c.x[k - 1] + u * c.x[k];
  }
  return out;
}

double sup_distance(const std::vector<Vec>& a, const std::vector<Vec>& b, const RiemannianBackground& h) {
  double d = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) d = std::max(d, h.norm(a[j], a[j] - b[j]));
  return d;
}

// Pointwise Aitken extrapolation of x1, x2, x3 (geometric tail assumed).
std::vector<Vec> aitken(const std::vector<Vec>& x1, const std::vector<Vec>& x2, const std::vector<Vec>& x3) {
  std::vector<Vec> out(x3.size());
  for (std::size_t j = 0; j < x3.size(); ++j) {
    out[j] = x3[j];
    for (Eigen::Index i = 0; i < x3[j].size(); ++i) {
      const double d1 = x2[j](i) - x1[j](i);
      const double d2 = x3[j](i) - x2[j](i);
      const double den = d2 - d1;
      if (std::abs(den) > 1e-14 && std::abs(d2) < std::abs(d1)) out[j](i) = x3[j](i) - d2 * d2 / den;
    }
  }
  return out;
}

}  // namespace

CausalCurve CausalCurve::arclength_reparametrized(std::size_t grid, const RiemannianBackground& h) const {
  if (grid < 2 || size() < 2) throw ConfigError("arclength resampling needs at least 2 samples and grid points");
  std::vector<double> s(grid);
  for (std::size_t j = 0; j < grid; ++j) s[j] = static_cast<double>(j) / static_cast<double>(grid - 1);
  return from_points(std::move(s), arclength_resample(*this, grid, h));
}

AccumulationResult accumulation_curve(const MetricField& g, const std::vector<CausalCurve>& curves, const Vec& p,
                                      const AccumulationSpec& spec, const RiemannianBackground& h) {
  const std::size_t N = curves.size();
  if (N < 3) throw ConfigError("accumulation_curve needs at least 3 curves");
  if (spec.grid < 2) throw ConfigError("accumulation grid needs at least 2 points");
  if ((curves.back().x.front() - p).norm() > spec.tol)
    throw ConfigError("curve starts do not approach the base point within tolerance");
  for (const auto& c : curves) {
    for (const Vec& x : c.x) {
      if (!g.domain().contains(x)) throw DomainError("a curve of the sequence leaves the chart");
    }
  }

  std::vector<std::vector<Vec>> R(N);
  for (std::size_t i = 0; i < N; ++i) R[i] = arclength_resample(curves[i], spec.grid, h);
  std::vector<double> D(N * N, 0.0);
  double diameter = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = i + 1; j < N; ++j) {
      D[i * N + j] = D[j * N + i] = sup_distance(R[i], R[j], h);
      diameter = std::max(diameter, D[i * N + j]);
    }
  }

  AccumulationResult out;
  std::vector<std::vector<std::size_t>> rounds;
  std::vector<std::size_t> S(N);
  std::iota(S.begin(), S.end(), std::size_t{0});
  rounds.push_back(S);
  double r = diameter;
  for (int round = 1; round <= spec.max_rounds && r > 0; ++round) {
    r *= 0.5;
    std::vector<std::size_t> best;
    for (std::size_t c : S) {
      std::vector<std::size_t> ball;
      for (std::size_t m : S) {
        if (D[c * N + m] <= r) ball.push_back(m);
      }
      if (ball.size() > best.size() || (ball.size() == best.size() && ball < best)) best = std::move(ball);
    }
    if (best.size() < 3) break;
    S = std::move(best);
    rounds.push_back(S);
    out.rounds = round;
  }
  out.subsequence = rounds.back();

  // Geometric picks at positions P, P/2, P/4, P/8 from the deepest cluster
  // spanning a factor 8 in sequence position.
  auto nearest = [&](const std::vector<std::size_t>& set, double pos) {
    std::size_t best = set.front();
    for (std::size_t m : set) {
      if (std::abs(double(m + 1) - pos) < std::abs(double(best + 1) - pos)) best = m;
    }
    return best;
  };
  std::vector<std::size_t> picks;
  for (auto it = rounds.rbegin(); it != rounds.rend() && picks.empty(); ++it) {
    const auto& set = *it;
    const double P = double(set.back() + 1);
    if (P < 8.0 * double(set.front() + 1)) continue;
    std::vector<std::size_t> cand;
    for (int k = 0; k < 4; ++k) cand.push_back(nearest(set, P / std::ldexp(1.0, k)));
    bool distinct = true;
    for (int k = 1; k < 4; ++k) distinct = distinct && cand[k] < cand[k - 1];
    if (distinct) picks = cand;
  }
  std::vector<Vec> limit;
  const std::size_t last = out.subsequence.back();
  if (!picks.empty()) {
    limit = aitken(R[picks[2]], R[picks[1]], R[picks[0]]);
    out.error_estimate = sup_distance(limit, aitken(R[picks[3]], R[picks[2]], R[picks[1]]), h);
  } else {
    limit = R[last];
    const std::size_t prev = out.subsequence[out.subsequence.size() - 2];
    out.error_estimate = D[prev * N + last];
  }
  out.tail_distance = sup_distance(limit, R[last], h);
  out.converged = out.error_estimate < spec.tol;

  std::vector<double> s(spec.grid);
  for (std::size_t j = 0; j < spec.grid; ++j) s[j] = static_cast<double>(j) / static_cast<double>(spec.grid - 1);
  out.limit = CausalCurve::from_points(std::move(s), std::move(limit));
  out.classification = classify_curve(g, out.limit, spec.classify_tol, h);
  return out;
}

}  // namespace lowreg
