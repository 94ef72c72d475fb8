#include "lowreg/metric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace lowreg {
namespace {

// Below this a quadratic form value is indistinguishable from zero at unit
// h-norm; strict cone inclusion has to beat it.
constexpr double kStrictFloor = 1e-13;

Mat identity(int n) { return Mat::Identity(n, n); }

}  // namespace

std::string_view to_string(Regularity r) {
  switch (r) {
    case Regularity::C0: return "C0";
    case Regularity::C0_1: return "C0_1";
    case Regularity::C1_1: return "C1_1";
    case Regularity::Smooth: return "Smooth";
  }
  return "?";
}

Regularity parse_regularity(std::string_view s) {
  if (s == "C0") return Regularity::C0;
  if (s == "C0_1") return Regularity::C0_1;
  if (s == "C1_1") return Regularity::C1_1;
  if (s == "Smooth") return Regularity::Smooth;
  throw ConfigError("unknown regularity tag '" + std::string(s) + "'");
}

std::string_view to_string(CausalClass c) {
  switch (c) {
    case CausalClass::Timelike: return "Timelike";
    case CausalClass::Null: return "Null";
    case CausalClass::Spacelike: return "Spacelike";
    case CausalClass::ZeroVector: return "ZeroVector";
  }
  return "?";
}

std::string_view to_string(TimeDirection d) {
  switch (d) {
    case TimeDirection::Future: return "Future";
    case TimeDirection::Past: return "Past";
    case TimeDirection::None: return "None";
  }
  return "?";
}

MetricField::MetricField(MetricDefinition def) : def_(std::move(def)) {
  const int n = def_.domain.dim();
  if (!def_.components) throw ConfigError("metric '" + def_.name + "' has no component evaluator");
  if (def_.time_axis < 0 || def_.time_axis >= n) throw ConfigError("time axis out of range");
  if (!def_.time_orientation) {
    const int axis = def_.time_axis;
    def_.time_orientation = [n, axis](const Vec&) { return unit_vector(n, axis); };
  }
  if (def_.active_axes) {
    active_ = *def_.active_axes;
    std::sort(active_.begin(), active_.end());
    active_.erase(std::unique(active_.begin(), active_.end()), active_.end());
    for (int a : active_) {
      if (a < 0 || a >= n) throw ConfigError("active axis out of range");
    }
  } else {
    for (int i = 0; i < n; ++i) active_.push_back(i);
  }
  fd_step_ = 1e-5 * def_.domain.diameter();
}

Mat MetricField::at(const Vec& p) const {
  if (!def_.domain.contains(p)) throw DomainError("point outside the chart domain of metric '" + def_.name + "'");
  return def_.components(p);
}

MetricJet MetricField::jet(const Vec& p) const { return jet(p, fd_step_); }

MetricJet MetricField::jet(const Vec& p, double fd_step) const {
  const int n = dim();
  MetricJet j;
  j.g = def_.components(p);
  if (def_.derivatives) {
    def_.derivatives(p, j.dg);
    return j;
  }
  for (int k = 0; k < n; ++k) j.dg[static_cast<std::size_t>(k)] = Mat::Zero(n, n);
  for (int k : active_) {
    Vec a = p;
    Vec b = p;
    a(k) += fd_step;
    b(k) -= fd_step;
    j.dg[static_cast<std::size_t>(k)] = (def_.components(a) - def_.components(b)) / (2.0 * fd_step);
  }
  return j;
}

Vec MetricField::time_orientation(const Vec& p) const { return def_.time_orientation(p); }

MetricField MetricField::with_reversed_orientation() const {
  MetricDefinition d = def_;
  auto x = def_.time_orientation;
  d.time_orientation = [x](const Vec& p) { return Vec(-x(p)); };
  d.name = def_.name + "/reversed";
  return MetricField(std::move(d));
}

MetricField MetricField::with_domain(const ChartDomain& domain) const {
  if (!def_.domain.contains(domain)) throw DomainError("restricted domain must lie inside the chart");
  MetricDefinition d = def_;
  d.domain = domain;
  return MetricField(std::move(d));
}

MetricField MetricField::with_active_axes(std::vector<int> axes) const {
  MetricDefinition d = def_;
  d.active_axes = std::move(axes);
  return MetricField(std::move(d));
}

MetricField MetricField::with_name(std::string name) const {
  MetricDefinition d = def_;
  d.name = std::move(name);
  return MetricField(std::move(d));
}

Mat RiemannianBackground::at(const Vec& p) const {
  if (!h_) return identity(static_cast<int>(p.size()));
  return h_(p);
}

double RiemannianBackground::norm2(const Vec& p, const Vec& v) const {
  if (!h_) return v.squaredNorm();
  return v.dot(h_(p) * v);
}

double RiemannianBackground::norm(const Vec& p, const Vec& v) const { return std::sqrt(norm2(p, v)); }

CausalCharacter classify_vector(const Mat& g, const Vec& orientation, const Mat& h, const Vec& v, double tol) {
  CausalCharacter c;
  const double n2 = v.dot(h * v);
  if (!(n2 > 0.0)) return c;
  const double q = v.dot(g * v) / n2;
  c.normalized_value = q;
  if (q < -tol) {
    c.kind = CausalClass::Timelike;
  } else if (std::abs(q) <= tol) {
    c.kind = CausalClass::Null;
  } else {
    c.kind = CausalClass::Spacelike;
    return c;
  }
  const double x = orientation.dot(g * v);
  c.direction = x < 0 ? TimeDirection::Future : (x > 0 ? TimeDirection::Past : TimeDirection::None);
  return c;
}

CausalCharacter causal_character(const MetricField& g, const TangentVector& v, double tol,
                                 const RiemannianBackground& h) {
  if (!(tol > 0)) throw ConfigError("causal_character needs tol > 0");
  const Mat G = g.at(v.base);
  return classify_vector(G, g.time_orientation(v.base), h.at(v.base), v.components, tol);
}

int negative_eigenvalue_count(const Mat& g) {
  Eigen::SelfAdjointEigenSolver<Mat> es(g, Eigen::EigenvaluesOnly);
  int neg = 0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    if (es.eigenvalues()(i) < 0) ++neg;
  }
  return neg;
}

bool is_lorentzian(const Mat& g) {
  Eigen::SelfAdjointEigenSolver<Mat> es(g, Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  const double scale = ev.cwiseAbs().maxCoeff();
  if (!(scale > 0) || !std::isfinite(scale)) return false;
  int neg = 0;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (std::abs(ev(i)) <= 1e-14 * scale) return false;
    if (ev(i) < 0) ++neg;
  }
  return neg == 1;
}

Vec future_axis(const Mat& g, const Mat& h, const Vec& orientation) {
  Vec axis;
  if (h.isIdentity(0.0)) {
    Eigen::SelfAdjointEigenSolver<Mat> es(g);
    axis = es.eigenvectors().col(0);
  } else {
    Eigen::GeneralizedSelfAdjointEigenSolver<Mat> es(g, h);
    axis = es.eigenvectors().col(0);
  }
  if (orientation.dot(g * axis) > 0) axis = -axis;
  return axis / std::sqrt(axis.dot(h * axis));
}

Vec project_to_cone(const Mat& g, const Mat& h, const Vec& axis, const Vec& u, double level) {
  auto f = [&](const Vec& v) { return v.dot(g * v) - level * v.dot(h * v); };
  auto unit = [&](const Vec& v) { return Vec(v / std::sqrt(v.dot(h * v))); };
  if (f(u) <= 0) return unit(u);
  const double s = u.dot(h * axis) >= 0 ? 1.0 : -1.0;
  double lo = 0.0;
  double hi = 1.0;
  for (int i = 0; i < 80 && f(u + s * hi * axis) > 0; ++i) hi *= 2.0;
  for (int i = 0; i < 200 && hi - lo > 1e-17 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (f(u + s * mid * axis) > 0) lo = mid;
    else hi = mid;
  }
  return unit(u + s * hi * axis);
}

MetricDistance metric_distance(const MetricField& g1, const MetricField& g2, const ChartDomain& region,
                               const SamplerSpec& sampler, const RiemannianBackground& h) {
  const auto points = sample_points(region, sampler);
  if (points.empty()) throw ConfigError("metric_distance needs at least one sample");
  MetricDistance d;
  d.points = points.size();
  d.worst_point = points.front();
  for (const auto& p : points) {
    const Mat delta = g1.at(p) - g2.at(p);
    double sup = 0.0;
    if (h.is_identity()) {
      Eigen::SelfAdjointEigenSolver<Mat> es(delta, Eigen::EigenvaluesOnly);
      sup = es.eigenvalues().cwiseAbs().maxCoeff();
    } else {
      Eigen::GeneralizedSelfAdjointEigenSolver<Mat> es(delta, h.at(p), Eigen::EigenvaluesOnly);
      sup = es.eigenvalues().cwiseAbs().maxCoeff();
    }
    if (sup > d.value) {
      d.value = sup;
      d.worst_point = p;
    }
  }
  return d;
}

namespace {

void record(ConeComparison& r, const Vec& p, const Vec& v, double margin) {
  ++r.samples;
  if (margin <= kStrictFloor) ++r.violations;
  if (r.samples == 1 || margin < r.worst_margin) {
    r.worst_margin = margin;
    r.worst_point = p;
    r.worst_vector = v;
  }
}

}  // namespace

ConeComparison cone_comparison(const MetricField& g, const MetricField& wider, const Vec& p,
                               const SamplerSpec& sampler, const RiemannianBackground& h) {
  const Mat G = g.at(p);
  const Mat W = wider.at(p);
  const Mat H = h.at(p);
  const Vec axis = future_axis(G, H, g.time_orientation(p));
  ConeComparison r;
  for (const auto& u : sample_directions(g.dim(), sampler)) {
    const Vec v = project_to_cone(G, H, axis, u);
    record(r, p, v, -v.dot(W * v));
  }
  return r;
}

ConeComparison cone_comparison(const MetricField& g, const MetricField& wider, const ChartDomain& region,
                               const SamplerSpec& sampler, const RiemannianBackground& h) {
  ConeComparison r;
  for (const auto& s : sample_point_directions(region, sampler)) {
    const Mat G = g.at(s.point);
    const Mat W = wider.at(s.point);
    const Mat H = h.at(s.point);
    const Vec axis = future_axis(G, H, g.time_orientation(s.point));
    const Vec v = project_to_cone(G, H, axis, s.direction);
    record(r, s.point, v, -v.dot(W * v));
  }
  return r;
}

Christoffel christoffel(const MetricJet& jet) {
  const int n = static_cast<int>(jet.g.rows());
  Eigen::FullPivLU<Mat> lu(jet.g);
  if (!lu.isInvertible()) throw NumericalError("singular metric matrix");
  const Mat ginv = lu.inverse();
  Christoffel gamma(n);
  for (int k = 0; k < n; ++k) {
    for (int i = 0; i < n; ++i) {
      for (int j = i; j < n; ++j) {
        double s = 0.0;
        for (int l = 0; l < n; ++l) {
          s += ginv(k, l) * (jet.dg[i](j, l) + jet.dg[j](i, l) - jet.dg[l](i, j));
        }
        gamma(k, i, j) = 0.5 * s;
        gamma(k, j, i) = 0.5 * s;
      }
    }
  }
  return gamma;
}

Christoffel christoffel(const MetricField& g, const Vec& p, double fd_step) {
  if (!g.has_analytic_derivatives() && g.domain().distance_to_boundary(p) <= fd_step) {
    throw DomainError("christoffel: point within fd_step of the chart boundary");
  }
  if (!g.domain().contains(p)) throw DomainError("christoffel: point outside the chart");
  return christoffel(g.jet(p, fd_step));
}

Vec geodesic_acceleration(const MetricJet& jet, const Vec& v) {
  const int n = static_cast<int>(v.size());
  Mat d = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i) d += v(i) * jet.dg[static_cast<std::size_t>(i)];
  Vec w = d * v;
  for (int l = 0; l < n; ++l) w(l) -= 0.5 * v.dot(jet.dg[static_cast<std::size_t>(l)] * v);
  return -jet.g.partialPivLu().solve(w);
}

MetricCheck check_metric(const MetricField& g, const ChartDomain& region, const SamplerSpec& sampler) {
  MetricCheck c;
  for (const auto& p : sample_points(region, sampler)) {
    ++c.points;
    const Mat G = g.at(p);
    c.max_asymmetry = std::max(c.max_asymmetry, (G - G.transpose()).cwiseAbs().maxCoeff());
    if (!is_lorentzian(G)) ++c.signature_failures;
    const Vec x = g.time_orientation(p);
    if (!(x.dot(G * x) < 0)) ++c.orientation_failures;
  }
  return c;
}

}  // namespace lowreg
