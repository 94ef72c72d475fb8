#include "lowreg/geodesics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace lowreg {
namespace {

constexpr std::size_t kShotCacheLimit = 1u << 15;

struct State {
  Vec x;
  Vec v;
};

// One plain RK4 step; returns false if a stage point leaves the chart.
bool rk4_plain(const MetricField& g, State& s, double dt) {
  const ChartDomain& d = g.domain();
  auto accel = [&g](const Vec& x, const Vec& v) { return geodesic_acceleration(g.jet(x), v); };
  const Vec k1x = s.v;
  const Vec k1v = accel(s.x, s.v);
  const Vec x2 = s.x + 0.5 * dt * k1x;
  if (!d.contains(x2)) return false;
  const Vec k2x = s.v + 0.5 * dt * k1v;
  const Vec k2v = accel(x2, k2x);
  const Vec x3 = s.x + 0.5 * dt * k2x;
  if (!d.contains(x3)) return false;
  const Vec k3x = s.v + 0.5 * dt * k2v;
  const Vec k3v = accel(x3, k3x);
  const Vec x4 = s.x + dt * k3x;
  if (!d.contains(x4)) return false;
  const Vec k4x = s.v + dt * k3v;
  const Vec k4v = accel(x4, k4x);
  const Vec xn = s.x + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
  if (!d.contains(xn)) return false;
  s.v = s.v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
  s.x = xn;
  return true;
}

// RK4 step that lands exactly on a derivative-jump hyperplane when the step
// crosses one, so each sub-step sees a smooth right-hand side.
bool rk4_step(const MetricField& g, State& s, double dt, int depth = 0) {
  State trial = s;
  if (!rk4_plain(g, trial, dt)) return false;
  if (depth > 4) {
    s = trial;
    return true;
  }
  for (const auto& [axis, value] : g.derivative_jumps()) {
    const double f0 = s.x(axis) - value;
    const double f1 = trial.x(axis) - value;
    if (f0 == 0.0 || f0 * f1 >= 0.0) continue;
    // Illinois regula falsi on the sub-step fraction tau.
    double lo = 0.0, flo = f0, hi = 1.0, fhi = f1, tau = 0.0;
    int side = 0;
    State hit = s;
    for (int it = 0; it < 100; ++it) {
      tau = (lo * fhi - hi * flo) / (fhi - flo);
      State probe = s;
      if (!rk4_plain(g, probe, tau * dt)) return false;
      const double fc = probe.x(axis) - value;
      hit = probe;
      if (std::abs(fc) <= 1e-15 * std::max(1.0, std::abs(value))) break;
      if (fc * flo < 0) {
        hi = tau;
        fhi = fc;
        if (side == -1) flo *= 0.5;
        side = -1;
      } else {
        lo = tau;
        flo = fc;
        if (side == +1) fhi *= 0.5;
        side = +1;
      }
      if (hi - lo < 1e-14) break;
    }
    s = hit;
    s.x(axis) = value;
    return rk4_step(g, s, (1.0 - tau) * dt, depth + 1);
  }
  s = trial;
  return true;
}

GeodesicPath integrate_fixed(const MetricField& g, const Vec& p, const Vec& v, double t_end, std::size_t steps) {
  GeodesicPath path;
  path.t.reserve(steps + 1);
  path.x.reserve(steps + 1);
  path.v.reserve(steps + 1);
  path.t.push_back(0.0);
  path.x.push_back(p);
  path.v.push_back(v);
  if (steps == 0) return path;
  const double dt = t_end / static_cast<double>(steps);
  State s{p, v};
  for (std::size_t k = 1; k <= steps; ++k) {
    if (!rk4_step(g, s, dt)) {
      path.truncated = true;
      break;
    }
    path.t.push_back(k == steps ? t_end : dt * static_cast<double>(k));
    path.x.push_back(s.x);
    path.v.push_back(s.v);
  }
  return path;
}

std::size_t step_count(double t_end, const IntegratorSpec& spec) {
  if (!(spec.step > 0)) throw ConfigError("integrator step must be positive");
  if (spec.refinement < 2) throw ConfigError("Richardson refinement factor must be at least 2");
  const double n = std::ceil(std::abs(t_end) / spec.step - 1e-9);
  if (!(n <= static_cast<double>(spec.max_steps))) {
    throw NumericalError("integrator step underflow: more than max_steps steps required");
  }
  return static_cast<std::size_t>(n);
}

std::array<double, kMaxDim> key_of(const Vec& v) {
  std::array<double, kMaxDim> k{};
  for (Eigen::Index i = 0; i < v.size(); ++i) k[static_cast<std::size_t>(i)] = v(i);
  return k;
}

std::string history_text(const std::vector<double>& h) {
  std::ostringstream os;
  for (std::size_t i = 0; i < h.size(); ++i) os << (i ? ", " : "") << h[i];
  return os.str();
}

}  // namespace

Vec GeodesicPath::point_at(double s) const {
  if (t.empty()) throw ConfigError("empty geodesic path");
  if (t.size() == 1) return x.front();
  const bool forward = t.back() > t.front();
  auto before = [forward](double a, double b) { return forward ? a < b : a > b; };
  if (before(s, t.front()) || before(t.back(), s)) throw DomainError("parameter outside the sampled geodesic range");
  std::size_t k = 0;
  if (forward) {
    k = static_cast<std::size_t>(std::upper_bound(t.begin(), t.end(), s) - t.begin());
  } else {
    k = static_cast<std::size_t>(std::upper_bound(t.begin(), t.end(), s, std::greater<>()) - t.begin());
  }
  k = std::clamp<std::size_t>(k, 1, t.size() - 1);
  const double t0 = t[k - 1];
  const double dt = t[k] - t0;
  const double u = (s - t0) / dt;
  const double u2 = u * u;
  const double u3 = u2 * u;
  const double h00 = 2 * u3 - 3 * u2 + 1;
  const double h10 = u3 - 2 * u2 + u;
  const double h01 = -2 * u3 + 3 * u2;
  const double h11 = u3 - u2;
  return h00 * x[k - 1] + h10 * dt * v[k - 1] + h01 * x[k] + h11 * dt * v[k];
}

GeodesicPath integrate_geodesic(const MetricField& g, const Vec& p, const Vec& v, double t_end,
                                const IntegratorSpec& spec, bool estimate_error) {
  if (p.size() != g.dim() || v.size() != g.dim()) throw ConfigError("geodesic data dimension mismatch");
  if (!g.domain().contains(p)) throw DomainError("geodesic start point outside the chart");
  const std::size_t n = step_count(t_end, spec);
  GeodesicPath path = integrate_fixed(g, p, v, t_end, n);
  if (estimate_error && n > 0) {
    const auto r = static_cast<std::size_t>(spec.refinement);
    if (n * r > spec.max_steps) throw NumericalError("integrator step underflow in the refinement run");
    const GeodesicPath fine = integrate_fixed(g, p, v, t_end, n * r);
    double e = 0.0;
    for (std::size_t k = 0; k < path.x.size() && k * r < fine.x.size(); ++k) {
      e = std::max(e, (path.x[k] - fine.x[k * r]).norm() + (path.v[k] - fine.v[k * r]).norm());
    }
    path.error_estimate = e;
  }
  return path;
}

OrderMeasurement measure_order(const MetricField& g, const Vec& p, const Vec& v, double t_end, double step,
                               double reference_step) {
  auto end_at = [&](double h) {
    IntegratorSpec s;
    s.step = h;
    const auto path = integrate_geodesic(g, p, v, t_end, s);
    if (path.truncated) throw DomainError("order measurement path leaves the chart");
    return path.end_point();
  };
  const Vec ref = end_at(reference_step);
  OrderMeasurement m;
  m.error_coarse = (end_at(step) - ref).norm();
  m.error_fine = (end_at(0.5 * step) - ref).norm();
  m.ratio = m.error_coarse / m.error_fine;
  m.order = std::log2(m.ratio);
  return m;
}

// ------------------------------------------------------------ ExponentialMap

ExponentialMap::ExponentialMap(MetricField g, Vec p, IntegratorSpec spec, std::optional<double> shooting_tol)
    : g_(std::move(g)), p_(std::move(p)), spec_(spec) {
  if (p_.size() != g_.dim()) throw ConfigError("base point dimension mismatch");
  if (!g_.domain().contains(p_)) throw DomainError("exponential map base point outside the chart");
  tol_ = shooting_tol ? *shooting_tol : (g_.regularity() == Regularity::Smooth ? 1e-9 : 1e-7);
  if (!(tol_ > 0)) throw ConfigError("shooting tolerance must be positive");
}

ExponentialMap::ExponentialMap(const ExponentialMap& o)
    : g_(o.g_), p_(o.p_), spec_(o.spec_), tol_(o.tol_), certified_radius_(o.certified_radius_) {}

Shot ExponentialMap::shoot(const Vec& v) const {
  if (v.size() != p_.size()) throw ConfigError("tangent vector dimension mismatch");
  if (v.isZero(0.0)) return {p_, Vec::Zero(p_.size())};
  const auto key = key_of(v);
  {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
  }
  const GeodesicPath path = integrate_fixed(g_, p_, v, 1.0, step_count(1.0, spec_));
  if (path.truncated) throw DomainError("geodesic leaves the chart before parameter 1");
  Shot s{path.end_point(), path.end_velocity()};
  std::lock_guard<std::mutex> lock(mutex_);
  if (cache_.size() >= kShotCacheLimit) cache_.clear();
  cache_.emplace(key, s);
  return s;
}

Mat ExponentialMap::fd_jacobian(const Vec& v, const Vec& fv) const {
  const int n = g_.dim();
  const double delta = 1e-6 * std::max(v.norm(), 1e-3);
  Mat j(n, n);
  for (int k = 0; k < n; ++k) {
    Vec vk = v;
    vk(k) += delta;
    j.col(k) = (exp(vk) - fv) / delta;
  }
  return j;
}

InverseResult ExponentialMap::inverse(const Vec& q, const InverseOptions& options) const {
  if (q.size() != p_.size()) throw ConfigError("target dimension mismatch");
  const double tol = options.tolerance ? *options.tolerance : tol_;
  InverseResult out;
  auto residual = [&](const Vec& u, Vec& r) {
    try {
      r = exp(u) - q;
      return std::isfinite(r.norm());
    } catch (const DomainError&) {
      return false;
    }
  };
  Vec v = options.guess ? *options.guess : Vec(q - p_);
  Vec r;
  if (!residual(v, r)) {
    if (!options.guess) throw DomainError("shooting from the chart guess leaves the chart");
    v = q - p_;
    if (!residual(v, r)) throw DomainError("shooting from the chart guess leaves the chart");
  }
  double res = r.norm();
  bool fresh = !options.jacobian;
  Mat j = options.jacobian ? *options.jacobian : fd_jacobian(v, Vec(r + q));
  constexpr int kMaxIterations = 50;
  for (int it = 0;; ++it) {
    out.history.push_back(res);
    if (res < tol) break;
    if (it == kMaxIterations) {
      throw NumericalError("shooting did not converge in 50 iterations; residual history: " +
                           history_text(out.history));
    }
    const Vec dv = j.fullPivLu().solve(-r);
    double alpha = 1.0;
    bool accepted = false;
    Vec vn, rn;
    for (int k = 0; k < 30; ++k) {
      vn = v + alpha * dv;
      if (residual(vn, rn) && rn.norm() < res) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      if (!fresh) {
        j = fd_jacobian(v, Vec(r + q));
        fresh = true;
        continue;
      }
      throw NumericalError("shooting stagnated; residual history: " + history_text(out.history));
    }
    const Vec s = vn - v;
    j += ((rn - r) - j * s) * s.transpose() / s.squaredNorm();
    fresh = false;
    v = vn;
    r = rn;
    res = rn.norm();
    ++out.iterations;
  }
  if (certified_radius_ && v.norm() > *certified_radius_ * (1.0 + 1e-9)) {
    throw DomainError("target outside the certified normal neighbourhood");
  }
  out.v = v;
  out.residual = res;
  out.jacobian = j;
  return out;
}

// --------------------------------------------------------- normal radii

namespace {

struct RadiusTrial {
  bool pass = false;
  double lf = 0.0;
  double li = 0.0;
};

RadiusTrial test_radius(const ExponentialMap& em, double r, const SamplerSpec& sampler) {
  RadiusTrial t;
  const int n = em.metric().dim();
  const auto tangent = sample_ball(n, r, sampler);
  std::vector<Vec> image;
  image.reserve(tangent.size());
  try {
    for (const auto& v : tangent) image.push_back(em.exp(v));
  } catch (const DomainError&) {
    return t;
  }
  const double tol = em.shooting_tolerance();
  for (std::size_t i = 0; i < tangent.size(); ++i) {
    for (std::size_t k = i + 1; k < tangent.size(); ++k) {
      const double dv = (tangent[i] - tangent[k]).norm();
      const double dq = (image[i] - image[k]).norm();
      if (dv > 10 * tol && dq < tol) return t;
      if (dv <= 10 * tol) continue;
      t.lf = std::max(t.lf, dq / dv);
      t.li = std::max(t.li, dv / dq);
    }
  }
  for (std::size_t i = 0; i < tangent.size(); ++i) {
    try {
      const auto inv = em.inverse(image[i]);
      if ((inv.v - tangent[i]).norm() > 1e-4 * r + 1e-6) return t;
    } catch (const Error&) {
      return t;
    }
  }
  t.pass = std::isfinite(t.lf) && std::isfinite(t.li);
  return t;
}

}  // namespace

NormalNeighborhood normal_radius(const ExponentialMap& em, const NormalRadiusSpec& spec) {
  if (!(spec.initial > 0) || !(spec.floor > 0)) throw ConfigError("normal radius search needs positive radii");
  NormalNeighborhood nn;
  nn.p = em.base();
  nn.shooting_tol = em.shooting_tolerance();
  nn.samples = spec.samples.count;
  nn.seed = spec.samples.seed;
  auto record = [&](double r) {
    const auto t = test_radius(em, r, spec.samples);
    nn.trials.emplace_back(r, t.pass);
    if (t.pass) {
      nn.radius = r;
      nn.lipschitz_forward = t.lf;
      nn.lipschitz_inverse = t.li;
    }
    return t.pass;
  };
  double r = spec.initial;
  if (record(r)) {
    for (int d = 0; d < spec.max_doublings && record(2 * r); ++d) r *= 2;
    return nn;
  }
  while (r / 2 >= spec.floor) {
    r /= 2;
    if (record(r)) return nn;
  }
  throw NumericalError("normal_radius: no passing radius above the search floor");
}

TotallyNormalBall totally_normal_radius(const MetricField& g, const Vec& p, const TotallyNormalSpec& spec) {
  const int n = g.dim();
  for (double rho = spec.initial; rho >= spec.floor; rho /= 2) {
    if (g.domain().distance_to_boundary(p) < rho) continue;
    TotallyNormalBall ball;
    ball.p = p;
    ball.radius = rho;
    ball.probes.push_back(p);
    for (int k = 0; k < n; ++k) {
      ball.probes.push_back(p + 0.5 * rho * unit_vector(n, k));
      ball.probes.push_back(p - 0.5 * rho * unit_vector(n, k));
    }
    std::vector<Vec> targets;
    for (const auto& b : sample_ball(n, rho, spec.targets)) targets.push_back(p + b);
    for (const auto& q : ball.probes) targets.push_back(q);
    bool ok = true;
    for (const auto& q : ball.probes) {
      try {
        ExponentialMap em(g, q, spec.integrator);
        NormalRadiusSpec ns;
        ns.initial = 2 * rho;
        ns.floor = 2 * rho;
        ns.max_doublings = 0;
        const auto nn = normal_radius(em, ns);
        for (const auto& b : targets) {
          if ((b - q).norm() == 0.0) continue;
          const auto inv = em.inverse(b);
          if (inv.v.norm() > nn.radius) {
            ok = false;
            break;
          }
        }
        if (!ok) break;
        ball.certificates.push_back(nn);
        ball.lipschitz_forward = std::max(ball.lipschitz_forward, nn.lipschitz_forward);
        ball.lipschitz_inverse = std::max(ball.lipschitz_inverse, nn.lipschitz_inverse);
      } catch (const Error&) {
        ok = false;
        break;
      }
    }
    if (ok) return ball;
  }
  throw NumericalError("totally_normal_radius: no passing ball above the search floor");
}

double geodesic_connectedness(const MetricField& g, const TotallyNormalBall& ball, const IntegratorSpec& spec) {
  double worst = 0.0;
  for (const auto& q : ball.probes) {
    ExponentialMap em(g, q, spec);
    for (const auto& q2 : ball.probes) {
      if ((q2 - q).norm() == 0.0) continue;
      const auto inv = em.inverse(q2);
      const auto path = integrate_geodesic(g, q, inv.v, 1.0, spec);
      for (const auto& x : path.x) worst = std::max(worst, (x - ball.p).norm() / ball.radius);
    }
  }
  return worst;
}

// ------------------------------------------------------------ Gauss lemma

GaussReport gauss_residual(const ExponentialMap& em, const Vec& v, const Vec& w, const GaussSpec& spec) {
  if (!(spec.s_step > 0)) throw ConfigError("Gauss s-step must be positive");
  const MetricField& g = em.metric();
  const Vec& p = em.base();
  const Mat gp = g.at(p);
  if (auto r = em.certified_radius()) {
    for (double s : spec.s_grid) {
      if ((v + (std::abs(s) + spec.s_step) * w).norm() > *r || (v - (std::abs(s) + spec.s_step) * w).norm() > *r) {
        throw DomainError("Gauss grid outside the certified radius");
      }
    }
  }
  GaussReport rep;
  rep.p = p;
  rep.v = v;
  rep.w = w;
  rep.s_step = spec.s_step;
  rep.integrator_step = em.integrator().step;
  auto end_state = [&](const Vec& u, double t) {
    const auto path = integrate_geodesic(g, p, u, t, em.integrator());
    if (path.truncated) throw DomainError("Gauss grid geodesic leaves the chart");
    return path;
  };
  for (double t : spec.t_grid) {
    for (double s : spec.s_grid) {
      const Vec u = v + s * w;
      const auto mid = end_state(u, t);
      const Vec plus = end_state(Vec(u + spec.s_step * w), t).end_point();
      const Vec minus = end_state(Vec(u - spec.s_step * w), t).end_point();
      const Vec ft = mid.end_velocity();
      const Vec fs = (plus - minus) / (2.0 * spec.s_step);
      const double lhs = ft.dot(g.at(mid.end_point()) * fs);
      const double rhs = t * u.dot(gp * w);
      const double res = std::abs(lhs - rhs);
      rep.rows.push_back({t, s, res});
      rep.max_residual = std::max(rep.max_residual, res);
    }
  }
  return rep;
}

// ------------------------------------------------- position field and Q

PositionData position_field(const ExponentialMap& em, const Vec& q, const InverseOptions& options) {
  const int n = em.metric().dim();
  PositionData d;
  if ((q - em.base()).isZero(0.0)) {
    d.v = Vec::Zero(n);
    d.P = Vec::Zero(n);
    d.Q = 0.0;
    return d;
  }
  const auto inv = em.inverse(q, options);
  d.v = inv.v;
  d.P = em.shoot(inv.v).velocity;
  d.Q = inv.v.dot(em.metric().at(em.base()) * inv.v);
  return d;
}

double world_function_Q(const ExponentialMap& em, const Vec& q) { return position_field(em, q).Q; }

GradQCheck gradQ_check(const ExponentialMap& em, const Vec& q, double fd_step, const RiemannianBackground& h) {
  if (!(fd_step > 0)) throw ConfigError("gradQ_check needs a positive step");
  constexpr double kTightTolerance = 1e-12;
  const int n = em.metric().dim();
  InverseOptions opt;
  opt.tolerance = kTightTolerance;
  const auto center = position_field(em, q, opt);
  opt.guess = center.v;
  Vec dq(n);
  for (int k = 0; k < n; ++k) {
    const Vec e = fd_step * unit_vector(n, k);
    const double qp = position_field(em, Vec(q + e), opt).Q;
    const double qm = position_field(em, Vec(q - e), opt).Q;
    dq(k) = (qp - qm) / (2.0 * fd_step);
  }
  GradQCheck c;
  c.grad = em.metric().at(q).partialPivLu().solve(dq);
  c.two_p = 2.0 * center.P;
  c.relative_error = h.norm(q, Vec(c.grad - c.two_p)) / (h.norm(q, c.two_p) + 1e-12);
  return c;
}

double exp_difference_quotient_at_zero(const ExponentialMap& expmap, double s, const SamplerSpec& directions) {
  if (!(s > 0)) throw ConfigError("difference quotient step must be positive");
  const Vec& p = expmap.base();
  double worst = 0.0;
  for (const Vec& d : sample_directions(static_cast<int>(p.size()), directions)) {
    worst = std::max(worst, (expmap.exp(s * d) - p - s * d).norm() / s);
  }
  return worst;
}

// ---------------------------------------------------------- convergence

std::vector<ConvergenceRow> exp_convergence(const MetricField& g, const std::vector<ConeAdaptedPair>& family,
                                            const Vec& p, const Vec& v, const std::vector<double>& t_grid,
                                            const IntegratorSpec& spec, bool match_norm,
                                            const RiemannianBackground& h) {
  if (t_grid.empty()) throw ConfigError("exp_convergence needs a nonempty t grid");
  struct Ref {
    Vec x, v;
    double err;
  };
  std::vector<Ref> ref;
  for (double t : t_grid) {
    const auto path = integrate_geodesic(g, p, v, t, spec, true);
    if (path.truncated) throw DomainError("reference geodesic leaves the chart");
    ref.push_back({path.end_point(), path.end_velocity(), path.error_estimate});
  }
  auto distance = [&](const MetricField& m, double& integrator_error) {
    Vec v0 = v;
    if (match_norm) {
      const double a = v.dot(g.at(p) * v);
      const double b = v.dot(m.at(p) * v);
      if (a != 0.0 && a * b > 0) v0 = std::sqrt(a / b) * v;
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < t_grid.size(); ++i) {
      const auto path = integrate_geodesic(m, p, v0, t_grid[i], spec, true);
      if (path.truncated) throw DomainError("approximating geodesic leaves the working box");
      integrator_error = std::max({integrator_error, path.error_estimate, ref[i].err});
      worst = std::max(worst, h.norm(path.end_point(), Vec(path.end_point() - ref[i].x)) +
                                  h.norm(path.end_point(), Vec(path.end_velocity() - ref[i].v)));
    }
    return worst;
  };
  std::vector<ConvergenceRow> rows;
  for (const auto& pair : family) {
    ConvergenceRow row;
    row.epsilon = pair.epsilon;
    row.error_outer = distance(pair.outer, row.integrator_error);
    row.error_inner = distance(pair.inner, row.integrator_error);
    row.error = std::max(row.error_outer, row.error_inner);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace lowreg
