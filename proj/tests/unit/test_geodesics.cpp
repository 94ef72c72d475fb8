#include "lowreg/catalog.hpp"
#include "lowreg/geodesics.hpp"
#include "lowreg/parallel.hpp"

#include <doctest.h>

#include <cmath>

using namespace lowreg;

namespace {

double norm_drift(const MetricField& g, const GeodesicPath& path) {
  const double n0 = g.apply(path.x.front(), path.v.front(), path.v.front());
  double worst = 0.0;
  for (std::size_t k = 0; k < path.x.size(); ++k) worst = std::max(worst, std::abs(g.apply(path.x[k], path.v[k], path.v[k]) - n0));
  return worst;
}

const ChartDomain kKinkRegion({{-2, 2}, {-1, 1}});

}  // namespace

TEST_CASE("flat geodesics are straight lines") {
  const MetricField m = minkowski(4);
  const GeodesicPath path = integrate_geodesic(m, Vec::Zero(4), make_vec({1, 0.5, 0, 0}), 1.0);
  CHECK((path.end_point() - make_vec({1, 0.5, 0, 0})).norm() < 1e-12);
  CHECK_FALSE(path.truncated);
  const ExponentialMap em(m, make_vec({0.1, 0.2, -0.1, 0.3}));
  const Vec q = make_vec({0.6, -0.2, 0.4, 0.1});
  CHECK((em.inverse(q).v - (q - em.base())).norm() < 1e-12);
  CHECK(em.exp(Vec::Zero(4)) == em.base());
}

TEST_CASE("first integrals are conserved") {
  // curved_smooth: null stays null; e^{2kt} dx/ds is conserved (no x dependence).
  const MetricField c = curved_smooth(1.0);
  const Vec p = Vec::Zero(2);
  const GeodesicPath null = integrate_geodesic(c, p, make_vec({0.4, 0.4}), 1.0);
  CHECK(norm_drift(c, null) < 1e-8);
  for (std::size_t k = 0; k < null.x.size(); ++k)
    CHECK(std::exp(2 * null.x[k](0)) * null.v[k](1) == doctest::Approx(0.4).epsilon(1e-9));

  // kink: no t dependence, so g_tt dt/ds = -dt/ds is conserved.
  const MetricField k = kink(0.5);
  const GeodesicPath cross = integrate_geodesic(k, make_vec({0, -0.5}), make_vec({1.0, 0.8}), 1.0);
  CHECK(std::abs(cross.x.back()(1)) > 0.0);
  CHECK(cross.x.back()(1) > 0.0);  // crossed the kink set
  CHECK(norm_drift(k, cross) < 1e-9);
  for (const Vec& v : cross.v) CHECK(v(0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("norm conservation on sampled kink geodesics") {
  const MetricField k = kink(0.5);
  for (const auto& [p, d] : sample_point_directions(ChartDomain({{-0.5, 0.5}, {-0.5, 0.5}}), {40, 3, false})) {
    const GeodesicPath path = integrate_geodesic(k, p, 0.5 * d, 1.0, {}, true);
    if (path.truncated) continue;
    CHECK(norm_drift(k, path) < std::max(1e-9, 10 * path.error_estimate));
  }
}

TEST_CASE("realized order across the kink is at least two") {
  const OrderMeasurement m = measure_order(kink(0.5), make_vec({0, -0.5}), make_vec({1.0, 0.8}), 1.0, 1.0 / 64, 1e-5);
  CHECK(m.ratio >= 4.0);
  CHECK(m.order >= 2.0);
}

TEST_CASE("exp and its inverse are mutually inverse") {
  const MetricField k = kink(0.5);
  const ExponentialMap ek(k, make_vec({0, 0.1}));
  for (const Vec& v : sample_ball(2, 0.4, {100, 5, false})) {
    const Vec q = ek.exp(v);
    CHECK((ek.inverse(q).v - v).norm() < 1e-6);
  }
  const MetricField c = curved_smooth(1.0);
  const ExponentialMap ec(c, Vec::Zero(2));
  for (const Vec& q : sample_ball(2, 0.3, {100, 6, false})) {
    const Vec target = q;  // as a chart point around the origin
    CHECK((ec.exp(ec.inverse(target).v) - target).norm() < 1e-8);
  }
}

TEST_CASE("difference quotient of exp at zero") {
  CHECK(exp_difference_quotient_at_zero(ExponentialMap(minkowski(4), Vec::Zero(4)), 0.1) < 1e-12);
  // Second-order term: |exp(s v) - p - s v| ~ s^2 |Gamma| / 2, so the quotient is linear in s.
  const ExponentialMap ek(kink(0.5), make_vec({0, 0.4}));
  const double a = exp_difference_quotient_at_zero(ek, 0.1);
  const double b = exp_difference_quotient_at_zero(ek, 0.05);
  CHECK(a > 0.0);
  CHECK(b < 0.6 * a);
  CHECK_THROWS_AS(exp_difference_quotient_at_zero(ek, 0.0), ConfigError);
}

TEST_CASE("homogeneity: exp(t v) is the t-sample of the v geodesic") {
  const MetricField k = kink(0.5);
  const Vec p = make_vec({0, -0.2});
  const Vec v = make_vec({0.6, 0.5});
  const ExponentialMap em(k, p);
  const GeodesicPath path = integrate_geodesic(k, p, v, 1.0);
  for (double t : {0.25, 0.5, 0.75}) CHECK((em.exp(t * v) - path.point_at(t)).norm() < 1e-7);
}

TEST_CASE("normal neighbourhoods") {
  const MetricField m = minkowski(2);
  const NormalNeighborhood nm = normal_radius(ExponentialMap(m, Vec::Zero(2)));
  CHECK(nm.radius == 1.0);  // the box has half-width 1 and 0.5 * 2 is the largest tested radius inside it
  CHECK(nm.lipschitz_forward == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(nm.lipschitz_inverse == doctest::Approx(1.0).epsilon(1e-9));

  const MetricField k = kink(0.5);
  const ExponentialMap ek(k, make_vec({0, 0.3}));
  const NormalNeighborhood nk = normal_radius(ek);
  CHECK(nk.radius > 0.0);
  CHECK(std::isfinite(nk.lipschitz_forward * nk.lipschitz_inverse));

  NormalRadiusSpec half;
  half.initial = nk.radius / 2;
  half.max_doublings = 0;
  CHECK(normal_radius(ek, half).radius == nk.radius / 2);

  // Fresh pairs inside the certified ball respect the sampled constants up to
  // the sampling gap of a sup estimate.
  const auto vs = sample_ball(2, nk.radius, {60, 99, false});
  for (std::size_t i = 0; i + 1 < vs.size(); i += 2) {
    const double dv = (vs[i] - vs[i + 1]).norm();
    const double dx = (ek.exp(vs[i]) - ek.exp(vs[i + 1])).norm();
    CHECK(dx <= 1.05 * nk.lipschitz_forward * dv);
    CHECK(dx >= dv / (1.05 * nk.lipschitz_inverse));
  }
}

TEST_CASE("totally normal balls") {
  const MetricField k = kink(0.5);
  const TotallyNormalBall b = totally_normal_radius(k, Vec::Zero(2));
  CHECK(b.radius > 0.0);
  CHECK(b.certificates.size() == b.probes.size());
  for (const auto& c : b.certificates) CHECK(c.radius > 0.0);
  CHECK(geodesic_connectedness(k, b) <= 1.0 + 1e-9);

  const MetricField m = minkowski(2);
  CHECK(totally_normal_radius(m, Vec::Zero(2)).radius > 0.0);
}

TEST_CASE("Gauss residual") {
  const MetricField m = minkowski(4);
  const ExponentialMap em(m, Vec::Zero(4));
  CHECK(gauss_residual(em, make_vec({0.5, 0.2, 0.1, 0}), make_vec({0.1, 0.3, -0.2, 0.2})).max_residual < 1e-10);

  // w = v: the residual reduces to norm conservation.
  const MetricField k = kink(0.5);
  const ExponentialMap ek(k, make_vec({0, -0.5}));
  const Vec v = make_vec({1.0, 0.6});
  const GaussReport r = gauss_residual(ek, v, v);
  CHECK(r.max_residual < 1e-8);
  for (const auto& row : r.rows) {
    CHECK(std::isfinite(row.residual));
    CHECK(row.residual >= 0.0);
  }
  CHECK_THROWS_AS(gauss_residual(ek, make_vec({30.0, 0}), v), DomainError);
}

TEST_CASE("position field and Q") {
  const MetricField m = minkowski(4);
  const ExponentialMap em(m, Vec::Zero(4));
  const Vec q = make_vec({0.8, 0.4, 0, 0});
  const PositionData pd = position_field(em, q);
  CHECK(pd.Q == doctest::Approx(-0.48));
  CHECK((pd.P - q).norm() < 1e-12);
  const PositionData zero = position_field(em, Vec::Zero(4));
  CHECK(zero.Q == 0.0);
  CHECK(zero.P.norm() == 0.0);

  const MetricField k = kink(0.5);
  const Vec p = make_vec({0, -0.3});
  const ExponentialMap ek(k, p);
  const Vec v = make_vec({0.5, 0.4});
  const double gv = k.apply(p, v, v);
  for (double t : {0.25, 0.5, 1.0}) CHECK(world_function_Q(ek, ek.exp(t * v)) == doctest::Approx(t * t * gv).epsilon(1e-8));
  CHECK(gradQ_check(ek, make_vec({0.5, 0.2})).relative_error < 1e-3);
}

TEST_CASE("exp convergence for Minkowski tracks the shift size") {
  const MetricField m = minkowski(2);
  ConeAdaptedOptions o;
  o.region = m.domain();
  const auto fam = cone_adapted_family(m, {0.2, 0.1, 0.05}, o);
  const Vec v = make_vec({0.5, 0.2});
  // Constant metrics: the same initial velocity gives the same straight line.
  for (const auto& r : exp_convergence(m, fam, Vec::Zero(2), v, {0.5, 1.0})) CHECK(r.error < 1e-12);

  // Norm matching rescales v by sqrt(g(v,v) / g_lambda(v,v)), a change linear in lambda.
  const auto rows = exp_convergence(m, fam, Vec::Zero(2), v, {0.5, 1.0}, {}, true);
  REQUIRE(rows.size() == 3);
  const double gv = -0.25 + 0.04;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    INFO(fam[i].epsilon);
    double want = 0.0;
    for (const auto& member : {fam[i].inner, fam[i].outer}) {
      const double scale = std::sqrt(gv / member.apply(Vec::Zero(2), v, v));
      want = std::max(want, std::abs(scale - 1.0) * (v.norm() * 1.0 + v.norm()));
    }
    CHECK(rows[i].error == doctest::Approx(want).epsilon(1e-6));
  }
}

TEST_CASE("kink exp convergence is not an integrator artifact") {
  const MetricField k = kink(0.5);
  ConeAdaptedOptions o;
  o.region = kKinkRegion;
  const auto fam = cone_adapted_family(k, {0.2, 0.1, 0.05, 0.02}, o);
  const Vec p = make_vec({0, -0.5}), v = make_vec({1.0, 0.8});
  IntegratorSpec fine;
  fine.step /= 2;
  const auto a = exp_convergence(k, fam, p, v, {0.25, 0.5, 0.75, 1.0});
  const auto b = exp_convergence(k, fam, p, v, {0.25, 0.5, 0.75, 1.0}, fine);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (i > 0) CHECK(a[i].error < a[i - 1].error);
    // Each error compares two paths, each moving by at most the estimate.
    CHECK(std::abs(a[i].error - b[i].error) <= 2 * a[i].integrator_error + 1e-12);
  }
}

TEST_CASE("certificates do not depend on the worker count") {
  const MetricField k = kink(0.5);
  set_thread_count(1);
  const NormalNeighborhood a = normal_radius(ExponentialMap(k, make_vec({0.2, 0.1})));
  set_thread_count(3);
  const NormalNeighborhood b = normal_radius(ExponentialMap(k, make_vec({0.2, 0.1})));
  set_thread_count(0);
  CHECK(a.radius == b.radius);
  CHECK(a.lipschitz_forward == b.lipschitz_forward);
  CHECK(a.lipschitz_inverse == b.lipschitz_inverse);
}

TEST_CASE("geodesic error paths") {
  const MetricField k = kink(0.5);
  IntegratorSpec bad;
  bad.step = 0.0;
  CHECK_THROWS_AS(integrate_geodesic(k, Vec::Zero(2), make_vec({1, 0}), 1.0, bad), ConfigError);
  const GeodesicPath out = integrate_geodesic(k, Vec::Zero(2), make_vec({0, 5}), 1.0);
  CHECK(out.truncated);
  ExponentialMap em(k, Vec::Zero(2));
  CHECK_THROWS_AS(em.exp(make_vec({0, 5})), DomainError);
  em.restrict_to(0.1);
  CHECK_THROWS_AS(em.inverse(make_vec({0.5, 0.0})), DomainError);
  CHECK_THROWS_AS(ExponentialMap(k, make_vec({3, 0})), DomainError);
}
