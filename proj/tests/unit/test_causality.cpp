#include "lowreg/catalog.hpp"
#include "lowreg/causality.hpp"

#include <doctest.h>

#include <cmath>

using namespace lowreg;

namespace {

CausalCurve line(const Vec& p, const Vec& v, std::size_t n = 21) {
  return CausalCurve::from_function([&](double t) -> Vec { return p + t * v; }, 0.0, 1.0, n,
                                    [&](double) -> Vec { return v; });
}

// Closed-form Minkowski relation of q to p with a null band of half-width tol.
int flat_relation(const Vec& p, const Vec& q, double tol) {
  const Vec d = q - p;
  const double n = -d(0) * d(0) + d.tail(d.size() - 1).squaredNorm();
  const double s = n / d.squaredNorm();
  if (d(0) <= 0 || s > tol) return 0;
  return s < -tol ? 2 : 1;
}

}  // namespace

TEST_CASE("curve classification anchors") {
  const MetricField m = minkowski(2);
  const Vec o = Vec::Zero(2);
  const auto tl = classify_curve(m, line(o, make_vec({1, 0.5})), 1e-9);
  CHECK(tl.kind == CurveClass::Timelike);
  CHECK(tl.direction == TimeDirection::Future);
  CHECK(tl.failing_sample == 21);
  CHECK(classify_curve(m, line(o, make_vec({0.5, 0.5})), 1e-9).kind == CurveClass::Null);
  const auto sl = classify_curve(m, line(o, make_vec({0.5, 1.0})), 1e-9);
  CHECK(sl.kind == CurveClass::NonCausal);
  CHECK(sl.failing_sample == 0);
  const auto past = classify_curve(m, line(o, make_vec({-0.5, 0.1})), 1e-9);
  CHECK(past.kind == CurveClass::Timelike);
  CHECK(past.direction == TimeDirection::Past);

  // Timelike then null: causal. Timelike then spacelike: broken at the first bad sample.
  const auto mixed = CausalCurve::from_function(
      [](double t) -> Vec { return make_vec({t, t < 0.5 ? 0.5 * t : 0.25 + (t - 0.5)}); }, 0.0, 1.0, 11,
      [](double t) -> Vec { return make_vec({1.0, t < 0.5 ? 0.5 : 1.0}); });
  CHECK(classify_curve(m, mixed, 1e-9).kind == CurveClass::Causal);
  const auto broken = CausalCurve::from_function(
      [](double t) -> Vec { return make_vec({t, t < 0.5 ? 0.5 * t : 0.25 + 2 * (t - 0.5)}); }, 0.0, 1.0, 11,
      [](double t) -> Vec { return make_vec({1.0, t < 0.5 ? 0.5 : 2.0}); });
  const auto b = classify_curve(m, broken, 1e-9);
  CHECK(b.kind == CurveClass::NonCausal);
  CHECK(b.failing_sample == 5);

  CausalCurve one;
  one.t = {0.0};
  one.x = {o};
  one.tangent = {make_vec({1, 0})};
  CHECK_THROWS_AS(classify_curve(m, one, 1e-9), ConfigError);
  CHECK_THROWS_AS(classify_curve(m, line(o, make_vec({1, 0})), 0.0), ConfigError);
}

TEST_CASE("time reversal swaps future and past") {
  const MetricField k = kink(0.5);
  const MetricField r = k.with_reversed_orientation();
  const CausalCurve c = line(make_vec({0, -0.5}), make_vec({1.0, 0.6}));
  const auto a = classify_curve(k, c, 1e-9);
  const auto b = classify_curve(r, c, 1e-9);
  CHECK(a.kind == b.kind);
  CHECK(a.direction == TimeDirection::Future);
  CHECK(b.direction == TimeDirection::Past);

  // q in J+(p) under g iff p in J+(q) under the reversed orientation.
  const auto pairs = sample_point_directions(ChartDomain({{-0.5, 0.5}, {-0.5, 0.5}}), {30, 21, false});
  for (const auto& [p, d] : pairs) {
    const Vec q = p + 0.4 * d;
    const auto fwd = relate(ExponentialMap(k, p), q, 1e-6);
    const auto bwd = relate(ExponentialMap(r, q), p, 1e-6);
    CHECK(fwd.verdict == bwd.verdict);
  }
}

TEST_CASE("relation anchors against the flat closed form") {
  const MetricField m = minkowski(2);
  const ExponentialMap em(m, Vec::Zero(2));
  CHECK(relate(em, make_vec({0.5, 0.2})).verdict == Relation::InIPlus);
  CHECK(relate(em, make_vec({0.5, 0.5})).verdict == Relation::InJPlusOnly);
  CHECK(relate(em, make_vec({0.2, 0.5})).verdict == Relation::Outside);
  CHECK(relate(em, make_vec({-0.5, 0.0})).verdict == Relation::Outside);
  const auto self = relate(em, Vec::Zero(2));
  CHECK(self.reflexive);
  CHECK(self.verdict == Relation::InJPlusOnly);
  CHECK_THROWS_AS(relate(em, make_vec({0.5, 0}), 0.0), ConfigError);

  const MetricField m4 = minkowski(4);
  const Vec p = make_vec({-0.2, 0.1, 0.0, -0.1});
  const ExponentialMap e4(m4, p);
  for (const Vec& q : sample_points(ChartDomain::cube(4, 0.6), {200, 8, false})) {
    const int want = flat_relation(p, q, 1e-6);
    const auto c = relate(e4, q, 1e-6);
    CHECK(int(in_J_plus(c)) + int(in_I_plus(c)) == want);
  }
}

TEST_CASE("chronological future is open, causal future is closed") {
  const MetricField k = kink(0.5);
  const Vec p = make_vec({-0.3, -0.2});
  const ExponentialMap em(k, p);
  int opened = 0;
  for (const auto& [q0, d] : sample_point_directions(ChartDomain({{0.1, 0.4}, {-0.3, 0.3}}), {50, 4, false})) {
    const auto c = relate(em, q0, 1e-6);
    if (!in_I_plus(c)) continue;
    ++opened;
    // A neighbourhood of size proportional to the normalized gap stays inside.
    const double delta = 0.1 * std::abs(c.normalized) * c.v.norm();
    CHECK(in_I_plus(relate(em, q0 + delta * d, 1e-6)));
  }
  CHECK(opened > 25);

  const MetricField m = minkowski(2);
  const ExponentialMap ef(m, Vec::Zero(2));
  for (int n = 1; n <= 64; n *= 2) CHECK(in_I_plus(relate(ef, make_vec({0.5 + 0.1 / n, 0.5}))));
  CHECK(in_J_plus(relate(ef, make_vec({0.5, 0.5}))));
}

TEST_CASE("arrows") {
  const MetricField m = minkowski(4);
  const Vec p = make_vec({0.1, 0.2, 0.0, -0.1}), q = make_vec({0.5, -0.1, 0.2, 0.3});
  CHECK((arrow(ExponentialMap(m, p), q) - (q - p)).norm() < 1e-12);
  CHECK(arrow(ExponentialMap(m, p), p).norm() == 0.0);
  const double ratio = arrow_continuity(m, {{p, q}, {q, p}}, 1e-3, 5);
  CHECK(ratio <= 1.0 + 1e-9);

  // Reversing a geodesic reverses its end velocity: qp = -P(q).
  const MetricField k = kink(0.5);
  for (const auto& [a, d] : sample_point_directions(ChartDomain({{-0.4, 0.4}, {-0.4, 0.4}}), {20, 12, false})) {
    const Vec b = a + 0.3 * d;
    const PositionData pd = position_field(ExponentialMap(k, a), b);
    CHECK((arrow(ExponentialMap(k, b), a) + pd.P).norm() < 1e-6);
  }
  CHECK_THROWS_AS(arrow_continuity(k, {{p.head(2), q.head(2)}}, 0.0, 1), ConfigError);
}

TEST_CASE("push-up builds a verified timelike witness") {
  const MetricField m = minkowski(2);
  const Vec p = Vec::Zero(2), q = make_vec({0.3, 0.3}), r = make_vec({0.6, 0.4});
  const PushUpResult flat = push_up(m, p, q, r);
  CHECK(flat.join_parameter == 0.0);
  CHECK(verify_broken_geodesic(m, flat.witness, CurveClass::Timelike, 1e-6));
  CHECK((flat.witness.nodes.back() - r).norm() < 1e-9);

  const MetricField k = kink(0.5);
  const Vec pk = make_vec({0, -0.3}), qk = future_null_vector(k, pk, make_vec({0.3})) + pk;
  const Vec rk = qk + make_vec({0.3, 0.05});
  const PushUpResult res = push_up(k, pk, qk, rk);
  CHECK(verify_broken_geodesic(k, res.witness, CurveClass::Timelike, 1e-6));
  CHECK((res.witness.nodes.front() - pk).norm() == 0.0);
  CHECK((res.witness.nodes.back() - rk).norm() < 1e-9);
}

TEST_CASE("broken-geodesic approximation") {
  const MetricField m = minkowski(2);
  // Zigzag with slopes +-0.5: every leg between its corners is timelike.
  const auto zig = CausalCurve::from_function(
      [](double t) -> Vec {
        const double f = t * 4 - std::floor(t * 4);
        return make_vec({t, 0.125 * (f < 0.5 ? f : 1 - f)});
      },
      0.0, 0.75, 25);
  const BrokenGeodesic z = broken_geodesic_approx(m, zig);
  CHECK(z.nodes.size() >= 2);
  CHECK(verify_broken_geodesic(m, z, CurveClass::Timelike, 1e-6));

  // A geodesic is its own approximation.
  const MetricField k = kink(0.5);
  const GeodesicPath g = integrate_geodesic(k, make_vec({0, -0.5}), make_vec({1.0, 0.6}), 1.0);
  CausalCurve c;
  c.t = g.t;
  c.x = g.x;
  c.tangent = g.v;
  const BrokenGeodesic one = broken_geodesic_approx(k, c);
  CHECK(one.nodes.size() == 2);
  CHECK(verify_broken_geodesic(k, one, CurveClass::Timelike, 1e-6));

  CHECK_THROWS_AS(broken_geodesic_approx(m, line(Vec::Zero(2), make_vec({0.5, 1.0}))), ConfigError);
}

TEST_CASE("boundary null check") {
  const MetricField m = minkowski(2);
  const ExponentialMap em(m, Vec::Zero(2));
  const auto on = boundary_null_check(em, line(Vec::Zero(2), make_vec({0.5, 0.5})));
  CHECK(on.verdict == BoundaryVerdict::OnBoundary);
  CHECK(on.matches_geodesic);
  CHECK(on.sup_distance < 1e-6);
  CHECK(boundary_null_check(em, line(Vec::Zero(2), make_vec({0.5, 0.2}))).verdict == BoundaryVerdict::NotOnBoundary);

  // Null but not radial: turns onto the other null direction half way.
  const auto bent = CausalCurve::from_function(
      [](double t) -> Vec { return make_vec({t, t < 0.5 ? t : 1 - t}); }, 0.0, 0.8, 41);
  CHECK(boundary_null_check(em, bent).verdict == BoundaryVerdict::NotOnBoundary);

  CHECK_THROWS_AS(boundary_null_check(em, line(make_vec({0.1, 0}), make_vec({0.5, 0.5}))), ConfigError);
}

TEST_CASE("cylindrical neighbourhoods") {
  const CylindricalNeighborhood flat = cylindrical_neighborhood(minkowski(2), Vec::Zero(2));
  CHECK(flat.min_slope == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(flat.max_slope == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(flat.frame_error < 1e-12);
  CHECK(flat.halvings == 0);

  // Kink at x = 0.5: g_xx(0.5) = 1.125 normalizes the frame, and the slope at
  // chart x is sqrt(g_xx(x) / 1.125), extreme at the cylinder's x faces.
  const CylindricalNeighborhood kc = cylindrical_neighborhood(kink(0.5), make_vec({0, 0.5}));
  REQUIRE(kc.half_width == 0.5);
  const auto gxx = [](double x) { return 1 + 0.5 * x * std::abs(x); };
  const double reach = 0.5 / std::sqrt(1.125);
  CHECK(kc.min_slope == doctest::Approx(std::sqrt(gxx(0.5 - reach) / 1.125)).epsilon(1e-9));
  CHECK(kc.max_slope == doctest::Approx(std::sqrt(gxx(0.5 + reach) / 1.125)).epsilon(1e-9));

  const CylindricalNeighborhood cs = cylindrical_neighborhood(curved_smooth(3.0, 2, ChartDomain({{-3, 3}, {-3, 3}})), Vec::Zero(2));
  CHECK(cs.halvings > 0);
  CHECK(cs.min_slope > 0.5);
  CHECK(cs.max_slope < 2.0);
}

TEST_CASE("timelike curves become strictly timelike for an inner metric") {
  const MetricField m = minkowski(4);
  ConeAdaptedOptions o;
  o.region = m.domain().shrunk(0.5);
  const auto fam = cone_adapted_family(m, {0.2, 0.1}, o);
  const LuTimelikeResult ok = lu_timelike_check(line(Vec::Zero(4), make_vec({0.5, 0.25, 0, 0})), fam);
  CHECK(ok.success);
  CHECK(ok.epsilon == 0.2);
  CHECK(ok.worst_value < 0.0);
  // Null for g is spacelike for every inner member.
  CHECK_FALSE(lu_timelike_check(line(Vec::Zero(4), make_vec({0.5, 0.5, 0, 0})), fam).success);

  const MetricField k = kink(0.5);
  ConeAdaptedOptions ko;
  ko.region = ChartDomain({{-2, 2}, {-1, 1}});
  const auto kf = cone_adapted_family(k, {0.2, 0.1}, ko);
  CHECK(lu_timelike_check(line(make_vec({0, -0.5}), make_vec({1.0, 0.6})), kf).success);
}

TEST_CASE("continuous causal curves") {
  const MetricField m = minkowski(2);
  CHECK(continuous_causal_check(m, line(Vec::Zero(2), make_vec({0.5, 0.5}))).passed);

  // An excursion at sample 10 is first seen from sample 8.
  std::vector<double> t;
  std::vector<Vec> x;
  for (int k = 0; k <= 20; ++k) {
    t.push_back(0.04 * k);
    x.push_back(make_vec({0.04 * k, k == 10 ? 0.1 : 0.0}));
  }
  const ContinuousCausalReport bad = continuous_causal_check(m, CausalCurve::from_points(t, x));
  CHECK_FALSE(bad.passed);
  CHECK(bad.failing_sample == 10);

  // Reparametrization by a monotone map keeps the verdict.
  const MetricField k = kink(0.5);
  const auto c1 = line(make_vec({0, -0.4}), make_vec({0.6, 0.5}));
  const auto c2 = CausalCurve::from_function([](double s) -> Vec { return make_vec({0, -0.4}) + s * s * make_vec({0.6, 0.5}); },
                                             0.0, 1.0, 21);
  CHECK(continuous_causal_check(k, c1).passed);
  CHECK(continuous_causal_check(k, c2).passed);
}

TEST_CASE("accumulation curves") {
  const MetricField k = kink(0.5);
  const Vec p = make_vec({0, -0.3});
  const CausalCurve a = line(p, make_vec({0.6, 0.3}), 41);
  const auto same = accumulation_curve(k, std::vector<CausalCurve>(10, a), p);
  CHECK(same.tail_distance < 1e-12);
  CHECK(same.classification.kind == CurveClass::Timelike);
  for (std::size_t j = 0; j < same.limit.size(); ++j) CHECK((same.limit.x[j] - a.at(same.limit.t[j])).norm() < 1e-9);

  // Two interleaved families converging like 1/n to different lines: the
  // limit follows one of them.
  std::vector<CausalCurve> seq;
  for (int i = 0; i < 64; ++i) {
    const Vec v = make_vec({0.6, i % 2 ? -0.2 : 0.3});
    const double bump = 0.2 / (i + 1);
    seq.push_back(CausalCurve::from_function(
        [&](double s) -> Vec { return p + s * v + make_vec({0, bump * std::sin(M_PI * s)}); }, 0.0, 1.0, 41));
  }
  const auto two = accumulation_curve(k, seq, p);
  REQUIRE(two.subsequence.size() >= 3);
  const std::size_t parity = two.subsequence.front() % 2;
  for (std::size_t i : two.subsequence) CHECK(i % 2 == parity);
  const CausalCurve target = line(p, make_vec({0.6, parity ? -0.2 : 0.3}), 41);
  double sup = 0.0;
  for (std::size_t j = 0; j < two.limit.size(); ++j) sup = std::max(sup, (two.limit.x[j] - target.at(two.limit.t[j])).norm());
  CHECK(sup < 1e-3);
  CHECK(two.converged);
  CHECK(two.classification.kind == CurveClass::Timelike);

  CHECK_THROWS_AS(accumulation_curve(k, {a, a}, p), ConfigError);
}

TEST_CASE("relation rasters agree with the flat closed form away from the light cone") {
  const MetricField m = minkowski(2);
  RasterSpec spec;
  spec.box = ChartDomain({{0, 1}, {-0.5, 0.5}});
  spec.cells = 24;
  const Vec p = make_vec({0.0, 0.0});
  const auto J = relation_raster(m, p, spec, false);
  const auto I = relation_raster(m, p, spec, true);
  const double h = 1.0 / 24;
  auto centre = [&](std::size_t i, std::size_t j) { return make_vec({(i + 0.5) * h, -0.5 + (j + 0.5) * h}); };
  for (std::size_t i = 0; i < 24; ++i) {
    for (std::size_t j = 0; j < 24; ++j) {
      const Vec q = centre(i, j);
      if (std::abs(std::abs(q(1)) - q(0)) < 1e-9) {
        CHECK(J[i * 24 + j] == 1);
        continue;
      }
      const bool inside = q(0) > std::abs(q(1));
      CHECK(I[i * 24 + j] == inside);
      CHECK(J[i * 24 + j] == inside);
    }
  }
  // I+(J+(p)) = I+(p): compose through every J+ cell with the closed form.
  std::vector<unsigned char> IJ(24 * 24, 0);
  for (std::size_t a = 0; a < 24 * 24; ++a) {
    if (!J[a]) continue;
    const Vec d = centre(a / 24, a % 24);
    for (std::size_t b = 0; b < 24 * 24; ++b) {
      const Vec e = centre(b / 24, b % 24) - d;
      if (e(0) > std::abs(e(1))) IJ[b] = 1;
    }
  }
  CHECK(boundary_gap(IJ, I, 24) <= 1.0);
  CHECK_THROWS_AS(relation_raster(minkowski(3), Vec::Zero(3), spec, true), ConfigError);
}
