#include "lowreg/catalog.hpp"
#include "lowreg/regularize.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace lowreg;

namespace {

const ChartDomain kKinkRegion({{-2, 2}, {-1, 1}});

ConeAdaptedOptions options(const ChartDomain& region) {
  ConeAdaptedOptions o;
  o.region = region;
  return o;
}

}  // namespace

TEST_CASE("mollifier has unit mass") {
  const Mollifier rho;
  // Composite Simpson on the 1D profile; the product kernel integrates to the product.
  const int n = 20000;
  double s = rho.profile(-1.0) + rho.profile(1.0);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * rho.profile(-1.0 + 2.0 * i / n);
  const double z = s * (2.0 / n) / 3.0;
  CHECK(z / rho.normalization() == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(rho.profile(1.0) == 0.0);
  CHECK(rho.density(make_vec({0.11, 0.0}), 0.1) == 0.0);  // support radius <= eps

  double taps = 0.0;
  for (double t : rho.taps(0.1, 0.1 / 8)) taps += t;
  CHECK(taps == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("partition of unity sums to one and cutoffs dominate weights") {
  const ChartDomain domain({{-2, 2}, {-1.4, 1.4}});
  const PartitionOfUnity pou = PartitionOfUnity::slabs(domain, kKinkRegion, 1, 3);
  REQUIRE(pou.size() == 3);
  for (const auto& p : sample_points(kKinkRegion, {500, 4, true})) {
    double sum = 0.0;
    for (std::size_t i = 0; i < pou.size(); ++i) {
      const double z = pou.weight(i, p);
      sum += z;
      CHECK(pou.cutoff(i, p) * z == doctest::Approx(z).epsilon(1e-14));
      if (z > 0) CHECK(pou.chart(i).contains(p));
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-10));
  }
  CHECK_THROWS_AS(PartitionOfUnity::slabs(domain, kKinkRegion, 0, 2), ConfigError);
}

TEST_CASE("mollification of a constant metric is exact") {
  const MetricField m = minkowski(4);
  const ChartDomain inner = m.domain().shrunk(0.4);
  const PartitionOfUnity pou = PartitionOfUnity::single_chart(m.domain(), inner);
  const MollifiedMetric mm = mollify(m, 0.2, pou);
  for (const auto& p : sample_points(inner, {200, 3, true})) CHECK((mm.metric.at(p) - m.at(p)).norm() == 0.0);
}

TEST_CASE("kink mollification converges in C1 with bounded second differences") {
  const MetricField k = kink(0.5);
  const PartitionOfUnity pou = PartitionOfUnity::single_chart(k.domain(), kKinkRegion);
  double prev = INFINITY;
  for (double e : {0.2, 0.1, 0.05}) {
    const MollifiedMetric mm = mollify(k, e, pou);
    CHECK(mm.diagnostics.c1_error < prev);
    prev = mm.diagnostics.c1_error;
    CHECK(mm.diagnostics.second_difference_sup <= 1.5);
    CHECK(check_metric(mm.metric, kKinkRegion, {300, 5, true}).ok());
    // Independent C0 oracle: g_xx * rho is within the bump's reach of g_xx,
    // |a x|x| - a y|y|| <= 2a max|x| |x - y| <= 2 * 0.5 * 1.2 * eps.
    for (const auto& p : sample_points(kKinkRegion, {100, 6, true})) {
      CHECK(std::abs(mm.metric.at(p)(1, 1) - k.at(p)(1, 1)) <= 1.2 * e);
    }
  }
}

TEST_CASE("mollification rejects impossible geometry") {
  const MetricField k = kink(0.5);
  const PartitionOfUnity pou = PartitionOfUnity::single_chart(k.domain(), kKinkRegion);
  CHECK_THROWS_AS(mollify(k, 0.5, pou), ConfigError);   // stencil leaves the chart
  CHECK_THROWS_AS(mollify(k, 0.1, pou, Mollifier{}, GridSpec{4}), ConfigError);
  CHECK_THROWS_AS(mollify(k, -0.1, pou), ConfigError);
}

TEST_CASE("timelike one-form anchors") {
  struct Case {
    MetricField g;
    ChartDomain region;
  };
  for (const auto& c : {Case{minkowski(4), minkowski(4).domain()}, Case{kink(0.5), kKinkRegion},
                        Case{curved_smooth(1.0), ChartDomain({{-0.8, 0.8}, {-1, 1}})}}) {
    INFO(c.g.name());
    const PartitionOfUnity pou = PartitionOfUnity::single_chart(c.g.domain(), c.region);
    const TimelikeOneForm w = build_timelike_oneform(c.g, pou, 0.1);
    CHECK(w.worst_inverse_norm < 0.0);
    for (const auto& p : sample_points(c.region, {50, 2, true})) {
      Vec want = Vec::Zero(c.g.dim());
      want(0) = -1.0;
      CHECK((w.omega.at(p) - want).norm() < 1e-12);
    }
  }
}

TEST_CASE("causal lower bound against a brute-force minimum") {
  const MetricField m = minkowski(4);
  const PartitionOfUnity pou = PartitionOfUnity::single_chart(m.domain(), m.domain());
  const TimelikeOneForm w = build_timelike_oneform(m, pou, 0.1);
  const CausalLowerBound b = estimate_causal_lower_bound(m, w.omega, m.domain(), {}, {4000, 9, true}, 0.1);

  // Independent oracle: Gaussian directions, keep the causal ones.
  std::mt19937_64 rng(12345);
  std::normal_distribution<double> n01;
  double brute = INFINITY;
  for (int k = 0; k < 100000; ++k) {
    Vec x(4);
    for (int i = 0; i < 4; ++i) x(i) = n01(rng);
    x.normalize();
    if (-x(0) * x(0) + x.tail(3).squaredNorm() <= 0) brute = std::min(brute, std::abs(x(0)));
  }
  CHECK(brute >= 1.0 / std::sqrt(2.0));
  CHECK(brute == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-2));
  CHECK(b.c == doctest::Approx(0.9 / std::sqrt(2.0)).epsilon(1e-9));
  CHECK(b.sampled_min == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-9));

  // Unit null X with g_xx = 1 - a at x = -1: (X^0)^2 = g_xx (X^1)^2, so min |X^0| = sqrt(g_xx / (1 + g_xx)).
  const MetricField k = kink(0.5);
  const PartitionOfUnity kp = PartitionOfUnity::single_chart(k.domain(), kKinkRegion);
  const TimelikeOneForm kw = build_timelike_oneform(k, kp, 0.1);
  const CausalLowerBound kb = estimate_causal_lower_bound(k, kw.omega, kKinkRegion, {}, {4000, 9, true}, 0.1);
  const double widest = std::sqrt(0.5 / 1.5);
  CHECK(kb.sampled_min >= widest - 1e-12);
  CHECK(kb.sampled_min == doctest::Approx(widest).epsilon(1e-3));
  CHECK(kb.c == doctest::Approx(0.9 * kb.sampled_min));
}

TEST_CASE("eta selection") {
  const MetricField m = minkowski(2);
  const PartitionOfUnity mp = PartitionOfUnity::single_chart(m.domain(), m.domain());
  MollificationCache mc(m, mp, Mollifier{}, GridSpec{});
  const EtaSelection flat = select_eta(mc, -0.05, 0.6, m.domain(), {}, {500, 3, true});
  CHECK(flat.eta == 0.05);
  CHECK(flat.halvings == 0);

  const MetricField k = kink(0.5);
  const PartitionOfUnity kp = PartitionOfUnity::single_chart(k.domain(), kKinkRegion);
  MollificationCache kc(k, kp, Mollifier{}, GridSpec{});
  const EtaSelection e1 = select_eta(kc, -0.05, 0.64, kKinkRegion, {}, {500, 3, true});
  CHECK(e1.eta > 0.0);
  CHECK(e1.eta <= 0.05);
  const EtaSelection e2 = select_eta(kc, -0.1, 0.64, kKinkRegion, {}, {500, 3, true});
  CHECK(e2.eta >= e1.eta);

  // Re-verify the bound on a fresh sample set.
  const MetricField ge = kc.get(e1.eta).metric;
  double worst = 0.0;
  for (const auto& [p, d] : sample_point_directions(kKinkRegion, {3000, 777, false})) {
    const Mat g = k.at(p);
    if (d.dot(g * d) > 0) continue;
    worst = std::max(worst, std::abs(d.dot((ge.at(p) - g) * d)));
  }
  CHECK(worst <= 0.05 * 0.64 * 0.64 / 2 * 1.05);
}

TEST_CASE("cone-adapted pair for Minkowski is a rank-one shift") {
  const MetricField m = minkowski(4);
  const ConeAdaptedPair p = cone_adapted_pair(m, 0.1, options(m.domain()));
  CHECK(p.lambda_outer < 0.0);
  CHECK(p.lambda_outer >= -0.05);
  CHECK(p.lambda_inner > 0.0);
  const Vec o = Vec::Zero(4), v = make_vec({1, 1, 0, 0});
  CHECK(p.outer.apply(o, v, v) == doctest::Approx(p.lambda_outer).epsilon(1e-12));
  CHECK(p.certificate.dh_outer == doctest::Approx(std::abs(p.lambda_outer)).epsilon(1e-12));
  CHECK(p.certificate.passed(0.1));
}

TEST_CASE("cone-adapted kink family satisfies the pair invariants") {
  const MetricField k = kink(0.5);
  const auto fam = cone_adapted_family(k, {0.2, 0.1, 0.05, 0.02}, options(kKinkRegion));
  REQUIRE(fam.size() == 4);
  for (const auto& p : fam) {
    INFO(p.epsilon);
    CHECK(p.certificate.passed(p.epsilon));
    CHECK(p.certificate.samples_per_side >= 10000);
    for (double lam : {p.lambda_inner, p.lambda_outer}) CHECK(std::abs(lam) < p.epsilon);
    CHECK(p.eta_inner > 0.0);
    CHECK(p.eta_inner <= std::abs(p.lambda_inner));
    CHECK(p.eta_outer > 0.0);
    CHECK(p.eta_outer <= std::abs(p.lambda_outer));
  }
  // Fresh-seed re-check of the outer cone at eps = 0.1.
  const auto& p1 = fam[1];
  REQUIRE(p1.epsilon == 0.1);
  const ConeComparison c = cone_comparison(k, p1.outer, kKinkRegion, {10000, 2718281, true});
  CHECK(c.violations == 0);
  const ConeComparison ci = cone_comparison(p1.inner, k, kKinkRegion, {10000, 3141592, true});
  CHECK(ci.violations == 0);
}

TEST_CASE("certification detects a broken sandwich") {
  const MetricField m = minkowski(2);
  const PairCertificate c = certify_pair(m, m, m, m.domain(), {500, 1, true});
  CHECK(c.violations_inner > 0);
  CHECK(c.violations_outer > 0);
  CHECK_FALSE(c.passed(0.1));
}
