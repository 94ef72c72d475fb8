// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include "lowreg/catalog.hpp"
#include "lowreg/causality.hpp"
#include "lowreg/geodesics.hpp"
#include "lowreg/parallel.hpp"
#include "lowreg/regularize.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

using namespace lowreg;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const std::vector<double> kEps{0.2, 0.1, 0.05, 0.02};

ConeAdaptedOptions pair_options(const ChartDomain& region, std::uint64_t seed) {
  ConeAdaptedOptions o;
  o.region = region;
  o.search = {2000, derive_seed(seed, "search"), true};
  o.certify = {10000, derive_seed(seed, "certify"), true};
  return o;
}

// Working regions keep a mollification margin along the axes each metric
// depends on; constant directions use the full box.
ChartDomain kink_region() { return ChartDomain({{-2, 2}, {-1, 1}}); }

std::vector<Vec> box_samples(const Vec& c, double half, std::size_t count, std::uint64_t seed) {
  std::vector<Interval> iv;
  for (Eigen::Index i = 0; i < c.size(); ++i) iv.push_back({c(i) - half, c(i) + half});
  return sample_points(ChartDomain(iv), {count, seed, false});
}

Verdict ac1_cone_sandwich() {
  const auto t0 = std::chrono::steady_clock::now();
  struct Case {
    MetricField g;
    ChartDomain region;
  };
  std::vector<Case> cases{{minkowski(4), minkowski(4).domain()},
                          {kink(0.5), kink_region()},
                          {curved_smooth(1.0), ChartDomain({{-0.8, 0.8}, {-1, 1}})}};
  std::size_t violations = 0, min_samples = SIZE_MAX, budget_failures = 0;
  double worst_ratio = 0.0;
  for (const auto& c : cases) {
    const auto fam = cone_adapted_family(c.g, kEps, pair_options(c.region, 101));
    for (const auto& p : fam) {
      const auto& cert = p.certificate;
      violations += cert.violations_inner + cert.violations_outer;
      min_samples = std::min(min_samples, cert.samples_per_side);
      const double ratio = (cert.dh_inner + cert.dh_outer) / p.epsilon;
      worst_ratio = std::max(worst_ratio, ratio);
      budget_failures += !(ratio < 1.0);
    }
  }
  const double secs = seconds_since(t0);
  return {violations == 0 && min_samples >= 10000 && budget_failures == 0 && secs <= 300.0,
          fmt::format("violations {}, min samples/side {}, max (dh_in+dh_out)/eps {:.3f}, {:.1f}s", violations,
                      min_samples, worst_ratio, secs)};
}

Verdict ac2_mollification() {
  const MetricField k = kink(0.5);
  const PartitionOfUnity pou = PartitionOfUnity::single_chart(k.domain(), kink_region());
  std::vector<double> c1;
  double sd = 0.0;
  for (double e : {0.2, 0.1, 0.05}) {
    const MollifiedMetric m = mollify(k, e, pou);
    c1.push_back(m.diagnostics.c1_error);
    sd = std::max(sd, m.diagnostics.second_difference_sup);
  }
  const bool decreasing = c1[1] < c1[0] && c1[2] < c1[1];
  // Lipschitz constant of d/dx (a x|x|) is 2a = 1.
  const double bound = 1.5 * 2.0 * 0.5;

  const MetricField m4 = minkowski(4);
  const PartitionOfUnity flat = PartitionOfUnity::single_chart(m4.domain(), m4.domain().shrunk(0.4));
  double flat_err = 0.0;
  for (double e : {0.2, 0.1}) {
    const MollifiedMetric m = mollify(m4, e, flat);
    const auto d = mollification_diagnostics(m4, m.metric, m4.domain().shrunk(0.4), m.spacing);
    flat_err = std::max({flat_err, d.c0_error, d.c1_error});
  }
  return {decreasing && sd <= bound && flat_err <= 1e-10,
          fmt::format("C1 errors {:.3e} > {:.3e} > {:.3e}, second-difference sup {:.4f} (bound {}), "
                      "Minkowski error {:.1e}",
                      c1[0], c1[1], c1[2], sd, bound, flat_err)};
}

Verdict ac3_gauss() {
  double flat = 0.0;
  const MetricField m4 = minkowski(4);
  const auto dirs = sample_directions(4, {6, 33, false});
  for (std::size_t i = 0; i + 1 < dirs.size(); i += 2) {
    const ExponentialMap em(m4, Vec::Zero(4));
    Vec v = dirs[i];
    v(0) = 1.0 + std::abs(v(0));
    flat = std::max(flat, gauss_residual(em, 0.5 * v, 0.5 * dirs[i + 1]).max_residual);
  }

  const MetricField k = kink(0.5);
  const Vec p = make_vec({0.0, -0.5}), v = make_vec({1.0, 0.6}), w = make_vec({0.3, 1.0});
  IntegratorSpec coarse, fine;
  fine.step = coarse.step / 2;
  GaussSpec gc, gf;
  gf.s_step = gc.s_step / 2;
  const GaussReport rc = gauss_residual(ExponentialMap(k, p, coarse), v, w, gc);
  const GaussReport rf = gauss_residual(ExponentialMap(k, p, fine), v, w, gf);
  std::size_t good = 0, counted = 0;
  for (std::size_t i = 0; i < rc.rows.size(); ++i) {
    if (rc.rows[i].residual <= 1e-13) continue;  // at roundoff: no convergence signal
    ++counted;
    good += rc.rows[i].residual / rf.rows[i].residual >= 1.8;
  }
  const double frac = counted ? double(good) / double(counted) : 0.0;
  return {flat < 1e-10 && rc.max_residual < 1e-4 && frac >= 0.9,
          fmt::format("Minkowski max {:.2e}, kink max {:.2e}, halving ratio >= 1.8 at {}/{} points", flat,
                      rc.max_residual, good, counted)};
}

Verdict ac4_exp_convergence() {
  const MetricField k = kink(0.5);
  const auto fam = cone_adapted_family(k, kEps, pair_options(kink_region(), 404));
  const auto rows = exp_convergence(k, fam, make_vec({0.0, -0.5}), make_vec({1.0, 0.8}), {0.25, 0.5, 0.75, 1.0});
  bool ok = rows.size() == kEps.size();
  std::string detail;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ok &= rows[i].error > rows[i].integrator_error;
    if (i > 0) ok &= rows[i].error < rows[i - 1].error;
    detail += fmt::format("{}{:.2e} (int {:.1e})", i ? ", " : "errors ", rows[i].error, rows[i].integrator_error);
  }
  ok &= !rows.empty() && rows.back().error < 1e-2;
  return {ok, detail};
}

Verdict ac5_local_cones() {
  std::vector<MetricField> metrics{minkowski(4), kink(0.5), curved_smooth(1.0, 2, ChartDomain({{-0.55, 0.55}, {-1, 1}}))};
  std::string detail;
  std::size_t total_dis = 0;
  bool enough = true;
  for (const auto& g : metrics) {
    const Vec p = Vec::Zero(g.dim());
    const ExponentialMap em(g, p);
    const double half = 0.5 * normal_radius(em).radius;
    const double tol = 1e-6;
    std::vector<Vec> qs;
    std::vector<RelationCertificate> certs;
    for (const Vec& q : box_samples(p, half, 400, 77)) {
      if (qs.size() == 100) break;
      const RelationCertificate c = relate(em, q, tol);
      if (std::abs(c.normalized) <= 2 * tol) continue;
      qs.push_back(q);
      certs.push_back(c);
    }
    enough &= qs.size() == 100;
    std::vector<int> agree(qs.size());
    parallel_for(qs.size(), [&](std::size_t i) {
      const bool oi = broken_geodesic_search(g, p, qs[i], CurveClass::Timelike).has_value();
      const bool oj = broken_geodesic_search(g, p, qs[i], CurveClass::Causal).has_value();
      agree[i] = in_I_plus(certs[i]) == oi && in_J_plus(certs[i]) == oj;
    });
    const std::size_t dis = std::count(agree.begin(), agree.end(), 0);
    const std::size_t in_i = std::count_if(certs.begin(), certs.end(), [](const auto& c) { return in_I_plus(c); });
    total_dis += dis;
    detail += fmt::format("{}{}: {} q, {} in I+, {} disagreements", detail.empty() ? "" : "; ", g.name(), qs.size(),
                          in_i, dis);
  }
  return {enough && total_dis == 0, detail};
}

Verdict ac6_grad_q() {
  struct Case {
    MetricField g;
    Vec p;
    double half;
  };
  std::vector<Case> cases{{minkowski(4), Vec::Zero(4), 0.5},
                          {kink(0.5), make_vec({0.0, -0.3}), 0.5},
                          {curved_smooth(1.0), Vec::Zero(2), 0.4}};
  bool ok = true;
  std::string detail;
  for (const auto& c : cases) {
    std::vector<Vec> qs;
    for (const Vec& q : box_samples(c.p, c.half, 400, 606)) {
      if (qs.size() == 50) break;
      if ((q - c.p).norm() < 1e-3 || std::abs(q(1)) < 0.05) continue;
      qs.push_back(q);
    }
    const ExponentialMap em(c.g, c.p);
    std::vector<double> rel(qs.size());
    parallel_for(qs.size(), [&](std::size_t i) { rel[i] = gradQ_check(em, qs[i]).relative_error; });
    const std::size_t good = std::count_if(rel.begin(), rel.end(), [](double r) { return r < 1e-3; });
    ok &= qs.size() == 50 && double(good) >= 0.95 * 50;
    detail += fmt::format("{}{} {}/{}", detail.empty() ? "" : ", ", c.g.name(), good, qs.size());
  }
  return {ok, detail};
}

Verdict ac7_boundary() {
  const MetricField k = kink(0.5);
  const Vec p = make_vec({0.0, -0.2});
  const ExponentialMap em(k, p);
  const double gxx = k.at(p)(1, 1);
  const Vec v = make_vec({0.6, 0.6 / std::sqrt(gxx)});
  // Non-affine parametrization t -> exp_p(t^2 v) of a null geodesic.
  const CausalCurve curve =
      CausalCurve::from_function([&](double t) { return t == 0.0 ? p : em.exp(t * t * v); }, 0.0, 1.0, 101);
  const BoundaryNullReport r = boundary_null_check(em, curve);
  return {r.verdict == BoundaryVerdict::OnBoundary && r.sup_distance <= 1e-6,
          fmt::format("verdict {}, collinearity {:.1e}, sup distance {:.1e}", to_string(r.verdict), r.max_collinearity,
                      r.sup_distance)};
}

Verdict ac8_push_up() {
  std::vector<MetricField> metrics{minkowski(4), kink(0.5), curved_smooth(1.0)};
  bool ok = true;
  std::string detail;
  const double tol = 1e-6;
  for (const auto& g : metrics) {
    const int n = g.dim();
    struct Triple {
      Vec p, q, r;
    };
    std::vector<Triple> triples;
    std::vector<Interval> iv(static_cast<std::size_t>(n), Interval{-0.3, 0.3});
    for (const auto& [p, d] : sample_point_directions(ChartDomain(iv), {200, 808, false})) {
      if (triples.size() == 20) break;
      try {
        // p -> q along a future null geodesic, q -> r along a timelike one.
        const Vec spatial = d.tail(n - 1);
        if (spatial.norm() < 1e-3) continue;
        const Vec vn = future_null_vector(g, p, spatial.normalized());
        const ExponentialMap ep(g, p);
        const Vec q = ep.exp(0.25 * (0.5 + 0.5 * std::abs(d(0))) * vn / std::abs(vn(0)));
        Vec w = Vec::Zero(n);
        w(0) = 1.0;
        w.tail(n - 1) = 0.5 * d.head(n - 1);
        const ExponentialMap eq(g, q);
        const Vec r = eq.exp(0.25 * w);
        if (!in_J_plus(relate(ep, q, tol)) || !in_I_plus(relate(eq, r, tol))) continue;
        triples.push_back({p, q, r});
      } catch (const DomainError&) {
      }
    }
    std::vector<int> verified(triples.size(), 0);
    parallel_for(triples.size(), [&](std::size_t i) {
      try {
        const PushUpResult res = push_up(g, triples[i].p, triples[i].q, triples[i].r, tol);
        verified[i] = verify_broken_geodesic(g, res.witness, CurveClass::Timelike, tol) &&
                      (res.witness.nodes.front() - triples[i].p).norm() == 0.0 &&
                      (res.witness.nodes.back() - triples[i].r).norm() < 1e-8;
      } catch (const NumericalError&) {
      }
    });
    const std::size_t good = std::count(verified.begin(), verified.end(), 1);
    ok &= triples.size() == 20 && good == 20;
    detail += fmt::format("{}{} {}/{}", detail.empty() ? "" : ", ", g.name(), good, triples.size());
  }
  return {ok, detail};
}

Verdict ac9_limit_curve() {
  const MetricField m4 = minkowski(4);
  std::vector<CausalCurve> curves;
  for (int n = 1; n <= 64; ++n) {
    curves.push_back(CausalCurve::from_function(
        [n](double t) { return make_vec({t, (1.0 - 1.0 / n) * t, 0.0, 0.0}); }, 0.0, 1.0, 101));
  }
  const AccumulationResult r = accumulation_curve(m4, curves, Vec::Zero(4));
  // Independent reference: arclength fraction s on the null line is (s, s, 0, 0).
  double d = 0.0;
  for (std::size_t k = 0; k < r.limit.size(); ++k) {
    const double s = r.limit.t[k];
    d = std::max(d, (r.limit.x[k] - make_vec({s, s, 0.0, 0.0})).norm());
  }
  const bool causal = r.classification.kind != CurveClass::NonCausal;
  return {d <= 1e-3 && causal,
          fmt::format("sup distance {:.1e}, class {}, members {}..{}", d, to_string(r.classification.kind),
                      r.subsequence.empty() ? 0 : r.subsequence.front() + 1,
                      r.subsequence.empty() ? 0 : r.subsequence.back() + 1)};
}

Verdict ac10_plainness() {
  const MetricField k = kink(0.5);
  const auto fam = cone_adapted_family(k, kEps, pair_options(kink_region(), 1010));
  RasterSpec rs;
  rs.box = ChartDomain({{0, 1}, {-0.6, 0.6}});
  rs.cells = 200;
  const PlainnessReport r = causal_plainness_probe(k, Vec::Zero(2), fam, rs);
  bool non_increasing = true;
  std::string gaps;
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    if (i > 0) non_increasing &= r.rows[i].gap_cells <= r.rows[i - 1].gap_cells;
    gaps += fmt::format("{}{:.3g}", i ? ", " : "", r.rows[i].gap_cells);
  }
  const bool ok = r.rows.size() == kEps.size() && non_increasing &&
                  r.rows.back().gap_cells < r.rows.front().gap_cells && r.rows.back().gap_cells <= 2.0;
  return {ok, fmt::format("gaps (cells) {}", gaps)};
}

Verdict ac11_normal_neighbourhoods() {
  const MetricField k = kink(0.5);
  std::vector<Vec> probes;
  for (double t : {-0.5, 0.0, 0.5}) probes.push_back(make_vec({t, 0.0}));  // on the kink set
  for (const Vec& q : sample_points(ChartDomain({{-1, 1}, {-0.8, 0.8}}), {7, 1111, false})) probes.push_back(q);
  std::vector<NormalNeighborhood> nn(probes.size());
  std::vector<TotallyNormalBall> tn(probes.size());
  parallel_for(probes.size(), [&](std::size_t i) {
    nn[i] = normal_radius(ExponentialMap(k, probes[i]));
    tn[i] = totally_normal_radius(k, probes[i]);
  });
  bool ok = probes.size() == 10;
  double min_r = INFINITY, max_l = 0.0;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    for (double r : {nn[i].radius, tn[i].radius}) {
      ok &= r > 0.0;
      min_r = std::min(min_r, r);
    }
    for (double l : {nn[i].lipschitz_forward, nn[i].lipschitz_inverse, tn[i].lipschitz_forward, tn[i].lipschitz_inverse}) {
      ok &= std::isfinite(l) && l > 0.0;
      max_l = std::max(max_l, l);
    }
  }
  return {ok, fmt::format("{} probes (3 on x=0), min radius {:.4g}, max bi-Lipschitz {:.4g}", probes.size(), min_r,
                          max_l)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"AC1  cone sandwich", ac1_cone_sandwich},
      {"AC2  mollification", ac2_mollification},
      {"AC3  Gauss lemma", ac3_gauss},
      {"AC4  exp convergence", ac4_exp_convergence},
      {"AC5  local cone structure", ac5_local_cones},
      {"AC6  grad Q = 2P", ac6_grad_q},
      {"AC7  boundary null geodesic", ac7_boundary},
      {"AC8  push-up", ac8_push_up},
      {"AC9  limit curves", ac9_limit_curve},
      {"AC10 causal plainness", ac10_plainness},
      {"AC11 normal neighbourhoods", ac11_normal_neighbourhoods}};
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    fmt::print("{} {:<28} {} [{:.1f}s]\n", v.pass ? "PASS" : "FAIL", name, v.detail, seconds_since(t0));
    std::fflush(stdout);
  }
  fmt::print("{} of {} criteria passed\n", criteria.size() - failed, criteria.size());
  return failed ? 1 : 0;
}
