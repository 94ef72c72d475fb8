#include "lowreg/regularize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace lowreg {
namespace {

std::string describe(const Vec& p) {
  std::ostringstream os;
  os << '(';
  for (Eigen::Index i = 0; i < p.size(); ++i) os << (i ? "," : "") << p(i);
  os << ')';
  return os.str();
}

struct ConeSample {
  Vec point;
  Vec vector;
  Mat g;
};

// h-unit vectors of the closed cone {g(v,v) <= level |v|_h^2}.
std::vector<ConeSample> cone_samples(const MetricField& g, const ChartDomain& region, const RiemannianBackground& h,
                                     const SamplerSpec& sampler, double level) {
  std::vector<ConeSample> out;
  for (const auto& s : sample_point_directions(region, sampler)) {
    const Mat G = g.at(s.point);
    const Mat H = h.at(s.point);
    const Vec axis = future_axis(G, H, g.time_orientation(s.point));
    out.push_back({s.point, project_to_cone(G, H, axis, s.direction, level), G});
  }
  return out;
}

}  // namespace

CausalLowerBound estimate_causal_lower_bound(const MetricField& g, const OneFormField& omega, const ChartDomain& region,
                                             const RiemannianBackground& h, const SamplerSpec& sampler, double margin) {
  if (!(margin >= 0 && margin < 1)) throw ConfigError("causal lower bound margin must lie in [0,1)");
  CausalLowerBound b;
  b.sampled_min = std::numeric_limits<double>::infinity();
  Vec worst;
  for (const auto& s : cone_samples(g, region, h, sampler, 0.0)) {
    const double v = std::abs(omega.at(s.point).dot(s.vector));
    ++b.samples;
    if (v < b.sampled_min) {
      b.sampled_min = v;
      worst = s.point;
    }
  }
  if (b.samples == 0) throw ConfigError("causal lower bound needs at least one sample");
  if (!(b.sampled_min > 0)) {
    throw NumericalError("one-form vanishes on a sampled causal vector at " + describe(worst));
  }
  b.c = (1.0 - margin) * b.sampled_min;
  return b;
}

MollificationCache::MollificationCache(MetricField g, PartitionOfUnity pou, Mollifier rho, GridSpec grid)
    : g_(std::move(g)), pou_(std::move(pou)), rho_(rho), grid_(grid) {}

const MollifiedMetric& MollificationCache::get(double eps) {
  auto it = cache_.find(eps);
  if (it != cache_.end()) return *it->second;
  auto m = std::make_unique<MollifiedMetric>(mollify(g_, eps, pou_, rho_, grid_));
  return *cache_.emplace(eps, std::move(m)).first->second;
}

EtaSelection select_eta(MollificationCache& cache, double lambda, double c, const ChartDomain& region,
                        const RiemannianBackground& h, const SamplerSpec& sampler, double cone_level) {
  if (lambda == 0.0) throw ConfigError("select_eta needs lambda != 0");
  if (!(c > 0)) throw ConfigError("select_eta needs c > 0");
  const MetricField& g = cache.source();
  const auto samples = cone_samples(g, region, h, sampler, cone_level);
  EtaSelection sel;
  sel.bound = std::abs(lambda) * c * c / 2.0;
  constexpr int kFloor = 16;
  for (int j = 0; j <= kFloor; ++j) {
    const double eta = std::abs(lambda) / std::ldexp(1.0, j);
    const MollifiedMetric* m = nullptr;
    try {
      m = &cache.get(eta);
    } catch (const ConfigError&) {
      continue;  // scale too large for the cover; smaller scales may fit
    }
    double dev = 0.0;
    for (const auto& s : samples) {
      dev = std::max(dev, std::abs(s.vector.dot((m->metric.at(s.point) - s.g) * s.vector)));
      if (dev > sel.bound) break;
    }
    if (dev <= sel.bound) {
      sel.eta = eta;
      sel.deviation = dev;
      sel.halvings = j;
      return sel;
    }
  }
  throw NumericalError("select_eta: search floor |lambda|/2^16 reached without meeting the deviation bound");
}

MetricField rank_one_shift(const MollifiedMetric& base, const OneFormField& omega, double lambda, std::string name) {
  const MetricField gm = base.metric;
  MetricDefinition def = gm.definition();
  def.name = std::move(name);
  def.components = [gm, omega, lambda](const Vec& p) {
    const Vec w = omega.at(p);
    return Mat(gm.raw(p) + lambda * w * w.transpose());
  };
  def.derivatives = [gm, omega, lambda](const Vec& p, std::array<Mat, kMaxDim>& dg) {
    const MetricJet j = gm.jet(p);
    const Vec w = omega.at(p);
    const Mat dw = omega.derivatives(p);
    for (int k = 0; k < gm.dim(); ++k) {
      const Vec dk = dw.row(k).transpose();
      dg[static_cast<std::size_t>(k)] = j.dg[static_cast<std::size_t>(k)] + lambda * (dk * w.transpose() + w * dk.transpose());
    }
  };
  // The one-form may vary along the partition axis even where g_eta does not.
  def.active_axes.reset();
  def.regularity = Regularity::Smooth;
  return MetricField(std::move(def));
}

PairCertificate certify_pair(const MetricField& g, const MetricField& inner, const MetricField& outer,
                             const ChartDomain& region, const SamplerSpec& sampler, const RiemannianBackground& h) {
  PairCertificate cert;
  cert.seed = sampler.seed;
  cert.samples_per_side = sampler.count;
  SamplerSpec outer_spec = sampler;
  outer_spec.seed = derive_seed(sampler.seed, "certify/outer");
  SamplerSpec inner_spec = sampler;
  inner_spec.seed = derive_seed(sampler.seed, "certify/inner");
  const auto outer_cmp = cone_comparison(g, outer, region, outer_spec, h);
  const auto inner_cmp = cone_comparison(inner, g, region, inner_spec, h);
  cert.samples_per_side = std::min(outer_cmp.samples, inner_cmp.samples);
  cert.violations_outer = outer_cmp.violations;
  cert.violations_inner = inner_cmp.violations;
  cert.worst_margin_outer = outer_cmp.worst_margin;
  cert.worst_margin_inner = inner_cmp.worst_margin;
  cert.worst_point_outer = outer_cmp.worst_point;
  cert.worst_point_inner = inner_cmp.worst_point;
  const SamplerSpec dh_spec{sampler.count, derive_seed(sampler.seed, "certify/dh"), true};
  cert.dh_outer = metric_distance(outer, g, region, dh_spec, h).value;
  cert.dh_inner = metric_distance(inner, g, region, dh_spec, h).value;
  const SamplerSpec sig_spec{std::max<std::size_t>(sampler.count / 10, 100), derive_seed(sampler.seed, "certify/sig"),
                             true};
  cert.lorentzian = check_metric(inner, region, sig_spec).ok() && check_metric(outer, region, sig_spec).ok();
  return cert;
}

ConeAdaptedPair cone_adapted_pair(const MetricField& g, double eps, const ConeAdaptedOptions& options,
                                  MollificationCache* cache, const TimelikeOneForm* omega) {
  if (!(eps > 0)) throw ConfigError("cone_adapted_pair needs eps > 0");
  const ChartDomain& region = options.region;
  if (region.dim() != g.dim()) throw ConfigError("cone_adapted_pair region dimension mismatch");
  const PartitionOfUnity pou = options.pou ? *options.pou : PartitionOfUnity::single_chart(g.domain(), region);
  if (!pou.working().contains(region)) throw ConfigError("certification region must lie inside the working box");

  std::optional<MollificationCache> local_cache;
  if (!cache) {
    local_cache.emplace(g, pou, options.mollifier, options.grid);
    cache = &*local_cache;
  }
  std::optional<TimelikeOneForm> local_omega;
  if (!omega) {
    std::vector<int> axes = g.active_axes();
    if (auto s = pou.split_axis()) axes.push_back(*s);
    const double seed_eps = axes.empty() ? eps : std::min(eps, pou.max_epsilon(axes));
    local_omega = build_timelike_oneform(g, pou, seed_eps, options.mollifier, options.grid,
                                         {512, derive_seed(options.search.seed, "omega"), true});
    omega = &*local_omega;
  }

  const SamplerSpec c_spec{options.search.count, derive_seed(options.search.seed, "c"), true};
  const auto bound = estimate_causal_lower_bound(g, omega->omega, region, options.h, c_spec, options.margin);

  ConeAdaptedPair pair{eps, g, g, omega->omega, bound.c, 0, 0, 0, 0, {}};
  const SamplerSpec eta_spec{options.search.count, derive_seed(options.search.seed, "eta"), true};
  const SamplerSpec dh_spec{options.search.count, derive_seed(options.search.seed, "dh"), true};

  for (int side : {-1, +1}) {
    bool found = false;
    std::string last_failure = "no candidate tried";
    for (int j = 0; j < options.lambda_steps && !found; ++j) {
      const double lambda = side * (eps / 4.0) / std::ldexp(1.0, j);
      // The inner side must keep g_eta-causal vectors away from the widened
      // g-cone, so the deviation bound is enforced on that wider cone.
      const double level = side > 0 ? std::abs(lambda) * bound.c * bound.c / 2.0 : 0.0;
      EtaSelection sel;
      try {
        sel = select_eta(*cache, lambda, bound.c, region, options.h, eta_spec, level);
      } catch (const NumericalError& e) {
        last_failure = e.what();
        continue;
      }
      MetricField shifted = rank_one_shift(cache->get(sel.eta), omega->omega, lambda,
                                           g.name() + (side < 0 ? "/outer" : "/inner"));
      const double dh = metric_distance(shifted, g, region, dh_spec, options.h).value;
      if (!(dh < eps / 2.0)) {
        last_failure = "d_h " + std::to_string(dh) + " >= eps/2";
        continue;
      }
      found = true;
      if (side < 0) {
        pair.outer = shifted;
        pair.lambda_outer = lambda;
        pair.eta_outer = sel.eta;
      } else {
        pair.inner = shifted;
        pair.lambda_inner = lambda;
        pair.eta_inner = sel.eta;
      }
    }
    if (!found) {
      throw NumericalError(std::string("cone_adapted_pair: no admissible ") + (side < 0 ? "outer" : "inner") +
                           " shift at eps=" + std::to_string(eps) + " (" + last_failure + ")");
    }
  }

  SamplerSpec cert_spec = options.certify;
  cert_spec.seed = derive_seed(options.certify.seed, "certify");
  pair.certificate = certify_pair(g, pair.inner, pair.outer, region, cert_spec, options.h);
  if (!pair.certificate.passed(eps)) {
    const auto& c = pair.certificate;
    std::ostringstream os;
    os << "cone_adapted_pair certification failed at eps=" << eps << ": violations outer " << c.violations_outer
       << " (worst margin " << c.worst_margin_outer << " at " << describe(c.worst_point_outer) << "), inner "
       << c.violations_inner << " (worst margin " << c.worst_margin_inner << " at " << describe(c.worst_point_inner)
       << "), d_h sum " << c.dh_outer + c.dh_inner << ", lorentzian " << c.lorentzian;
    throw NumericalError(os.str());
  }
  return pair;
}

std::vector<ConeAdaptedPair> cone_adapted_family(const MetricField& g, const std::vector<double>& eps,
                                                 const ConeAdaptedOptions& options) {
  if (eps.empty()) throw ConfigError("cone_adapted_family needs at least one scale");
  const PartitionOfUnity pou = options.pou ? *options.pou : PartitionOfUnity::single_chart(g.domain(), options.region);
  MollificationCache cache(g, pou, options.mollifier, options.grid);
  std::vector<int> axes = g.active_axes();
  if (auto s = pou.split_axis()) axes.push_back(*s);
  const double largest = *std::max_element(eps.begin(), eps.end());
  const double seed_eps = axes.empty() ? largest : std::min(largest, pou.max_epsilon(axes));
  const auto omega = build_timelike_oneform(g, pou, seed_eps, options.mollifier, options.grid,
                                            {512, derive_seed(options.search.seed, "omega"), true});
  ConeAdaptedOptions opts = options;
  opts.pou = pou;
  std::vector<ConeAdaptedPair> out;
  for (double e : eps) out.push_back(cone_adapted_pair(g, e, opts, &cache, &omega));
  return out;
}

}  // namespace lowreg
