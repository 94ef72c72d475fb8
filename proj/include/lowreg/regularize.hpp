#pragma once

#include "lowreg/metric.hpp"
#include "lowreg/sampling.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace lowreg {

/// Product bump mollifier rho(u) = prod_k phi(u_k) / Z with
/// phi(u) = exp(-s / (1 - u^2)) on |u| < 1 and unit total mass.
class Mollifier {
 public:
  explicit Mollifier(double steepness = 1.0);

  double steepness() const { return steepness_; }
  /// Unnormalized 1D profile phi.
  double profile(double u) const;
  /// Z = integral of phi over [-1, 1].
  double normalization() const { return normalization_; }
  /// rho_eps(x) = eps^{-n} rho(x / eps).
  double density(const Vec& x, double eps) const;
  /// Discrete 1D taps for grid spacing h, renormalized to sum exactly to 1;
  /// tap j corresponds to the offset (j - J) h with J = (taps - 1) / 2.
  std::vector<double> taps(double eps, double spacing) const;

 private:
  double steepness_;
  double normalization_;
};

struct GridSpec {
  /// Grid cells per mollification scale; at least 8.
  int cells_per_eps = 8;
};

/// Finite cover of the working box by chart slabs with smooth weights zeta_i
/// (summing to 1 on a neighbourhood of the working box) and cutoffs chi_i
/// (equal to 1 near supp zeta_i, supported in the chart U_i).
class PartitionOfUnity {
 public:
  /// One chart U = domain, zeta = chi = 1.
  static PartitionOfUnity single_chart(const ChartDomain& domain, const ChartDomain& working);
  /// `pieces` slabs along `axis`.
  static PartitionOfUnity slabs(const ChartDomain& domain, const ChartDomain& working, int axis, int pieces);

  std::size_t size() const { return charts_.size(); }
  const ChartDomain& domain() const { return domain_; }
  const ChartDomain& working() const { return working_; }
  const ChartDomain& chart(std::size_t i) const { return charts_[i]; }
  std::optional<int> split_axis() const { return axis_; }

  double weight(std::size_t i, const Vec& p) const;
  double weight_derivative(std::size_t i, const Vec& p, int k) const;
  double cutoff(std::size_t i, const Vec& p) const;
  /// Interval along the split axis outside which zeta_i vanishes.
  Interval weight_support(std::size_t i) const;

  /// Largest scale for which the glued mollification equals g * rho_eps on
  /// the whole working box, given the axes it convolves along.
  double max_epsilon(const std::vector<int>& axes) const;

 private:
  struct Ramp {
    double start = 0.0;  // ramp rises from 0 at start to 1 at start + width
    double width = 0.0;
    bool always_one = false;
    double value(double x) const;
    double derivative(double x) const;
  };

  ChartDomain domain_;
  ChartDomain working_;
  std::optional<int> axis_;
  std::vector<ChartDomain> charts_;
  std::vector<Ramp> cumulative_;              // F_0 .. F_k; zeta_i = F_{i-1} - F_i
  std::vector<std::pair<Ramp, Ramp>> cutoff_;  // rising left edge, falling right edge (as 1 - ramp)
  double interior_reach_ = 0.0;
};

/// Values of m smoothed scalar components on a uniform grid over the active
/// axes, with tensor-product Catmull-Rom interpolation (C^1, exact on
/// constants and linear functions).
class GridField {
 public:
  GridField(std::vector<int> axes, std::vector<double> origin, double spacing, std::vector<std::size_t> counts,
            int components, std::vector<double> data);

  /// Writes m values and, if derivs is given, m derivatives per axis in
  /// derivs[a * m + c] (a indexes the active axes in order).
  void eval(const Vec& p, double* values, double* derivs) const;

  const std::vector<int>& axes() const { return axes_; }
  int components() const { return m_; }
  double spacing() const { return h_; }
  std::size_t nodes() const { return data_.size() / static_cast<std::size_t>(m_); }

 private:
  std::vector<int> axes_;
  std::vector<double> origin_;
  double h_;
  std::vector<std::size_t> counts_;
  std::vector<std::size_t> strides_;
  int m_;
  std::vector<double> data_;
};

struct MollificationDiagnostics {
  double c0_error = 0.0;
  double c1_error = 0.0;
  /// Sup of second differences (step = grid spacing) over the probe grid.
  double second_difference_sup = 0.0;
  std::size_t probes = 0;
};

struct MollifiedMetric {
  MetricField metric;
  double epsilon = 0.0;
  double spacing = 0.0;
  MollificationDiagnostics diagnostics;
};

/// Chart-wise convolution sum_i chi_i ((zeta_i g) * rho_eps), tabulated on a
/// grid over the working box and interpolated. Only the metric's active axes
/// are convolved (convolution along a constant direction is the identity).
MollifiedMetric mollify(const MetricField& g, double eps, const PartitionOfUnity& pou, const Mollifier& rho = Mollifier{},
                        const GridSpec& grid = {});

/// C^0 / C^1 distance and second-difference sup on a probe grid of `region`.
MollificationDiagnostics mollification_diagnostics(const MetricField& source, const MetricField& smooth,
                                                   const ChartDomain& region, double second_difference_step);

/// Smooth one-form sum_i zeta_i (omega_tilde * rho_{eps_i}).
class OneFormField {
 public:
  OneFormField() = default;
  OneFormField(PartitionOfUnity pou, std::vector<std::shared_ptr<const GridField>> charts, int dim);

  int dim() const { return n_; }
  Vec at(const Vec& p) const;
  /// d(k, j) = partial_k omega_j.
  Mat derivatives(const Vec& p) const;

 private:
  std::optional<PartitionOfUnity> pou_;
  std::vector<std::shared_ptr<const GridField>> charts_;
  int n_ = 0;
};

struct TimelikeOneForm {
  OneFormField omega;
  std::vector<double> chart_scales;
  /// max over probes of g^{-1}(omega, omega) (must be negative).
  double worst_inverse_norm = 0.0;
};

/// Mollifies omega_tilde = g(X, .) chart by chart, halving each chart scale
/// from eps_seed until it is timelike at every probe of that chart, then glues
/// with the partition weights.
TimelikeOneForm build_timelike_oneform(const MetricField& g, const PartitionOfUnity& pou, double eps_seed,
                                       const Mollifier& rho = Mollifier{}, const GridSpec& grid = {},
                                       const SamplerSpec& probes = {512, 7, true});

struct CausalLowerBound {
  double c = 0.0;
  double sampled_min = 0.0;
  std::size_t samples = 0;
};

/// (1 - margin) * min |omega(X)| over sampled g-causal h-unit X in K.
CausalLowerBound estimate_causal_lower_bound(const MetricField& g, const OneFormField& omega, const ChartDomain& region,
                                             const RiemannianBackground& h, const SamplerSpec& sampler,
                                             double margin = 0.1);

/// Memoizes mollifications of one metric by scale.
class MollificationCache {
 public:
  MollificationCache(MetricField g, PartitionOfUnity pou, Mollifier rho, GridSpec grid);
  const MollifiedMetric& get(double eps);
  const MetricField& source() const { return g_; }

 private:
  MetricField g_;
  PartitionOfUnity pou_;
  Mollifier rho_;
  GridSpec grid_;
  std::map<double, std::unique_ptr<MollifiedMetric>> cache_;
};

struct EtaSelection {
  double eta = 0.0;
  double deviation = 0.0;  // sampled sup |g_eta(X,X) - g(X,X)|
  double bound = 0.0;      // |lambda| c^2 / 2
  int halvings = 0;
};

/// Largest eta in {|lambda|, |lambda|/2, ...} (floor |lambda| / 2^16) with
/// sampled sup |g_eta(X,X) - g(X,X)| <= |lambda| c^2 / 2 over h-unit X in the
/// cone {g(X,X) <= cone_level |X|_h^2}.
EtaSelection select_eta(MollificationCache& cache, double lambda, double c, const ChartDomain& region,
                        const RiemannianBackground& h, const SamplerSpec& sampler, double cone_level = 0.0);

/// g_eta + lambda omega (x) omega on the working box.
MetricField rank_one_shift(const MollifiedMetric& base, const OneFormField& omega, double lambda, std::string name);

struct PairCertificate {
  std::uint64_t seed = 0;
  std::size_t samples_per_side = 0;
  std::size_t violations_outer = 0;  // g-causal vectors not outer-timelike
  std::size_t violations_inner = 0;  // inner-causal vectors not g-timelike
  double worst_margin_outer = 0.0;
  double worst_margin_inner = 0.0;
  Vec worst_point_outer;
  Vec worst_point_inner;
  double dh_outer = 0.0;
  double dh_inner = 0.0;
  bool lorentzian = false;
  bool passed(double eps) const {
    return violations_outer == 0 && violations_inner == 0 && dh_outer + dh_inner < eps && lorentzian;
  }
};

struct ConeAdaptedPair {
  double epsilon = 0.0;
  MetricField inner;
  MetricField outer;
  OneFormField omega;
  double c = 0.0;
  double lambda_inner = 0.0;
  double lambda_outer = 0.0;
  double eta_inner = 0.0;
  double eta_outer = 0.0;
  PairCertificate certificate;
};

struct ConeAdaptedOptions {
  ChartDomain region;
  std::optional<PartitionOfUnity> pou;  // default: single chart on the metric's domain
  Mollifier mollifier;
  GridSpec grid;
  RiemannianBackground h;
  SamplerSpec search{2000, 42, true};
  SamplerSpec certify{10000, 4242, true};
  double margin = 0.1;
  int lambda_steps = 24;
};

/// Certifies inner < g < outer on sampled vectors, the distance budget and
/// the Lorentzian signature of both metrics.
PairCertificate certify_pair(const MetricField& g, const MetricField& inner, const MetricField& outer,
                             const ChartDomain& region, const SamplerSpec& sampler, const RiemannianBackground& h = {});

/// Smooth metrics inner < g < outer with d_h(inner, g) + d_h(outer, g) < eps.
/// Throws NumericalError when the search or the certification fails.
ConeAdaptedPair cone_adapted_pair(const MetricField& g, double eps, const ConeAdaptedOptions& options,
                                  MollificationCache* cache = nullptr, const TimelikeOneForm* omega = nullptr);

/// Pairs for a list of scales sharing one one-form and mollification cache.
std::vector<ConeAdaptedPair> cone_adapted_family(const MetricField& g, const std::vector<double>& eps,
                                                 const ConeAdaptedOptions& options);

}  // namespace lowreg
