#include "lowreg/regularize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace lowreg {
namespace {

double psi(double u) { return u > 0 ? std::exp(-1.0 / u) : 0.0; }
double psi_prime(double u) { return u > 0 ? std::exp(-1.0 / u) / (u * u) : 0.0; }

// C-infinity step: 0 for u <= 0, 1 for u >= 1.
double smooth_step(double u) {
  const double a = psi(u);
  const double b = psi(1.0 - u);
  return a / (a + b);
}

double smooth_step_derivative(double u) {
  if (u <= 0.0 || u >= 1.0) return 0.0;
  const double a = psi(u);
  const double b = psi(1.0 - u);
  const double s = a + b;
  return (psi_prime(u) * b + a * psi_prime(1.0 - u)) / (s * s);
}

std::vector<int> merged_axes(std::vector<int> axes, std::optional<int> extra) {
  if (extra) axes.push_back(*extra);
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  return axes;
}

// Convolves a row-major block (dims..., m) along dims[ax] with symmetric taps.
std::vector<double> convolve_axis(const std::vector<double>& in, std::vector<std::size_t>& dims, std::size_t ax, int m,
                                  const std::vector<double>& taps) {
  const std::size_t span = taps.size() - 1;
  const std::size_t n_in = dims[ax];
  const std::size_t n_out = n_in - span;
  std::size_t inner = static_cast<std::size_t>(m);
  for (std::size_t b = ax + 1; b < dims.size(); ++b) inner *= dims[b];
  std::size_t outer = 1;
  for (std::size_t b = 0; b < ax; ++b) outer *= dims[b];
  std::vector<double> out(outer * n_out * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < n_out; ++j) {
      double* dst = &out[(o * n_out + j) * inner];
      for (std::size_t t = 0; t < taps.size(); ++t) {
        const double w = taps[t];
        if (w == 0.0) continue;
        const double* src = &in[(o * n_in + j + t) * inner];
        for (std::size_t r = 0; r < inner; ++r) dst[r] += w * src[r];
      }
    }
  }
  dims[ax] = n_out;
  return out;
}

using ComponentSampler = std::function<void(const Vec&, double*)>;

// Tabulates sum_i chi_i ((zeta_i f) * rho_eps) on a grid over the working box.
std::shared_ptr<const GridField> smooth_on_grid(const ComponentSampler& f, int m, const ChartDomain& source_domain,
                                                const PartitionOfUnity& pou, const std::vector<int>& axes,
                                                const Mollifier& rho, double eps, double h) {
  const ChartDomain& w = pou.working();
  const Vec anchor = w.center();
  const std::size_t d = axes.size();
  if (d == 0) {
    std::vector<double> data(static_cast<std::size_t>(m));
    f(anchor, data.data());
    return std::make_shared<GridField>(axes, std::vector<double>{}, h, std::vector<std::size_t>{},
                                       m, std::move(data));
  }
  const auto taps = rho.taps(eps, h);
  const std::size_t half = (taps.size() - 1) / 2;

  std::vector<double> origin_out(d), origin_in(d);
  std::vector<std::size_t> n_out(d), n_in(d);
  std::size_t total_in = 1;
  for (std::size_t a = 0; a < d; ++a) {
    const Interval& iv = w[axes[a]];
    origin_out[a] = iv.lo - 3.0 * h;
    n_out[a] = static_cast<std::size_t>(std::ceil((iv.width() + 6.0 * h) / h)) + 1;
    origin_in[a] = origin_out[a] - static_cast<double>(half) * h;
    n_in[a] = n_out[a] + 2 * half;
    total_in *= n_in[a];
  }
  if (total_in * static_cast<std::size_t>(m) > 200'000'000) {
    throw ConfigError("mollification grid too large; reduce cells_per_eps or the number of active axes");
  }

  const std::size_t charts = pou.size();
  std::vector<std::vector<double>> chart_in(charts, std::vector<double>(total_in * static_cast<std::size_t>(m), 0.0));
  std::vector<double> values(static_cast<std::size_t>(m));
  std::vector<double> weights(charts);
  Vec x = anchor;
  for (std::size_t node = 0; node < total_in; ++node) {
    std::size_t rem = node;
    for (std::size_t a = d; a-- > 0;) {
      x(axes[a]) = origin_in[a] + static_cast<double>(rem % n_in[a]) * h;
      rem /= n_in[a];
    }
    bool any = false;
    for (std::size_t i = 0; i < charts; ++i) {
      weights[i] = pou.weight(i, x);
      any = any || weights[i] != 0.0;
    }
    if (!any) continue;
    if (!source_domain.contains(x)) {
      throw ConfigError("mollification scale too large for the cover geometry (stencil leaves the chart)");
    }
    f(x, values.data());
    for (std::size_t i = 0; i < charts; ++i) {
      if (weights[i] == 0.0) continue;
      double* dst = &chart_in[i][node * static_cast<std::size_t>(m)];
      for (int c = 0; c < m; ++c) dst[c] = weights[i] * values[static_cast<std::size_t>(c)];
    }
  }

  std::size_t total_out = 1;
  for (auto n : n_out) total_out *= n;
  std::vector<double> table(total_out * static_cast<std::size_t>(m), 0.0);
  for (std::size_t i = 0; i < charts; ++i) {
    auto dims = n_in;
    std::vector<double> block = std::move(chart_in[i]);
    for (std::size_t a = 0; a < d; ++a) block = convolve_axis(block, dims, a, m, taps);
    for (std::size_t node = 0; node < total_out; ++node) {
      std::size_t rem = node;
      for (std::size_t a = d; a-- > 0;) {
        x(axes[a]) = origin_out[a] + static_cast<double>(rem % n_out[a]) * h;
        rem /= n_out[a];
      }
      const double chi = pou.cutoff(i, x);
      if (chi == 0.0) continue;
      for (int c = 0; c < m; ++c) {
        table[node * static_cast<std::size_t>(m) + static_cast<std::size_t>(c)] +=
            chi * block[node * static_cast<std::size_t>(m) + static_cast<std::size_t>(c)];
      }
    }
  }
  return std::make_shared<GridField>(axes, origin_out, h, n_out, m, std::move(table));
}

int packed_size(int n) { return n * (n + 1) / 2; }

void pack(const Mat& g, double* out) {
  const int n = static_cast<int>(g.rows());
  int c = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) out[c++] = g(i, j);
}

Mat unpack(const double* v, int n) {
  Mat g(n, n);
  int c = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      g(i, j) = v[c];
      g(j, i) = v[c];
      ++c;
    }
  return g;
}

}  // namespace

// ---------------------------------------------------------------- Mollifier

Mollifier::Mollifier(double steepness) : steepness_(steepness) {
  if (!(steepness > 0)) throw ConfigError("mollifier steepness must be positive");
  // Trapezoid rule; exponentially accurate for a profile flat to all orders at +-1.
  constexpr int kPanels = 20000;
  const double du = 2.0 / kPanels;
  double s = 0.0;
  for (int i = 1; i < kPanels; ++i) s += profile(-1.0 + i * du);
  normalization_ = s * du;
}

double Mollifier::profile(double u) const {
  const double r = 1.0 - u * u;
  return r > 0 ? std::exp(-steepness_ / r) : 0.0;
}

double Mollifier::density(const Vec& x, double eps) const {
  double v = 1.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) v *= profile(x(i) / eps) / (eps * normalization_);
  return v;
}

std::vector<double> Mollifier::taps(double eps, double spacing) const {
  const auto half = static_cast<std::size_t>(std::ceil(eps / spacing));
  std::vector<double> t(2 * half + 1);
  double sum = 0.0;
  for (std::size_t j = 0; j < t.size(); ++j) {
    const double off = (static_cast<double>(j) - static_cast<double>(half)) * spacing;
    t[j] = profile(off / eps);
    sum += t[j];
  }
  for (auto& v : t) v /= sum;
  return t;
}

// ------------------------------------------------------- PartitionOfUnity

double PartitionOfUnity::Ramp::value(double x) const {
  if (always_one) return 1.0;
  return smooth_step((x - start) / width);
}

double PartitionOfUnity::Ramp::derivative(double x) const {
  if (always_one) return 0.0;
  return smooth_step_derivative((x - start) / width) / width;
}

PartitionOfUnity PartitionOfUnity::single_chart(const ChartDomain& domain, const ChartDomain& working) {
  if (!domain.contains(working)) throw ConfigError("working box must lie inside the chart domain");
  PartitionOfUnity p;
  p.domain_ = domain;
  p.working_ = working;
  p.charts_ = {domain};
  p.interior_reach_ = std::numeric_limits<double>::infinity();
  return p;
}

PartitionOfUnity PartitionOfUnity::slabs(const ChartDomain& domain, const ChartDomain& working, int axis, int pieces) {
  if (!domain.contains(working)) throw ConfigError("working box must lie inside the chart domain");
  if (axis < 0 || axis >= domain.dim()) throw ConfigError("partition axis out of range");
  if (pieces < 1) throw ConfigError("partition needs at least one piece");
  const double a0 = working[axis].lo;
  const double b0 = working[axis].hi;
  const double ml = a0 - domain[axis].lo;
  const double mr = domain[axis].hi - b0;
  if (!(ml > 0 && mr > 0)) throw ConfigError("partition axis needs a margin between working box and chart");

  PartitionOfUnity p;
  p.domain_ = domain;
  p.working_ = working;
  p.axis_ = axis;
  const double len = b0 - a0;
  const double delta = len / (4.0 * pieces);
  const double reach = len / (2.0 * pieces);
  p.interior_reach_ = pieces > 1 ? reach : std::numeric_limits<double>::infinity();

  p.cumulative_.push_back({a0 - 0.75 * ml, 0.25 * ml, false});
  for (int j = 1; j < pieces; ++j) p.cumulative_.push_back({a0 + j * len / pieces - delta, 2.0 * delta, false});
  p.cumulative_.push_back({b0 + 0.5 * mr, 0.25 * mr, false});

  for (int c = 0; c < pieces; ++c) {
    const auto& lo_ramp = p.cumulative_[static_cast<std::size_t>(c)];
    const auto& hi_ramp = p.cumulative_[static_cast<std::size_t>(c + 1)];
    const double supp_lo = lo_ramp.start;
    const double supp_hi = hi_ramp.start + hi_ramp.width;
    auto bounds = domain.bounds();
    bounds[static_cast<std::size_t>(axis)].lo = c == 0 ? domain[axis].lo : supp_lo - reach;
    bounds[static_cast<std::size_t>(axis)].hi = c == pieces - 1 ? domain[axis].hi : supp_hi + reach;
    p.charts_.emplace_back(bounds);
    Ramp left{0, 0, true};
    Ramp right{0, 0, true};
    if (c > 0) left = {supp_lo - 0.75 * reach, 0.25 * reach, false};
    if (c < pieces - 1) right = {supp_hi + 0.5 * reach, 0.25 * reach, false};
    p.cutoff_.emplace_back(left, right);
  }
  return p;
}

double PartitionOfUnity::weight(std::size_t i, const Vec& p) const {
  if (!axis_) return 1.0;
  const double x = p(*axis_);
  return cumulative_[i].value(x) - cumulative_[i + 1].value(x);
}

double PartitionOfUnity::weight_derivative(std::size_t i, const Vec& p, int k) const {
  if (!axis_ || k != *axis_) return 0.0;
  const double x = p(*axis_);
  return cumulative_[i].derivative(x) - cumulative_[i + 1].derivative(x);
}

double PartitionOfUnity::cutoff(std::size_t i, const Vec& p) const {
  if (!axis_) return 1.0;
  const double x = p(*axis_);
  const auto& [left, right] = cutoff_[i];
  const double r = right.always_one ? 1.0 : 1.0 - right.value(x);
  return left.value(x) * r;
}

Interval PartitionOfUnity::weight_support(std::size_t i) const {
  if (!axis_) return {-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  return {cumulative_[i].start, cumulative_[i + 1].start + cumulative_[i + 1].width};
}

double PartitionOfUnity::max_epsilon(const std::vector<int>& axes) const {
  double e = std::numeric_limits<double>::infinity();
  for (int a : axes) {
    const double margin = std::min(working_[a].lo - domain_[a].lo, domain_[a].hi - working_[a].hi);
    e = std::min(e, 0.5 * margin);
  }
  if (axis_ && std::find(axes.begin(), axes.end(), *axis_) != axes.end()) e = std::min(e, 0.5 * interior_reach_);
  return e;
}

// ---------------------------------------------------------------- GridField

GridField::GridField(std::vector<int> axes, std::vector<double> origin, double spacing,
                     std::vector<std::size_t> counts, int components, std::vector<double> data)
    : axes_(std::move(axes)),
      origin_(std::move(origin)),
      h_(spacing),
      counts_(std::move(counts)),
      m_(components),
      data_(std::move(data)) {
  strides_.assign(axes_.size(), 0);
  std::size_t s = 1;
  for (std::size_t a = axes_.size(); a-- > 0;) {
    if (counts_[a] < 4) throw ConfigError("grid needs at least 4 nodes per axis");
    strides_[a] = s;
    s *= counts_[a];
  }
}

void GridField::eval(const Vec& p, double* values, double* derivs) const {
  const std::size_t d = axes_.size();
  const auto m = static_cast<std::size_t>(m_);
  std::fill(values, values + m, 0.0);
  if (derivs) std::fill(derivs, derivs + d * m, 0.0);
  if (d == 0) {
    std::copy(data_.begin(), data_.begin() + static_cast<std::ptrdiff_t>(m), values);
    return;
  }
  std::array<std::array<double, 4>, kMaxDim> w{}, dw{};
  std::array<std::size_t, kMaxDim> base{};
  for (std::size_t a = 0; a < d; ++a) {
    const double x = (p(axes_[a]) - origin_[a]) / h_;
    auto i0 = static_cast<long>(std::floor(x));
    i0 = std::clamp(i0, 1L, static_cast<long>(counts_[a]) - 3);
    const double s = x - static_cast<double>(i0);
    const double s2 = s * s;
    const double s3 = s2 * s;
    w[a] = {0.5 * (-s3 + 2 * s2 - s), 0.5 * (3 * s3 - 5 * s2 + 2), 0.5 * (-3 * s3 + 4 * s2 + s), 0.5 * (s3 - s2)};
    dw[a] = {0.5 * (-3 * s2 + 4 * s - 1) / h_, 0.5 * (9 * s2 - 10 * s) / h_, 0.5 * (-9 * s2 + 8 * s + 1) / h_,
             0.5 * (3 * s2 - 2 * s) / h_};
    base[a] = static_cast<std::size_t>(i0 - 1);
  }
  std::size_t combos = 1;
  for (std::size_t a = 0; a < d; ++a) combos *= 4;
  for (std::size_t c = 0; c < combos; ++c) {
    std::array<std::size_t, kMaxDim> off{};
    std::size_t rem = c;
    std::size_t idx = 0;
    double weight = 1.0;
    for (std::size_t a = 0; a < d; ++a) {
      off[a] = rem % 4;
      rem /= 4;
      idx += (base[a] + off[a]) * strides_[a];
      weight *= w[a][off[a]];
    }
    const double* node = &data_[idx * m];
    for (std::size_t k = 0; k < m; ++k) values[k] += weight * node[k];
    if (!derivs) continue;
    for (std::size_t b = 0; b < d; ++b) {
      double dweight = dw[b][off[b]];
      for (std::size_t a = 0; a < d; ++a) {
        if (a != b) dweight *= w[a][off[a]];
      }
      for (std::size_t k = 0; k < m; ++k) derivs[b * m + k] += dweight * node[k];
    }
  }
}

// ---------------------------------------------------------------- mollify

MollificationDiagnostics mollification_diagnostics(const MetricField& source, const MetricField& smooth,
                                                   const ChartDomain& region, double step) {
  const int n = source.dim();
  const auto& axes = smooth.active_axes();
  std::vector<Vec> probes;
  if (axes.size() <= 1) {
    const int a = axes.empty() ? 0 : axes.front();
    constexpr int kProbes = 801;
    for (int i = 0; i < kProbes; ++i) {
      Vec p = region.center();
      p(a) = region[a].lo + region[a].width() * i / (kProbes - 1);
      probes.push_back(p);
    }
  } else {
    probes = sample_points(region, {4000, 99, true});
  }
  MollificationDiagnostics d;
  d.probes = probes.size();
  for (const auto& p : probes) {
    const MetricJet js = source.jet(p);
    const MetricJet jm = smooth.jet(p);
    d.c0_error = std::max(d.c0_error, (js.g - jm.g).cwiseAbs().maxCoeff());
    for (int k = 0; k < n; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      d.c1_error = std::max(d.c1_error, (js.dg[kk] - jm.dg[kk]).cwiseAbs().maxCoeff());
    }
    for (int a : axes) {
      Vec hi = p;
      Vec lo = p;
      hi(a) += step;
      lo(a) -= step;
      const Mat second = (smooth.raw(hi) - 2.0 * jm.g + smooth.raw(lo)) / (step * step);
      d.second_difference_sup = std::max(d.second_difference_sup, second.cwiseAbs().maxCoeff());
    }
  }
  return d;
}

MollifiedMetric mollify(const MetricField& g, double eps, const PartitionOfUnity& pou, const Mollifier& rho,
                        const GridSpec& grid) {
  if (!(eps > 0)) throw ConfigError("mollification scale must be positive");
  if (grid.cells_per_eps < 8) throw ConfigError("grid too coarse: need at least 8 cells per mollification scale");
  if (!g.domain().contains(pou.domain())) throw ConfigError("partition of unity must live inside the metric chart");
  const int n = g.dim();
  const auto axes = merged_axes(g.active_axes(), pou.split_axis());
  if (!axes.empty() && eps > pou.max_epsilon(axes) * (1.0 + 1e-12)) {
    throw ConfigError("mollification scale too large for the cover geometry");
  }
  const double h = eps / grid.cells_per_eps;
  auto table = smooth_on_grid([&g](const Vec& x, double* out) { pack(g.raw(x), out); }, packed_size(n), g.domain(),
                              pou, axes, rho, eps, h);

  MetricDefinition def;
  def.name = g.name() + "*rho";
  def.domain = pou.working();
  def.components = [table, n](const Vec& p) {
    std::array<double, 10> v{};
    table->eval(p, v.data(), nullptr);
    return unpack(v.data(), n);
  };
  def.derivatives = [table, n](const Vec& p, std::array<Mat, kMaxDim>& dg) {
    std::array<double, 10> v{};
    std::array<double, 40> dv{};
    table->eval(p, v.data(), dv.data());
    for (int k = 0; k < n; ++k) dg[static_cast<std::size_t>(k)] = Mat::Zero(n, n);
    const auto& ax = table->axes();
    for (std::size_t a = 0; a < ax.size(); ++a) {
      dg[static_cast<std::size_t>(ax[a])] = unpack(&dv[a * static_cast<std::size_t>(packed_size(n))], n);
    }
  };
  def.time_orientation = [g](const Vec& p) { return g.time_orientation(p); };
  def.regularity = Regularity::Smooth;
  def.time_axis = g.time_axis();
  def.active_axes = axes;
  MetricField smooth(std::move(def));

  MollifiedMetric out{smooth, eps, h, {}};
  out.diagnostics = mollification_diagnostics(g, smooth, pou.working(), h);
  return out;
}

// ------------------------------------------------------------ OneFormField

OneFormField::OneFormField(PartitionOfUnity pou, std::vector<std::shared_ptr<const GridField>> charts, int dim)
    : pou_(std::move(pou)), charts_(std::move(charts)), n_(dim) {}

Vec OneFormField::at(const Vec& p) const {
  Vec w = Vec::Zero(n_);
  std::array<double, kMaxDim> v{};
  for (std::size_t i = 0; i < charts_.size(); ++i) {
    const double z = pou_->weight(i, p);
    if (z == 0.0) continue;
    charts_[i]->eval(p, v.data(), nullptr);
    for (int j = 0; j < n_; ++j) w(j) += z * v[static_cast<std::size_t>(j)];
  }
  return w;
}

Mat OneFormField::derivatives(const Vec& p) const {
  Mat d = Mat::Zero(n_, n_);
  std::array<double, kMaxDim> v{};
  std::array<double, kMaxDim * kMaxDim> dv{};
  for (std::size_t i = 0; i < charts_.size(); ++i) {
    charts_[i]->eval(p, v.data(), dv.data());
    const double z = pou_->weight(i, p);
    for (int k = 0; k < n_; ++k) {
      const double dz = pou_->weight_derivative(i, p, k);
      if (dz == 0.0) continue;
      for (int j = 0; j < n_; ++j) d(k, j) += dz * v[static_cast<std::size_t>(j)];
    }
    if (z == 0.0) continue;
    const auto& ax = charts_[i]->axes();
    for (std::size_t a = 0; a < ax.size(); ++a) {
      for (int j = 0; j < n_; ++j) d(ax[a], j) += z * dv[a * static_cast<std::size_t>(n_) + static_cast<std::size_t>(j)];
    }
  }
  return d;
}

TimelikeOneForm build_timelike_oneform(const MetricField& g, const PartitionOfUnity& pou, double eps_seed,
                                       const Mollifier& rho, const GridSpec& grid, const SamplerSpec& probes) {
  if (!(eps_seed > 0)) throw ConfigError("one-form seed scale must be positive");
  const int n = g.dim();
  const auto axes = merged_axes(g.active_axes(), pou.split_axis());
  const double eps_max = axes.empty() ? eps_seed : pou.max_epsilon(axes);
  const auto points = sample_points(pou.working(), probes);
  auto covector = [&g](const Vec& x, double* out) {
    const Vec w = g.raw(x) * g.time_orientation(x);
    for (Eigen::Index j = 0; j < w.size(); ++j) out[j] = w(j);
  };
  auto inverse_norm = [&g](const Vec& p, const Vec& w) { return w.dot(g.at(p).partialPivLu().solve(w)); };

  TimelikeOneForm out;
  std::vector<std::shared_ptr<const GridField>> fields;
  constexpr int kMaxHalvings = 10;
  for (std::size_t i = 0; i < pou.size(); ++i) {
    double eps = std::min(eps_seed, eps_max);
    std::shared_ptr<const GridField> field;
    for (int attempt = 0;; ++attempt) {
      field = smooth_on_grid(covector, n, g.domain(), pou, axes, rho, eps, eps / grid.cells_per_eps);
      bool ok = true;
      for (const auto& p : points) {
        if (pou.weight(i, p) == 0.0) continue;
        std::array<double, kMaxDim> v{};
        field->eval(p, v.data(), nullptr);
        Vec w(n);
        for (int j = 0; j < n; ++j) w(j) = v[static_cast<std::size_t>(j)];
        if (!(inverse_norm(p, w) < 0)) {
          ok = false;
          break;
        }
      }
      if (ok) break;
      if (attempt == kMaxHalvings) throw NumericalError("timelike one-form: scale floor reached without timelikeness");
      eps *= 0.5;
    }
    fields.push_back(field);
    out.chart_scales.push_back(eps);
  }
  out.omega = OneFormField(pou, fields, n);
  out.worst_inverse_norm = -std::numeric_limits<double>::infinity();
  for (const auto& p : points) {
    const Vec w = out.omega.at(p);
    const double q = inverse_norm(p, w);
    out.worst_inverse_norm = std::max(out.worst_inverse_norm, q);
    if (!(q < 0) || !(w.dot(g.time_orientation(p)) < 0)) {
      std::string where;
      for (Eigen::Index j = 0; j < p.size(); ++j) where += (j ? "," : "") + std::to_string(p(j));
      throw NumericalError("timelike one-form fails at probe (" + where + ")");
    }
  }
  return out;
}

}  // namespace lowreg
