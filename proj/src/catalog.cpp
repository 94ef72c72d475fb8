#include "lowreg/catalog.hpp"

#include "lowreg/expression.hpp"

#include <cmath>

namespace lowreg {
namespace {

Mat minkowski_matrix(int n, int time_axis = 0) {
  Mat g = Mat::Identity(n, n);
  g(time_axis, time_axis) = -1.0;
  return g;
}

ChartDomain kink_box(int n) {
  std::vector<Interval> b(static_cast<std::size_t>(n), Interval{-1.0, 1.0});
  b[0] = {-2.0, 2.0};
  b[1] = {-1.4, 1.4};
  return ChartDomain(b);
}

void check_dim(int n) {
  if (n < 2 || n > kMaxDim) throw ConfigError("example dimension must be between 2 and 4");
}

void check_box(const ChartDomain& box, int n) {
  if (box.dim() != n) throw ConfigError("box dimension does not match the example dimension");
}

void zero_derivatives(int n, std::array<Mat, kMaxDim>& dg) {
  for (int k = 0; k < n; ++k) dg[static_cast<std::size_t>(k)] = Mat::Zero(n, n);
}

double param(const std::map<std::string, double>& p, const std::string& key, double fallback) {
  auto it = p.find(key);
  return it == p.end() ? fallback : it->second;
}

double required(const std::map<std::string, double>& p, const std::string& key, const std::string& example) {
  auto it = p.find(key);
  if (it == p.end()) throw ConfigError("example '" + example + "' needs parameter '" + key + "'");
  return it->second;
}

}  // namespace

MetricField minkowski(int n, std::optional<ChartDomain> box) {
  check_dim(n);
  ChartDomain d = box ? *box : ChartDomain::cube(n, 1.0);
  check_box(d, n);
  MetricDefinition def;
  def.name = "minkowski";
  def.domain = d;
  const Mat eta = minkowski_matrix(n);
  def.components = [eta](const Vec&) { return eta; };
  def.derivatives = [n](const Vec&, std::array<Mat, kMaxDim>& dg) { zero_derivatives(n, dg); };
  def.regularity = Regularity::Smooth;
  def.active_axes = std::vector<int>{};
  return MetricField(std::move(def));
}

MetricField kink(double a, int n, std::optional<ChartDomain> box) {
  check_dim(n);
  ChartDomain d = box ? *box : kink_box(n);
  check_box(d, n);
  const double xmax = std::max(std::abs(d[1].lo), std::abs(d[1].hi));
  if (!(std::abs(a) * xmax * xmax < 1.0)) throw ConfigError("kink: |a x|x|| must stay below 1 on the box");
  MetricDefinition def;
  def.name = "kink";
  def.domain = d;
  def.components = [n, a](const Vec& p) {
    Mat g = minkowski_matrix(n);
    g(1, 1) = 1.0 + a * p(1) * std::abs(p(1));
    return g;
  };
  def.derivatives = [n, a](const Vec& p, std::array<Mat, kMaxDim>& dg) {
    zero_derivatives(n, dg);
    dg[1](1, 1) = 2.0 * a * std::abs(p(1));
  };
  def.regularity = Regularity::C1_1;
  def.active_axes = std::vector<int>{1};
  def.derivative_jumps = {{1, 0.0}};
  return MetricField(std::move(def));
}

MetricField rough(double a, double alpha, int n, std::optional<ChartDomain> box) {
  check_dim(n);
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("rough: alpha must lie in (0,1)");
  ChartDomain d = box ? *box : kink_box(n);
  check_box(d, n);
  const double xmax = std::max(std::abs(d[1].lo), std::abs(d[1].hi));
  if (a < 0.0 && !(1.0 + a * std::pow(xmax, 1.0 + alpha) > 0.0)) {
    throw ConfigError("rough: metric degenerates on the box");
  }
  MetricDefinition def;
  def.name = "rough";
  def.domain = d;
  def.components = [n, a, alpha](const Vec& p) {
    Mat g = minkowski_matrix(n);
    g(1, 1) = 1.0 + a * std::pow(std::abs(p(1)), 1.0 + alpha);
    return g;
  };
  def.derivatives = [n, a, alpha](const Vec& p, std::array<Mat, kMaxDim>& dg) {
    zero_derivatives(n, dg);
    const double x = p(1);
    const double s = x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0);
    dg[1](1, 1) = a * (1.0 + alpha) * std::pow(std::abs(x), alpha) * s;
  };
  def.regularity = Regularity::C0_1;
  def.active_axes = std::vector<int>{1};
  def.derivative_jumps = {{1, 0.0}};
  return MetricField(std::move(def));
}

MetricField curved_smooth(double k, int n, std::optional<ChartDomain> box) {
  check_dim(n);
  ChartDomain d = box ? *box : ChartDomain::cube(n, 1.0);
  check_box(d, n);
  MetricDefinition def;
  def.name = "curved_smooth";
  def.domain = d;
  def.components = [n, k](const Vec& p) {
    Mat g = Mat::Identity(n, n) * std::exp(2.0 * k * p(0));
    g(0, 0) = -1.0;
    return g;
  };
  def.derivatives = [n, k](const Vec& p, std::array<Mat, kMaxDim>& dg) {
    zero_derivatives(n, dg);
    const double e = 2.0 * k * std::exp(2.0 * k * p(0));
    for (int i = 1; i < n; ++i) dg[0](i, i) = e;
  };
  def.regularity = Regularity::Smooth;
  def.active_axes = std::vector<int>{0};
  return MetricField(std::move(def));
}

MetricField expression_metric(const ExpressionMetricSpec& spec) {
  const int n = spec.box.dim();
  check_dim(n);
  if (spec.time_axis < 0 || spec.time_axis >= n) throw ConfigError("time_axis out of range");
  struct Entry {
    int i, j;
    Expression e;
  };
  std::vector<Entry> entries;
  std::vector<int> active;
  for (const auto& [key, text] : spec.components) {
    if (key.size() != 2 || key[0] < '0' || key[1] < '0' || key[0] - '0' >= n || key[1] - '0' >= n) {
      throw ConfigError("metric component key '" + key + "' must be two indices below the dimension");
    }
    auto e = Expression::parse(text, spec.params);
    for (int v : e.variables()) {
      if (v >= n) throw ConfigError("expression '" + text + "' uses a coordinate beyond the dimension");
      active.push_back(v);
    }
    entries.push_back({key[0] - '0', key[1] - '0', std::move(e)});
  }
  const Mat base = minkowski_matrix(n, spec.time_axis);
  MetricDefinition def;
  def.name = spec.name;
  def.domain = spec.box;
  def.components = [base, entries](const Vec& p) {
    Mat g = base;
    std::array<double, kMaxDim> x{};
    for (Eigen::Index i = 0; i < p.size(); ++i) x[static_cast<std::size_t>(i)] = p(i);
    for (const auto& en : entries) {
      const double v = en.e.eval(x.data());
      g(en.i, en.j) = v;
      g(en.j, en.i) = v;
    }
    return g;
  };
  def.regularity = spec.regularity;
  def.time_axis = spec.time_axis;
  def.active_axes = active;
  MetricField g(std::move(def));
  const Mat g0 = g.at(spec.box.center());
  if (!is_lorentzian(g0)) throw ConfigError("expression metric is not Lorentzian at the box center");
  return g;
}

const std::vector<CatalogEntry>& example_catalog() {
  static const std::vector<CatalogEntry> entries = {
      {"minkowski", "flat metric -dt^2 + dx^2 + ...", {"dim"}},
      {"kink", "C^{1,1} metric -dt^2 + (1 + a x|x|) dx^2 (+ flat dims)", {"a", "dim"}},
      {"rough", "Hoelder-derivative stress metric -dt^2 + (1 + a |x|^(1+alpha)) dx^2", {"a", "alpha", "dim"}},
      {"curved_smooth", "smooth expanding metric -dt^2 + e^{2kt}(dx^2 + ...)", {"k", "dim"}},
  };
  return entries;
}

MetricField make_example(const std::string& name, const std::map<std::string, double>& params,
                         std::optional<ChartDomain> box, int time_axis) {
  if (time_axis != 0) throw ConfigError("bundled examples use time_axis 0");
  const int n = static_cast<int>(param(params, "dim", box ? box->dim() : 2));
  if (name == "minkowski") return minkowski(n, box);
  if (name == "kink") return kink(required(params, "a", name), n, box);
  if (name == "rough") return rough(required(params, "a", name), required(params, "alpha", name), n, box);
  if (name == "curved_smooth") return curved_smooth(required(params, "k", name), n, box);
  throw ConfigError("unknown example metric '" + name + "'");
}

}  // namespace lowreg
