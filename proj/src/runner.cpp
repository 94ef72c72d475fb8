#include "lowreg/catalog.hpp"
#include "lowreg/causality.hpp"
#include "lowreg/expression.hpp"
#include "lowreg/geodesics.hpp"
#include "lowreg/parallel.hpp"
#include "lowreg/regularize.hpp"
#include "lowreg/scenario.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace lowreg {

namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------- json helpers

std::string num(double x) { return fmt::format("{:.12g}", x); }

Vec vec_of(const Json& j, const std::string& what) {
  if (!j.is_array() || j.empty() || j.size() > static_cast<std::size_t>(kMaxDim))
    throw ConfigError(what + " must be a list of 1 to 4 numbers");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(what + " must contain numbers");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

ChartDomain box_of(const Json& j, const std::string& what) {
  if (!j.is_array() || j.size() < 2 || j.size() > static_cast<std::size_t>(kMaxDim))
    throw ConfigError(what + " must be a list of 2 to 4 intervals");
  std::vector<Interval> iv;
  for (const auto& p : j) {
    if (!p.is_array() || p.size() != 2) throw ConfigError(what + " intervals must be [lo, hi]");
    iv.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return ChartDomain(iv);
}

std::vector<double> doubles_of(const Json& j, const std::string& what) {
  if (!j.is_array()) throw ConfigError(what + " must be a list of numbers");
  std::vector<double> out;
  for (const auto& x : j) {
    if (!x.is_number()) throw ConfigError(what + " must be a list of numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

struct Params {
  const Json& j;
  double number(const char* key, double def) const {
    if (!j.contains(key)) return def;
    if (!j[key].is_number()) throw ConfigError(std::string("parameter '") + key + "' must be numeric");
    return j[key].get<double>();
  }
  std::size_t count(const char* key, std::size_t def) const {
    if (!j.contains(key)) return def;
    if (!j[key].is_number_integer() || j[key].get<std::int64_t>() <= 0)
      throw ConfigError(std::string("parameter '") + key + "' must be a positive integer");
    return j[key].get<std::size_t>();
  }
  bool flag(const char* key, bool def) const {
    if (!j.contains(key)) return def;
    if (!j[key].is_boolean()) throw ConfigError(std::string("parameter '") + key + "' must be true or false");
    return j[key].get<bool>();
  }
  std::string text(const char* key, std::string def) const {
    if (!j.contains(key)) return def;
    if (!j[key].is_string()) throw ConfigError(std::string("parameter '") + key + "' must be a string");
    return j[key].get<std::string>();
  }
  bool has(const char* key) const { return j.contains(key); }
  Vec vec(const char* key) const {
    if (!j.contains(key)) throw ConfigError(std::string("missing parameter '") + key + "'");
    return vec_of(j[key], key);
  }
  Vec vec(const char* key, const Vec& def) const { return j.contains(key) ? vec_of(j[key], key) : def; }
};

// ---------------------------------------------------------------- tables

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

void write_csv(const fs::path& path, const Table& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
    out << '\n';
  };
  line(t.header);
  for (const auto& r : t.rows) line(r);
}

std::vector<std::string> vec_cells(const Vec& v) {
  std::vector<std::string> out;
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(num(v(i)));
  return out;
}

std::vector<std::string> vec_header(const std::string& prefix, int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

template <class... T>
std::vector<std::string> concat(T&&... parts) {
  std::vector<std::string> out;
  (out.insert(out.end(), parts.begin(), parts.end()), ...);
  return out;
}

// ---------------------------------------------------------------- metric and curves

MetricField build_metric(const Json& m) {
  if (m.contains("name") || m.contains("example")) {
    std::map<std::string, double> params;
    if (m.contains("params")) {
      for (const auto& [k, v] : m["params"].items()) params[k] = v.get<double>();
    }
    std::optional<ChartDomain> box;
    if (m.contains("box")) box = box_of(m["box"], "metric box");
    const std::string name = (m.contains("name") ? m["name"] : m["example"]).get<std::string>();
    return make_example(name, params, box, m.value("time_axis", 0));
  }
  const Json& e = m["expression"];
  ExpressionMetricSpec spec;
  spec.name = e.value("name", std::string("expression"));
  spec.box = box_of(e["box"], "metric box");
  if (e.contains("components")) {
    for (const auto& [k, v] : e["components"].items()) spec.components[k] = v.get<std::string>();
  }
  if (e.contains("params")) {
    for (const auto& [k, v] : e["params"].items()) spec.params[k] = v.get<double>();
  }
  spec.regularity = parse_regularity(e.value("regularity", std::string("C0")));
  spec.time_axis = e.value("time_axis", 0);
  return expression_metric(spec);
}

CausalCurve read_curve_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read curve file " + path.string());
  std::vector<double> t;
  std::vector<Vec> x;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> vals;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        vals.push_back(std::stod(cell, &used));
        if (used != cell.size() && cell.find_first_not_of(" \r", used) != std::string::npos) numeric = false;
      } catch (const std::exception&) {
        numeric = false;
      }
    }
    if (!numeric) {
      if (t.empty() && x.empty()) continue;  // header
      throw ConfigError("non-numeric row in " + path.string());
    }
    if (vals.size() < 3 || vals.size() > 1 + static_cast<std::size_t>(kMaxDim))
      throw ConfigError("curve rows need t and 2 to 4 coordinates");
    t.push_back(vals[0]);
    Vec p(static_cast<Eigen::Index>(vals.size() - 1));
    for (std::size_t i = 1; i < vals.size(); ++i) p(static_cast<Eigen::Index>(i - 1)) = vals[i];
    x.push_back(p);
  }
  return CausalCurve::from_points(std::move(t), std::move(x));
}

// Curve block: {x: [exprs in t], t: [t0, t1], samples: N} or {csv: file}.
CausalCurve make_curve(const Json& c, const std::map<std::string, double>& params, const fs::path& base) {
  if (!c.is_object()) throw ConfigError("curve must be a mapping");
  if (c.contains("csv")) return read_curve_csv(base / c["csv"].get<std::string>());
  if (!c.contains("x") || !c["x"].is_array()) throw ConfigError("curve needs an 'x' list of expressions");
  std::vector<Expression> xs;
  for (const auto& e : c["x"]) xs.push_back(Expression::parse(e.get<std::string>(), params));
  const std::vector<double> range = c.contains("t") ? doubles_of(c["t"], "curve t range") : std::vector<double>{0.0, 1.0};
  if (range.size() != 2) throw ConfigError("curve t range must be [t0, t1]");
  const std::size_t samples = c.value("samples", std::size_t{101});
  return CausalCurve::from_function(
      [&](double t) {
        const double coords[kMaxDim] = {t, 0.0, 0.0, 0.0};
        Vec p(static_cast<Eigen::Index>(xs.size()));
        for (std::size_t i = 0; i < xs.size(); ++i) p(static_cast<Eigen::Index>(i)) = xs[i].eval(coords);
        return p;
      },
      range[0], range[1], samples);
}

// ---------------------------------------------------------------- context

struct Context {
  const ScenarioConfig& cfg;
  std::uint64_t seed;
  MetricField g;
  fs::path out;
  std::optional<std::vector<ConeAdaptedPair>> fam;

  ChartDomain region() const {
    return cfg.regularization.contains("region") ? box_of(cfg.regularization["region"], "regularization region")
                                                 : g.domain();
  }
  std::vector<double> epsilons() const {
    for (const char* key : {"epsilon", "epsilons"}) {
      if (cfg.regularization.contains(key)) {
        const Json& j = cfg.regularization[key];
        return j.is_array() ? doubles_of(j, key) : std::vector<double>{j.get<double>()};
      }
    }
    return {0.2, 0.1, 0.05, 0.02};
  }
  GridSpec grid() const { return {cfg.regularization.value("grid_cells_per_eps", 8)}; }
  std::uint64_t regularization_seed() const { return cfg.regularization.value("seed", seed); }
  ConeAdaptedOptions pair_options() const {
    ConeAdaptedOptions o;
    o.region = region();
    const Json& r = cfg.regularization;
    const std::uint64_t base = regularization_seed();
    o.grid = grid();
    o.search = {r.value("search_samples", std::size_t{2000}), derive_seed(base, "pair-search"), true};
    o.certify = {r.value("samples", r.value("certify_samples", std::size_t{10000})), derive_seed(base, "pair-certify"),
                 true};
    if (r.contains("slabs")) {
      o.pou = PartitionOfUnity::slabs(g.domain(), o.region, r["slabs"].value("axis", 0), r["slabs"].value("pieces", 2));
    }
    return o;
  }
  const std::vector<ConeAdaptedPair>& family() {
    if (!fam) fam = cone_adapted_family(g, epsilons(), pair_options());
    return *fam;
  }
};

struct Outcome {
  std::vector<CheckRow> checks;
  std::vector<std::pair<std::string, Table>> tables;
  std::vector<std::pair<std::string, Json>> documents;
};

void check(Outcome& o, std::string name, double value, const std::string& rel, double tol) {
  bool pass = false;
  if (rel == "<") pass = value < tol;
  else if (rel == "<=") pass = value <= tol;
  else if (rel == ">") pass = value > tol;
  else if (rel == ">=") pass = value >= tol;
  else if (rel == "==") pass = value == tol;
  o.checks.push_back({std::move(name), value, rel, tol, pass});
}

double tol_of(const ExperimentConfig& e, const char* key, double def) {
  return e.tolerances.contains(key) ? e.tolerances[key].get<double>() : def;
}

std::string table_name(const ExperimentConfig& e) { return e.output.empty() ? e.id + ".csv" : e.output; }

using OpFn = std::function<void(Context&, const ExperimentConfig&, std::uint64_t, Outcome&)>;

// ---------------------------------------------------------------- metric ops

void op_metric_check(Context& ctx, const ExperimentConfig& e, std::uint64_t seed, Outcome& o) {
  const Params P{e.params};
  const ChartDomain region = P.has("region") ? box_of(e.params["region"], "region") : ctx.g.domain();
  const MetricCheck mc = check_metric(ctx.g, region, {P.count("samples", 2000), seed, true});
  Table t{{"points", "max_asymmetry", "signature_failures", "orientation_failures"},
          {{std::to_string(mc.points), num(mc.max_asymmetry), std::to_string(mc.signature_failures),
            std::to_string(mc.orientation_failures)}}};
  o.tables.emplace_back(table_name(e), t);
  check(o, "max_asymmetry", mc.max_asymmetry, "<=", tol_of(e, "asymmetry", 1e-12));
  check(o, "signature_failures", double(mc.signature_failures), "==", 0.0);
  check(o, "orientation_failures", double(mc.orientation_failures), "==", 0.0);
}

void op_classify_vectors(Context& ctx, const ExperimentConfig& e, std::uint64_t, Outcome& o) {
  const Params P{e.params};
  const double tol = P.number("tol", 1e-9);
  if (!e.params.contains("vectors") || !e.params["vectors"].is_array()) throw ConfigError("classify_vectors needs 'vectors'");
  const int n = ctx.g.dim();
  Table t{concat(vec_header("p", n), vec_header("v", n), std::vector<std::string>{"normalized", "class", "expect"}), {}};
  std::size_t k = 0;
  for (const auto& item : e.params["vectors"]) {
    const Vec p = vec_of(item["p"], "p");
    const Vec v = vec_of(item["v"], "v");
    const CausalCharacter c = causal_character(ctx.g, {p, v}, tol);
    const std::string got = fmt::format("{}/{}", to_string(c.kind), to_string(c.direction));
    const std::string expect = item.value("expect", got);
    t.rows.push_back(concat(vec_cells(p), vec_cells(v), std::vector<std::string>{num(c.normalized_value), got, expect}));
    check(o, fmt::format("vector_{}_{}", k++, expect), got == expect ? 1.0 : 0.0, "==", 1.0);
  }
  o.tables.emplace_back(table_name(e), t);
}

// ---------------------------------------------------------------- regularize ops

void op_cone_pairs(Context& ctx, const ExperimentConfig& e, std::uint64_t, Outcome& o) {
  const auto& fam = ctx.family();
  Table t{{"epsilon", "lambda_in", "lambda_out", "eta_in", "eta_out", "c", "dh_in", "dh_out", "violations_in",
           "violations_out", "worst_margin", "samples_per_side", "seed"},
          {}};
  const double min_samples = tol_of(e, "min_samples", 1.0);
  for (const auto& p : fam) {
    const auto& c = p.certificate;
    t.rows.push_back({num(p.epsilon), num(p.lambda_inner), num(p.lambda_outer), num(p.eta_inner), num(p.eta_outer),
                      num(p.c), num(c.dh_inner), num(c.dh_outer), std::to_string(c.violations_inner),
                      std::to_string(c.violations_outer), num(std::min(c.worst_margin_inner, c.worst_margin_outer)),
                      std::to_string(c.samples_per_side), std::to_string(c.seed)});
    const std::string tag = fmt::format("eps={}", p.epsilon);
    check(o, "violations " + tag, double(c.violations_inner + c.violations_outer), "==", 0.0);
    check(o, "dh_sum " + tag, c.dh_inner + c.dh_outer, "<", p.epsilon);
    check(o, "samples_per_side " + tag, double(c.samples_per_side), ">=", min_samples);
  }
  o.tables.emplace_back(table_name(e), t);
}

void op_mollify(Context& ctx, const ExperimentConfig& e, std::uint64_t, Outcome& o) {
  const Params P{e.params};
  const std::vector<double> eps = P.has("epsilons") ? doubles_of(e.params["epsilons"], "epsilons") : ctx.epsilons();
  const PartitionOfUnity pou = PartitionOfUnity::single_chart(ctx.g.domain(), ctx.region());
  Table t{{"epsilon", "spacing", "c0_error", "c1_error", "second_difference_sup", "probes"}, {}};
  std::vector<MollificationDiagnostics> diags;
  for (double x : eps) {
    const MollifiedMetric m = mollify(ctx.g, x, pou, Mollifier{}, ctx.grid());
    diags.push_back(m.diagnostics);
    t.rows.push_back({num(x), num(m.spacing), num(m.diagnostics.c0_error), num(m.diagnostics.c1_error),
                      num(m.diagnostics.second_difference_sup), std::to_string(m.diagnostics.probes)});
  }
  o.tables.emplace_back(table_name(e), t);
  if (P.flag("c1_decreasing", false)) {
    std::size_t bad = 0;
    for (std::size_t i = 1; i < diags.size(); ++i) bad += !(diags[i].c1_error < diags[i - 1].c1_error);
    check(o, "c1_error non-decreasing steps", double(bad), "==", 0.0);
  }
  if (e.tolerances.contains("second_difference")) {
    double worst = 0.0;
    for (const auto& d : diags) worst = std::max(worst, d.second_difference_sup);
    check(o, "second_difference_sup", worst, "<=", tol_of(e, "second_difference", 0.0));
  }
  if (e.tolerances.contains("identity")) {
    double worst = 0.0;
    for (const auto& d : diags) worst = std::max({worst, d.c0_error, d.c1_error});
    check(o, "identity C1 error", worst, "<=", tol_of(e, "identity", 0.0));
  }
}

// ---------------------------------------------------------------- geodesic ops

void op_gauss(Context& ctx, const ExperimentConfig& e, std::uint64_t, Outcome& o) {
  const Params P{e.params};
  GaussSpec gs;
  if (P.has("t_grid")) gs.t_grid = doubles_of(e.params["t_grid"], "t_grid");
  if (P.has("s_grid")) gs.s_grid = doubles_of(e.params["s_grid"], "s_grid");
  gs.s_step = P.number("s_step", gs.s_step);
  IntegratorSpec is;
  is.step = P.number("step", is.step);
  const Vec p = P.vec("p");
  const Vec v = P.vec("v");
  const Vec w = P.vec("w");
  const GaussReport r = gauss_residual(ExponentialMap(ctx.g, p, is), v, w, gs);
  const bool halving = P.flag("halving", false);
  std::optional<GaussReport> r2;
  if (halving) {
    IntegratorSpec is2 = is;
    is2.step *= 0.5;
    GaussSpec gs2 = gs;
    gs2.s_step *= 0.5;
    r2 = gauss_residual(ExponentialMap(ctx.g, p, is2), v, w, gs2);
  }
  Table t{{"t", "s", "residual", "err_estimate"}, {}};
  if (halving) t.header.insert(t.header.end(), {"residual_halved", "ratio"});
  std::size_t good = 0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    std::vector<std::string> row{num(r.rows[i].t), num(r.rows[i].s), num(r.rows[i].residual),
                                 halving ? num(std::abs(r.rows[i].residual - r2->rows[i].residual)) : ""};
    if (halving) {
      const double ratio = r.rows[i].residual / std::max(r2->rows[i].residual, 1e-300);
      row.push_back(num(r2->rows[i].residual));
      row.push_back(num(ratio));
      // Points already at roundoff carry no convergence information.
      if (r.rows[i].residual > P.number("roundoff_floor", 1e-13)) {
        ++counted;
        good += ratio >= tol_of(e, "ratio", 1.8);
      }
    }
    t.rows.push_back(row);
  }
  o.tables.emplace_back(table_name(e), t);
  check(o, "max_residual", r.max_residual, "<", tol_of(e, "residual", 1e-4));
  if (halving) {
    const double frac = counted ? double(good) / double(counted) : 1.0;
    check(o, "halving ratio fraction", frac, ">=", tol_of(e, "fraction", 0.9));
  }
}

void op_exp_convergence(Context& ctx, const ExperimentConfig& e, std::uint64_t, Outcome& o) {
  const Params P{e.params};
  const std::vector<double> tg =
      P.has("t_grid") ? doubles_of(e.params["t_grid"], "t_grid") : std::vector<double>{0.25, 0.5, 0.75, 1.0};
  IntegratorSpec is;
  is.step = P.number("step", is.step);
  const auto rows = exp_convergence(ctx.g, ctx.family(), P.vec("p"), P.vec("v"), tg, is, P.flag("match_norm", false));
  Table t{{"epsilon", "error_outer", "error_inner", "error", "integrator_error"}, {}};
  std::size_t not_decreasing = 0;
  std::size_t below_noise = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    t.rows.push_back({num(r.epsilon), num(r.error_outer), num(r.error_inner), num(r.error), num(r.integrator_error)});
    if (i > 0) not_decreasing += !(r.error < rows[i - 1].error);
    below_noise += !(r.error > r.integrator_error);
  }
  o.tables.emplace_back(table_name(e), t);
  check(o, "non-decreasing steps", double(not_decreasing), "==", 0.0);
  check(o, "final error", rows.empty() ? INFINITY : rows.back().error, "<", tol_of(e, "final", 1e-2));
  check(o, "entries not above integrator estimate", double(below_noise), "==", 0.0);
}

void op_normal_radius(Context& ctx, const ExperimentConfig& e, std::uint64_t seed, Outcome& o) {
  const Params P{e.params};
  if (!P.has("points") || !e.params["points"].is_array()) throw ConfigError("normal_radius needs 'points'");
  const bool totally = P.flag("totally_normal", true);
  const int n = ctx.g.dim();
  Table t{concat(vec_header("p", n), std::vector<std::string>{"radius", "lipschitz_forward", "lipschitz_inverse",
                                                              "tn_radius", "tn_lipschitz_forward", "tn_lipschitz_inverse"}),
          {}};
  double min_r = INFINITY;
  double max_l = 0.0;
  Json certs = Json::array();
  for (const auto& pj : e.params["points"]) {
    const Vec p = vec_of(pj, "point");
    NormalRadiusSpec ns;
    ns.samples.seed = derive_seed(seed, "normal");
    const NormalNeighborhood nn = normal_radius(ExponentialMap(ctx.g, p), ns);
    std::vector<std::string> row = concat(vec_cells(p), std::vector<std::string>{num(nn.radius), num(nn.lipschitz_forward),
                                                                                  num(nn.lipschitz_inverse)});
    min_r = std::min(min_r, nn.radius);
    max_l = std::max({max_l, nn.lipschitz_forward, nn.lipschitz_inverse});
    certs.push_back({{"p", std::vector<double>(p.data(), p.data() + p.size())},
                     {"r", nn.radius},
                     {"L_fwd", nn.lipschitz_forward},
                     {"L_inv", nn.lipschitz_inverse},
                     {"tolerances", {{"shooting", nn.shooting_tol}}},
                     {"seeds", {{"samples", nn.seed}}},
                     {"samples", nn.samples}});
    if (totally) {
      TotallyNormalSpec ts;
      ts.targets.seed = derive_seed(seed, "totally-normal");
      const TotallyNormalBall b = totally_normal_radius(ctx.g, p, ts);
      row.insert(row.end(), {num(b.radius), num(b.lipschitz_forward), num(b.lipschitz_inverse)});
      min_r = std::min(min_r, b.radius);
      max_l = std::max({max_l, b.lipschitz_forward, b.lipschitz_inverse});
    } else {
      row.insert(row.end(), {"", "", ""});
    }
    t.rows.push_back(row);
  }
  o.tables.emplace_back(table_name(e), t);
  o.documents.emplace_back(e.id + "_certificate.json", certs);
  check(o, "min radius", min_r, ">", 0.0);
  check(o, "max bi-Lipschitz constant", max_l, "<", tol_of(e, "lipschitz", 1e6));
}

void op_gradq(Context& ctx, const ExperimentConfig& e, std::uint64_t seed, Outcome& o) {
  const Params P{e.params};
  const Vec p = P.vec("p");
  const std::size_t want = P.count("samples", 50);
  const double half = P.number("half_width", 0.3);
  const int axis = static_cast<int>(P.number("exclude_axis", -1));
  const double band = P.number("exclude_band", 0.0);
  const int n = ctx.g.dim();
  std::vector<Interval> iv;
  for (int i = 0; i < n; ++i) iv.push_back({p(i) - half, p(i) + half});
  const auto cand = sample_points(ChartDomain(iv), {8 * want, derive_seed(seed, "gradq"), false});
  std::vector<Vec> qs;
  for (const Vec& q : cand) {
    if (qs.size() == want) break;
    if (!ctx.g.domain().contains(q) || (q - p).norm() < 1e-3) continue;
    if (axis >= 0 && axis < n && std::abs(q(axis)) < band) continue;
    qs.push_back(q);
  }
  if (qs.size() < want) throw ConfigError("gradq: not enough sample points outside the excluded band");
  const ExponentialMap em(ctx.g, p);
  std::vector<double> rel(qs.size());
  parallel_for(qs.size(), [&](std::size_t i) { rel[i] = gradQ_check(em, qs[i], P.number("fd_step", 1e-4)).relative_error; });
  Table t{concat(vec_header("q", n), std::vector<std::string>{"relative_error"}), {}};
  std::size_t good = 0;
  for (std::size_t i = 0; i < qs.size(); ++i) {
    t.rows.push_back(concat(vec_cells(qs[i]), std::vector<std::string>{num(rel[i])}));
    good += rel[i] < tol_of(e, "relative", 1e-3);
  }
  o.tables.emplace_back(table_name(e), t);
  check(o, "fraction below relative tolerance", double(good) / double(qs.size()), ">=", tol_of(e, "fraction", 0.95));
}

// ---------------------------------------------------------------- causality ops

void op_relations(Context& ctx, const ExperimentConfig& e, std::uint64_t seed, Outcome& o) {
  const Params P{e.params};
  const Vec p = P.vec("p");
  const int n = ctx.g.dim();
  const double tol = P.number("tol", 1e-6);
  const ExponentialMap em(ctx.g, p);
  Table t{concat(vec_header("q", n), std::vector<std::string>{"normalized", "verdict", "oracle_timelike", "oracle_causal",
                                                              "expect", "agree"}),
          {}};
  std::size_t disagreements = 0;

  if (P.has("pairs")) {
    for (const auto& item : e.params["pairs"]) {
      const Vec q = vec_of(item["q"], "q");
      const RelationCertificate c = relate(em, q, tol);
      const std::string got(to_string(c.verdict));
      const std::string expect = item.value("expect", got);
      t.rows.push_back(concat(vec_cells(q), std::vector<std::string>{num(c.normalized), got, "", "", expect,
                                                                     got == expect ? "1" : "0"}));
      disagreements += got != expect;
    }
  }

  const std::size_t want = P.count("samples", P.has("pairs") ? 0 : 100);
  if (P.has("samples") || !P.has("pairs")) {
    double half = P.number("half_width", 0.0);
    if (!(half > 0)) {
      NormalRadiusSpec ns;
      ns.samples.seed = derive_seed(seed, "normal");
      half = 0.5 * normal_radius(em, ns).radius;
    }
    std::vector<Interval> iv;
    for (int i = 0; i < n; ++i) iv.push_back({p(i) - half, p(i) + half});
    const auto cand = sample_points(ChartDomain(iv), {8 * want, derive_seed(seed, "relations"), false});
    std::vector<RelationCertificate> certs(cand.size());
    parallel_for(cand.size(), [&](std::size_t i) { certs[i] = relate(em, cand[i], tol); });
    std::vector<std::size_t> chosen;
    const double band = P.number("band", 2.0) * tol;
    for (std::size_t i = 0; i < cand.size() && chosen.size() < want; ++i) {
      if (std::abs(certs[i].normalized) > band && !certs[i].reflexive) chosen.push_back(i);
    }
    if (chosen.size() < want) throw ConfigError("relations: not enough samples outside the null band");
    std::vector<int> oi(chosen.size()), oj(chosen.size());
    OracleSpec os;
    parallel_for(chosen.size(), [&](std::size_t k) {
      const Vec& q = cand[chosen[k]];
      oi[k] = broken_geodesic_search(ctx.g, p, q, CurveClass::Timelike, os).has_value();
      oj[k] = broken_geodesic_search(ctx.g, p, q, CurveClass::Causal, os).has_value();
    });
    for (std::size_t k = 0; k < chosen.size(); ++k) {
      const RelationCertificate& c = certs[chosen[k]];
      const bool agree = in_I_plus(c) == bool(oi[k]) && in_J_plus(c) == bool(oj[k]);
      disagreements += !agree;
      t.rows.push_back(concat(vec_cells(cand[chosen[k]]),
                              std::vector<std::string>{num(c.normalized), std::string(to_string(c.verdict)),
                                                       std::to_string(oi[k]), std::to_string(oj[k]), "",
                                                       agree ? "1" : "0"}));
    }
    check(o, "sampled pairs", double(chosen.size()), ">=", double(want));
  }
  o.tables.emplace_back(table_name(e), t);
  check(o, "disagreements", double(disagreements), "==", 0.0);
}

void op_boundary(Context& ctx, const ExperimentConfig& e, std::uint64_t, Outcome& o) {
  const Params P{e.params};
  const Vec p = P.vec("p");
  const int n = ctx.g.dim();
  const ExponentialMap em(ctx.g, p);
  CausalCurve curve;
  if (P.has("curve")) {
    curve = make_curve(e.params["curve"], {}, ctx.cfg.source_dir);
  } else {
    const Vec spatial = P.vec("direction", unit_vector(n - 1, 0));
    const Vec v = P.number("scale", 0.6) * future_null_vector(ctx.g, p, spatial) /
                  std::abs(future_null_vector(ctx.g, p, spatial)(0));
    const double power = P.number("power", 2.0);
    curve = CausalCurve::from_function(
        [&](double t) { return t == 0.0 ? p : em.exp(std::pow(t, power) * v); }, 0.0, 1.0, P.count("samples", 101));
  }
  BoundaryNullSpec bs;
  bs.distance_tol = tol_of(e, "distance", bs.distance_tol);
  const BoundaryNullReport r = boundary_null_check(em, curve, bs);
  Table t{concat(std::vector<std::string>{"t"}, vec_header("x", n), std::vector<std::string>{"sigma"}), {}};
  for (std::size_t k = 0; k < curve.size(); ++k)
    t.rows.push_back(concat(std::vector<std::string>{num(curve.t[k])}, vec_cells(curve.x[k]),
                            std::vector<std::string>{num(r.sigma[k])}));
  o.tables.emplace_back(table_name(e), t);
  const std::string expect = P.text("expect", "OnBoundary");
  check(o, "verdict " + expect, std::string(to_string(r.verdict)) == expect ? 1.0 : 0.0, "==", 1.0);
  if (expect == "OnBoundary") {
    check(o, "max collinearity", r.max_collinearity, "<", bs.collinearity_tol);
    check(o, "sup distance to null geodesic", r.sup_distance, "<", bs.distance_tol);
  }
}

void op_pushup(Context& ctx, const ExperimentConfig& e, std::uint64_t seed, Outcome& o) {
  const Params P{e.params};
  const int n = ctx.g.dim();
  const double tol = P.number("tol", 1e-6);
  struct Triple {
    Vec p, q, r;
  };
  std::vector<Triple> triples;
  if (P.has("triples")) {
    for (const auto& t : e.params["triples"]) triples.push_back({vec_of(t["p"], "p"), vec_of(t["q"], "q"), vec_of(t["r"], "r")});
  } else {
    const std::size_t want = P.count("count", 20);
    const double half = P.number("half_width", 0.3);
    const double scale = P.number("scale", 0.3);
    const Vec c = P.vec("center", ctx.g.domain().center());
    std::vector<Interval> iv;
    for (int i = 0; i < n; ++i) iv.push_back({c(i) - half, c(i) + half});
    for (const auto& [p, d] : sample_point_directions(ChartDomain(iv), {8 * want, derive_seed(seed, "pushup"), false})) {
      if (triples.size() == want) break;
      try {
        const Vec spatial = d.tail(n - 1);
        if (spatial.norm() < 1e-3) continue;
        const Vec vn = future_null_vector(ctx.g, p, spatial.normalized());
        const ExponentialMap ep(ctx.g, p);
        const Vec q = ep.exp(scale * (0.5 + 0.5 * std::abs(d(0))) * vn / std::abs(vn(0)));
        Vec w = Vec::Zero(n);
        w(0) = 1.0;
        w.tail(n - 1) = 0.5 * d.head(n - 1);
        w *= scale;
        const ExponentialMap eq(ctx.g, q);
        const Vec r = eq.exp(w);
        // Preconditions certified: p <= q and q << r.
        if (!in_J_plus(relate(ep, q, tol)) || !in_I_plus(relate(eq, r, tol))) continue;
        triples.push_back({p, q, r});
      } catch (const DomainError&) {
        continue;
      }
    }
    if (triples.size() < want) throw ConfigError("pushup: could not generate enough triples inside the chart");
  }
  std::vector<int> verified(triples.size(), 0);
  std::vector<PushUpResult> results(triples.size());
  std::vector<std::string> errors(triples.size());
  parallel_for(triples.size(), [&](std::size_t i) {
    try {
      results[i] = push_up(ctx.g, triples[i].p, triples[i].q, triples[i].r, tol);
      verified[i] = verify_broken_geodesic(ctx.g, results[i].witness, CurveClass::Timelike, tol);
    } catch (const NumericalError& ex) {
      errors[i] = ex.what();
    }
  });
  Table t{concat(vec_header("p", n), vec_header("q", n), vec_header("r", n),
                 std::vector<std::string>{"legs", "join_parameter", "verified"}),
          {}};
  std::size_t ok = 0;
  for (std::size_t i = 0; i < triples.size(); ++i) {
    ok += verified[i];
    t.rows.push_back(concat(vec_cells(triples[i].p), vec_cells(triples[i].q), vec_cells(triples[i].r),
                            std::vector<std::string>{std::to_string(results[i].witness.legs.size()),
                                                     num(results[i].join_parameter), std::to_string(verified[i])}));
  }
  o.tables.emplace_back(table_name(e), t);
  check(o, "verified witnesses", double(ok), "==", double(triples.size()));
}

void op_limitcurve(Context& ctx, const ExperimentConfig& e, std::uint64_t, Outcome& o) {
  const Params P{e.params};
  if (!P.has("curve")) throw ConfigError("limitcurve needs a 'curve' block");
  std::vector<double> ns;
  if (P.has("n")) {
    ns = doubles_of(e.params["n"], "n");
  } else {
    const std::size_t nmax = P.count("n_max", 64);
    for (std::size_t k = 1; k <= nmax; ++k) ns.push_back(double(k));
  }
  std::vector<CausalCurve> curves;
  const Json& cj = e.params["curve"];
  if (cj.contains("csv") && cj["csv"].is_array()) {
    for (const auto& f : cj["csv"]) curves.push_back(read_curve_csv(ctx.cfg.source_dir / f.get<std::string>()));
  } else {
    for (double k : ns) curves.push_back(make_curve(cj, {{"n", k}}, ctx.cfg.source_dir));
  }
  AccumulationSpec as;
  as.tol = tol_of(e, "distance", as.tol);
  as.grid = P.count("grid", as.grid);
  const Vec p = P.vec("p", curves.back().x.front());
  const AccumulationResult r = accumulation_curve(ctx.g, curves, p, as);
  const int n = ctx.g.dim();
  Table t{concat(std::vector<std::string>{"s"}, vec_header("x", n)), {}};
  for (std::size_t k = 0; k < r.limit.size(); ++k)
    t.rows.push_back(concat(std::vector<std::string>{num(r.limit.t[k])}, vec_cells(r.limit.x[k])));
  o.tables.emplace_back(table_name(e), t);
  check(o, "extrapolation error estimate", r.error_estimate, "<", as.tol);
  if (P.has("target")) {
    Json tj = Json::object();
    tj["x"] = e.params["target"];
    tj["t"] = cj.contains("t") ? cj["t"] : Json::array({0.0, 1.0});
    tj["samples"] = 2001;
    const CausalCurve target = make_curve(tj, {}, ctx.cfg.source_dir).arclength_reparametrized(as.grid);
    double d = 0.0;
    for (std::size_t k = 0; k < as.grid; ++k) d = std::max(d, (target.x[k] - r.limit.x[k]).norm());
    check(o, "sup distance to target", d, "<", as.tol);
  }
  const bool causal = r.classification.kind != CurveClass::NonCausal && r.classification.direction == TimeDirection::Future;
  check(o, fmt::format("limit causal ({})", to_string(r.classification.kind)), causal ? 1.0 : 0.0, "==", 1.0);
}

void op_cones(Context& ctx, const ExperimentConfig& e, std::uint64_t, Outcome& o) {
  const Params P{e.params};
  RasterSpec rs;
  rs.box = box_of(e.params.at("box"), "box");
  rs.cells = P.count("cells", rs.cells);
  rs.tol = P.number("tol", rs.tol);
  rs.integrator.step = P.number("step", rs.integrator.step);
  const Vec p = P.vec("p");
  const PlainnessReport r = causal_plainness_probe(ctx.g, p, ctx.family(), rs);

  Table summary{{"epsilon", "gap_cells", "inner_cells", "boundary_cells", "j_plus_cells"}, {}};
  Json js = {{"cells", r.cells}, {"j_plus_cells", r.j_plus_cells}, {"rows", Json::array()}};
  for (const auto& row : r.rows) {
    summary.rows.push_back({num(row.epsilon), num(row.gap_cells), std::to_string(row.inner_cells),
                            std::to_string(row.boundary_cells), std::to_string(r.j_plus_cells)});
    js["rows"].push_back({{"epsilon", row.epsilon}, {"gap_cells", row.gap_cells}, {"inner_cells", row.inner_cells}});
  }
  o.tables.emplace_back(table_name(e), summary);
  o.documents.emplace_back(e.id + "_summary.json", js);

  Table grid{{"i", "j", "t", "x", "j_plus"}, {}};
  for (const auto& row : r.rows) grid.header.push_back(fmt::format("inner_eps_{}", row.epsilon));
  const Vec lo = rs.box.lower();
  const Vec hi = rs.box.upper();
  const std::size_t N = rs.cells;
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < N; ++j) {
      std::vector<std::string> cells{std::to_string(i), std::to_string(j),
                                     num(lo(0) + (double(i) + 0.5) * (hi(0) - lo(0)) / double(N)),
                                     num(lo(1) + (double(j) + 0.5) * (hi(1) - lo(1)) / double(N)),
                                     std::to_string(r.j_plus_mask[i * N + j])};
      for (const auto& m : r.inner_masks) cells.push_back(std::to_string(m[i * N + j]));
      grid.rows.push_back(std::move(cells));
    }
  }
  o.tables.emplace_back(e.id + "_grid.csv", grid);

  if (e.tolerances.contains("final_gap") && !r.rows.empty()) {
    std::size_t increases = 0;
    for (std::size_t i = 1; i < r.rows.size(); ++i) increases += r.rows[i].gap_cells > r.rows[i - 1].gap_cells;
    check(o, "gap increases as epsilon shrinks", double(increases), "==", 0.0);
    check(o, "gap last - first", r.rows.back().gap_cells - r.rows.front().gap_cells, "<", 0.0);
    check(o, "final gap (cells)", r.rows.back().gap_cells, "<=", tol_of(e, "final_gap", 2.0));
  }
}

void op_cylinder(Context& ctx, const ExperimentConfig& e, std::uint64_t seed, Outcome& o) {
  const Params P{e.params};
  CylinderSpec cs;
  cs.half_width = P.number("half_width", cs.half_width);
  cs.points.seed = derive_seed(seed, "cylinder");
  const CylindricalNeighborhood c = cylindrical_neighborhood(ctx.g, P.vec("p"), cs);
  Table t{{"half_width", "halvings", "frame_error", "min_slope", "max_slope"},
          {{num(c.half_width), std::to_string(c.halvings), num(c.frame_error), num(c.min_slope), num(c.max_slope)}}};
  o.tables.emplace_back(table_name(e), t);
  check(o, "frame error", c.frame_error, "<=", tol_of(e, "frame", 1e-10));
  check(o, "min null slope", c.min_slope, ">", 0.5);
  check(o, "max null slope", c.max_slope, "<", 2.0);
  if (P.flag("expect_shrink", false)) check(o, "halvings", double(c.halvings), ">=", 1.0);
}

void op_lu_timelike(Context& ctx, const ExperimentConfig& e, std::uint64_t, Outcome& o) {
  const Params P{e.params};
  const CausalCurve curve = make_curve(e.params.at("curve"), {}, ctx.cfg.source_dir);
  const LuTimelikeResult r = lu_timelike_check(curve, ctx.family());
  Table t{{"success", "epsilon", "worst_value"}, {{r.success ? "1" : "0", num(r.epsilon), num(r.worst_value)}}};
  o.tables.emplace_back(table_name(e), t);
  const bool expect = P.text("expect", "success") == "success";
  check(o, expect ? "success" : "failure", r.success == expect ? 1.0 : 0.0, "==", 1.0);
}

void op_continuous_causal(Context& ctx, const ExperimentConfig& e, std::uint64_t, Outcome& o) {
  const Params P{e.params};
  const CausalCurve curve = make_curve(e.params.at("curve"), {}, ctx.cfg.source_dir);
  ContinuousCausalSpec cs;
  cs.radius = P.number("radius", cs.radius);
  cs.tol = P.number("tol", cs.tol);
  const ContinuousCausalReport r = continuous_causal_check(ctx.g, curve, cs);
  Table t{{"passed", "failing_sample", "lipschitz", "relations_checked"},
          {{r.passed ? "1" : "0", std::to_string(r.failing_sample), num(r.lipschitz), std::to_string(r.relations_checked)}}};
  o.tables.emplace_back(table_name(e), t);
  const bool expect = P.text("expect", "pass") == "pass";
  check(o, expect ? "passes" : "fails", r.passed == expect ? 1.0 : 0.0, "==", 1.0);
}

void op_broken_approx(Context& ctx, const ExperimentConfig& e, std::uint64_t, Outcome& o) {
  const Params P{e.params};
  const CausalCurve curve = make_curve(e.params.at("curve"), {}, ctx.cfg.source_dir);
  const double tol = P.number("tol", 1e-6);
  const CurveClassification cls = classify_curve(ctx.g, curve, tol);
  const BrokenGeodesic b = broken_geodesic_approx(ctx.g, curve, tol);
  const int n = ctx.g.dim();
  Table t{concat(vec_header("node", n), std::vector<std::string>{"leg_class"}), {}};
  for (std::size_t k = 0; k < b.nodes.size(); ++k)
    t.rows.push_back(concat(vec_cells(b.nodes[k]), std::vector<std::string>{
                                                      k < b.leg_classes.size() ? std::string(to_string(b.leg_classes[k].kind)) : ""}));
  o.tables.emplace_back(table_name(e), t);
  const double end_gap = (b.nodes.front() - curve.x.front()).norm() + (b.nodes.back() - curve.x.back()).norm();
  check(o, "endpoint mismatch", end_gap, "==", 0.0);
  check(o, fmt::format("legs keep class {}", to_string(cls.kind)),
        verify_broken_geodesic(ctx.g, b, cls.kind, tol) ? 1.0 : 0.0, "==", 1.0);
}

const std::map<std::string, OpFn>& op_table() {
  static const std::map<std::string, OpFn> ops = {
      {"metric_check", op_metric_check},   {"classify_vectors", op_classify_vectors},
      {"cone_pairs", op_cone_pairs},       {"mollify", op_mollify},
      {"gauss", op_gauss},                 {"exp_convergence", op_exp_convergence},
      {"normal_radius", op_normal_radius}, {"gradq", op_gradq},
      {"relations", op_relations},         {"boundary", op_boundary},
      {"pushup", op_pushup},               {"limitcurve", op_limitcurve},
      {"cones", op_cones},                 {"cylinder", op_cylinder},
      {"lu_timelike", op_lu_timelike},     {"continuous_causal", op_continuous_causal},
      {"broken_approx", op_broken_approx}};
  return ops;
}

std::string iso_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

Json report_json(const VerificationReport& r) {
  Json checks = Json::array();
  for (const auto& c : r.checks) {
    checks.push_back({{"name", c.name}, {"value", c.value}, {"relation", c.relation}, {"tolerance", c.tolerance},
                      {"pass", c.pass}});
  }
  return {{"id", r.id},         {"op", r.op},         {"digest", r.digest}, {"status", std::string(to_string(r.status))},
          {"message", r.message}, {"checks", checks}, {"artifacts", r.artifacts}};
}

RunSummary execute(const ScenarioConfig& cfg, const std::vector<ExperimentConfig>& experiments, const RunOptions& options) {
  RunSummary summary;
  const auto diags = validate_scenario(cfg);
  if (!diags.empty()) {
    summary.exit_code = 2;
    VerificationReport r;
    r.id = "validation";
    r.status = ExperimentStatus::ConfigError;
    for (const auto& d : diags) r.message += d + "\n";
    summary.reports.push_back(r);
    return summary;
  }
  const std::uint64_t seed = options.seed.value_or(cfg.seed);
  summary.output_dir = options.out.empty() ? fs::path(cfg.output_dir) : options.out;
  fs::create_directories(summary.output_dir);
  const std::string started = iso_now();

  std::optional<Context> ctx;
  try {
    ctx.emplace(Context{cfg, seed, build_metric(cfg.metric), summary.output_dir, std::nullopt});
  } catch (const Error& ex) {
    summary.exit_code = 2;
    VerificationReport r;
    r.id = "metric";
    r.status = ExperimentStatus::ConfigError;
    r.message = ex.what();
    summary.reports.push_back(r);
    return summary;
  }

  bool any_config = false, any_numeric = false, any_failed = false;
  for (const auto& e : experiments) {
    VerificationReport r;
    r.id = e.id;
    r.op = e.op;
    const std::uint64_t es = e.seed.value_or(derive_seed(seed, e.id));
    const Json inputs = {{"metric", cfg.metric}, {"regularization", cfg.regularization}, {"seed", es},
                         {"op", e.op},           {"params", e.params},                 {"tolerances", e.tolerances}};
    r.digest = fmt::format("{:016x}", fnv1a64(inputs.dump()));
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      op_table().at(e.op)(*ctx, e, es, o);
      r.status = std::all_of(o.checks.begin(), o.checks.end(), [](const CheckRow& c) { return c.pass; })
                     ? ExperimentStatus::Passed
                     : ExperimentStatus::Failed;
    } catch (const ConfigError& ex) {
      r.status = ExperimentStatus::ConfigError;
      r.message = ex.what();
    } catch (const Json::exception& ex) {
      r.status = ExperimentStatus::ConfigError;
      r.message = ex.what();
    } catch (const std::exception& ex) {
      r.status = ExperimentStatus::NumericalError;
      r.message = ex.what();
    }
    r.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.checks = o.checks;
    for (const auto& [name, table] : o.tables) {
      write_csv(summary.output_dir / name, table);
      r.artifacts.push_back(name);
    }
    for (const auto& [name, doc] : o.documents) {
      std::ofstream(summary.output_dir / name) << doc.dump(2) << '\n';
      r.artifacts.push_back(name);
    }
    if (r.status != ExperimentStatus::Passed && r.status != ExperimentStatus::Failed && !o.tables.empty())
      r.message += " (partial outputs)";
    any_config |= r.status == ExperimentStatus::ConfigError;
    any_numeric |= r.status == ExperimentStatus::NumericalError;
    any_failed |= r.status == ExperimentStatus::Failed;
    summary.reports.push_back(std::move(r));
  }

  Json rep = {{"scenario", cfg.name}, {"version", library_version()}, {"seed", seed}, {"experiments", Json::array()}};
  Json meta = {{"scenario", cfg.name}, {"started", started}, {"finished", iso_now()}, {"threads", thread_count()},
               {"runtime_seconds", Json::object()}};
  for (const auto& r : summary.reports) {
    rep["experiments"].push_back(report_json(r));
    meta["runtime_seconds"][r.id] = r.runtime_seconds;
  }
  std::ofstream(summary.output_dir / "report.json") << rep.dump(2) << '\n';
  std::ofstream(summary.output_dir / "meta.json") << meta.dump(2) << '\n';
  summary.exit_code = any_config ? 2 : any_numeric ? 3 : any_failed ? 1 : 0;
  return summary;
}

}  // namespace

RunSummary run_scenario(const ScenarioConfig& config, const RunOptions& options) {
  return execute(config, config.experiments, options);
}

RunSummary run_filtered(const ScenarioConfig& config, const std::vector<std::string>& ops, const RunOptions& options) {
  ScenarioConfig c = config;
  std::erase_if(c.experiments,
                [&](const ExperimentConfig& e) { return std::find(ops.begin(), ops.end(), e.op) == ops.end(); });
  if (c.experiments.empty()) {
    RunSummary s;
    s.exit_code = 2;
    VerificationReport r;
    r.id = "selection";
    r.status = ExperimentStatus::ConfigError;
    r.message = "scenario has no experiment with op in {" + fmt::format("{}", fmt::join(ops, ", ")) + "}";
    s.reports.push_back(r);
    return s;
  }
  return execute(c, c.experiments, options);
}

}  // namespace lowreg
