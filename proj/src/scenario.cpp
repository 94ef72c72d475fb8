#include "lowreg/scenario.hpp"

#include "lowreg/catalog.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>

namespace lowreg {

namespace {

Json scalar_to_json(const YAML::Node& node) {
  const std::string& s = node.Scalar();
  if (node.Tag() == "!") return s;  // quoted
  if (s == "true" || s == "True") return true;
  if (s == "false" || s == "False") return false;
  if (s == "null" || s == "~" || s.empty()) return nullptr;
  const bool integral = s.find_first_of(".eEn") == std::string::npos;
  if (integral) {
    std::int64_t i = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), i);
    if (ec == std::errc() && ptr == s.data() + s.size()) return i;
    std::uint64_t u = 0;
    const auto [ptr2, ec2] = std::from_chars(s.data(), s.data() + s.size(), u);
    if (ec2 == std::errc() && ptr2 == s.data() + s.size()) return u;
  }
  double d = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), d);
  if (ec == std::errc() && ptr == s.data() + s.size()) return d;
  return s;
}

Json to_json(const YAML::Node& node) {
  switch (node.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined: return nullptr;
    case YAML::NodeType::Scalar: return scalar_to_json(node);
    case YAML::NodeType::Sequence: {
      Json arr = Json::array();
      for (const auto& item : node) arr.push_back(to_json(item));
      return arr;
    }
    case YAML::NodeType::Map: {
      Json obj = Json::object();
      for (const auto& kv : node) obj[kv.first.as<std::string>()] = to_json(kv.second);
      return obj;
    }
  }
  return nullptr;
}

bool is_number(const Json& j) { return j.is_number(); }

void check_box(const Json& box, const std::string& where, std::vector<std::string>& diags) {
  if (!box.is_array() || box.size() < 2 || box.size() > static_cast<std::size_t>(kMaxDim)) {
    diags.push_back(where + ": box must be a list of 2 to 4 [lo, hi] pairs");
    return;
  }
  for (const auto& iv : box) {
    if (!iv.is_array() || iv.size() != 2 || !is_number(iv[0]) || !is_number(iv[1]) ||
        !(iv[0].get<double>() < iv[1].get<double>())) {
      diags.push_back(where + ": every interval must be [lo, hi] with lo < hi");
      return;
    }
  }
}

void check_positive_eps(const Json& j, const std::string& where, std::vector<std::string>& diags) {
  auto bad = [](const Json& v) { return !v.is_number() || !(v.get<double>() > 0); };
  if (j.is_array()) {
    if (j.empty()) diags.push_back(where + ": epsilon list is empty");
    for (const auto& v : j) {
      if (bad(v)) {
        diags.push_back(where + ": epsilon values must be positive numbers");
        return;
      }
    }
  } else if (bad(j)) {
    diags.push_back(where + ": epsilon must be a positive number");
  }
}

}  // namespace

const std::vector<std::string>& known_ops() {
  static const std::vector<std::string> ops = {
      "metric_check", "classify_vectors", "cone_pairs",  "mollify",           "gauss",       "exp_convergence",
      "normal_radius", "gradq",           "relations",   "boundary",          "pushup",      "limitcurve",
      "cones",         "cylinder",        "lu_timelike", "continuous_causal", "broken_approx"};
  return ops;
}

std::string_view to_string(ExperimentStatus s) {
  switch (s) {
    case ExperimentStatus::Passed: return "passed";
    case ExperimentStatus::Failed: return "failed";
    case ExperimentStatus::ConfigError: return "config_error";
    case ExperimentStatus::NumericalError: return "numerical_error";
  }
  return "?";
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string library_version() { return "0.3.0"; }

ScenarioConfig load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read scenario file " + path.string());
  YAML::Node root;
  try {
    root = YAML::Load(in);
  } catch (const YAML::Exception& e) {
    throw ConfigError("malformed scenario file " + path.string() + ": " + e.what());
  }
  if (!root.IsMap()) throw ConfigError("scenario root must be a mapping");
  const Json j = to_json(root);

  ScenarioConfig c;
  c.source_dir = path.parent_path();
  c.name = j.value("name", path.stem().string());
  if (j.contains("seed")) {
    if (!j["seed"].is_number_integer()) throw ConfigError("seed must be an unsigned integer");
    c.seed = j["seed"].get<std::uint64_t>();
    c.seed_given = true;
  }
  c.output_dir = j.value("output", c.name);
  if (j.contains("metric")) c.metric = j["metric"];
  if (j.contains("regularization")) c.regularization = j["regularization"];
  if (j.contains("experiments")) {
    if (!j["experiments"].is_array()) throw ConfigError("experiments must be a list");
    for (const auto& e : j["experiments"]) {
      if (!e.is_object()) throw ConfigError("every experiment must be a mapping");
      ExperimentConfig x;
      x.id = e.value("id", std::string{});
      x.op = e.value("op", std::string{});
      if (e.contains("params") && !e["params"].is_null()) x.params = e["params"];
      if (e.contains("tolerances") && !e["tolerances"].is_null()) x.tolerances = e["tolerances"];
      if (e.contains("seed")) {
        if (!e["seed"].is_number_integer()) throw ConfigError("experiment seed must be an unsigned integer");
        x.seed = e["seed"].get<std::uint64_t>();
      }
      x.output = e.value("output", x.id + ".csv");
      c.experiments.push_back(std::move(x));
    }
  }
  return c;
}

std::vector<std::string> validate_scenario(const ScenarioConfig& c) {
  std::vector<std::string> d;
  if (!c.seed_given) d.push_back("seed: an explicit global seed is required");
  // metric block
  if (!c.metric.is_object() || c.metric.empty()) {
    d.push_back("metric: block missing");
  } else if (c.metric.contains("name") || c.metric.contains("example")) {
    const Json& n = c.metric.contains("name") ? c.metric["name"] : c.metric["example"];
    const auto name = n.is_string() ? n.get<std::string>() : std::string{};
    const auto& cat = example_catalog();
    if (std::none_of(cat.begin(), cat.end(), [&](const CatalogEntry& e) { return e.name == name; }))
      d.push_back("metric: unknown example '" + name + "'");
    if (c.metric.contains("params")) {
      if (!c.metric["params"].is_object()) {
        d.push_back("metric: params must be a mapping");
      } else {
        for (const auto& [k, v] : c.metric["params"].items()) {
          if (!v.is_number()) d.push_back("metric: parameter '" + k + "' must be numeric");
        }
      }
    }
    if (c.metric.contains("box")) check_box(c.metric["box"], "metric", d);
  } else if (c.metric.contains("expression")) {
    const Json& e = c.metric["expression"];
    if (!e.is_object() || !e.contains("box")) {
      d.push_back("metric: expression block needs a box");
    } else {
      check_box(e["box"], "metric.expression", d);
    }
    if (e.is_object() && e.contains("components") && !e["components"].is_object())
      d.push_back("metric: expression components must be a mapping");
  } else {
    d.push_back("metric: needs either 'name' or 'expression'");
  }

  // regularization block
  if (!c.regularization.is_null() && !c.regularization.empty()) {
    if (!c.regularization.is_object()) {
      d.push_back("regularization: must be a mapping");
    } else {
      for (const char* key : {"epsilon", "epsilons"}) {
        if (c.regularization.contains(key)) check_positive_eps(c.regularization[key], "regularization", d);
      }
      if (c.regularization.contains("scheme")) {
        const Json& s = c.regularization["scheme"];
        if (!s.is_string() || (s != "cone_adapted" && s != "mollify"))
          d.push_back("regularization: scheme must be 'cone_adapted' or 'mollify'");
      }
      if (c.regularization.contains("region")) check_box(c.regularization["region"], "regularization", d);
      for (const char* key : {"samples", "certify_samples", "search_samples", "grid_cells_per_eps"}) {
        if (c.regularization.contains(key) &&
            (!c.regularization[key].is_number_integer() || c.regularization[key].get<std::int64_t>() <= 0))
          d.push_back(std::string("regularization: ") + key + " must be a positive integer");
      }
      if (c.regularization.contains("seed") && !c.regularization["seed"].is_number_unsigned())
        d.push_back("regularization: seed must be an unsigned integer");
    }
  }

  // experiments
  if (c.experiments.empty()) d.push_back("experiments: list is empty");
  std::set<std::string> ids;
  const auto& ops = known_ops();
  for (std::size_t i = 0; i < c.experiments.size(); ++i) {
    const auto& e = c.experiments[i];
    const std::string where = "experiment '" + (e.id.empty() ? "#" + std::to_string(i) : e.id) + "'";
    if (e.id.empty()) d.push_back(where + ": missing id");
    if (!e.id.empty() && !ids.insert(e.id).second) d.push_back(where + ": duplicate id");
    if (e.op.empty()) {
      d.push_back(where + ": missing op");
    } else if (std::find(ops.begin(), ops.end(), e.op) == ops.end()) {
      d.push_back(where + ": unknown op '" + e.op + "'");
    }
    if (!e.params.is_object()) d.push_back(where + ": params must be a mapping");
    if (!e.tolerances.is_object()) {
      d.push_back(where + ": tolerances must be a mapping");
    } else {
      for (const auto& [k, v] : e.tolerances.items()) {
        if (!v.is_number() || !(v.get<double>() > 0)) d.push_back(where + ": tolerance '" + k + "' must be positive");
      }
    }
    if (e.params.is_object()) {
      for (const char* key : {"epsilon", "epsilons"}) {
        if (e.params.contains(key)) check_positive_eps(e.params[key], where, d);
      }
    }
    if (e.output.find('/') != std::string::npos || e.output.find("..") != std::string::npos)
      d.push_back(where + ": output must be a plain file name");
  }
  return d;
}

}  // namespace lowreg
