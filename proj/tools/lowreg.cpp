#include "lowreg/catalog.hpp"
#include "lowreg/parallel.hpp"
#include "lowreg/scenario.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <iostream>
#include <map>

namespace {

int print_summary(const lowreg::RunSummary& s) {
  for (const auto& r : s.reports) {
    fmt::print("{:<24} {:<16} {}\n", r.id, lowreg::to_string(r.status), r.digest);
    for (const auto& c : r.checks) {
      fmt::print("    [{}] {} = {:.6g} {} {:.6g}\n", c.pass ? "pass" : "FAIL", c.name, c.value, c.relation, c.tolerance);
    }
    if (!r.message.empty()) fmt::print("    {}\n", r.message);
  }
  if (!s.output_dir.empty()) fmt::print("outputs in {}\n", s.output_dir.string());
  return s.exit_code;
}

int validate(const std::string& path) {
  try {
    const auto cfg = lowreg::load_scenario(path);
    const auto diags = lowreg::validate_scenario(cfg);
    for (const auto& d : diags) fmt::print("{}\n", d);
    if (diags.empty()) fmt::print("{}: ok\n", path);
    return diags.empty() ? 0 : 2;
  } catch (const lowreg::ConfigError& e) {
    fmt::print(stderr, "{}\n", e.what());
    return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lowreg: causality checks for low-regularity Lorentzian metrics"};
  app.require_subcommand(1);
  std::string out;
  int threads = 0;
  std::optional<std::uint64_t> seed;
  app.add_option("--out", out, "output directory (overrides the scenario)");
  app.add_option("--threads", threads, "worker threads (default: hardware concurrency)")->check(CLI::NonNegativeNumber);
  app.add_option("--seed", seed, "global seed override");
  app.add_flag_callback("--version", [] {
    fmt::print("lowreg {}\n", lowreg::library_version());
    std::exit(0);
  });

  std::string config;
  auto* run = app.add_subcommand("run", "run every experiment of a scenario");
  run->add_option("config", config, "scenario file")->required();
  auto* val = app.add_subcommand("validate", "check a scenario without running it");
  val->add_option("config", config, "scenario file")->required();
  auto* list = app.add_subcommand("list-examples", "print the metric catalog");

  // Single-purpose subcommands run the matching experiments of a scenario.
  const std::map<std::string, std::vector<std::string>> groups = {
      {"expmap", {"normal_radius", "exp_convergence", "gradq"}},
      {"gauss", {"gauss"}},
      {"cones", {"cones", "cylinder"}},
      {"pushup", {"pushup"}},
      {"boundary", {"boundary"}},
      {"limitcurve", {"limitcurve"}}};
  std::map<std::string, CLI::App*> group_cmds;
  for (const auto& [name, ops] : groups) {
    auto* sub = app.add_subcommand(name, fmt::format("run the {} experiments of a scenario", name));
    sub->add_option("config", config, "scenario file")->required();
    group_cmds[name] = sub;
  }

  // Every sub-command shares the global flags, wherever they appear.
  for (auto* sub : app.get_subcommands([](CLI::App*) { return true; })) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  if (threads > 0) lowreg::set_thread_count(threads);

  if (*list) {
    for (const auto& e : lowreg::example_catalog()) {
      fmt::print("{:<14} {}", e.name, e.summary);
      if (!e.params.empty()) fmt::print(" [params: {}]", fmt::join(e.params, ", "));
      fmt::print("\n");
    }
    return 0;
  }
  if (*val) return validate(config);

  lowreg::RunOptions options;
  options.out = out;
  options.seed = seed;
  try {
    const auto cfg = lowreg::load_scenario(config);
    if (*run) return print_summary(lowreg::run_scenario(cfg, options));
    for (const auto& [name, sub] : group_cmds) {
      if (*sub) return print_summary(lowreg::run_filtered(cfg, groups.at(name), options));
    }
  } catch (const lowreg::ConfigError& e) {
    fmt::print(stderr, "{}\n", e.what());
    return 2;
  }
  return 2;
}
