#pragma once

#include "lowreg/metric.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace lowreg {

/// Flat metric -dt^2 + dx^2 + ... on [-1,1]^n by default.
MetricField minkowski(int n, std::optional<ChartDomain> box = {});

/// C^{1,1} family -dt^2 + (1 + a x|x|) dx^2 (+ flat extra dimensions). The
/// second derivative jumps across x = 0. Default box: t in [-2,2],
/// x in [-1.4,1.4], others [-1,1]. Requires |a| x^2 < 1 on the box.
MetricField kink(double a, int n = 2, std::optional<ChartDomain> box = {});

/// Stress family with x|x| replaced by |x|^(1+alpha), 0 < alpha < 1; the
/// first derivative is only alpha-Hoelder at x = 0.
MetricField rough(double a, double alpha, int n = 2, std::optional<ChartDomain> box = {});

/// Smooth nonflat -dt^2 + e^{2kt}(dx^2 + ...) on [-1,1]^n by default.
MetricField curved_smooth(double k, int n = 2, std::optional<ChartDomain> box = {});

struct ExpressionMetricSpec {
  std::string name = "expression";
  ChartDomain box;
  /// Keys "ij" (e.g. "00", "11", "01"); missing entries take Minkowski values.
  std::map<std::string, std::string> components;
  std::map<std::string, double> params;
  Regularity regularity = Regularity::C0;
  int time_axis = 0;
};

/// User metric from component expression strings. Derivatives by finite
/// differences; active axes are the referenced coordinates.
MetricField expression_metric(const ExpressionMetricSpec& spec);

struct CatalogEntry {
  std::string name;
  std::string summary;
  std::vector<std::string> params;
};

const std::vector<CatalogEntry>& example_catalog();

/// Builds a catalog example by name. Recognized params: dim (all), a (kink,
/// rough), alpha (rough), k (curved_smooth).
MetricField make_example(const std::string& name, const std::map<std::string, double>& params,
                         std::optional<ChartDomain> box = {}, int time_axis = 0);

}  // namespace lowreg
