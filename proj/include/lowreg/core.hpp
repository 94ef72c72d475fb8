#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace lowreg {

inline constexpr int kMaxDim = 4;

// Heap-free small vectors and matrices; every chart has 2 <= n <= 4.
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDim, kMaxDim>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A point or vector left the chart domain it was supposed to live in.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Integration, shooting or certification failed.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Malformed scenario, example name or parameter.
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  double width() const { return hi - lo; }
  double mid() const { return 0.5 * (lo + hi); }
  bool contains(double x) const { return x >= lo && x <= hi; }
};

/// Coordinate box of a chart. Coordinate 0 is the time coordinate for all
/// bundled examples.
class ChartDomain {
 public:
  ChartDomain() = default;
  explicit ChartDomain(std::vector<Interval> bounds);
  static ChartDomain cube(int n, double half_width);

  int dim() const { return static_cast<int>(bounds_.size()); }
  const Interval& operator[](int i) const { return bounds_[static_cast<std::size_t>(i)]; }
  const std::vector<Interval>& bounds() const { return bounds_; }
  std::string label(int i) const { return "x" + std::to_string(i); }

  bool contains(const Vec& p) const;
  double distance_to_boundary(const Vec& p) const;
  Vec center() const;
  Vec lower() const;
  Vec upper() const;
  double diameter() const;

  /// Shrinks (m > 0) or grows (m < 0) every side by m along the listed axes.
  ChartDomain shrunk(double m) const;
  ChartDomain shrunk(double m, const std::vector<int>& axes) const;
  bool contains(const ChartDomain& inner) const;

 private:
  std::vector<Interval> bounds_;
};

inline Vec make_vec(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

inline Vec unit_vector(int n, int k) {
  Vec e = Vec::Zero(n);
  e(k) = 1.0;
  return e;
}

}  // namespace lowreg
