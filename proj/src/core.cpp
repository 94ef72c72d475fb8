#include "lowreg/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace lowreg {

ChartDomain::ChartDomain(std::vector<Interval> bounds) : bounds_(std::move(bounds)) {
  if (bounds_.size() < 2 || bounds_.size() > static_cast<std::size_t>(kMaxDim)) {
    throw ConfigError("chart dimension must be between 2 and 4");
  }
  for (const auto& b : bounds_) {
    if (!(b.lo < b.hi)) throw ConfigError("chart box must be nonempty in every coordinate");
  }
}

ChartDomain ChartDomain::cube(int n, double half_width) {
  return ChartDomain(std::vector<Interval>(static_cast<std::size_t>(n), Interval{-half_width, half_width}));
}

bool ChartDomain::contains(const Vec& p) const {
  if (p.size() != dim()) return false;
  for (int i = 0; i < dim(); ++i) {
    if (!(p(i) >= bounds_[i].lo && p(i) <= bounds_[i].hi)) return false;
  }
  return true;
}

double ChartDomain::distance_to_boundary(const Vec& p) const {
  double d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < dim(); ++i) {
    d = std::min({d, p(i) - bounds_[i].lo, bounds_[i].hi - p(i)});
  }
  return d;
}

Vec ChartDomain::center() const {
  Vec c(dim());
  for (int i = 0; i < dim(); ++i) c(i) = bounds_[i].mid();
  return c;
}

Vec ChartDomain::lower() const {
  Vec c(dim());
  for (int i = 0; i < dim(); ++i) c(i) = bounds_[i].lo;
  return c;
}

Vec ChartDomain::upper() const {
  Vec c(dim());
  for (int i = 0; i < dim(); ++i) c(i) = bounds_[i].hi;
  return c;
}

double ChartDomain::diameter() const { return (upper() - lower()).norm(); }

ChartDomain ChartDomain::shrunk(double m) const {
  std::vector<int> axes(static_cast<std::size_t>(dim()));
  for (int i = 0; i < dim(); ++i) axes[static_cast<std::size_t>(i)] = i;
  return shrunk(m, axes);
}

ChartDomain ChartDomain::shrunk(double m, const std::vector<int>& axes) const {
  auto b = bounds_;
  for (int a : axes) {
    b[static_cast<std::size_t>(a)].lo += m;
    b[static_cast<std::size_t>(a)].hi -= m;
  }
  return ChartDomain(std::move(b));
}

bool ChartDomain::contains(const ChartDomain& inner) const {
  if (inner.dim() != dim()) return false;
  for (int i = 0; i < dim(); ++i) {
    if (inner[i].lo < bounds_[i].lo || inner[i].hi > bounds_[i].hi) return false;
  }
  return true;
}

}  // namespace lowreg
