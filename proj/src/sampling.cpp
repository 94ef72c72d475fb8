#include "lowreg/sampling.hpp"

#include <boost/math/special_functions/erf.hpp>

#include <array>
#include <cmath>
#include <random>

namespace lowreg {
namespace {

constexpr std::array<unsigned, 8> kPrimes = {2, 3, 5, 7, 11, 13, 17, 19};

double radical_inverse(unsigned base, std::uint64_t k) {
  double inv = 1.0 / base;
  double f = inv;
  double r = 0.0;
  while (k > 0) {
    r += f * static_cast<double>(k % base);
    k /= base;
    f *= inv;
  }
  return r;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::string_view stream) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : stream) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(base ^ splitmix64(h));
}

HaltonSequence::HaltonSequence(int dim, std::uint64_t seed) {
  if (dim < 1 || dim > static_cast<int>(kPrimes.size())) throw ConfigError("Halton dimension out of range");
  std::mt19937_64 rng(seed);
  shift_.resize(static_cast<std::size_t>(dim));
  for (auto& s : shift_) s = static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double HaltonSequence::coord(std::size_t k, int j) const {
  double u = radical_inverse(kPrimes[static_cast<std::size_t>(j)], k + 1) + shift_[static_cast<std::size_t>(j)];
  return u - std::floor(u);
}

std::vector<double> HaltonSequence::sample(std::size_t k) const {
  std::vector<double> u(shift_.size());
  for (int j = 0; j < dim(); ++j) u[static_cast<std::size_t>(j)] = coord(k, j);
  return u;
}

Vec sphere_direction(const double* uniforms, int n) {
  if (n < 1 || n > kMaxDim) throw ConfigError("direction dimension must be between 1 and 4");
  Vec z(n);
  for (int i = 0; i < n; ++i) {
    double u = std::clamp(uniforms[i], 1e-12, 1.0 - 1e-12);
    z(i) = std::sqrt(2.0) * boost::math::erf_inv(2.0 * u - 1.0);
  }
  double nz = z.norm();
  if (nz < 1e-300) return unit_vector(n, 0);
  return z / nz;
}

std::vector<Vec> sample_points(const ChartDomain& box, const SamplerSpec& spec) {
  const int n = box.dim();
  std::vector<Vec> out;
  if (spec.include_corners) {
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
      Vec p(n);
      for (int i = 0; i < n; ++i) p(i) = (mask >> i) & 1u ? box[i].hi : box[i].lo;
      out.push_back(p);
    }
  }
  HaltonSequence seq(n, spec.seed);
  for (std::size_t k = 0; k < spec.count; ++k) {
    Vec p(n);
    for (int i = 0; i < n; ++i) p(i) = box[i].lo + seq.coord(k, i) * box[i].width();
    out.push_back(p);
  }
  return out;
}

std::vector<Vec> sample_directions(int n, const SamplerSpec& spec) {
  HaltonSequence seq(n, spec.seed);
  std::vector<Vec> out;
  out.reserve(spec.count);
  for (std::size_t k = 0; k < spec.count; ++k) {
    auto u = seq.sample(k);
    out.push_back(sphere_direction(u.data(), n));
  }
  return out;
}

std::vector<PointDirection> sample_point_directions(const ChartDomain& box, const SamplerSpec& spec) {
  const int n = box.dim();
  HaltonSequence seq(2 * n, spec.seed);
  std::vector<PointDirection> out;
  out.reserve(spec.count);
  for (std::size_t k = 0; k < spec.count; ++k) {
    auto u = seq.sample(k);
    Vec p(n);
    for (int i = 0; i < n; ++i) p(i) = box[i].lo + u[static_cast<std::size_t>(i)] * box[i].width();
    out.push_back({p, sphere_direction(u.data() + n, n)});
  }
  return out;
}

std::vector<Vec> sample_ball(int n, double r, const SamplerSpec& spec) {
  HaltonSequence seq(n + 1, spec.seed);
  std::vector<Vec> out;
  out.reserve(spec.count);
  const std::size_t on_sphere = spec.count / 4;
  for (std::size_t k = 0; k < spec.count; ++k) {
    auto u = seq.sample(k);
    Vec d = sphere_direction(u.data(), n);
    double radius = k < on_sphere ? r : r * std::pow(u[static_cast<std::size_t>(n)], 1.0 / n);
    out.push_back(radius * d);
  }
  return out;
}

}  // namespace lowreg
