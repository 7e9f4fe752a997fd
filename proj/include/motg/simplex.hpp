#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "motg/error.hpp"
#include "motg/rng.hpp"

namespace motg {

inline constexpr double kSimplexTolerance = 1e-9;

/// A point on the probability simplex over a finite support.
///
/// Construction validates the invariants (entries non-negative and finite,
/// total within 1e-9 of one); there is no way to obtain an invalid instance.
class ProbabilityVector {
 public:
  ProbabilityVector() = default;

  explicit ProbabilityVector(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw InvalidInput("probability vector must have positive support size");
    double total = 0.0;
    for (double v : values_) {
      if (!std::isfinite(v) || v < 0.0) throw InvalidInput("probability entries must be finite and >= 0");
      total += v;
    }
    if (std::abs(total - 1.0) > kSimplexTolerance)
      throw InvalidInput("probability entries sum to " + std::to_string(total) + ", not 1");
  }

  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  const std::vector<double>& values() const noexcept { return values_; }
  std::span<const double> span() const noexcept { return values_; }
  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

  friend bool operator==(const ProbabilityVector&, const ProbabilityVector&) = default;

 private:
  std::vector<double> values_;
};

/// Scales a non-negative vector onto the simplex.
inline ProbabilityVector normalize(std::span<const double> raw) {
  double total = 0.0;
  for (double v : raw) {
    if (!std::isfinite(v) || v < 0.0) throw InvalidInput("normalize: entries must be finite and non-negative");
    total += v;
  }
  if (!(total > 0.0)) throw DegenerateInput("normalize: all entries are zero");
  std::vector<double> out(raw.begin(), raw.end());
  for (double& v : out) v /= total;
  return ProbabilityVector(std::move(out));
}

inline ProbabilityVector normalize(const std::vector<double>& raw) {
  return normalize(std::span<const double>(raw));
}

/// Shannon entropy in nats, with 0 ln 0 = 0.
inline double shannon_entropy(const ProbabilityVector& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h < 0.0 ? 0.0 : h;
}

struct DirichletParams {
  ProbabilityVector base;
  double concentration = 1.0;

  DirichletParams(ProbabilityVector b, double c) : base(std::move(b)), concentration(c) {
    if (!(concentration > 0.0) || !std::isfinite(concentration))
      throw InvalidInput("Dirichlet concentration must be a positive finite number");
    for (double v : base)
      if (!(v > 0.0)) throw InvalidInput("Dirichlet base entries must be > 0; drop zero-probability support first");
  }

  // Builds params from a base that may carry zero entries; those are dropped and
  // `kept` receives the surviving original indices.
  static DirichletParams from_support(const ProbabilityVector& base, double c, std::vector<std::size_t>* kept) {
    std::vector<double> positive;
    if (kept) kept->clear();
    for (std::size_t i = 0; i < base.size(); ++i) {
      if (base[i] > 0.0) {
        positive.push_back(base[i]);
        if (kept) kept->push_back(i);
      }
    }
    return DirichletParams(normalize(positive), c);
  }

  double alpha(std::size_t i) const { return concentration * base[i]; }
  std::size_t size() const { return base.size(); }
};

/// Gamma(shape, 1) by Marsaglia & Tsang (2000). Shapes below one are boosted:
/// G(a) = G(a + 1) * U^(1/a).
inline double sample_gamma(double shape, Rng& rng) {
  assert(shape > 0.0);
  if (shape < 1.0) {
    const double g = sample_gamma(shape + 1.0, rng);
    const double u = rng.uniform_open();
    return g * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform_open();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
  }
}

inline constexpr double kDirichletFloor = 1e-300;

/// One draw from Dir(c * p). Coordinates that underflow to zero are clamped to
/// 1e-300 before the final normalization so every entry stays strictly positive.
inline ProbabilityVector sample_dirichlet(const DirichletParams& params, Rng& rng) {
  const std::size_t n = params.size();
  if (n == 1) return ProbabilityVector({1.0});
  std::vector<double> g(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    g[i] = sample_gamma(params.alpha(i), rng);
    total += g[i];
  }
  if (!(total > 0.0)) {
    // Every coordinate underflowed; fall back to the floor on all of them.
    for (double& v : g) v = kDirichletFloor;
  }
  bool clamped = false;
  for (double& v : g) {
    if (v < kDirichletFloor) {
      v = kDirichletFloor;
      clamped = true;
    }
  }
  auto out = normalize(g);
  if (clamped) {
    // Renormalizing a vector with 1e-300 entries can round them back to zero.
    std::vector<double> vals = out.values();
    for (double& v : vals) v = std::max(v, kDirichletFloor);
    out = normalize(vals);
  }
  return out;
}

struct DirichletMoments {
  std::vector<double> mean;
  std::vector<double> variance;
  std::vector<std::vector<double>> covariance;  // full matrix, diagonal = variance
};

inline DirichletMoments dirichlet_moments(const DirichletParams& params) {
  const std::size_t n = params.size();
  const double denom = params.concentration + 1.0;
  DirichletMoments m;
  m.mean = params.base.values();
  m.variance.resize(n);
  m.covariance.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    const double pi = params.base[i];
    m.variance[i] = pi * (1.0 - pi) / denom;
    for (std::size_t j = 0; j < n; ++j)
      m.covariance[i][j] = (i == j) ? m.variance[i] : -pi * params.base[j] / denom;
  }
  return m;
}

}  // namespace motg
