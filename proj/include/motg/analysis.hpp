#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "motg/error.hpp"
#include "motg/generation.hpp"
#include "motg/rng.hpp"
#include "motg/sampling.hpp"
#include "motg/simplex.hpp"
#include "motg/tensor.hpp"

namespace motg {

// Gram-matrix spectra

inline constexpr double kSpectrumCutoff = 1e-12;

/// Nonzero-spectrum of Z Zᵀ, computed on whichever of Z Zᵀ / ZᵀZ is smaller.
/// Eigenvalues below 1e-12 of the total are set to zero.
inline std::vector<double> gram_spectrum(const Matrix& z) {
  if (z.rows() < 1 || z.cols() < 1) throw InvalidInput("gram_spectrum: empty matrix");
  if (!z.allFinite()) throw InvalidInput("gram_spectrum: non-finite entry");
  const Eigen::MatrixXd gram = z.rows() <= z.cols() ? Eigen::MatrixXd(z * z.transpose())
                                                    : Eigen::MatrixXd(z.transpose() * z);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericalFailure("gram_spectrum: eigensolver failed", "eigen");
  std::vector<double> lambda(static_cast<std::size_t>(es.eigenvalues().size()));
  double total = 0.0;
  for (std::size_t i = 0; i < lambda.size(); ++i) {
    lambda[i] = std::max(0.0, es.eigenvalues()[static_cast<Eigen::Index>(i)]);
    total += lambda[i];
  }
  if (!(total > 0.0)) throw DegenerateInput("gram_spectrum: all-zero matrix");
  for (double& l : lambda)
    if (l < kSpectrumCutoff * total) l = 0.0;
  std::sort(lambda.begin(), lambda.end(), std::greater<>());
  return lambda;
}

/// von Neumann entropy (nats) of the normalized Gram spectrum.
inline double gram_entropy(const Matrix& z) {
  const auto lambda = gram_spectrum(z);
  double total = 0.0;
  for (double l : lambda) total += l;
  double s = 0.0;
  for (double l : lambda) {
    if (l <= 0.0) continue;
    const double q = l / total;
    s -= q * std::log(q);
  }
  return std::max(0.0, s);
}

struct EntropyPoint {
  std::size_t layer = 0;
  std::size_t n = 0;
  double entropy = 0.0;
};

struct EntropyCurve {
  std::vector<EntropyPoint> points;
};

/// S(Z_n) for each layer and each prefix length n in `grid` (all lengths when
/// the grid is empty). Prefix lengths beyond the trace are skipped.
inline EntropyCurve entropy_curves(const HiddenStateTrace& trace, std::span<const std::size_t> grid = {}) {
  if (trace.steps() == 0) throw InvalidInput("entropy_curves: empty trace");
  std::vector<std::size_t> ns(grid.begin(), grid.end());
  if (ns.empty())
    for (std::size_t n = 1; n <= trace.steps(); ++n) ns.push_back(n);
  EntropyCurve c;
  for (std::size_t l = 0; l < trace.layers.size(); ++l) {
    for (std::size_t n : ns) {
      if (n < 1 || n > trace.steps()) continue;
      c.points.push_back({l, n, gram_entropy(trace.layers[l].topRows(static_cast<Eigen::Index>(n)))});
    }
  }
  return c;
}

/// Pointwise mean over curves; each (layer, n) averages the curves that reach it.
inline EntropyCurve average_curves(std::span<const EntropyCurve> curves) {
  std::map<std::pair<std::size_t, std::size_t>, std::pair<double, std::size_t>> acc;
  for (const auto& c : curves)
    for (const auto& p : c.points) {
      auto& [sum, count] = acc[{p.layer, p.n}];
      sum += p.entropy;
      ++count;
    }
  EntropyCurve out;
  for (const auto& [key, v] : acc) out.points.push_back({key.first, key.second, v.first / static_cast<double>(v.second)});
  return out;
}

inline constexpr const char* kEntropyCsvHeader = "run,method,layer,n,entropy,trajectory";

inline void write_entropy_rows(std::ostream& os, const std::string& run, const std::string& method,
                               const EntropyCurve& c, const std::string& trajectory) {
  char buf[64];
  for (const auto& p : c.points) {
    std::snprintf(buf, sizeof buf, "%.17g", p.entropy);
    os << run << ',' << method << ',' << p.layer << ',' << p.n << ',' << buf << ',' << trajectory << '\n';
  }
}

// ---------------------------------------------------------------------------
// Token diversity

struct DiversityStats {
  std::vector<std::size_t> unique;  // L_t per think step
  std::vector<std::size_t> active;  // trajectories still in the think phase at step t
  double average = 0.0;             // mean of L_t weighted by active count
};

inline DiversityStats unique_token_counts(std::span<const Trajectory> group) {
  DiversityStats d;
  std::size_t steps = 0;
  for (const auto& t : group) steps = std::max(steps, t.think_steps.size());
  double num = 0.0, den = 0.0;
  for (std::size_t s = 0; s < steps; ++s) {
    std::set<TokenId> ids;
    std::size_t active = 0;
    for (const auto& t : group) {
      if (s >= t.think_steps.size()) continue;
      ++active;
      for (const auto& e : t.think_steps[s].sampled_set.entries) ids.insert(e.token);
    }
    d.unique.push_back(ids.size());
    d.active.push_back(active);
    num += static_cast<double>(ids.size()) * static_cast<double>(active);
    den += static_cast<double>(active);
  }
  d.average = den > 0.0 ? num / den : 0.0;
  return d;
}

// ---------------------------------------------------------------------------
// Inclusion probabilities and the k trade-off

inline constexpr std::size_t kMaxEnumerableSupport = 8;

namespace detail {

inline void enumerate_orders(const ProbabilityVector& p, const std::vector<TokenId>& support, std::size_t k,
                             std::vector<char>& taken, double mass_left, double path_prob, std::size_t depth,
                             std::vector<TokenId>& drawn, std::vector<double>& q) {
  if (depth == k || mass_left <= 0.0) {
    for (TokenId id : drawn) q[id] += path_prob;
    return;
  }
  for (std::size_t i = 0; i < support.size(); ++i) {
    if (taken[i]) continue;
    const TokenId id = support[i];
    taken[i] = 1;
    drawn.push_back(id);
    enumerate_orders(p, support, k, taken, mass_left - p[id], path_prob * p[id] / mass_left, depth + 1, drawn, q);
    drawn.pop_back();
    taken[i] = 0;
  }
}

}  // namespace detail

/// Exact probability that each token appears in a sequential PPS draw of size k
/// without replacement, by enumerating every ordered draw sequence.
inline std::vector<double> inclusion_prob_oracle(const ProbabilityVector& p, std::size_t k) {
  if (k < 1) throw InvalidInput("inclusion_prob_oracle: k must be >= 1");
  std::vector<TokenId> support;
  for (TokenId i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) support.push_back(i);
  if (support.size() > kMaxEnumerableSupport)
    throw CapabilityError("inclusion_prob_oracle: support of " + std::to_string(support.size()) +
                          " exceeds the enumerable limit of " + std::to_string(kMaxEnumerableSupport));
  std::vector<double> q(p.size(), 0.0);
  if (k >= support.size()) {
    for (TokenId id : support) q[id] = 1.0;
    return q;
  }
  double mass = 0.0;
  for (TokenId id : support) mass += p[id];
  std::vector<char> taken(support.size(), 0);
  std::vector<TokenId> drawn;
  detail::enumerate_orders(p, support, k, taken, mass, 1.0, 0, drawn, q);
  return q;
}

/// E[L] = sum_j 1 - (1 - q_j)^G.
inline double expected_unique_tokens(std::span<const double> q, std::size_t group) {
  double e = 0.0;
  for (double qj : q) e += 1.0 - std::pow(1.0 - qj, static_cast<double>(group));
  return e;
}

struct Prop1Row {
  std::size_t k = 0;
  double mean_unique = 0.0, se_unique = 0.0;
  std::optional<double> exact_unique;
  double mean_dist = 0.0, se_dist = 0.0;                // independent draws per k
  double mean_dist_nested = 0.0, se_dist_nested = 0.0;  // nested coupling
  std::optional<bool> unique_gap_ok;                    // vs previous k: increase beyond threshold
  std::optional<bool> dist_gap_ok;                      // vs previous k: no increase beyond threshold
  std::optional<bool> exact_ok;
};

struct Prop1Report {
  std::size_t group = 0;
  std::size_t trials = 0;
  double se_multiple = 3.0;
  double exact_se_multiple = 2.0;
  std::vector<Prop1Row> rows;
  bool unique_increasing = true;
  bool dist_nonincreasing = true;
  bool exact_agrees = true;

  bool passed() const { return unique_increasing && dist_nonincreasing && exact_agrees; }
};

struct Prop1Options {
  std::size_t group = 5;
  std::vector<std::size_t> k_grid{1, 2, 3, 4, 5, 6};
  std::size_t trials = 10000;
  double se_multiple = 3.0;        // monotonicity verdicts
  double exact_se_multiple = 2.0;  // Monte Carlo vs exact
};

namespace detail {

struct MeanSe {
  double mean = 0.0, se = 0.0;
};

inline MeanSe mean_se(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  double m = 0.0;
  for (double x : xs) m += x;
  m /= n;
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  const double var = xs.size() > 1 ? ss / (n - 1.0) : 0.0;
  return {m, std::sqrt(var / n)};
}

// Normalized-probability mixture of the first `k` ids of `order`.
inline RowVector prefix_mixture(const ProbabilityVector& p, const Matrix& table, const std::vector<TokenId>& order,
                                std::size_t k) {
  const std::size_t n = std::min(k, order.size());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += p[order[i]];
  RowVector x = RowVector::Zero(table.cols());
  for (std::size_t i = 0; i < n; ++i) x += (p[order[i]] / total) * table.row(static_cast<Eigen::Index>(order[i]));
  return x;
}

inline double mean_pairwise_sq(const std::vector<RowVector>& xs) {
  double s = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < xs.size(); ++a)
    for (std::size_t b = a + 1; b < xs.size(); ++b) {
      s += (xs[a] - xs[b]).squaredNorm();
      ++pairs;
    }
  return pairs ? s / static_cast<double>(pairs) : 0.0;
}

}  // namespace detail

/// Monte Carlo check of the two monotonicity claims about k.
///
/// Unique-token counts and independent-draw distances use a fresh draw per k.
/// Nested distances draw one order of size max(k) per rollout and take its
/// prefixes, so S_k is a subset of S_{k+1}.
inline Prop1Report prop1_verify(const ProbabilityVector& p, const Matrix& table, const Prop1Options& opt, Rng& rng) {
  std::size_t support = 0;
  for (double v : p) support += v > 0.0;
  if (opt.group < 1) throw InvalidInput("prop1: group must be >= 1");
  if (opt.trials < 2) throw InvalidInput("prop1: need at least two trials");
  if (opt.k_grid.empty()) throw InvalidInput("prop1: empty k grid");
  if (table.rows() < static_cast<Eigen::Index>(p.size())) throw InvalidInput("prop1: embedding table too small");
  for (std::size_t k : opt.k_grid)
    if (k < 1) throw InvalidInput("prop1: k must be >= 1");

  Prop1Report rep;
  rep.group = opt.group;
  rep.trials = opt.trials;
  rep.se_multiple = opt.se_multiple;
  rep.exact_se_multiple = opt.exact_se_multiple;
  const std::size_t k_max = *std::max_element(opt.k_grid.begin(), opt.k_grid.end());

  std::vector<std::vector<double>> nested(opt.k_grid.size());
  for (auto& v : nested) v.reserve(opt.trials);
  std::vector<RowVector> xs(opt.group);
  for (std::size_t t = 0; t < opt.trials; ++t) {
    std::vector<std::vector<TokenId>> orders(opt.group);
    for (auto& o : orders) o = pps_without_replacement(p.span(), k_max, rng);
    for (std::size_t i = 0; i < opt.k_grid.size(); ++i) {
      for (std::size_t g = 0; g < opt.group; ++g) xs[g] = detail::prefix_mixture(p, table, orders[g], opt.k_grid[i]);
      nested[i].push_back(detail::mean_pairwise_sq(xs));
    }
  }

  for (std::size_t i = 0; i < opt.k_grid.size(); ++i) {
    const std::size_t k = opt.k_grid[i];
    std::vector<double> uniq, dist;
    uniq.reserve(opt.trials);
    dist.reserve(opt.trials);
    for (std::size_t t = 0; t < opt.trials; ++t) {
      std::set<TokenId> ids;
      for (std::size_t g = 0; g < opt.group; ++g) {
        auto order = pps_without_replacement(p.span(), k, rng);
        ids.insert(order.begin(), order.end());
        xs[g] = detail::prefix_mixture(p, table, order, k);
      }
      uniq.push_back(static_cast<double>(ids.size()));
      dist.push_back(detail::mean_pairwise_sq(xs));
    }
    Prop1Row row;
    row.k = k;
    const auto u = detail::mean_se(uniq), d = detail::mean_se(dist), n = detail::mean_se(nested[i]);
    row.mean_unique = u.mean;
    row.se_unique = u.se;
    row.mean_dist = d.mean;
    row.se_dist = d.se;
    row.mean_dist_nested = n.mean;
    row.se_dist_nested = n.se;
    if (support <= kMaxEnumerableSupport) {
      const auto q = inclusion_prob_oracle(p, k);
      row.exact_unique = expected_unique_tokens(q, opt.group);
      // An exact zero SE happens when L is deterministic; then demand equality up to rounding.
      const double tol = std::max(opt.exact_se_multiple * u.se, 1e-12);
      row.exact_ok = std::abs(u.mean - *row.exact_unique) <= tol;
      rep.exact_agrees = rep.exact_agrees && *row.exact_ok;
    }
    if (i > 0) {
      const Prop1Row& prev = rep.rows.back();
      const double su = std::hypot(prev.se_unique, row.se_unique);
      const double sd = std::hypot(prev.se_dist_nested, row.se_dist_nested);
      // Once k covers the support, L cannot grow further; such steps are not judged.
      const bool saturated = prev.k >= support;
      row.unique_gap_ok = saturated || row.mean_unique - prev.mean_unique > opt.se_multiple * su;
      row.dist_gap_ok = row.mean_dist_nested - prev.mean_dist_nested <= opt.se_multiple * sd;
      rep.unique_increasing = rep.unique_increasing && *row.unique_gap_ok;
      rep.dist_nonincreasing = rep.dist_nonincreasing && *row.dist_gap_ok;
    }
    rep.rows.push_back(row);
  }
  return rep;
}

inline constexpr const char* kProp1CsvHeader =
    "G,trials,k,mean_unique,se_unique,exact_unique,exact_ok,unique_gap_ok,mean_dist,se_dist,mean_dist_nested,"
    "se_dist_nested,dist_gap_ok";

inline void write_prop1_rows(std::ostream& os, const Prop1Report& r) {
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  auto flag = [](const std::optional<bool>& b) { return b ? std::string(*b ? "1" : "0") : std::string(); };
  for (const auto& row : r.rows) {
    os << r.group << ',' << r.trials << ',' << row.k << ',' << num(row.mean_unique) << ',' << num(row.se_unique) << ','
       << (row.exact_unique ? num(*row.exact_unique) : std::string()) << ',' << flag(row.exact_ok) << ','
       << flag(row.unique_gap_ok) << ',' << num(row.mean_dist) << ',' << num(row.se_dist) << ','
       << num(row.mean_dist_nested) << ',' << num(row.se_dist_nested) << ',' << flag(row.dist_gap_ok) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Dirichlet moment check

struct MomentRow {
  std::string quantity;  // "mean", "var" or "cov"
  std::size_t i = 0, j = 0;
  double empirical = 0.0;
  double exact = 0.0;
  double se = 0.0;
  bool ok = true;
};

struct MomentCheck {
  std::vector<MomentRow> rows;
  double se_multiple = 3.0;
  bool passed() const {
    return std::all_of(rows.begin(), rows.end(), [](const MomentRow& r) { return r.ok; });
  }
};

/// Compares empirical moments of n draws from Dir(c p) with the closed forms.
/// Standard errors come from the sample itself (fourth moments for variances).
inline MomentCheck dirichlet_moment_check(const DirichletParams& params, std::size_t n, Rng& rng,
                                          double se_multiple = 3.0) {
  if (n < 2) throw InvalidInput("dirichlet_moment_check: need at least two draws");
  const std::size_t k = params.base.size();
  Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  for (std::size_t s = 0; s < n; ++s) {
    const auto d = sample_dirichlet(params, rng);
    for (std::size_t i = 0; i < k; ++i) x(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(i)) = d[i];
  }
  const auto exact = dirichlet_moments(params);
  const RowVector mean = x.colwise().mean();
  const Matrix c = x.rowwise() - mean;
  const double dn = static_cast<double>(n);
  MomentCheck out;
  out.se_multiple = se_multiple;
  auto push = [&](std::string q, std::size_t i, std::size_t j, double emp, double ex, double se) {
    out.rows.push_back({std::move(q), i, j, emp, ex, se, std::abs(emp - ex) <= se_multiple * se + 1e-15});
  };
  for (std::size_t i = 0; i < k; ++i) {
    const auto ci = c.col(static_cast<Eigen::Index>(i));
    const double var = ci.squaredNorm() / (dn - 1.0);
    push("mean", i, i, mean[static_cast<Eigen::Index>(i)], exact.mean[i], std::sqrt(var / dn));
    const double m4 = ci.array().pow(4).sum() / dn;
    push("var", i, i, var, exact.variance[i], std::sqrt(std::max(0.0, m4 - var * var) / dn));
  }
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) {
      const Eigen::ArrayXd prod =
          c.col(static_cast<Eigen::Index>(i)).array() * c.col(static_cast<Eigen::Index>(j)).array();
      const double cov = prod.sum() / (dn - 1.0);
      const double sd = std::sqrt((prod - prod.mean()).square().sum() / (dn - 1.0));
      push("cov", i, j, cov, exact.covariance[i][j], sd / std::sqrt(dn));
    }
  return out;
}

/// Zipf distribution over n ranks with exponent s: p_j proportional to 1 / j^s.
inline ProbabilityVector zipf(std::size_t n, double s = 1.0) {
  std::vector<double> w(n);
  for (std::size_t j = 0; j < n; ++j) w[j] = 1.0 / std::pow(static_cast<double>(j + 1), s);
  return normalize(w);
}

}  // namespace motg
