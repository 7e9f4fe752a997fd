#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "motg/error.hpp"
#include "motg/rng.hpp"
#include "motg/simplex.hpp"

namespace motg {

using TokenId = std::size_t;

enum class SamplingKind { top_k, min_p, nucleus, swr_k };

inline std::string_view to_string(SamplingKind k) {
  switch (k) {
    case SamplingKind::top_k: return "top_k";
    case SamplingKind::min_p: return "min_p";
    case SamplingKind::nucleus: return "nucleus";
    case SamplingKind::swr_k: return "swr_k";
  }
  return "?";
}

inline SamplingKind sampling_kind_from_string(std::string_view s) {
  if (s == "top_k") return SamplingKind::top_k;
  if (s == "min_p") return SamplingKind::min_p;
  if (s == "nucleus") return SamplingKind::nucleus;
  if (s == "swr_k") return SamplingKind::swr_k;
  throw InvalidInput("unknown sampling rule '" + std::string(s) + "'");
}

struct SampledEntry {
  TokenId token = 0;
  double raw_prob = 0.0;  // model probability at the step, not renormalized
  friend bool operator==(const SampledEntry&, const SampledEntry&) = default;
};

/// The distinct tokens chosen at one generation step, in draw order.
struct SampledSet {
  std::vector<SampledEntry> entries;
  SamplingKind rule = SamplingKind::swr_k;
  bool fallback = false;  // min-p pool was empty and top-1 was used instead

  std::size_t size() const { return entries.size(); }
  std::vector<TokenId> tokens() const {
    std::vector<TokenId> t;
    t.reserve(entries.size());
    for (const auto& e : entries) t.push_back(e.token);
    return t;
  }
  friend bool operator==(const SampledSet&, const SampledSet&) = default;
};

struct SamplingRule {
  SamplingKind kind = SamplingKind::swr_k;
  std::size_t k = 2;
  double p_min = 0.05;         // min_p only
  double cum_threshold = 0.9;  // nucleus only
  double temperature = 1.0;

  void validate() const {
    if (k < 1) throw InvalidInput("sampling rule: k must be >= 1");
    if (!(temperature > 0.0) || !std::isfinite(temperature))
      throw InvalidInput("sampling rule: temperature must be positive and finite");
    if (kind == SamplingKind::min_p && !(p_min > 0.0 && p_min < 1.0))
      throw InvalidInput("sampling rule: p_min must lie in (0, 1)");
    if (kind == SamplingKind::nucleus && !(cum_threshold > 0.0 && cum_threshold <= 1.0))
      throw InvalidInput("sampling rule: cum_threshold must lie in (0, 1]");
  }
};

/// p^(1/T), renormalized. T = 1 returns p unchanged.
inline ProbabilityVector apply_temperature(const ProbabilityVector& p, double temperature) {
  if (!std::isfinite(temperature) || !(temperature > 0.0))
    throw InvalidInput("temperature must be positive and finite");
  if (temperature == 1.0) return p;
  double max_log = -INFINITY;
  for (double v : p)
    if (v > 0.0) max_log = std::max(max_log, std::log(v));
  std::vector<double> w(p.size(), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) w[i] = std::exp((std::log(p[i]) - max_log) / temperature);
  return normalize(w);
}

/// One categorical draw proportional to `weights`, skipping masked-out entries.
/// Returns weights.size() when no unmasked entry has positive weight.
inline std::size_t categorical_draw(std::span<const double> weights, std::span<const char> taken, Rng& rng) {
  double total = 0.0;
  std::size_t last = weights.size();
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (taken[i] || !(weights[i] > 0.0)) continue;
    total += weights[i];
    last = i;
  }
  if (last == weights.size()) return last;
  const double u = rng.uniform() * total;
  double cum = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (taken[i] || !(weights[i] > 0.0)) continue;
    cum += weights[i];
    if (u < cum) return i;
  }
  return last;  // rounding left u at the very top of the range
}

inline std::size_t categorical_draw(std::span<const double> weights, Rng& rng) {
  std::vector<char> none(weights.size(), 0);
  return categorical_draw(weights, none, rng);
}

/// Sequential probability-proportional-to-size draws without replacement:
/// draw one index, remove it, renormalize over the rest, repeat. Stops early
/// once no positive weight remains. Returned in draw order.
inline std::vector<std::size_t> pps_without_replacement(std::span<const double> weights, std::size_t k, Rng& rng) {
  std::vector<char> taken(weights.size(), 0);
  std::vector<std::size_t> order;
  order.reserve(std::min(k, weights.size()));
  while (order.size() < k) {
    const std::size_t i = categorical_draw(weights, taken, rng);
    if (i == weights.size()) break;
    taken[i] = 1;
    order.push_back(i);
  }
  return order;
}

namespace detail {

// Token ids with p > 0 sorted by descending probability, ties toward the lower id.
inline std::vector<TokenId> ranked_support(const ProbabilityVector& p) {
  std::vector<TokenId> ids;
  for (TokenId i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) ids.push_back(i);
  std::stable_sort(ids.begin(), ids.end(), [&](TokenId a, TokenId b) { return p[a] > p[b]; });
  return ids;
}

inline SampledSet make_set(const ProbabilityVector& p, const std::vector<TokenId>& ids, SamplingKind rule) {
  SampledSet s;
  s.rule = rule;
  s.entries.reserve(ids.size());
  for (TokenId id : ids) s.entries.push_back({id, p[id]});
  return s;
}

// WOR draws from `pool` with weights taken from `draw_dist` (tempered p).
inline SampledSet draw_from_pool(const ProbabilityVector& p, const ProbabilityVector& draw_dist,
                                 const std::vector<TokenId>& pool, std::size_t k, SamplingKind rule, Rng& rng) {
  std::vector<double> w(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) w[i] = draw_dist[pool[i]];
  std::vector<TokenId> chosen;
  for (std::size_t i : pps_without_replacement(w, k, rng)) chosen.push_back(pool[i]);
  return make_set(p, chosen, rule);
}

inline std::vector<TokenId> ascending(std::vector<TokenId> ids) {
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace detail

/// The k most probable tokens (lower id wins ties), truncated to the positive support.
inline SampledSet sample_top_k(const ProbabilityVector& p, std::size_t k) {
  if (k < 1) throw InvalidInput("top_k: k must be >= 1");
  auto ranked = detail::ranked_support(p);
  if (ranked.size() > k) ranked.resize(k);
  return detail::make_set(p, ranked, SamplingKind::top_k);
}

/// k WOR draws among tokens with p > p_min. An empty pool falls back to the
/// single most probable token and sets `fallback`.
inline SampledSet sample_min_p(const ProbabilityVector& p, double p_min, std::size_t k, Rng& rng,
                               double temperature = 1.0) {
  if (!(p_min > 0.0 && p_min < 1.0)) throw InvalidInput("min_p: p_min must lie in (0, 1)");
  if (k < 1) throw InvalidInput("min_p: k must be >= 1");
  std::vector<TokenId> pool;
  for (TokenId i = 0; i < p.size(); ++i)
    if (p[i] > p_min) pool.push_back(i);
  if (pool.empty()) {
    SampledSet s = sample_top_k(p, 1);
    s.rule = SamplingKind::min_p;
    s.fallback = true;
    return s;
  }
  return detail::draw_from_pool(p, apply_temperature(p, temperature), pool, k, SamplingKind::min_p, rng);
}

/// k WOR draws from the smallest probability-ranked prefix holding at least
/// `cum_threshold` of the mass.
inline SampledSet sample_nucleus(const ProbabilityVector& p, double cum_threshold, std::size_t k, Rng& rng,
                                 double temperature = 1.0) {
  if (!(cum_threshold > 0.0 && cum_threshold <= 1.0))
    throw InvalidInput("nucleus: cum_threshold must lie in (0, 1]");
  if (k < 1) throw InvalidInput("nucleus: k must be >= 1");
  const auto ranked = detail::ranked_support(p);
  std::vector<TokenId> pool;
  double cum = 0.0;
  for (TokenId id : ranked) {
    pool.push_back(id);
    cum += p[id];
    if (cum >= cum_threshold) break;
  }
  // Draw in ascending-id pool order so the draw does not depend on ranking ties.
  return detail::draw_from_pool(p, apply_temperature(p, temperature), detail::ascending(pool), k,
                                SamplingKind::nucleus, rng);
}

/// k sequential PPS draws without replacement from p tempered by T.
inline SampledSet sample_swr_k(const ProbabilityVector& p, std::size_t k, double temperature, Rng& rng) {
  if (k < 1) throw InvalidInput("swr_k: k must be >= 1");
  const ProbabilityVector q = apply_temperature(p, temperature);
  std::vector<TokenId> chosen = pps_without_replacement(q.span(), k, rng);
  return detail::make_set(p, chosen, SamplingKind::swr_k);
}

inline SampledSet sample(const SamplingRule& rule, const ProbabilityVector& p, Rng& rng) {
  switch (rule.kind) {
    case SamplingKind::top_k: return sample_top_k(p, rule.k);
    case SamplingKind::min_p: return sample_min_p(p, rule.p_min, rule.k, rng, rule.temperature);
    case SamplingKind::nucleus: return sample_nucleus(p, rule.cum_threshold, rule.k, rng, rule.temperature);
    case SamplingKind::swr_k: return sample_swr_k(p, rule.k, rule.temperature, rng);
  }
  throw InvalidInput("unknown sampling rule");
}

}  // namespace motg
