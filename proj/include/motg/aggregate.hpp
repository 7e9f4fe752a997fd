#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "motg/error.hpp"
#include "motg/rng.hpp"
#include "motg/sampling.hpp"
#include "motg/simplex.hpp"
#include "motg/tensor.hpp"

namespace motg {

enum class AggregationKind { uniform, normalized_prob, dirichlet, elementwise_max };

inline std::string_view to_string(AggregationKind k) {
  switch (k) {
    case AggregationKind::uniform: return "uniform";
    case AggregationKind::normalized_prob: return "normalized_prob";
    case AggregationKind::dirichlet: return "dirichlet";
    case AggregationKind::elementwise_max: return "elementwise_max";
  }
  return "?";
}

inline AggregationKind aggregation_kind_from_string(std::string_view s) {
  if (s == "uniform") return AggregationKind::uniform;
  if (s == "normalized_prob") return AggregationKind::normalized_prob;
  if (s == "dirichlet") return AggregationKind::dirichlet;
  if (s == "elementwise_max") return AggregationKind::elementwise_max;
  throw InvalidInput("unknown aggregation rule '" + std::string(s) + "'");
}

struct AggregationRule {
  AggregationKind kind = AggregationKind::normalized_prob;
  double dirichlet_concentration = 1.0;  // dirichlet only

  void validate() const {
    if (kind == AggregationKind::dirichlet &&
        (!(dirichlet_concentration > 0.0) || !std::isfinite(dirichlet_concentration)))
      throw InvalidInput("aggregation rule: dirichlet_concentration must be positive");
  }
};

/// Mixture weights over the entries of a SampledSet, in the same order.
using MixtureWeights = ProbabilityVector;

struct MixtureProvenance {
  SampledSet set;
  std::optional<MixtureWeights> weights;  // empty for element-wise max
  bool is_max() const { return !weights.has_value(); }
};

struct MixtureEmbedding {
  RowVector vector;
  MixtureProvenance provenance;
};

inline MixtureWeights weights_uniform(const SampledSet& s) {
  if (s.size() < 1) throw InvalidInput("weights_uniform: empty sampled set");
  return normalize(std::vector<double>(s.size(), 1.0));
}

inline MixtureWeights weights_normalized_prob(const SampledSet& s) {
  if (s.size() < 1) throw InvalidInput("weights_normalized_prob: empty sampled set");
  std::vector<double> raw;
  raw.reserve(s.size());
  for (const auto& e : s.entries) raw.push_back(e.raw_prob);
  return normalize(raw);
}

inline MixtureWeights weights_dirichlet(const SampledSet& s, double concentration, Rng& rng) {
  const MixtureWeights base = weights_normalized_prob(s);
  if (base.size() == 1) return base;
  return sample_dirichlet(DirichletParams(base, concentration), rng);
}

/// out = sum_i w_i * table.row(ids[i]), accumulated left to right. The model's
/// replay path calls this too, so both produce bit-identical rows.
inline void accumulate_mixture(std::span<double> out, const Matrix& table, std::span<const TokenId> ids,
                               std::span<const double> weights) {
  for (double& v : out) v = 0.0;
  const auto cols = static_cast<std::size_t>(table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const double* row = table.data() + ids[i] * cols;
    const double w = weights[i];
    for (std::size_t j = 0; j < cols; ++j) out[j] += w * row[j];
  }
}

/// out_j = max_i table(ids[i], j); `argmax` (optional) receives the winning id index per column.
inline void accumulate_max(std::span<double> out, const Matrix& table, std::span<const TokenId> ids,
                           std::vector<std::size_t>* argmax = nullptr) {
  const auto cols = static_cast<std::size_t>(table.cols());
  if (argmax) argmax->assign(cols, 0);
  for (std::size_t j = 0; j < cols; ++j) out[j] = table(static_cast<Eigen::Index>(ids[0]), static_cast<Eigen::Index>(j));
  for (std::size_t i = 1; i < ids.size(); ++i) {
    const double* row = table.data() + ids[i] * cols;
    for (std::size_t j = 0; j < cols; ++j) {
      if (row[j] > out[j]) {
        out[j] = row[j];
        if (argmax) (*argmax)[j] = i;
      }
    }
  }
}

namespace detail {
inline void check_ids(const SampledSet& s, const Matrix& table) {
  for (const auto& e : s.entries)
    if (e.token >= static_cast<std::size_t>(table.rows()))
      throw InvalidInput("token id " + std::to_string(e.token) + " outside embedding table");
}
}  // namespace detail

inline MixtureEmbedding mix_weighted(const SampledSet& s, const MixtureWeights& w, const Matrix& table) {
  if (w.size() != s.size()) throw InvalidInput("mix_weighted: weight count differs from set size");
  if (s.size() < 1) throw InvalidInput("mix_weighted: empty sampled set");
  detail::check_ids(s, table);
  MixtureEmbedding m;
  m.vector = RowVector::Zero(table.cols());
  const auto ids = s.tokens();
  accumulate_mixture({m.vector.data(), static_cast<std::size_t>(m.vector.size())}, table, ids, w.span());
  m.provenance = {s, w};
  return m;
}

inline MixtureEmbedding mix_elementwise_max(const SampledSet& s, const Matrix& table) {
  if (s.size() < 1) throw InvalidInput("mix_elementwise_max: empty sampled set");
  detail::check_ids(s, table);
  MixtureEmbedding m;
  m.vector = RowVector::Zero(table.cols());
  const auto ids = s.tokens();
  accumulate_max({m.vector.data(), static_cast<std::size_t>(m.vector.size())}, table, ids);
  m.provenance = {s, std::nullopt};
  return m;
}

inline MixtureEmbedding aggregate(const AggregationRule& rule, const SampledSet& s, const Matrix& table, Rng& rng) {
  switch (rule.kind) {
    case AggregationKind::uniform: return mix_weighted(s, weights_uniform(s), table);
    case AggregationKind::normalized_prob: return mix_weighted(s, weights_normalized_prob(s), table);
    case AggregationKind::dirichlet:
      return mix_weighted(s, weights_dirichlet(s, rule.dirichlet_concentration, rng), table);
    case AggregationKind::elementwise_max: return mix_elementwise_max(s, table);
  }
  throw InvalidInput("unknown aggregation rule");
}

}  // namespace motg
