#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "motg/aggregate.hpp"
#include "motg/jsonl.hpp"
#include "motg/model.hpp"
#include "motg/rng.hpp"
#include "motg/sampling.hpp"
#include "motg/simplex.hpp"

namespace motg {

enum class EndKind { end_think_most_likely, entropy_below };

inline std::string_view to_string(EndKind k) {
  return k == EndKind::end_think_most_likely ? "end_think_most_likely" : "entropy_below";
}

inline EndKind end_kind_from_string(std::string_view s) {
  if (s == "end_think_most_likely") return EndKind::end_think_most_likely;
  if (s == "entropy_below") return EndKind::entropy_below;
  throw InvalidInput("unknown end criteria '" + std::string(s) + "'");
}

struct EndCriteria {
  EndKind kind = EndKind::end_think_most_likely;
  TokenId end_token_id = 0;           // end_think_most_likely
  double threshold = 0.1;             // entropy_below, nats
  std::size_t consecutive_rounds = 1;  // entropy_below
};

/// Running state for entropy_below: how many consecutive steps were below threshold.
struct EndHistory {
  std::size_t below_count = 0;
};

inline TokenId argmax(const ProbabilityVector& p) {
  TokenId best = 0;
  for (TokenId i = 1; i < p.size(); ++i)
    if (p[i] > p[best]) best = i;
  return best;
}

/// True when the think phase should stop given this step's distribution.
inline bool check_end(const EndCriteria& c, const ProbabilityVector& p, EndHistory& history) {
  switch (c.kind) {
    case EndKind::end_think_most_likely: return argmax(p) == c.end_token_id;
    case EndKind::entropy_below:
      if (shannon_entropy(p) < c.threshold) {
        ++history.below_count;
      } else {
        history.below_count = 0;
      }
      return history.below_count >= c.consecutive_rounds;
  }
  return false;
}

struct GenConfig {
  SamplingRule sampling{SamplingKind::top_k, 2};
  AggregationRule aggregation{AggregationKind::dirichlet, 1.0};
  EndCriteria end;
  std::size_t max_think_steps = 8;
  std::size_t max_answer_steps = 8;
  double temperature = 1.0;  // answer phase
  bool greedy_answer = false;
  bool append_think_close = true;
  TokenId think_close_id = 0;
  TokenId eos_id = 0;
  bool trace_hidden = false;

  void validate(std::size_t vocab_size) const {
    sampling.validate();
    aggregation.validate();
    if (!(temperature > 0.0)) throw InvalidInput("generation: temperature must be positive");
    if (think_close_id >= vocab_size || eos_id >= vocab_size || end.end_token_id >= vocab_size)
      throw InvalidInput("generation: special token id outside vocabulary");
    if (end.kind == EndKind::entropy_below && end.consecutive_rounds < 1)
      throw InvalidInput("generation: consecutive_rounds must be >= 1");
  }
};

inline constexpr std::size_t kDigestSize = 8;

struct StepRecord {
  SampledSet sampled_set;
  std::optional<MixtureWeights> weights;  // empty for element-wise max
  RowVector mixture;
  double step_entropy = 0.0;
  std::vector<std::pair<TokenId, double>> dist_digest;  // top-8 of p_t
  std::optional<TokenId> loss_token;                    // single-token loss draw, once made
};

enum class ThinkEnd { criteria, cap, overflow };

inline std::string_view to_string(ThinkEnd e) {
  switch (e) {
    case ThinkEnd::criteria: return "criteria";
    case ThinkEnd::cap: return "cap";
    case ThinkEnd::overflow: return "overflow";
  }
  return "?";
}

struct Trajectory {
  std::vector<TokenId> prompt_token_ids;
  std::vector<StepRecord> think_steps;
  ThinkEnd think_end = ThinkEnd::cap;
  bool close_appended = false;
  std::vector<TokenId> answer_token_ids;
  std::string decoded_text;
  double reward = 0.0;
  std::size_t group_index = 0;
  bool truncated = false;
  Matrix inputs;  // every row appended to the sequence, in order
  std::optional<HiddenStateTrace> trace;
};

inline std::vector<std::pair<TokenId, double>> top_digest(const ProbabilityVector& p, std::size_t n = kDigestSize) {
  std::vector<TokenId> ids(p.size());
  for (TokenId i = 0; i < p.size(); ++i) ids[i] = i;
  n = std::min(n, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n), ids.end(),
                    [&](TokenId a, TokenId b) { return p[a] > p[b] || (p[a] == p[b] && a < b); });
  std::vector<std::pair<TokenId, double>> out;
  for (std::size_t i = 0; i < n; ++i) out.emplace_back(ids[i], p[ids[i]]);
  return out;
}

namespace detail {

struct Continuation {
  std::vector<TokenId> tokens;
  bool truncated = false;
};

// Standard token-by-token decoding from an existing sequence. Stops on eos or
// after max_steps tokens; flags truncation when the context fills first.
inline Continuation continue_discrete(const Parameters& params, const ModelConfig& mcfg, EmbeddingSequence& seq,
                                      double temperature, bool greedy, std::size_t max_steps, TokenId eos, Rng& rng,
                                      HiddenStateTrace* trace) {
  Continuation c;
  for (std::size_t step = 0; step < max_steps; ++step) {
    const ForwardResult fr = forward(params, mcfg, seq);
    if (trace) trace->append(fr.final_hidden);
    TokenId id;
    if (greedy) {
      id = argmax(fr.final_dist);
    } else {
      const ProbabilityVector q = apply_temperature(fr.final_dist, temperature);
      id = categorical_draw(q.span(), rng);
    }
    c.tokens.push_back(id);
    if (id == eos) break;
    if (seq.length() >= mcfg.context_length) {
      c.truncated = true;
      break;
    }
    seq.append(embed(params, id), RowOrigin::answer_token);
  }
  return c;
}

}  // namespace detail

struct StandardResult {
  std::vector<TokenId> tokens;
  bool truncated = false;
};

/// Ordinary autoregressive sampling: categorical draw from the tempered
/// distribution (argmax when greedy), one-hot embedding appended each step.
inline StandardResult standard_generate(const Parameters& params, const ModelConfig& mcfg,
                                        std::span<const TokenId> prompt, double temperature, std::size_t max_steps,
                                        TokenId eos, Rng& rng, bool greedy = false) {
  if (prompt.empty()) throw InvalidInput("standard_generate: empty prompt");
  EmbeddingSequence seq = embed_sequence(params, prompt);
  if (seq.length() > mcfg.context_length) return {{}, true};
  auto c = detail::continue_discrete(params, mcfg, seq, temperature, greedy, max_steps, eos, rng, nullptr);
  return {std::move(c.tokens), c.truncated};
}

/// Mixture-of-token generation.
///
/// Think phase: at each step the next-token distribution p_t is checked
/// against the end criteria, then k tokens are sampled from it and aggregated
/// into one mixture embedding that is appended to the sequence. After the
/// think phase the end-think token is appended (when configured) and the
/// answer is decoded token by token.
inline Trajectory motg_generate(const Parameters& params, const ModelConfig& mcfg, std::span<const TokenId> prompt,
                                const GenConfig& cfg, Rng& rng) {
  if (prompt.empty()) throw InvalidInput("motg_generate: empty prompt");
  Trajectory traj;
  traj.prompt_token_ids.assign(prompt.begin(), prompt.end());
  EmbeddingSequence seq = embed_sequence(params, prompt);
  if (cfg.trace_hidden) traj.trace.emplace();
  HiddenStateTrace* trace = cfg.trace_hidden ? &*traj.trace : nullptr;

  auto finish = [&]() -> Trajectory& {
    traj.inputs = seq.rows;
    return traj;
  };

  if (seq.length() > mcfg.context_length) {
    traj.truncated = true;
    traj.think_end = ThinkEnd::overflow;
    return finish();
  }

  EndHistory history;
  traj.think_end = ThinkEnd::cap;
  for (std::size_t t = 0; t < cfg.max_think_steps; ++t) {
    const ForwardResult fr = forward(params, mcfg, seq);
    if (trace) trace->append(fr.final_hidden);
    const ProbabilityVector& p = fr.final_dist;
    if (check_end(cfg.end, p, history)) {
      traj.think_end = ThinkEnd::criteria;
      break;
    }
    StepRecord rec;
    rec.sampled_set = sample(cfg.sampling, p, rng);
    MixtureEmbedding mix = aggregate(cfg.aggregation, rec.sampled_set, params.tok_emb, rng);
    rec.weights = mix.provenance.weights;
    rec.mixture = mix.vector;
    rec.step_entropy = shannon_entropy(p);
    rec.dist_digest = top_digest(p);
    traj.think_steps.push_back(std::move(rec));
    if (seq.length() >= mcfg.context_length) {
      traj.truncated = true;
      traj.think_end = ThinkEnd::overflow;
      return finish();
    }
    seq.append(traj.think_steps.back().mixture, RowOrigin::mixture);
  }

  if (cfg.append_think_close) {
    if (seq.length() >= mcfg.context_length) {
      traj.truncated = true;
      return finish();
    }
    seq.append(embed(params, cfg.think_close_id), RowOrigin::prompt_token);
    traj.close_appended = true;
  }

  auto c = detail::continue_discrete(params, mcfg, seq, cfg.temperature, cfg.greedy_answer, cfg.max_answer_steps,
                                     cfg.eos_id, rng, trace);
  traj.answer_token_ids = std::move(c.tokens);
  traj.truncated = c.truncated;
  return finish();
}

/// One JSON object per trajectory (a JSONL line), doubles at 17 significant digits.
inline std::string trajectory_json(const Trajectory& t, std::string_view run = {}, std::uint64_t train_step = 0) {
  JsonWriter w;
  w.begin_object();
  if (!run.empty()) w.field("run", run);
  w.field("train_step", train_step);
  w.field("group_index", static_cast<std::uint64_t>(t.group_index));
  w.key("prompt_token_ids").begin_array();
  for (TokenId id : t.prompt_token_ids) w.value(static_cast<std::uint64_t>(id));
  w.end_array();
  w.key("think_steps").begin_array();
  for (const auto& s : t.think_steps) {
    w.begin_object();
    w.field("rule", to_string(s.sampled_set.rule));
    w.key("tokens").begin_array();
    for (const auto& e : s.sampled_set.entries) w.value(static_cast<std::uint64_t>(e.token));
    w.end_array();
    w.key("raw_probs").begin_array();
    for (const auto& e : s.sampled_set.entries) w.value(e.raw_prob);
    w.end_array();
    if (s.weights) {
      w.key("weights").begin_array();
      for (double v : *s.weights) w.value(v);
      w.end_array();
    } else {
      w.field("weights", "max");
    }
    w.field("entropy", s.step_entropy);
    w.key("digest").begin_array();
    for (const auto& [id, pr] : s.dist_digest) {
      w.begin_array().value(static_cast<std::uint64_t>(id)).value(pr).end_array();
    }
    w.end_array();
    if (s.loss_token) w.field("loss_token", static_cast<std::uint64_t>(*s.loss_token));
    w.key("mixture").begin_array();
    for (Eigen::Index j = 0; j < s.mixture.size(); ++j) w.value(s.mixture[j]);
    w.end_array();
    w.end_object();
  }
  w.end_array();
  w.field("think_end", to_string(t.think_end));
  w.field("close_appended", t.close_appended);
  w.key("answer_token_ids").begin_array();
  for (TokenId id : t.answer_token_ids) w.value(static_cast<std::uint64_t>(id));
  w.end_array();
  w.field("decoded_text", t.decoded_text);
  w.field("reward", t.reward);
  w.field("truncated", t.truncated);
  w.end_object();
  return w.str();
}

}  // namespace motg
