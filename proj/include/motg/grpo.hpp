#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "motg/analysis.hpp"
#include "motg/autograd.hpp"
#include "motg/error.hpp"
#include "motg/generation.hpp"
#include "motg/jsonl.hpp"
#include "motg/model.hpp"
#include "motg/rng.hpp"
#include "motg/tasks.hpp"

namespace motg {

enum class LossMode { single_token_unweighted, single_token_weighted, multi_token_weighted };

inline std::string_view to_string(LossMode m) {
  switch (m) {
    case LossMode::single_token_unweighted: return "single_token_unweighted";
    case LossMode::single_token_weighted: return "single_token_weighted";
    case LossMode::multi_token_weighted: return "multi_token_weighted";
  }
  return "?";
}

inline LossMode loss_mode_from_string(std::string_view s) {
  if (s == "single_token_unweighted") return LossMode::single_token_unweighted;
  if (s == "single_token_weighted") return LossMode::single_token_weighted;
  if (s == "multi_token_weighted") return LossMode::multi_token_weighted;
  throw InvalidInput("unknown loss mode '" + std::string(s) + "'");
}

struct GrpoConfig {
  std::size_t group_size = 5;
  double kl_coeff = 0.2;
  LossMode loss_mode = LossMode::multi_token_weighted;
  std::size_t steps = 300;
  std::size_t eval_every = 50;
  std::size_t eval_samples = 100;
  double lr = 3e-4;
  std::uint64_t seed = 1;
  bool kl_think_only = false;
  bool proportional_loss_token = false;  // draw z_t by raw probability instead of uniformly
  double grad_clip = 0.0;                // global-norm clip; 0 disables
  bool format_bonus = true;

  void validate() const {
    if (group_size < 2) throw InvalidInput("grpo: group_size must be >= 2");
    if (!(kl_coeff >= 0.0) || !std::isfinite(kl_coeff)) throw InvalidInput("grpo: kl_coeff must be >= 0");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw InvalidInput("grpo: lr must be positive");
    if (!(grad_clip >= 0.0)) throw InvalidInput("grpo: grad_clip must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// Advantages

struct Advantages {
  double mean = 0.0;
  double std = 0.0;  // population
  std::vector<double> values;
};

/// A_g = (r_g - mean) / std, all zero when std == 0.
///
/// Statistics are taken on rewards shifted by their minimum, so adding a
/// constant that keeps every reward exactly representable changes nothing.
inline Advantages compute_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw InvalidInput("compute_advantages: need at least two rewards");
  for (double r : rewards)
    if (!std::isfinite(r)) throw InvalidInput("compute_advantages: non-finite reward");
  const double lo = *std::min_element(rewards.begin(), rewards.end());
  const double n = static_cast<double>(rewards.size());
  std::vector<double> c(rewards.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    c[i] = rewards[i] - lo;
    mean += c[i];
  }
  mean /= n;
  double var = 0.0;
  for (double x : c) var += (x - mean) * (x - mean);
  var /= n;
  Advantages a;
  a.mean = mean + lo;
  a.std = std::sqrt(var);
  a.values.assign(c.size(), 0.0);
  if (a.std > 0.0)
    for (std::size_t i = 0; i < c.size(); ++i) a.values[i] = (c[i] - mean) / a.std;
  return a;
}

struct GroupRollout {
  std::vector<Trajectory> trajectories;
  std::vector<double> rewards;
  Advantages advantages;
};

// ---------------------------------------------------------------------------
// Replaying a trajectory under differentiable parameters

enum class TermKind { think, close, answer };

struct ReplayTerm {
  Eigen::Index row = 0;  // position whose next-token distribution is scored
  TermKind kind = TermKind::answer;
  std::size_t step = 0;  // think-step index (think terms)
  TokenId token = 0;     // scored token (close / answer terms)
};

struct ReplayPlan {
  std::vector<RowSource> rows;  // rebuilt from the live embedding table
  Matrix recorded;              // the rows actually fed during generation
  std::vector<ReplayTerm> terms;

  std::size_t length() const { return terms.size(); }
};

/// Maps a trajectory onto the input rows and scored positions used by the losses.
/// The end-think token is scored only when the end criteria produced it.
inline ReplayPlan plan_replay(const Trajectory& t, TokenId think_close_id) {
  const std::size_t m = t.prompt_token_ids.size(), T = t.think_steps.size();
  const std::size_t c = t.close_appended ? 1 : 0;
  ReplayPlan plan;
  if (m == 0) return plan;
  for (std::size_t i = 0; i < T; ++i)
    plan.terms.push_back({static_cast<Eigen::Index>(m - 1 + i), TermKind::think, i, 0});
  if (t.close_appended && t.think_end == ThinkEnd::criteria)
    plan.terms.push_back({static_cast<Eigen::Index>(m - 1 + T), TermKind::close, 0, think_close_id});
  for (std::size_t j = 0; j < t.answer_token_ids.size(); ++j)
    plan.terms.push_back({static_cast<Eigen::Index>(m - 1 + T + c + j), TermKind::answer, 0, t.answer_token_ids[j]});
  if (plan.terms.empty()) return plan;

  const auto needed = static_cast<std::size_t>(plan.terms.back().row) + 1;
  if (needed > static_cast<std::size_t>(t.inputs.rows()))
    throw InvalidInput("replay: trajectory is missing recorded input rows");
  plan.recorded = t.inputs.topRows(static_cast<Eigen::Index>(needed));
  for (std::size_t r = 0; r < needed; ++r) {
    if (r < m) {
      plan.rows.push_back(RowMixture{{t.prompt_token_ids[r]}, {1.0}});
    } else if (r < m + T) {
      const StepRecord& s = t.think_steps[r - m];
      if (s.weights) {
        plan.rows.push_back(RowMixture{s.sampled_set.tokens(), s.weights->values()});
      } else {
        plan.rows.push_back(RowMax{s.sampled_set.tokens()});
      }
    } else if (c && r == m + T) {
      plan.rows.push_back(RowMixture{{think_close_id}, {1.0}});
    } else {
      plan.rows.push_back(RowMixture{{t.answer_token_ids[r - m - T - c]}, {1.0}});
    }
  }
  return plan;
}

/// Picks z_t for single-token losses: uniform over S_t, or proportional to the
/// raw probabilities. Stored on the step record so the loss is reproducible.
inline void assign_loss_tokens(Trajectory& t, Rng& rng, bool proportional = false) {
  for (auto& s : t.think_steps) {
    const auto& e = s.sampled_set.entries;
    if (e.empty()) throw InvalidInput("assign_loss_tokens: empty sampled set");
    std::size_t i;
    if (proportional) {
      std::vector<double> w;
      for (const auto& x : e) w.push_back(x.raw_prob);
      i = categorical_draw(w, rng);
    } else {
      i = static_cast<std::size_t>(rng.below(e.size()));
    }
    s.loss_token = e[i].token;
  }
}

struct TrajectoryTerms {
  Var logprob;
  Var kl;
  std::size_t length = 0;
};

/// Graph nodes for one trajectory: its surrogate log-likelihood under `mode`
/// and (when `ref_log_probs` is given) the mean exact KL to the reference.
inline TrajectoryTerms build_trajectory_terms(Graph& g, const ParameterVars& pv, const ModelConfig& cfg,
                                              const Trajectory& t, const ReplayPlan& plan, LossMode mode,
                                              const Matrix* ref_log_probs, bool kl_think_only = false) {
  if (plan.terms.empty()) throw InvalidInput("build_trajectory_terms: trajectory has no scored tokens");
  ForwardNodes f = build_forward(g, pv, g.embed_rows(pv.tok_emb, plan.rows), cfg);
  const Var lp = f.log_probs;
  auto logp = [&](Eigen::Index row, TokenId z) { return g.pick(lp, row, static_cast<Eigen::Index>(z)); };
  auto plogp = [&](Eigen::Index row, TokenId z) {
    Var l = logp(row, z);
    return g.mul(g.exp(l), l);
  };
  std::vector<Var> parts;
  for (const auto& term : plan.terms) {
    if (term.kind != TermKind::think) {
      parts.push_back(logp(term.row, term.token));
      continue;
    }
    const StepRecord& s = t.think_steps[term.step];
    switch (mode) {
      case LossMode::single_token_unweighted:
      case LossMode::single_token_weighted: {
        if (!s.loss_token) throw InvalidInput("single-token loss: step has no recorded loss token");
        parts.push_back(mode == LossMode::single_token_weighted ? plogp(term.row, *s.loss_token)
                                                                : logp(term.row, *s.loss_token));
        break;
      }
      case LossMode::multi_token_weighted:
        for (const auto& e : s.sampled_set.entries) parts.push_back(plogp(term.row, e.token));
        break;
    }
  }
  TrajectoryTerms out;
  out.logprob = g.add_scalars(parts);
  out.length = plan.terms.size();
  if (ref_log_probs) {
    std::vector<Eigen::Index> rows;
    for (const auto& term : plan.terms)
      if (!kl_think_only || term.kind == TermKind::think) rows.push_back(term.row);
    if (rows.empty()) {
      out.kl = g.input(Matrix::Zero(1, 1));
    } else {
      Matrix ref(static_cast<Eigen::Index>(rows.size()), ref_log_probs->cols());
      for (std::size_t i = 0; i < rows.size(); ++i) ref.row(static_cast<Eigen::Index>(i)) = ref_log_probs->row(rows[i]);
      const double inv = 1.0 / static_cast<double>(rows.size());
      Var sel = g.select_rows(lp, std::move(rows));
      out.kl = g.scale(g.sum(g.mul(g.exp(sel), g.sub(sel, g.input(std::move(ref))))), inv);
    }
  }
  return out;
}

namespace detail {

inline double trajectory_scalar(const Parameters& params, const ModelConfig& cfg, const Trajectory& t, LossMode mode,
                                TokenId close_id) {
  const ReplayPlan plan = plan_replay(t, close_id);
  if (plan.terms.empty()) return 0.0;
  Graph g(false);
  ParameterVars pv = bind_parameters(g, params, false);
  return g.scalar(build_trajectory_terms(g, pv, cfg, t, plan, mode, nullptr).logprob);
}

}  // namespace detail

/// Sum over think steps of log p(z_t) (times p(z_t) when weighted) plus the
/// log-probabilities of the discrete tokens. Requires recorded loss tokens.
inline double single_token_logprob(const Trajectory& t, const Parameters& params, const ModelConfig& cfg,
                                   bool weighted, TokenId close_id) {
  return detail::trajectory_scalar(params, cfg, t,
                                   weighted ? LossMode::single_token_weighted : LossMode::single_token_unweighted,
                                   close_id);
}

/// Sum over think steps of sum_{z in S_t} p(z) log p(z) plus discrete-token log-probabilities.
inline double multi_token_logprob(const Trajectory& t, const Parameters& params, const ModelConfig& cfg,
                                  TokenId close_id) {
  return detail::trajectory_scalar(params, cfg, t, LossMode::multi_token_weighted, close_id);
}

/// Log-probabilities of the reference policy at every position of the recorded sequence.
inline Matrix reference_log_probs(const Parameters& ref, const ModelConfig& cfg, const ReplayPlan& plan) {
  return forward(ref, cfg, plan.recorded).log_probs;
}

/// Mean over scored positions of KL(p_theta || p_ref), both evaluated on the recorded sequence.
inline double kl_penalty(const Parameters& params, const Parameters& ref, const ModelConfig& cfg, const Trajectory& t,
                         TokenId close_id, bool think_only = false) {
  const ReplayPlan plan = plan_replay(t, close_id);
  if (plan.terms.empty()) return 0.0;
  const Matrix ref_lp = reference_log_probs(ref, cfg, plan);
  Graph g(false);
  ParameterVars pv = bind_parameters(g, params, false);
  return g.scalar(build_trajectory_terms(g, pv, cfg, t, plan, LossMode::multi_token_weighted, &ref_lp, think_only).kl);
}

/// -(1/G) sum_g A_g logprob_g / |tau_g| + beta (1/G) sum_g KL_g
struct GroupLoss {
  std::vector<ReplayPlan> plans;
  std::vector<Matrix> ref_log_probs;
  std::vector<double> advantages;
  const std::vector<Trajectory>* group = nullptr;
  const ModelConfig* cfg = nullptr;
  LossMode mode = LossMode::multi_token_weighted;
  double kl_coeff = 0.0;
  bool kl_think_only = false;

  Var operator()(Graph& g, const ParameterVars& pv) const {
    const double inv_g = 1.0 / static_cast<double>(group->size());
    std::vector<Var> parts;
    for (std::size_t i = 0; i < group->size(); ++i) {
      if (plans[i].terms.empty()) continue;
      const bool need_kl = kl_coeff > 0.0;
      if (advantages[i] == 0.0 && !need_kl) continue;
      TrajectoryTerms tt = build_trajectory_terms(g, pv, *cfg, (*group)[i], plans[i], mode,
                                                  need_kl ? &ref_log_probs[i] : nullptr, kl_think_only);
      if (advantages[i] != 0.0)
        parts.push_back(g.scale(tt.logprob, -advantages[i] * inv_g / static_cast<double>(tt.length)));
      if (need_kl) parts.push_back(g.scale(tt.kl, kl_coeff * inv_g));
    }
    if (parts.empty()) return g.input(Matrix::Zero(1, 1));
    return g.add_scalars(parts);
  }
};

inline GroupLoss make_group_loss(const std::vector<Trajectory>& group, std::span<const double> advantages,
                                 const Parameters& ref, const ModelConfig& cfg, const GrpoConfig& gc,
                                 TokenId close_id) {
  if (advantages.size() != group.size()) throw InvalidInput("group loss: advantage count mismatch");
  GroupLoss L;
  L.group = &group;
  L.cfg = &cfg;
  L.mode = gc.loss_mode;
  L.kl_coeff = gc.kl_coeff;
  L.kl_think_only = gc.kl_think_only;
  L.advantages.assign(advantages.begin(), advantages.end());
  for (const auto& t : group) {
    L.plans.push_back(plan_replay(t, close_id));
    L.ref_log_probs.push_back(gc.kl_coeff > 0.0 && !L.plans.back().terms.empty()
                                  ? reference_log_probs(ref, cfg, L.plans.back())
                                  : Matrix());
  }
  return L;
}

// ---------------------------------------------------------------------------
// One training step

struct StepMetrics {
  std::uint64_t step = 0;
  std::uint64_t instance_index = 0;
  std::vector<double> rewards;
  std::vector<double> advantages;
  double mean_reward = 0.0;
  double reward_std = 0.0;
  double loss = 0.0;
  double kl = 0.0;
  double grad_norm = 0.0;
  double mean_think_steps = 0.0;
  double mean_answer_tokens = 0.0;
  std::size_t ended_by_criteria = 0;
  std::size_t truncated = 0;
  DiversityStats diversity;
  bool updated = false;
  std::string skip_reason;

  std::string json() const {
    JsonWriter w;
    w.begin_object();
    w.field("step", step);
    w.field("instance_index", instance_index);
    w.key("rewards").begin_array();
    for (double r : rewards) w.value(r);
    w.end_array();
    w.key("advantages").begin_array();
    for (double a : advantages) w.value(a);
    w.end_array();
    w.field("mean_reward", mean_reward);
    w.field("reward_std", reward_std);
    w.field("loss", loss);
    w.field("kl", kl);
    w.field("grad_norm", grad_norm);
    w.field("mean_think_steps", mean_think_steps);
    w.field("mean_answer_tokens", mean_answer_tokens);
    w.field("ended_by_criteria", static_cast<std::uint64_t>(ended_by_criteria));
    w.field("truncated", static_cast<std::uint64_t>(truncated));
    w.field("unique_tokens_mean", diversity.average);
    w.key("unique_tokens").begin_array();
    for (std::size_t u : diversity.unique) w.value(static_cast<std::uint64_t>(u));
    w.end_array();
    w.field("updated", updated);
    if (!skip_reason.empty()) w.field("skip_reason", skip_reason);
    w.end_object();
    return w.str();
  }
};

/// Rolls out a group from the current parameters, scores it and applies one
/// Adam step. Every random choice is derived from `step_seed`.
inline StepMetrics grpo_step(Parameters& params, AdamState& adam, const Parameters& ref, const ModelConfig& mcfg,
                             const TaskInstance& inst, const GenConfig& gen, const GrpoConfig& gc,
                             std::uint64_t step_seed, std::vector<Trajectory>* group_out = nullptr,
                             const Vocabulary& vocab = Vocabulary::standard()) {
  gc.validate();
  std::vector<Trajectory> group;
  group.reserve(gc.group_size);
  StepMetrics m;
  for (std::size_t g = 0; g < gc.group_size; ++g) {
    Rng r = Rng::derive(step_seed, g);
    Trajectory t = motg_generate(params, mcfg, inst.prompt_token_ids, gen, r);
    t.group_index = g;
    t.decoded_text = vocab.decode(t.answer_token_ids);
    t.reward = reward(inst, t.decoded_text, gc.format_bonus);
    m.rewards.push_back(t.reward);
    m.mean_think_steps += static_cast<double>(t.think_steps.size());
    m.mean_answer_tokens += static_cast<double>(t.answer_token_ids.size());
    m.ended_by_criteria += t.think_end == ThinkEnd::criteria;
    m.truncated += t.truncated;
    group.push_back(std::move(t));
  }
  const double G = static_cast<double>(gc.group_size);
  m.mean_think_steps /= G;
  m.mean_answer_tokens /= G;
  m.diversity = unique_token_counts(group);

  Rng loss_rng = Rng::stream(step_seed, "loss");
  if (gc.loss_mode != LossMode::multi_token_weighted)
    for (auto& t : group) assign_loss_tokens(t, loss_rng, gc.proportional_loss_token);

  const Advantages adv = compute_advantages(m.rewards);
  m.advantages = adv.values;
  m.mean_reward = adv.mean;
  m.reward_std = adv.std;

  auto finish = [&](std::string reason) {
    m.skip_reason = std::move(reason);
    if (group_out) *group_out = std::move(group);
    return m;
  };
  if (m.truncated == group.size()) return finish("all_truncated");

  const GroupLoss loss = make_group_loss(group, adv.values, ref, mcfg, gc, gen.think_close_id);
  double kl = 0.0;
  if (gc.kl_coeff > 0.0) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < group.size(); ++i) {
      if (loss.plans[i].terms.empty()) continue;
      kl += kl_penalty(params, ref, mcfg, group[i], gen.think_close_id, gc.kl_think_only);
      ++n;
    }
    m.kl = n ? kl / static_cast<double>(n) : 0.0;
  }
  if (adv.std == 0.0 && gc.kl_coeff == 0.0) return finish("no_signal");

  LossAndGrad lg = loss_and_grad(params, loss);
  m.loss = lg.loss;
  m.grad_norm = gradient_norm(lg.grad);
  if (gc.grad_clip > 0.0 && m.grad_norm > gc.grad_clip) scale_parameters(lg.grad, gc.grad_clip / m.grad_norm);
  m.updated = optimizer_step(params, lg.grad, adam, gc.lr);
  return finish(m.updated ? "" : "nonfinite_gradient");
}

// ---------------------------------------------------------------------------
// Evaluation and format warm-up

struct EvalResult {
  double pass_at_1 = 0.0;
  double mean_reward = 0.0;
  std::size_t samples = 0;
};

/// pass@1 over eval-split instances: one rollout each, greedy answer decoding.
inline EvalResult evaluate(const Parameters& params, const ModelConfig& mcfg, const TaskSpec& spec, GenConfig gen,
                           std::size_t samples, std::uint64_t seed, bool format_bonus = true,
                           const Vocabulary& vocab = Vocabulary::standard()) {
  gen.greedy_answer = true;
  gen.trace_hidden = false;
  EvalResult e;
  e.samples = samples;
  for (std::size_t i = 0; i < samples; ++i) {
    const TaskInstance inst = generate_instance(spec, i, Split::eval, vocab);
    Rng r = Rng::derive(seed, i);
    const Trajectory t = motg_generate(params, mcfg, inst.prompt_token_ids, gen, r);
    const double rw = reward(inst, vocab.decode(t.answer_token_ids), format_bonus);
    e.mean_reward += rw;
    e.pass_at_1 += rw == 1.0;
  }
  if (samples) {
    e.pass_at_1 /= static_cast<double>(samples);
    e.mean_reward /= static_cast<double>(samples);
  }
  return e;
}

struct WarmupConfig {
  std::size_t steps = 300;
  std::size_t batch = 8;
  double lr = 3e-3;
  std::size_t min_think = 2;
  std::size_t max_think = 6;

  void validate() const {
    if (batch < 1) throw InvalidInput("warmup: batch must be >= 1");
    if (!(lr > 0.0)) throw InvalidInput("warmup: lr must be positive");
    if (min_think > max_think) throw InvalidInput("warmup: min_think exceeds max_think");
  }
};

/// A format-only target: prompt, a restatement of the first few prompt
/// characters as the think span, </think>, <answer>, one random digit,
/// </answer>, <eos>. Nothing in it depends on the task's true answer.
inline std::vector<TokenId> format_example(const TaskInstance& inst, const WarmupConfig& wc, Rng& rng,
                                           const Vocabulary& vocab = Vocabulary::standard()) {
  std::vector<TokenId> seq = inst.prompt_token_ids;
  const std::size_t n = wc.min_think + static_cast<std::size_t>(rng.below(wc.max_think - wc.min_think + 1));
  const std::size_t text_tokens = inst.prompt_token_ids.size() - 1;
  for (std::size_t i = 0; i < std::min(n, text_tokens); ++i) seq.push_back(inst.prompt_token_ids[i]);
  seq.push_back(vocab.think_close());
  seq.push_back(vocab.answer_open());
  const char digit = static_cast<char>('0' + rng.below(10));
  seq.push_back(*vocab.find(std::string_view(&digit, 1)));
  seq.push_back(vocab.answer_close());
  seq.push_back(vocab.eos());
  return seq;
}

/// Supervised format warm-up with its own Adam state. Returns the last batch loss.
inline double format_warmup(Parameters& params, const ModelConfig& mcfg, const TaskSpec& spec,
                            const WarmupConfig& wc, std::uint64_t seed,
                            const Vocabulary& vocab = Vocabulary::standard()) {
  wc.validate();
  AdamState adam = AdamState::for_params(params);
  Rng rng = Rng::stream(seed, "warmup");
  double last = 0.0;
  for (std::size_t s = 0; s < wc.steps; ++s) {
    std::vector<std::vector<TokenId>> batch;
    std::vector<std::size_t> first;
    for (std::size_t b = 0; b < wc.batch; ++b) {
      // Warm-up draws from its own index range so RL instances stay unseen.
      const TaskInstance inst = generate_instance(spec, (1ULL << 40) + s * wc.batch + b, Split::train, vocab);
      batch.push_back(format_example(inst, wc, rng, vocab));
      first.push_back(inst.prompt_token_ids.size());
    }
    LossAndGrad lg = loss_and_grad(params, [&](Graph& g, const ParameterVars& pv) {
      std::vector<Var> parts;
      for (std::size_t b = 0; b < batch.size(); ++b) parts.push_back(cross_entropy_loss(g, pv, mcfg, batch[b], first[b]));
      return g.scale(g.add_scalars(parts), 1.0 / static_cast<double>(parts.size()));
    });
    last = lg.loss;
    optimizer_step(params, lg.grad, adam, wc.lr);
  }
  return last;
}

}  // namespace motg
