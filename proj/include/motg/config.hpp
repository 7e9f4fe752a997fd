#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "json.hpp"

#include "motg/error.hpp"
#include "motg/generation.hpp"
#include "motg/grpo.hpp"
#include "motg/model.hpp"
#include "motg/tasks.hpp"

namespace motg {

struct RunConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "runs/default";
  std::string method = "dirichlet";  // label used in CSV outputs
  bool trace_hidden_states = true;
  std::size_t trace_samples = 10;  // trajectories traced for entropy curves
  std::size_t checkpoint_every = 50;
  bool dump_trajectories = false;
  ModelConfig model;
  GenConfig gen;
  GrpoConfig grpo;
  WarmupConfig warmup;
  TaskSpec task;

  RunConfig() {
    const auto& v = Vocabulary::standard();
    model.vocab_size = v.size();
    gen.think_close_id = v.think_close();
    gen.eos_id = v.eos();
    gen.end.end_token_id = v.think_close();
  }
};

namespace detail {

using nlohmann::json;

// Walks a JSON object, recording the dotted path for diagnostics and
// rejecting keys nobody asked for.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  template <class T>
  void opt(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    out = get<T>(key);
  }

  template <class T>
  void req(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) throw ConfigError(sub(key), "required field is missing");
    out = get<T>(key);
  }

  // Nested object; absent means "all defaults".
  template <class F>
  void section(const char* key, F&& f) {
    seen_.insert(key);
    static const json empty = json::object();
    Fields child(j_.contains(key) ? j_.at(key) : empty, sub(key));
    f(child);
    child.finish();
  }

  template <class E, class Parse>
  void opt_enum(const char* key, E& out, Parse parse) {
    std::string s;
    seen_.insert(key);
    if (!j_.contains(key)) return;
    s = get<std::string>(key);
    try {
      out = parse(s);
    } catch (const InvalidInput& e) {
      throw ConfigError(sub(key), e.what());
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(sub(it.key()), "unknown field");
  }

  std::string sub(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  template <class T>
  T get(const char* key) const {
    const json& v = j_.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(sub(key), "expected true or false");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(sub(key), "expected an integer");
      if (std::is_unsigned_v<T> && v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)
        throw ConfigError(sub(key), "must not be negative");
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(sub(key), "expected a number");
      return v.get<T>();
    } else {
      if (!v.is_string()) throw ConfigError(sub(key), "expected a string");
      return v.get<std::string>();
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class F>
void check(const std::string& path, F&& f) {
  try {
    f();
  } catch (const InvalidInput& e) {
    throw ConfigError(path, e.what());
  }
}

}  // namespace detail

/// Parses and validates a run config. Every problem is reported as a
/// ConfigError naming the offending field path.
inline RunConfig parse_run_config(const nlohmann::json& j) {
  RunConfig c;
  detail::Fields root(j, "");
  root.req("seed", c.seed);
  root.req("output_dir", c.output_dir);
  root.opt("method", c.method);
  root.opt("trace_hidden_states", c.trace_hidden_states);
  root.opt("trace_samples", c.trace_samples);
  root.opt("checkpoint_every", c.checkpoint_every);
  root.opt("dump_trajectories", c.dump_trajectories);
  c.model.seed = c.seed;
  root.section("model", [&](detail::Fields& f) {
    f.opt("vocab_size", c.model.vocab_size);
    f.opt("embed_dim", c.model.embed_dim);
    f.opt("hidden_dim", c.model.hidden_dim);
    f.opt("num_layers", c.model.num_layers);
    f.opt("num_heads", c.model.num_heads);
    f.opt("context_length", c.model.context_length);
    f.opt("seed", c.model.seed);
    f.opt("init_std", c.model.init_std);
    f.opt_enum("trace_point", c.model.trace_point, trace_point_from_string);
  });
  root.section("gen", [&](detail::Fields& f) {
    f.section("sampling", [&](detail::Fields& s) {
      s.opt_enum("rule", c.gen.sampling.kind, sampling_kind_from_string);
      s.opt("k", c.gen.sampling.k);
      s.opt("p_min", c.gen.sampling.p_min);
      s.opt("cum_threshold", c.gen.sampling.cum_threshold);
      s.opt("temperature", c.gen.sampling.temperature);
    });
    f.section("aggregation", [&](detail::Fields& a) {
      a.opt_enum("rule", c.gen.aggregation.kind, aggregation_kind_from_string);
      a.opt("concentration", c.gen.aggregation.dirichlet_concentration);
    });
    f.section("end", [&](detail::Fields& e) {
      e.opt_enum("kind", c.gen.end.kind, end_kind_from_string);
      e.opt("threshold", c.gen.end.threshold);
      e.opt("consecutive_rounds", c.gen.end.consecutive_rounds);
    });
    f.opt("max_think_steps", c.gen.max_think_steps);
    f.opt("max_answer_steps", c.gen.max_answer_steps);
    f.opt("temperature", c.gen.temperature);
    f.opt("greedy_answer", c.gen.greedy_answer);
    f.opt("append_think_close", c.gen.append_think_close);
  });
  root.section("grpo", [&](detail::Fields& f) {
    f.opt("group_size", c.grpo.group_size);
    f.opt("kl_coeff", c.grpo.kl_coeff);
    f.opt_enum("loss_mode", c.grpo.loss_mode, loss_mode_from_string);
    f.opt("steps", c.grpo.steps);
    f.opt("eval_every", c.grpo.eval_every);
    f.opt("eval_samples", c.grpo.eval_samples);
    f.opt("lr", c.grpo.lr);
    f.opt("kl_think_only", c.grpo.kl_think_only);
    f.opt("proportional_loss_token", c.grpo.proportional_loss_token);
    f.opt("grad_clip", c.grpo.grad_clip);
    f.opt("format_bonus", c.grpo.format_bonus);
  });
  c.grpo.seed = c.seed;
  root.section("warmup", [&](detail::Fields& f) {
    f.opt("steps", c.warmup.steps);
    f.opt("batch", c.warmup.batch);
    f.opt("lr", c.warmup.lr);
    f.opt("min_think", c.warmup.min_think);
    f.opt("max_think", c.warmup.max_think);
  });
  root.section("task", [&](detail::Fields& f) {
    f.opt_enum("kind", c.task.kind, task_kind_from_string);
    f.opt("seed", c.task.seed);
    f.opt("max_operand", c.task.max_operand);
    f.opt("min_modulus", c.task.min_modulus);
    f.opt("max_modulus", c.task.max_modulus);
    f.opt("max_value", c.task.max_value);
    f.opt("shown", c.task.shown);
    f.opt("max_start", c.task.max_start);
    f.opt("max_step", c.task.max_step);
    f.opt("min_length", c.task.min_length);
    f.opt("max_length", c.task.max_length);
  });
  root.finish();

  if (c.output_dir.empty()) throw ConfigError("output_dir", "must not be empty");
  detail::check("model", [&] { c.model.validate(); });
  const std::size_t vocab = Vocabulary::standard().size();
  if (c.model.vocab_size != vocab)
    throw ConfigError("model.vocab_size", "must equal the task vocabulary size " + std::to_string(vocab));
  detail::check("gen", [&] { c.gen.validate(c.model.vocab_size); });
  detail::check("grpo", [&] { c.grpo.validate(); });
  if (c.grpo.eval_every < 1) throw ConfigError("grpo.eval_every", "must be >= 1");
  detail::check("warmup", [&] { c.warmup.validate(); });
  detail::check("task", [&] { c.task.validate(); });
  if (c.checkpoint_every < 1) throw ConfigError("checkpoint_every", "must be >= 1");
  const std::size_t need = c.task.max_prompt_tokens() + c.gen.max_think_steps + 1 + c.gen.max_answer_steps;
  if (need > c.model.context_length)
    throw ConfigError("model.context_length", "must be at least " + std::to_string(need) +
                                                  " (longest prompt + think steps + end marker + answer steps)");
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("<file>", "cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("<file>", std::string("not valid JSON: ") + e.what());
  }
  return parse_run_config(j);
}

/// Fully resolved config; parse_run_config(to_json(c)) reproduces c.
inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["method"] = c.method;
  j["trace_hidden_states"] = c.trace_hidden_states;
  j["trace_samples"] = c.trace_samples;
  j["checkpoint_every"] = c.checkpoint_every;
  j["dump_trajectories"] = c.dump_trajectories;
  j["model"] = {{"vocab_size", c.model.vocab_size},   {"embed_dim", c.model.embed_dim},
                {"hidden_dim", c.model.hidden_dim},   {"num_layers", c.model.num_layers},
                {"num_heads", c.model.num_heads},     {"context_length", c.model.context_length},
                {"seed", c.model.seed},               {"init_std", c.model.init_std},
                {"trace_point", std::string(to_string(c.model.trace_point))}};
  j["gen"] = {{"sampling",
               {{"rule", std::string(to_string(c.gen.sampling.kind))},
                {"k", c.gen.sampling.k},
                {"p_min", c.gen.sampling.p_min},
                {"cum_threshold", c.gen.sampling.cum_threshold},
                {"temperature", c.gen.sampling.temperature}}},
              {"aggregation",
               {{"rule", std::string(to_string(c.gen.aggregation.kind))},
                {"concentration", c.gen.aggregation.dirichlet_concentration}}},
              {"end",
               {{"kind", std::string(to_string(c.gen.end.kind))},
                {"threshold", c.gen.end.threshold},
                {"consecutive_rounds", c.gen.end.consecutive_rounds}}},
              {"max_think_steps", c.gen.max_think_steps},
              {"max_answer_steps", c.gen.max_answer_steps},
              {"temperature", c.gen.temperature},
              {"greedy_answer", c.gen.greedy_answer},
              {"append_think_close", c.gen.append_think_close}};
  j["grpo"] = {{"group_size", c.grpo.group_size},
               {"kl_coeff", c.grpo.kl_coeff},
               {"loss_mode", std::string(to_string(c.grpo.loss_mode))},
               {"steps", c.grpo.steps},
               {"eval_every", c.grpo.eval_every},
               {"eval_samples", c.grpo.eval_samples},
               {"lr", c.grpo.lr},
               {"kl_think_only", c.grpo.kl_think_only},
               {"proportional_loss_token", c.grpo.proportional_loss_token},
               {"grad_clip", c.grpo.grad_clip},
               {"format_bonus", c.grpo.format_bonus}};
  j["warmup"] = {{"steps", c.warmup.steps},
                 {"batch", c.warmup.batch},
                 {"lr", c.warmup.lr},
                 {"min_think", c.warmup.min_think},
                 {"max_think", c.warmup.max_think}};
  j["task"] = {{"kind", std::string(to_string(c.task.kind))},   {"seed", c.task.seed},
               {"max_operand", c.task.max_operand}, {"min_modulus", c.task.min_modulus},
               {"max_modulus", c.task.max_modulus}, {"max_value", c.task.max_value},
               {"shown", c.task.shown},             {"max_start", c.task.max_start},
               {"max_step", c.task.max_step},       {"min_length", c.task.min_length},
               {"max_length", c.task.max_length}};
  return j;
}

}  // namespace motg
