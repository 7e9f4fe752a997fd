#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "motg/analysis.hpp"
#include "motg/checkpoint.hpp"
#include "motg/config.hpp"
#include "motg/generation.hpp"
#include "motg/grpo.hpp"
#include "motg/model.hpp"
#include "motg/tasks.hpp"

namespace motg {

inline constexpr const char* kVersion = "0.1.0";

namespace fs = std::filesystem;

struct RunPaths {
  fs::path dir;
  fs::path config() const { return dir / "config.json"; }
  fs::path manifest() const { return dir / "manifest.json"; }
  fs::path checkpoint() const { return dir / "checkpoint.bin"; }
  fs::path run_log() const { return dir / "run_log.jsonl"; }
  fs::path eval_table() const { return dir / "eval.csv"; }
  fs::path trajectories() const { return dir / "trajectories.jsonl"; }
  fs::path diversity() const { return dir / "diversity.csv"; }
  fs::path entropy() const { return dir / "entropy_curves.csv"; }
  fs::path summary() const { return dir / "summary.json"; }
};

// Seeds for the named subsystems of one run.
struct RunSeeds {
  std::uint64_t rollout, eval, trace;
  explicit RunSeeds(std::uint64_t seed)
      : rollout(Rng::stream(seed, "rollout").next_u64()),
        eval(Rng::stream(seed, "eval").next_u64()),
        trace(Rng::stream(seed, "trace").next_u64()) {}
  std::uint64_t step(std::uint64_t index) const { return Rng::derive(rollout, index).next_u64(); }
};

struct TrainOptions {
  bool resume = false;
  std::optional<std::size_t> stop_after;  // checkpoint and stop once this many steps are done
  const std::atomic<bool>* interrupt = nullptr;
  std::ostream* progress = nullptr;
};

struct TrainResult {
  std::size_t completed = 0;
  bool finished = false;
  bool interrupted = false;
  double warmup_loss = 0.0;
};

namespace detail {

inline std::vector<std::string> read_lines(const fs::path& p) {
  std::vector<std::string> out;
  std::ifstream f(p);
  for (std::string line; std::getline(f, line);)
    if (!line.empty()) out.push_back(line);
  return out;
}

inline void write_lines(const fs::path& p, const std::vector<std::string>& lines, const std::string& header = {}) {
  std::ofstream f(p, std::ios::trunc);
  if (!header.empty()) f << header << '\n';
  for (const auto& l : lines) f << l << '\n';
}

// Drops log records past `step` so a resumed run appends exactly where the checkpoint was taken.
inline void truncate_jsonl(const fs::path& p, std::uint64_t step, const char* key) {
  if (!fs::exists(p)) return;
  std::vector<std::string> keep;
  for (const auto& l : read_lines(p))
    if (nlohmann::json::parse(l).at(key).get<std::uint64_t>() <= step) keep.push_back(l);
  write_lines(p, keep);
}

inline void truncate_csv(const fs::path& p, std::uint64_t step) {
  if (!fs::exists(p)) return;
  auto lines = read_lines(p);
  if (lines.empty()) return;
  const std::string header = lines.front();
  std::vector<std::string> keep;
  for (std::size_t i = 1; i < lines.size(); ++i)
    if (std::stoull(lines[i].substr(0, lines[i].find(','))) <= step) keep.push_back(lines[i]);
  write_lines(p, keep, header);
}

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline constexpr const char* kEvalCsvHeader = "step,pass_at_1,mean_reward,samples";
inline constexpr const char* kDiversityCsvHeader = "run,method,step,t,unique,active";

inline std::string run_name(const fs::path& dir) {
  auto d = dir;
  if (d.filename().empty()) d = d.parent_path();
  return d.filename().string();
}

/// Fresh model for a run: initialization, format warm-up, then the reference snapshot.
inline Checkpoint initial_state(const RunConfig& cfg, double* warmup_loss = nullptr) {
  Checkpoint ck;
  ck.config = cfg.model;
  ck.params = init_parameters(cfg.model);
  const double wl = cfg.warmup.steps ? format_warmup(ck.params, cfg.model, cfg.task, cfg.warmup, cfg.seed) : 0.0;
  if (warmup_loss) *warmup_loss = wl;
  ck.adam = AdamState::for_params(ck.params);
  ck.reference = ck.params;
  ck.step = 0;
  nlohmann::json meta{{"warmup_loss", wl}};
  ck.metadata = meta.dump();
  return ck;
}

/// Rollouts with hidden-state tracing on one eval prompt; returns per-trajectory curves.
inline std::vector<EntropyCurve> trace_curves(const Parameters& params, const RunConfig& cfg) {
  GenConfig gen = cfg.gen;
  gen.trace_hidden = true;
  const TaskInstance inst = generate_instance(cfg.task, 0, Split::eval);
  const RunSeeds seeds(cfg.seed);
  std::vector<EntropyCurve> curves;
  for (std::size_t i = 0; i < cfg.trace_samples; ++i) {
    Rng r = Rng::derive(seeds.trace, i);
    const Trajectory t = motg_generate(params, cfg.model, inst.prompt_token_ids, gen, r);
    if (t.trace && t.trace->steps() > 0) curves.push_back(entropy_curves(*t.trace));
  }
  return curves;
}

/// diversity.csv from the run log and entropy_curves.csv from the checkpoint.
inline void write_run_analysis(const RunPaths& paths, const RunConfig& cfg) {
  if (!fs::exists(paths.run_log())) throw Error("run directory has no run_log.jsonl: " + paths.dir.string());
  const std::string run = run_name(paths.dir);
  {
    std::ofstream f(paths.diversity(), std::ios::trunc);
    f << kDiversityCsvHeader << '\n';
    for (const auto& line : detail::read_lines(paths.run_log())) {
      const auto j = nlohmann::json::parse(line);
      const auto& u = j.at("unique_tokens");
      const auto& a = j.at("active_trajectories");
      for (std::size_t t = 0; t < u.size(); ++t)
        f << run << ',' << cfg.method << ',' << j.at("step").get<std::uint64_t>() << ',' << t + 1 << ','
          << u[t].get<std::uint64_t>() << ',' << a[t].get<std::uint64_t>() << '\n';
    }
  }
  if (!fs::exists(paths.checkpoint())) throw Error("run directory has no checkpoint.bin: " + paths.dir.string());
  const Checkpoint ck = load_checkpoint(paths.checkpoint().string(), &cfg.model);
  std::ofstream f(paths.entropy(), std::ios::trunc);
  f << kEntropyCsvHeader << '\n';
  const auto curves = trace_curves(ck.params, cfg);
  for (std::size_t i = 0; i < curves.size(); ++i) write_entropy_rows(f, run, cfg.method, curves[i], std::to_string(i));
  if (!curves.empty()) write_entropy_rows(f, run, cfg.method, average_curves(curves), "mean");
}

inline std::string step_log_line(const StepMetrics& m) {
  // StepMetrics JSON plus the active-trajectory counts behind each L_t.
  std::string s = m.json();
  s.pop_back();
  s += ",\"active_trajectories\":[";
  for (std::size_t i = 0; i < m.diversity.active.size(); ++i) s += (i ? "," : "") + std::to_string(m.diversity.active[i]);
  s += "]}";
  return s;
}

/// Runs (or resumes) GRPO training into `dir`. Every random choice is a
/// function of the config seed and the step index, so a resumed run replays
/// the unbroken one exactly.
inline TrainResult run_training(const RunConfig& cfg, const fs::path& dir, const TrainOptions& opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  RunPaths paths{dir};
  fs::create_directories(dir);
  TrainResult res;
  Checkpoint ck;
  if (opt.resume && fs::exists(paths.checkpoint())) {
    ck = load_checkpoint(paths.checkpoint().string(), &cfg.model);
    if (!ck.reference) throw CheckpointError("checkpoint has no reference snapshot");
    res.warmup_loss = nlohmann::json::parse(ck.metadata).value("warmup_loss", 0.0);
    detail::truncate_jsonl(paths.run_log(), ck.step, "step");
    detail::truncate_jsonl(paths.trajectories(), ck.step, "train_step");
    detail::truncate_csv(paths.eval_table(), ck.step);
  } else {
    ck = initial_state(cfg, &res.warmup_loss);
    detail::write_lines(paths.run_log(), {});
    detail::write_lines(paths.eval_table(), {}, kEvalCsvHeader);
    if (cfg.dump_trajectories) detail::write_lines(paths.trajectories(), {});
  }
  {
    std::ofstream f(paths.config(), std::ios::trunc);
    f << to_json(cfg).dump(2) << '\n';
    std::ofstream m(paths.manifest(), std::ios::trunc);
    m << nlohmann::json{{"version", kVersion},
                        {"seed", cfg.seed},
                        {"parameters", parameter_count(ck.params)},
                        {"vocabulary_size", Vocabulary::standard().size()}}
             .dump(2)
      << '\n';
  }

  const RunSeeds seeds(cfg.seed);
  std::ofstream log(paths.run_log(), std::ios::app);
  std::ofstream evals(paths.eval_table(), std::ios::app);
  std::ofstream trajs;
  if (cfg.dump_trajectories) trajs.open(paths.trajectories(), std::ios::app);

  auto evaluate_at = [&](std::uint64_t step) {
    const EvalResult e = evaluate(ck.params, cfg.model, cfg.task, cfg.gen, cfg.grpo.eval_samples, seeds.eval,
                                  cfg.grpo.format_bonus);
    evals << step << ',' << detail::fmt(e.pass_at_1) << ',' << detail::fmt(e.mean_reward) << ',' << e.samples << '\n';
    evals.flush();
    if (opt.progress) *opt.progress << "eval step " << step << " pass@1 " << e.pass_at_1 << '\n';
  };
  auto checkpoint = [&] {
    ck.rng_state = Rng::derive(seeds.rollout, ck.step).state();
    save_checkpoint(ck, paths.checkpoint().string());
  };

  if (ck.step == 0 && cfg.grpo.eval_samples > 0) evaluate_at(0);
  while (ck.step < cfg.grpo.steps) {
    if (opt.interrupt && opt.interrupt->load()) {
      res.interrupted = true;
      break;
    }
    if (opt.stop_after && ck.step >= *opt.stop_after) break;
    const std::uint64_t index = ck.step;
    const TaskInstance inst = generate_instance(cfg.task, index, Split::train);
    std::vector<Trajectory> group;
    StepMetrics m = grpo_step(ck.params, ck.adam, *ck.reference, cfg.model, inst, cfg.gen, cfg.grpo,
                              seeds.step(index), &group);
    ++ck.step;
    m.step = ck.step;
    m.instance_index = index;
    log << step_log_line(m) << '\n';
    log.flush();
    if (cfg.dump_trajectories) {
      for (const auto& t : group) trajs << trajectory_json(t, run_name(dir), ck.step) << '\n';
      trajs.flush();
    }
    if (opt.progress && (ck.step % 10 == 0 || ck.step == 1))
      *opt.progress << "step " << ck.step << " reward " << m.mean_reward << " kl " << m.kl << " think "
                    << m.mean_think_steps << '\n';
    if (cfg.grpo.eval_samples > 0 && ck.step % cfg.grpo.eval_every == 0) evaluate_at(ck.step);
    if (ck.step % cfg.checkpoint_every == 0) checkpoint();
  }
  checkpoint();
  res.completed = ck.step;
  res.finished = ck.step >= cfg.grpo.steps;
  log.close();
  evals.close();

  if (res.finished) {
    write_run_analysis(paths, cfg);
    // Reward trend over the first and last windows of up to 50 steps.
    std::vector<double> rewards;
    for (const auto& l : detail::read_lines(paths.run_log()))
      rewards.push_back(nlohmann::json::parse(l).at("mean_reward").get<double>());
    const std::size_t w = std::min<std::size_t>(50, rewards.size());
    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < w; ++i) {
      first += rewards[i];
      last += rewards[rewards.size() - 1 - i];
    }
    nlohmann::json s{{"steps", ck.step},
                     {"seed", cfg.seed},
                     {"method", cfg.method},
                     {"warmup_loss", res.warmup_loss},
                     {"first_window_mean_reward", w ? first / static_cast<double>(w) : 0.0},
                     {"last_window_mean_reward", w ? last / static_cast<double>(w) : 0.0},
                     {"window", w},
                     {"skipped_optimizer_steps", ck.adam.skipped},
                     {"wall_seconds",
                      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}};
    const auto eval_lines = detail::read_lines(paths.eval_table());
    if (eval_lines.size() > 1) {
      const std::string& lastrow = eval_lines.back();
      const auto a = lastrow.find(','), b = lastrow.find(',', a + 1);
      s["final_pass_at_1"] = std::stod(lastrow.substr(a + 1, b - a - 1));
    }
    std::ofstream f(paths.summary(), std::ios::trunc);
    f << s.dump(2) << '\n';
  }
  return res;
}

}  // namespace motg
