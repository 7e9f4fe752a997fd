// motg: train, sample from and analyze mixture-of-token generation runs.

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "motg/motg.hpp"

namespace fs = std::filesystem;
using namespace motg;

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kConfig = 2;
constexpr int kVerdict = 3;

std::atomic<bool> g_interrupt{false};

extern "C" void on_signal(int) { g_interrupt.store(true); }

// MOTG_OUTPUT_ROOT, when set, anchors relative output paths.
fs::path output_path(const std::string& p) {
  const fs::path path(p);
  if (path.is_absolute()) return path;
  if (const char* root = std::getenv("MOTG_OUTPUT_ROOT"); root && *root) return fs::path(root) / path;
  return path;
}

std::vector<double> parse_list(const std::string& s, const char* flag) {
  std::vector<double> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(flag, "'" + item + "' is not a number");
    }
  }
  if (out.empty()) throw ConfigError(flag, "empty list");
  return out;
}

std::string num(double v, int prec = 6) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  bool resume = false;
  bool quiet = false;
  long stop_after = -1;
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  const fs::path dir = output_path(cfg.output_dir);
  TrainOptions opt;
  opt.resume = a.resume;
  opt.interrupt = &g_interrupt;
  opt.progress = a.quiet ? nullptr : &std::cerr;
  if (a.stop_after >= 0) opt.stop_after = static_cast<std::size_t>(a.stop_after);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  const TrainResult r = run_training(cfg, dir, opt);
  if (r.interrupted) {
    std::cerr << "interrupted after " << r.completed << " steps; checkpoint written to " << dir / "checkpoint.bin"
              << " (continue with --resume)\n";
    return kRuntime;
  }
  std::cout << (r.finished ? "finished " : "stopped ") << r.completed << " steps in " << dir.string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string checkpoint;
  std::string config;
  std::string prompt;
  std::string rule;
  std::string aggregation;
  long k = -1;
  double concentration = -1.0;
  double temperature = -1.0;
  long max_think = -1;
  long max_answer = -1;
  std::uint64_t seed = 1;
  bool greedy = false;
  bool dump_steps = false;
  bool json = false;
};

int cmd_generate(const GenerateArgs& a) {
  RunConfig cfg;
  if (!a.config.empty()) cfg = load_run_config(a.config);
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  cfg.model = ck.config;
  GenConfig& gen = cfg.gen;
  try {
    if (!a.rule.empty()) gen.sampling.kind = sampling_kind_from_string(a.rule);
    if (!a.aggregation.empty()) gen.aggregation.kind = aggregation_kind_from_string(a.aggregation);
  } catch (const InvalidInput& e) {
    throw ConfigError(a.rule.empty() ? "--aggregation" : "--rule", e.what());
  }
  if (a.k >= 0) gen.sampling.k = static_cast<std::size_t>(a.k);
  if (a.concentration >= 0) gen.aggregation.dirichlet_concentration = a.concentration;
  if (a.temperature >= 0) {
    gen.temperature = a.temperature;
    gen.sampling.temperature = a.temperature;
  }
  if (a.max_think >= 0) gen.max_think_steps = static_cast<std::size_t>(a.max_think);
  if (a.max_answer >= 0) gen.max_answer_steps = static_cast<std::size_t>(a.max_answer);
  gen.greedy_answer = a.greedy;
  try {
    gen.validate(cfg.model.vocab_size);
  } catch (const InvalidInput& e) {
    throw ConfigError("generation flags", e.what());
  }

  const Vocabulary& vocab = Vocabulary::standard();
  std::vector<TokenId> prompt;
  try {
    prompt = vocab.encode(a.prompt);
  } catch (const InvalidInput& e) {
    throw ConfigError("--prompt", e.what());
  }
  if (prompt.empty() || prompt.back() != vocab.think_open()) prompt.push_back(vocab.think_open());
  Rng rng(a.seed);
  Trajectory t = motg_generate(ck.params, cfg.model, prompt, gen, rng);
  t.decoded_text = vocab.decode(t.answer_token_ids);

  if (a.json) {
    std::cout << trajectory_json(t) << '\n';
  } else {
    std::cout << t.decoded_text << '\n';
  }
  if (a.dump_steps) {
    // One row per think step: the two highest-weighted tokens and their weights.
    std::cerr << "step\ttoken_1\tweight_1\ttoken_2\tweight_2\tentropy\n";
    for (std::size_t s = 0; s < t.think_steps.size(); ++s) {
      const StepRecord& r = t.think_steps[s];
      std::vector<std::pair<double, TokenId>> w;
      for (std::size_t i = 0; i < r.sampled_set.size(); ++i)
        w.emplace_back(r.weights ? (*r.weights)[i] : 1.0 / static_cast<double>(r.sampled_set.size()),
                       r.sampled_set.entries[i].token);
      std::stable_sort(w.begin(), w.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
      std::cerr << s + 1;
      for (std::size_t i = 0; i < 2; ++i) {
        if (i < w.size())
          std::cerr << '\t' << vocab.symbol(w[i].second) << '\t' << num(w[i].first, 4);
        else
          std::cerr << "\t-\t-";
      }
      std::cerr << '\t' << num(r.step_entropy, 4) << '\n';
    }
    std::cerr << "think phase ended by " << to_string(t.think_end) << (t.truncated ? " (truncated)" : "") << '\n';
  }
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_analyze(const std::string& run_dir) {
  const fs::path dir(run_dir);
  if (!fs::is_directory(dir)) throw Error("not a directory: " + run_dir);
  const RunPaths paths{dir};
  if (!fs::exists(paths.config())) throw Error("run directory has no config.json: " + run_dir);
  const RunConfig cfg = load_run_config(paths.config().string());
  write_run_analysis(paths, cfg);
  std::cout << "wrote " << paths.diversity().string() << " and " << paths.entropy().string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

struct Prop1Args {
  std::string dist = "zipf";
  std::size_t support = 10;
  double exponent = 1.0;
  std::string probs;
  std::vector<std::size_t> groups{2, 5};
  std::vector<std::size_t> k_grid{1, 2, 3, 4, 5, 6};
  std::size_t trials = 10000;
  std::size_t embed_dim = 16;
  std::uint64_t seed = 1;
  std::string out = "prop1_report.csv";
  bool strict = false;
};

ProbabilityVector prop1_distribution(const Prop1Args& a) {
  if (a.dist == "zipf") return zipf(a.support, a.exponent);
  if (a.dist == "uniform") return normalize(std::vector<double>(a.support, 1.0));
  if (a.dist == "custom") {
    if (a.probs.empty()) throw ConfigError("--probs", "required with --dist custom");
    try {
      return normalize(parse_list(a.probs, "--probs"));
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError("--probs", e.what());
    }
  }
  throw ConfigError("--dist", "expected zipf, uniform or custom");
}

int cmd_prop1(const Prop1Args& a) {
  if (a.support < 1 && a.dist != "custom") throw ConfigError("--support", "must be >= 1");
  if (a.trials < 2) throw ConfigError("--trials", "need at least 2");
  if (a.embed_dim < 1) throw ConfigError("--embed-dim", "must be >= 1");
  for (std::size_t g : a.groups)
    if (g < 1) throw ConfigError("--G", "group sizes must be >= 1");
  for (std::size_t k : a.k_grid)
    if (k < 1) throw ConfigError("--k-grid", "k must be >= 1");
  const ProbabilityVector p = prop1_distribution(a);
  Rng table_rng = Rng::stream(a.seed, "embeddings");
  Matrix table(static_cast<Eigen::Index>(p.size()), static_cast<Eigen::Index>(a.embed_dim));
  for (Eigen::Index i = 0; i < table.size(); ++i) table.data()[i] = table_rng.normal();

  const fs::path out = output_path(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream f(out, std::ios::trunc);
  if (!f) throw Error("cannot write " + out.string());
  f << kProp1CsvHeader << '\n';
  bool ok = true;
  std::cout << "G\tk\tE[L] (MC)\tSE\texact\tE|x-x'|^2 nested\tSE\n";
  for (std::size_t G : a.groups) {
    Prop1Options opt;
    opt.group = G;
    opt.k_grid = a.k_grid;
    opt.trials = a.trials;
    Rng rng = Rng::derive(Rng::stream(a.seed, "prop1").next_u64(), G);
    const Prop1Report r = prop1_verify(p, table, opt, rng);
    write_prop1_rows(f, r);
    for (const auto& row : r.rows)
      std::cout << G << '\t' << row.k << '\t' << num(row.mean_unique) << '\t' << num(row.se_unique, 3) << '\t'
                << (row.exact_unique ? num(*row.exact_unique) : std::string("-")) << '\t'
                << num(row.mean_dist_nested) << '\t' << num(row.se_dist_nested, 3) << '\n';
    std::cout << "G=" << G << ": unique tokens " << (r.unique_increasing ? "increasing" : "NOT increasing")
              << ", nested distance " << (r.dist_nonincreasing ? "non-increasing" : "INCREASING")
              << ", exact agreement " << (r.exact_agrees ? "ok" : "FAILED") << '\n';
    ok = ok && r.passed();
  }
  std::cout << "wrote " << out.string() << '\n';
  return (a.strict && !ok) ? kVerdict : kOk;
}

// ---------------------------------------------------------------------------

struct DirichletArgs {
  std::string p;
  double c = 1.0;
  std::size_t n = 100000;
  std::uint64_t seed = 1;
  bool strict = false;
};

int cmd_dirichlet(const DirichletArgs& a) {
  ProbabilityVector base;
  try {
    base = normalize(parse_list(a.p, "--p"));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("--p", e.what());
  }
  if (!(a.c > 0.0)) throw ConfigError("--c", "concentration must be positive");
  std::vector<std::size_t> kept;
  const DirichletParams params = DirichletParams::from_support(base, a.c, &kept);
  Rng rng = Rng::stream(a.seed, "dirichlet");
  const MomentCheck mc = dirichlet_moment_check(params, a.n, rng);
  std::cout << "moment\ti\tj\tempirical\texact\tse\tok\n";
  for (const auto& r : mc.rows)
    std::cout << r.quantity << '\t' << kept[r.i] << '\t' << kept[r.j] << '\t' << num(r.empirical) << '\t'
              << num(r.exact) << '\t' << num(r.se, 3) << '\t' << (r.ok ? "yes" : "NO") << '\n';
  std::cout << (mc.passed() ? "all moments within " : "some moments outside ") << mc.se_multiple << " SE\n";
  return (a.strict && !mc.passed()) ? kVerdict : kOk;
}

int cmd_print_config() {
  nlohmann::json j = to_json(RunConfig{});
  std::cout << j.dump(2) << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixture-of-token generation: training, sampling and diagnostics"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Run GRPO training from a config file");
  train->add_option("config", ta.config, "Run config (JSON)")->required();
  train->add_flag("--resume", ta.resume, "Continue from the run directory's checkpoint");
  train->add_flag("--quiet", ta.quiet, "No progress output");
  train->add_option("--stop-after", ta.stop_after, "Checkpoint and stop after this many completed steps");

  GenerateArgs ga;
  auto* generate = app.add_subcommand("generate", "Generate one trajectory from a checkpoint");
  generate->add_option("--checkpoint", ga.checkpoint, "Checkpoint file")->required();
  generate->add_option("--prompt", ga.prompt, "Prompt text, e.g. \"3+4 mod 5\"")->required();
  generate->add_option("--config", ga.config, "Run config supplying generation defaults");
  generate->add_option("--rule", ga.rule, "Sampling rule: top_k, min_p, nucleus, swr_k");
  generate->add_option("--aggregation", ga.aggregation, "uniform, normalized_prob, dirichlet, elementwise_max");
  generate->add_option("--k", ga.k, "Tokens per think step");
  generate->add_option("--concentration", ga.concentration, "Dirichlet concentration");
  generate->add_option("--temperature", ga.temperature, "Sampling temperature");
  generate->add_option("--max-think", ga.max_think, "Think-step cap");
  generate->add_option("--max-answer", ga.max_answer, "Answer-token cap");
  generate->add_option("--seed", ga.seed, "Random seed");
  generate->add_flag("--greedy", ga.greedy, "Greedy answer decoding");
  generate->add_flag("--dump-steps", ga.dump_steps, "Print the per-step token/weight table to stderr");
  generate->add_flag("--json", ga.json, "Print the trajectory as JSON");

  std::string run_dir;
  auto* analyze = app.add_subcommand("analyze", "Write diversity and entropy CSVs for a run directory");
  analyze->add_option("run_dir", run_dir, "Run directory")->required();

  Prop1Args pa;
  auto* prop1 = app.add_subcommand("prop1", "Monte Carlo check of the unique-token / distance trade-off in k");
  prop1->add_option("--dist", pa.dist, "zipf, uniform or custom");
  prop1->add_option("--support", pa.support, "Support size for zipf/uniform");
  prop1->add_option("--exponent", pa.exponent, "Zipf exponent");
  prop1->add_option("--probs", pa.probs, "Comma-separated probabilities for --dist custom");
  prop1->add_option("--G", pa.groups, "Group sizes")->delimiter(',');
  prop1->add_option("--k-grid", pa.k_grid, "k values")->delimiter(',');
  prop1->add_option("--trials", pa.trials, "Monte Carlo trials per k");
  prop1->add_option("--embed-dim", pa.embed_dim, "Dimension of the random embedding table");
  prop1->add_option("--seed", pa.seed, "Random seed");
  prop1->add_option("--out", pa.out, "CSV output path");
  prop1->add_flag("--strict", pa.strict, "Exit 3 when a verdict fails");

  DirichletArgs da;
  auto* dirichlet = app.add_subcommand("dirichlet", "Empirical vs closed-form Dirichlet moments");
  dirichlet->add_option("--p", da.p, "Comma-separated base probabilities")->required();
  dirichlet->add_option("--c", da.c, "Concentration");
  dirichlet->add_option("--n", da.n, "Number of draws");
  dirichlet->add_option("--seed", da.seed, "Random seed");
  dirichlet->add_flag("--strict", da.strict, "Exit 3 when a moment is outside 3 SE");

  auto* print_config = app.add_subcommand("print-config", "Print the default run config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*train) return cmd_train(ta);
    if (*generate) return cmd_generate(ga);
    if (*analyze) return cmd_analyze(run_dir);
    if (*prop1) return cmd_prop1(pa);
    if (*dirichlet) return cmd_dirichlet(da);
    if (*print_config) return cmd_print_config();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kRuntime;
}
