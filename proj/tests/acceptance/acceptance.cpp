// Acceptance run: one PASS/FAIL line per criterion.
//   acceptance [--out DIR] [--only 1,2,...]
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "../oracles.hpp"
#include "motg/motg.hpp"

using namespace motg;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path g_out = "acceptance_runs";

// ---------------------------------------------------------------------------
// 1. k = 1 against standard generation, full-support normalized mixing against soft thinking

ModelConfig tiny_model(std::uint64_t seed) {
  ModelConfig c;
  c.vocab_size = 12;
  c.embed_dim = 16;
  c.hidden_dim = 32;
  c.num_layers = 2;
  c.num_heads = 2;
  c.context_length = 24;
  c.seed = seed;
  c.init_std = 0.5;
  return c;
}

Verdict reductions() {
  constexpr TokenId close = 10, eos = 11;
  GenConfig g;
  g.think_close_id = close;
  g.eos_id = eos;
  g.end = {EndKind::entropy_below, close, 0.0, 1};  // never fires
  g.max_think_steps = 6;
  g.max_answer_steps = 6;
  g.append_think_close = false;
  g.temperature = 0.8;
  g.sampling = {SamplingKind::swr_k, 1, 0.05, 0.9, 0.8};

  Rng prompts(77);
  int same = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto mc = tiny_model(100 + static_cast<std::uint64_t>(trial));
    auto p = init_parameters(mc);
    std::vector<TokenId> prompt(1 + prompts.below(8));
    for (auto& t : prompt) t = static_cast<TokenId>(prompts.below(10));
    g.aggregation = {trial % 2 ? AggregationKind::dirichlet : AggregationKind::uniform, 1.0};
    Rng r1(1000 + static_cast<std::uint64_t>(trial)), r2(1000 + static_cast<std::uint64_t>(trial));
    const auto m = motg_generate(p, mc, prompt, g, r1);
    const auto s = standard_generate(p, mc, prompt, 0.8, g.max_think_steps + g.max_answer_steps, eos, r2);
    std::vector<TokenId> a;
    bool rows_ok = true;
    for (const auto& st : m.think_steps) {
      a.push_back(st.sampled_set.entries[0].token);
      rows_ok = rows_ok && st.sampled_set.size() == 1 && st.mixture == embed(p, a.back());
    }
    a.insert(a.end(), m.answer_token_ids.begin(), m.answer_token_ids.end());
    auto b = s.tokens;
    auto cut = [&](std::vector<TokenId>& v) {
      auto it = std::find(v.begin(), v.end(), eos);
      if (it != v.end()) v.erase(it + 1, v.end());
    };
    cut(a);
    cut(b);
    same += a == b && rows_ok;
  }

  double worst = 0.0;
  Rng rng(5);
  auto mc = tiny_model(3);
  auto p = init_parameters(mc);
  g.sampling = {SamplingKind::top_k, mc.vocab_size};
  g.aggregation = {AggregationKind::normalized_prob, 1.0};
  g.append_think_close = true;
  int steps = 0;
  for (int trial = 0; steps < 100; ++trial) {
    std::vector<TokenId> prompt{static_cast<TokenId>(trial % 10), static_cast<TokenId>((trial * 7) % 10)};
    auto t = motg_generate(p, mc, prompt, g, rng);
    EmbeddingSequence seq = embed_sequence(p, prompt);
    for (const auto& s : t.think_steps) {
      const auto dist = forward(p, mc, seq).final_dist;
      RowVector soft = RowVector::Zero(p.tok_emb.cols());
      for (std::size_t z = 0; z < mc.vocab_size; ++z) soft += dist[z] * p.tok_emb.row(static_cast<Eigen::Index>(z));
      worst = std::max(worst, (s.mixture - soft).norm() / soft.norm());
      seq.append(s.mixture, RowOrigin::mixture);
      ++steps;
    }
  }
  return {same == 100 && worst <= 1e-12,
          fmt("k=1 identical on %d/100 prompts; soft-thinking max rel err %.2e over %d steps", same, worst, steps)};
}

// ---------------------------------------------------------------------------
// 2. Dirichlet moments

Verdict dirichlet() {
  struct Case {
    std::vector<double> p;
    double c;
  };
  const std::vector<Case> cases{{{1.0 / 3, 1.0 / 3, 1.0 / 3}, 1.0},
                                {{0.6, 0.3, 0.1}, 1.0},
                                {{0.95, 0.04, 0.01}, 1.0},
                                {{0.5, 0.5}, 10.0}};
  Verdict v;
  double worst = 0.0;
  std::size_t rows = 0;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    Rng rng = Rng::stream(2 + i, "dirichlet");
    auto mc = dirichlet_moment_check(DirichletParams(ProbabilityVector(cases[i].p), cases[i].c), 100000, rng);
    for (const auto& r : mc.rows) {
      worst = std::max(worst, std::abs(r.empirical - r.exact) / std::max(r.se, 1e-300));
      ++rows;
    }
    v.pass = v.pass && mc.passed();
  }
  v.detail = fmt("%zu moments over 4 cases, worst deviation %.2f SE (limit 3)", rows, worst);
  return v;
}

// ---------------------------------------------------------------------------
// 3, 4. The k trade-off on Zipf-10, with a Zipf-8 exact comparison for reference

struct Prop1Runs {
  std::vector<Prop1Report> zipf10, zipf8;
};

const Prop1Runs& prop1_runs() {
  static const Prop1Runs runs = [] {
    Prop1Runs r;
    for (std::size_t support : {10u, 8u}) {
      const ProbabilityVector p = zipf(support);
      Rng table_rng = Rng::stream(1, "embeddings");
      Matrix table(static_cast<Eigen::Index>(support), 16);
      for (Eigen::Index i = 0; i < table.size(); ++i) table.data()[i] = table_rng.normal();
      for (std::size_t G : {2u, 5u}) {
        Prop1Options opt;
        opt.group = G;
        opt.trials = 10000;
        Rng rng = Rng::derive(Rng::stream(1, "prop1").next_u64(), G);
        (support == 10 ? r.zipf10 : r.zipf8).push_back(prop1_verify(p, table, opt, rng));
      }
    }
    std::ofstream f(g_out / "prop1_zipf10.csv");
    f << kProp1CsvHeader << '\n';
    for (const auto& rep : r.zipf10) write_prop1_rows(f, rep);
    return r;
  }();
  return runs;
}

Verdict prop1_unique() {
  const auto& r = prop1_runs();
  Verdict v;
  double min_z = 1e300;
  for (const auto& rep : r.zipf10) {
    v.pass = v.pass && rep.unique_increasing;
    for (std::size_t i = 1; i < rep.rows.size(); ++i) {
      const auto &a = rep.rows[i - 1], &b = rep.rows[i];
      min_z = std::min(min_z, (b.mean_unique - a.mean_unique) / std::hypot(a.se_unique, b.se_unique));
    }
  }
  // Support 10 is beyond the enumeration oracle, so the exact clause has nothing to judge.
  // Zipf-8 is reported alongside for reference only.
  double worst_exact = 0.0;
  std::size_t within = 0, rows = 0;
  for (const auto& rep : r.zipf8)
    for (const auto& row : rep.rows) {
      const double z = std::abs(row.mean_unique - *row.exact_unique) / row.se_unique;
      worst_exact = std::max(worst_exact, z);
      within += z <= 2.0;
      ++rows;
    }
  v.detail = fmt("Zipf-10 G=2,5 k=1..6: smallest gap %.1f pooled SE (need >3); exact oracle not applicable "
                 "(support 10 > 8); reference Zipf-8: %zu/%zu rows within 2 SE of exact, worst %.2f SE",
                 min_z, within, rows, worst_exact);
  return v;
}

Verdict prop1_distance() {
  Verdict v;
  double max_rise = -1e300;
  for (const auto& rep : prop1_runs().zipf10) {
    v.pass = v.pass && rep.dist_nonincreasing;
    for (std::size_t i = 1; i < rep.rows.size(); ++i) {
      const auto &a = rep.rows[i - 1], &b = rep.rows[i];
      max_rise = std::max(max_rise, (b.mean_dist_nested - a.mean_dist_nested) / std::hypot(a.se_dist_nested, b.se_dist_nested));
    }
  }
  v.detail = fmt("nested-coupling distance, largest rise %.2f SE (limit 3)", max_rise);
  return v;
}

// ---------------------------------------------------------------------------
// 5. swr_k inclusion frequencies

Verdict inclusion() {
  const std::vector<std::vector<double>> dists{{0.5, 0.3, 0.2},
                                               {0.4, 0.3, 0.2, 0.1},
                                               {0.9, 0.05, 0.03, 0.02},
                                               {0.25, 0.25, 0.25, 0.25},
                                               {0.35, 0.25, 0.15, 0.1, 0.1, 0.05}};
  const std::size_t n = 100000;
  Rng rng(5);
  double worst = 0.0;
  for (const auto& d : dists) {
    ProbabilityVector p(d);
    for (std::size_t k = 1; k <= 3; ++k) {
      const auto q = inclusion_prob_oracle(p, k);
      std::vector<double> f(d.size(), 0.0);
      for (std::size_t t = 0; t < n; ++t)
        for (TokenId id : sample_swr_k(p, k, 1.0, rng).tokens()) f[id] += 1.0;
      for (std::size_t j = 0; j < d.size(); ++j) {
        const double se = std::sqrt(q[j] * (1 - q[j]) / static_cast<double>(n));
        const double dev = std::abs(f[j] / static_cast<double>(n) - q[j]);
        worst = std::max(worst, se > 0 ? dev / se : (dev > 0 ? 1e300 : 0.0));
      }
    }
  }
  return {worst <= 3.0, fmt("5 distributions x k=1,2,3, 1e5 draws each: worst deviation %.2f SE (limit 3)", worst)};
}

// ---------------------------------------------------------------------------
// 6. Gradient fidelity

Verdict gradients() {
  const Vocabulary& vocab = Vocabulary::standard();
  ModelConfig mc;
  mc.vocab_size = vocab.size();
  mc.embed_dim = 16;
  mc.hidden_dim = 32;
  mc.num_layers = 1;
  mc.num_heads = 2;
  mc.context_length = 40;
  mc.seed = 9;
  mc.init_std = 0.3;
  auto p = init_parameters(mc);
  auto jitter = [](Parameters& q, std::uint64_t seed) {
    Rng rng(seed);
    q.visit([&](const std::string&, Matrix& m) {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += 0.05 * rng.normal();
    });
  };
  jitter(p, 11);
  auto ref = p;
  jitter(ref, 12);

  GenConfig g;
  g.sampling = {SamplingKind::top_k, 2};
  g.aggregation = {AggregationKind::dirichlet, 1.0};
  g.end = {EndKind::entropy_below, vocab.think_close(), 0.0, 1};
  g.think_close_id = vocab.think_close();
  g.eos_id = vocab.eos();
  g.max_think_steps = 2;
  g.max_answer_steps = 4;
  std::vector<Trajectory> group;
  for (std::uint64_t s = 0; s < 3; ++s) {
    Rng rng(40 + s);
    group.push_back(motg_generate(p, mc, generate_instance(TaskSpec{}, s).prompt_token_ids, g, rng));
  }
  GrpoConfig gc;
  gc.kl_coeff = 0.2;
  gc.loss_mode = LossMode::multi_token_weighted;
  const auto loss = make_group_loss(group, std::vector<double>{1.2, -0.3, -0.9}, ref, mc, gc, vocab.think_close());
  const auto grpo = oracle::finite_difference_check(p, loss, 1e-4, 1e-6, 1e-3);

  ModelConfig small = mc;
  small.vocab_size = 11;
  small.embed_dim = 8;
  small.hidden_dim = 16;
  auto q = init_parameters(small);
  jitter(q, 6);
  const std::vector<TokenId> tokens{3, 1, 7, 2, 9};
  const auto ce = oracle::finite_difference_check(
      q, [&](Graph& gr, const ParameterVars& pv) { return cross_entropy_loss(gr, pv, small, tokens, 2); });
  bool two_steps = true;
  for (const auto& t : group) two_steps = two_steps && t.think_steps.size() == 2;
  return {two_steps && grpo.max_rel < 1e-3 && ce.max_rel < 1e-4,
          fmt("GRPO loss (%zu entries) max rel err %.2e (limit 1e-3); cross-entropy (%zu entries) %.2e (limit 1e-4)",
              grpo.checked, grpo.max_rel, ce.checked, ce.max_rel)};
}

// ---------------------------------------------------------------------------
// 7. Advantages

Verdict advantages() {
  Rng rng(7);
  double worst_mean = 0, worst_std = 0;
  bool constant_ok = true, shift_ok = true;
  int with_signal = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t G = 2 + rng.below(15);
    std::vector<double> r(G);
    const int kind = trial % 4;
    for (double& x : r) {
      if (kind == 0) x = rng.normal();
      else if (kind == 1) x = std::vector{0.0, 0.1, 1.0}[rng.below(3)];
      else if (kind == 2) x = static_cast<double>(rng.below(2));
      else x = 0.5;
    }
    const auto a = compute_advantages(r);
    if (a.std > 0) {
      ++with_signal;
      double s = 0, ss = 0;
      for (double v : a.values) s += v;
      const double m = s / static_cast<double>(G);
      for (double v : a.values) ss += (v - m) * (v - m);
      worst_mean = std::max(worst_mean, std::abs(m));
      worst_std = std::max(worst_std, std::abs(std::sqrt(ss / static_cast<double>(G)) - 1.0));
    } else {
      for (double v : a.values) constant_ok = constant_ok && v == 0.0;
    }
    // Power-of-two shifts and integer rewards keep the arithmetic exact.
    if (kind == 2 || kind == 3) {
      std::vector<double> sh = r;
      for (double& x : sh) x += 8.0;
      shift_ok = shift_ok && compute_advantages(sh).values == a.values;
    }
  }
  return {worst_mean <= 1e-12 && worst_std <= 1e-9 && constant_ok && shift_ok,
          fmt("1000 groups (%d with spread): |mean| <= %.1e, |std-1| <= %.1e, constant groups zero: %s, exact shift "
              "invariance: %s",
              with_signal, worst_mean, worst_std, constant_ok ? "yes" : "no", shift_ok ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// 8. Gram-matrix entropy

Verdict gram() {
  Rng rng(8);
  auto random = [&](Eigen::Index r, Eigen::Index c) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
  };
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng.below(10)), d = n + static_cast<Eigen::Index>(rng.below(6));
    Matrix q = Eigen::HouseholderQR<Matrix>(random(d, d)).householderQ();
    worst = std::max(worst, std::abs(gram_entropy(q.topRows(n)) - std::log(static_cast<double>(n))));
    worst = std::max(worst, std::abs(gram_entropy(random(n, 1) * random(1, d))));
    const Matrix z = random(n, d);
    const Matrix rot = Eigen::HouseholderQR<Matrix>(random(d, d)).householderQ();
    const double s = gram_entropy(z);
    worst = std::max(worst, std::abs(gram_entropy(z * rot) - s));
    worst = std::max(worst, std::abs(oracle::gram_entropy_via_covariance(z) - s));
  }
  return {worst <= 1e-9, fmt("100 random cases x 4 identities: worst error %.2e (limit 1e-9)", worst)};
}

// ---------------------------------------------------------------------------
// 9. Training trend and diversity

RunConfig smoke_config(const std::string& name, std::uint64_t seed, const std::string& out_dir) {
  const fs::path path = fs::path(MOTG_SOURCE_DIR) / "configs" / name;
  std::ifstream f(path);
  nlohmann::json j = nlohmann::json::parse(f);
  j["seed"] = seed;
  j["output_dir"] = out_dir;
  return parse_run_config(j);
}

nlohmann::json train(const RunConfig& cfg, const fs::path& dir) {
  fs::remove_all(dir);
  run_training(cfg, dir);
  std::ifstream f(RunPaths{dir}.summary());
  return nlohmann::json::parse(f);
}

// Active-weighted mean L_t per training step, read back from diversity.csv.
std::map<std::uint64_t, double> step_diversity(const fs::path& csv) {
  std::ifstream f(csv);
  std::string line;
  std::getline(f, line);
  std::map<std::uint64_t, std::pair<double, double>> acc;
  while (std::getline(f, line)) {
    std::vector<std::string> c;
    std::stringstream ss(line);
    for (std::string x; std::getline(ss, x, ',');) c.push_back(x);
    const double unique = std::stod(c.at(4)), active = std::stod(c.at(5));
    auto& a = acc[std::stoull(c.at(2))];
    a.first += unique * active;
    a.second += active;
  }
  std::map<std::uint64_t, double> out;
  for (const auto& [step, a] : acc) out[step] = a.second > 0 ? a.first / a.second : 0.0;
  return out;
}

Verdict trend() {
  Verdict v;
  int gains = 0;
  std::string parts;
  std::size_t params = 0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const fs::path dir = g_out / ("dirichlet_seed" + std::to_string(seed));
    const auto s = train(smoke_config("smoke_dirichlet.json", seed, dir.string()), dir);
    const double gain = s.at("last_window_mean_reward").get<double>() - s.at("first_window_mean_reward").get<double>();
    gains += gain >= 0.2;
    parts += fmt("%s%.3f", parts.empty() ? "" : ", ", gain);
    std::ifstream mf(RunPaths{dir}.manifest());
    params = nlohmann::json::parse(mf).at("parameters").get<std::size_t>();
  }

  const fs::path dt = g_out / "different_tokens", st = g_out / "single_token";
  train(smoke_config("smoke_different_tokens.json", 1, dt.string()), dt);
  train(smoke_config("smoke_single_token.json", 1, st.string()), st);
  bool csvs = true;
  for (const auto& d : {dt, st})
    for (const auto& p : {RunPaths{d}.diversity(), RunPaths{d}.entropy()})
      csvs = csvs && fs::exists(p) && fs::file_size(p) > 0;
  const auto a = step_diversity(RunPaths{dt}.diversity()), b = step_diversity(RunPaths{st}.diversity());
  std::size_t ok = 0, compared = 0;
  double mean_a = 0, mean_b = 0;
  for (const auto& [step, la] : a) {
    auto it = b.find(step);
    if (it == b.end()) continue;
    ++compared;
    ok += la >= it->second;
    mean_a += la;
    mean_b += it->second;
  }
  const bool diversity_ok = compared > 0 && ok == compared && compared == a.size() && compared == b.size();
  v.pass = gains >= 2 && csvs && diversity_ok;
  v.detail = fmt("%zu-param model; reward gain (last 50 - first 50) on seeds 1,2,3: %s, %d/3 >= 0.2 (need 2); "
                 "L_t different-tokens >= single-token at %zu/%zu steps (means %.2f vs %.2f); CSVs %s",
                 params, parts.c_str(), gains, ok, compared, compared ? mean_a / static_cast<double>(compared) : 0.0,
                 compared ? mean_b / static_cast<double>(compared) : 0.0, csvs ? "present" : "MISSING");
  return v;
}

// ---------------------------------------------------------------------------
// 10. Determinism and persistence

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// The first column names the run directory, which differs by construction.
std::string without_run_column(const fs::path& csv) {
  std::istringstream is(slurp(csv));
  std::string out;
  for (std::string line; std::getline(is, line);) out += line.substr(line.find(',')) + '\n';
  return out;
}

Verdict persistence() {
  const fs::path whole = g_out / "resume_whole", split = g_out / "resume_split";
  auto cfg = smoke_config("smoke_dirichlet.json", 7, whole.string());
  cfg.grpo.steps = 100;
  fs::remove_all(whole);
  fs::remove_all(split);
  run_training(cfg, whole);
  TrainOptions first;
  first.stop_after = 50;
  const auto r1 = run_training(cfg, split, first);
  TrainOptions rest;
  rest.resume = true;
  const auto r2 = run_training(cfg, split, rest);

  const RunPaths a{whole}, b{split};
  const bool logs = slurp(a.run_log()) == slurp(b.run_log()) && slurp(a.eval_table()) == slurp(b.eval_table()) &&
                    without_run_column(a.diversity()) == without_run_column(b.diversity());
  const bool ckpt = slurp(a.checkpoint()) == slurp(b.checkpoint());
  const auto bytes = slurp(a.checkpoint());
  const Checkpoint ck = load_checkpoint(a.checkpoint().string(), &cfg.model);
  const auto again = serialize_checkpoint(ck);
  const bool round_trip = std::string(again.begin(), again.end()) == bytes;
  std::size_t lines = 0;
  for (char c : slurp(a.run_log())) lines += c == '\n';
  return {r1.completed == 50 && r2.finished && logs && ckpt && round_trip && lines == 100,
          fmt("checkpoint round-trip byte-exact: %s; 50+resume+50 vs 100: step log (%zu lines), eval and diversity "
              "tables %s, final checkpoints %s",
              round_trip ? "yes" : "no", lines, logs ? "identical" : "DIFFER", ckpt ? "identical" : "DIFFER")};
}

// ---------------------------------------------------------------------------
// 11. Task suite

Verdict tasks() {
  std::size_t verified = 0, total = 0;
  for (TaskKind k : {TaskKind::mod_sum, TaskKind::prime_factorization, TaskKind::number_sequence,
                     TaskKind::copy_reverse}) {
    TaskSpec spec;
    spec.kind = k;
    spec.seed = 11;
    for (std::uint64_t i = 0; i < 10000; ++i) {
      const auto inst = generate_instance(spec, i);
      ++total;
      verified += reward(inst, "<think></think><answer>" + inst.canonical_answer + "</answer><eos>") == 1.0;
    }
  }
  Rng rng(11);
  const std::vector<std::string> pieces{"<answer>", "</answer>", "<think>", " ", "×", "7", "12", "abc", "\xff", "\0"};
  std::set<double> seen;
  bool in_range = true;
  TaskSpec spec;
  for (int trial = 0; trial < 100000; ++trial) {
    spec.kind = static_cast<TaskKind>(trial % 4);
    const auto inst = generate_instance(spec, static_cast<std::uint64_t>(trial));
    std::string s;
    const std::size_t n = rng.below(24);
    for (std::size_t i = 0; i < n; ++i) {
      if (rng.below(3) == 0) s += pieces[rng.below(pieces.size())];
      else s += static_cast<char>(rng.below(256));
    }
    try {
      const double r = reward(inst, s);
      seen.insert(r);
      in_range = in_range && (r == 0.0 || r == kFormatBonus || r == 1.0);
    } catch (...) {
      in_range = false;
    }
  }
  std::string vals;
  for (double r : seen) vals += fmt("%s%g", vals.empty() ? "" : ",", r);
  return {verified == total && in_range,
          fmt("%zu/%zu canonical answers score 1.0; 1e5 fuzzed byte strings gave rewards {%s}", verified, total,
              vals.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string out = "acceptance_runs";
  std::vector<int> only;
  app.add_option("--out", out, "Directory for training runs and reports");
  app.add_option("--only", only, "Run just these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  g_out = out;
  fs::create_directories(g_out);

  const std::vector<std::pair<const char*, std::function<Verdict()>>> checks{
      {"reduction identities", reductions},
      {"Dirichlet moments", dirichlet},
      {"k trade-off: unique tokens", prop1_unique},
      {"k trade-off: nested distance", prop1_distance},
      {"swr_k inclusion", inclusion},
      {"gradient fidelity", gradients},
      {"advantage algebra", advantages},
      {"Gram-matrix entropy", gram},
      {"training trend and diversity", trend},
      {"determinism and resume", persistence},
      {"task suite", tasks},
  };
  int failed = 0;
  for (std::size_t i = 0; i < checks.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = checks[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (v.pass ? "PASS" : "FAIL") << "  " << std::setw(2) << id << "  " << checks[i].first << ": "
              << v.detail << " [" << fmt("%.1f", secs) << " s]" << std::endl;
    failed += !v.pass;
  }
  return failed ? 1 : 0;
}
