#include <gtest/gtest.h>

#include <cmath>

#include "motg/generation.hpp"

using namespace motg;

namespace {

ModelConfig tiny(std::uint64_t seed = 3) {
  ModelConfig c;
  c.vocab_size = 12;
  c.embed_dim = 16;
  c.hidden_dim = 32;
  c.num_layers = 2;
  c.num_heads = 2;
  c.context_length = 24;
  c.seed = seed;
  c.init_std = 0.5;  // spread-out distributions
  return c;
}

constexpr TokenId kClose = 10;
constexpr TokenId kEos = 11;

GenConfig base_gen() {
  GenConfig g;
  g.think_close_id = kClose;
  g.eos_id = kEos;
  g.end.kind = EndKind::end_think_most_likely;
  g.end.end_token_id = kClose;
  g.max_think_steps = 6;
  g.max_answer_steps = 6;
  return g;
}

// An end criterion that can never fire: entropy is never below zero.
EndCriteria never_end() {
  EndCriteria e;
  e.kind = EndKind::entropy_below;
  e.threshold = 0.0;
  return e;
}

std::vector<TokenId> random_prompt(Rng& rng, std::size_t vocab) {
  std::vector<TokenId> p(1 + rng.below(8));
  for (auto& t : p) t = static_cast<TokenId>(rng.below(vocab - 2));
  return p;
}

std::vector<TokenId> until_eos(std::vector<TokenId> v) {
  auto it = std::find(v.begin(), v.end(), kEos);
  if (it != v.end()) v.erase(it + 1, v.end());
  return v;
}

// Think tokens (k = 1 sets) followed by answer tokens.
std::vector<TokenId> flat_tokens(const Trajectory& t) {
  std::vector<TokenId> out;
  for (const auto& s : t.think_steps) {
    EXPECT_EQ(s.sampled_set.size(), 1u);
    out.push_back(s.sampled_set.entries[0].token);
  }
  out.insert(out.end(), t.answer_token_ids.begin(), t.answer_token_ids.end());
  return out;
}

}  // namespace

TEST(CheckEnd, MostLikely) {
  EndCriteria c;
  c.end_token_id = 2;
  EndHistory h;
  EXPECT_TRUE(check_end(c, ProbabilityVector({0, 0, 1}), h));
  EXPECT_FALSE(check_end(c, ProbabilityVector({0.5, 0.1, 0.4}), h));
  // Ties go to the lower id.
  EXPECT_FALSE(check_end(c, ProbabilityVector({0.5, 0.0, 0.5}), h));
}

TEST(CheckEnd, EntropyBelow) {
  EndCriteria c;
  c.kind = EndKind::entropy_below;
  c.threshold = 0.1;
  EndHistory h;
  for (int i = 0; i < 5; ++i) EXPECT_FALSE(check_end(c, ProbabilityVector({0.25, 0.25, 0.25, 0.25}), h));

  // Distributions with entropies 0.05, 0.2, 0.05, 0.04 and two consecutive rounds needed.
  auto with_entropy = [](double target) {
    double lo = 0.5, hi = 1.0;
    for (int i = 0; i < 200; ++i) {
      const double m = 0.5 * (lo + hi);
      (shannon_entropy(ProbabilityVector({m, 1 - m})) > target ? lo : hi) = m;
    }
    return ProbabilityVector({lo, 1 - lo});
  };
  c.consecutive_rounds = 2;
  EndHistory h2;
  std::vector<bool> fired;
  for (double e : {0.05, 0.2, 0.05, 0.04}) fired.push_back(check_end(c, with_entropy(e), h2));
  EXPECT_EQ(fired, (std::vector<bool>{false, false, false, true}));
}

TEST(StandardGenerate, GreedyAndForcedEos) {
  auto cfg = tiny();
  auto p = init_parameters(cfg);
  Rng a(1), b(2);
  const std::vector<TokenId> prompt{1, 2, 3};
  auto g1 = standard_generate(p, cfg, prompt, 1.0, 8, kEos, a, true);
  auto g2 = standard_generate(p, cfg, prompt, 1.0, 8, kEos, b, true);
  EXPECT_EQ(g1.tokens, g2.tokens);

  auto forced = p;
  forced.out_bias.setZero();
  forced.out_bias(0, static_cast<Eigen::Index>(kEos)) = 100.0;
  auto e = standard_generate(forced, cfg, prompt, 1.0, 8, kEos, a);
  EXPECT_EQ(e.tokens, std::vector<TokenId>{kEos});  // only the stop token itself

  Rng c(9), d(9);
  EXPECT_EQ(standard_generate(p, cfg, prompt, 0.7, 8, kEos, c).tokens,
            standard_generate(p, cfg, prompt, 0.7, 8, kEos, d).tokens);
}

TEST(StandardGenerate, ContextOverflowFlagsTruncation) {
  auto cfg = tiny();
  cfg.context_length = 5;
  auto p = init_parameters(cfg);
  Rng rng(1);
  auto r = standard_generate(p, cfg, std::vector<TokenId>{1, 2, 3}, 1.0, 10, 99, rng);
  EXPECT_TRUE(r.truncated);
  EXPECT_EQ(r.tokens.size(), 3u);
}

TEST(Motg, KOneMatchesStandardSampling) {
  Rng prompts(77);
  for (int trial = 0; trial < 100; ++trial) {
    auto cfg = tiny(100 + static_cast<std::uint64_t>(trial));
    auto p = init_parameters(cfg);
    auto prompt = random_prompt(prompts, cfg.vocab_size);
    GenConfig g = base_gen();
    g.sampling = {SamplingKind::swr_k, 1, 0.05, 0.9, 0.8};
    g.temperature = 0.8;
    g.aggregation = {trial % 2 ? AggregationKind::dirichlet : AggregationKind::uniform, 1.0};
    g.end = never_end();
    g.append_think_close = false;
    Rng r1(1000 + static_cast<std::uint64_t>(trial)), r2(1000 + static_cast<std::uint64_t>(trial));
    auto m = motg_generate(p, cfg, prompt, g, r1);
    auto s = standard_generate(p, cfg, prompt, 0.8, g.max_think_steps + g.max_answer_steps, kEos, r2);
    ASSERT_EQ(until_eos(flat_tokens(m)), until_eos(s.tokens)) << "trial " << trial;
    // Rows fed are exactly the one-hot embeddings of the standard sequence.
    auto flat = flat_tokens(m);
    for (std::size_t i = 0; i < m.think_steps.size(); ++i)
      EXPECT_EQ(m.think_steps[i].mixture, embed(p, flat[i]));
  }
}

TEST(Motg, TopOneMatchesGreedy) {
  Rng prompts(78);
  for (int trial = 0; trial < 30; ++trial) {
    auto cfg = tiny(200 + static_cast<std::uint64_t>(trial));
    auto p = init_parameters(cfg);
    auto prompt = random_prompt(prompts, cfg.vocab_size);
    GenConfig g = base_gen();
    g.sampling = {SamplingKind::top_k, 1};
    g.aggregation = {AggregationKind::normalized_prob, 1.0};
    g.end = never_end();
    g.append_think_close = false;
    g.greedy_answer = true;
    Rng r1(1), r2(2);
    auto m = motg_generate(p, cfg, prompt, g, r1);
    auto s = standard_generate(p, cfg, prompt, 1.0, g.max_think_steps + g.max_answer_steps, kEos, r2, true);
    EXPECT_EQ(until_eos(flat_tokens(m)), until_eos(s.tokens));
  }
}

TEST(Motg, SoftThinkingMixture) {
  auto cfg = tiny();
  auto p = init_parameters(cfg);
  GenConfig g = base_gen();
  g.sampling = {SamplingKind::top_k, cfg.vocab_size};
  g.aggregation = {AggregationKind::normalized_prob, 1.0};
  g.end = never_end();
  Rng rng(4);
  const std::vector<TokenId> prompt{1, 5};
  auto t = motg_generate(p, cfg, prompt, g, rng);
  ASSERT_EQ(t.think_steps.size(), g.max_think_steps);
  EmbeddingSequence seq = embed_sequence(p, prompt);
  for (const auto& s : t.think_steps) {
    auto dist = forward(p, cfg, seq).final_dist;
    RowVector soft = RowVector::Zero(p.tok_emb.cols());
    for (std::size_t z = 0; z < cfg.vocab_size; ++z) soft += dist[z] * p.tok_emb.row(static_cast<Eigen::Index>(z));
    EXPECT_LE((s.mixture - soft).norm(), 1e-12 * soft.norm());
    seq.append(s.mixture, RowOrigin::mixture);
  }
}

TEST(Motg, EntropyThresholdAboveMaxEndsImmediately) {
  auto cfg = tiny();
  auto p = init_parameters(cfg);
  GenConfig g = base_gen();
  g.end.kind = EndKind::entropy_below;
  g.end.threshold = std::log(static_cast<double>(cfg.vocab_size)) + 1;
  Rng rng(5);
  auto t = motg_generate(p, cfg, std::vector<TokenId>{1}, g, rng);
  EXPECT_TRUE(t.think_steps.empty());
  EXPECT_EQ(t.think_end, ThinkEnd::criteria);
  EXPECT_TRUE(t.close_appended);
}

TEST(Motg, ForcedEndThinkStartsAnswerImmediately) {
  auto cfg = tiny();
  auto p = zeros_like(init_parameters(cfg));
  p.out_bias(0, static_cast<Eigen::Index>(kClose)) = 50.0;
  GenConfig g = base_gen();
  Rng rng(6);
  auto t = motg_generate(p, cfg, std::vector<TokenId>{1, 2}, g, rng);
  EXPECT_TRUE(t.think_steps.empty());
  EXPECT_EQ(t.think_end, ThinkEnd::criteria);
  EXPECT_EQ(t.answer_token_ids.size(), g.max_answer_steps);  // the zero network keeps predicting kClose
  // prompt, close marker, then every answer token
  EXPECT_EQ(t.inputs.rows(), 2 + 1 + static_cast<Eigen::Index>(g.max_answer_steps));
  EXPECT_EQ(RowVector(t.inputs.row(2)), embed(p, kClose));
}

TEST(Motg, InvariantsAcrossRules) {
  auto cfg = tiny();
  auto p = init_parameters(cfg);
  Rng rng(7);
  for (SamplingKind sk : {SamplingKind::top_k, SamplingKind::min_p, SamplingKind::nucleus, SamplingKind::swr_k}) {
    for (AggregationKind ak : {AggregationKind::uniform, AggregationKind::normalized_prob, AggregationKind::dirichlet,
                               AggregationKind::elementwise_max}) {
      GenConfig g = base_gen();
      g.sampling = {sk, 3, 0.02, 0.8, 1.0};
      g.aggregation = {ak, 1.0};
      for (int i = 0; i < 5; ++i) {
        auto t = motg_generate(p, cfg, random_prompt(rng, cfg.vocab_size), g, rng);
        EXPECT_LE(t.think_steps.size(), g.max_think_steps);
        for (const auto& s : t.think_steps) {
          EXPECT_EQ(s.weights.has_value(), ak != AggregationKind::elementwise_max);
          if (s.weights) {
            EXPECT_EQ(s.weights->size(), s.sampled_set.size());
            double total = 0;
            for (double w : *s.weights) total += w;
            EXPECT_NEAR(total, 1.0, 1e-12);
          }
          EXPECT_EQ(s.dist_digest.size(), kDigestSize);
          EXPECT_GE(s.dist_digest[0].second, s.dist_digest[1].second);
        }
        if (t.think_end == ThinkEnd::cap) {
          EXPECT_EQ(t.think_steps.size(), g.max_think_steps);
        }
      }
    }
  }
}

TEST(Motg, DeterministicSerialization) {
  auto cfg = tiny();
  auto p = init_parameters(cfg);
  GenConfig g = base_gen();
  g.trace_hidden = true;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng a(seed), b(seed);
    auto t1 = motg_generate(p, cfg, std::vector<TokenId>{3, 4}, g, a);
    auto t2 = motg_generate(p, cfg, std::vector<TokenId>{3, 4}, g, b);
    EXPECT_EQ(trajectory_json(t1, "x", 1), trajectory_json(t2, "x", 1));
    ASSERT_TRUE(t1.trace.has_value());
    EXPECT_EQ(t1.trace->layers.size(), cfg.num_layers);
  }
}

TEST(Motg, OverflowTruncatesWithoutThrowing) {
  auto cfg = tiny();
  cfg.context_length = 6;
  auto p = init_parameters(cfg);
  GenConfig g = base_gen();
  g.end = never_end();
  Rng rng(8);
  auto t = motg_generate(p, cfg, std::vector<TokenId>{1, 2, 3}, g, rng);
  EXPECT_TRUE(t.truncated);
  EXPECT_EQ(t.think_end, ThinkEnd::overflow);
  EXPECT_LE(t.inputs.rows(), 6);
}

TEST(Motg, JsonCarriesStepFields) {
  auto cfg = tiny();
  auto p = init_parameters(cfg);
  GenConfig g = base_gen();
  g.end = never_end();
  g.max_think_steps = 2;
  Rng rng(9);
  auto t = motg_generate(p, cfg, std::vector<TokenId>{1}, g, rng);
  const std::string j = trajectory_json(t, "run", 3);
  for (const char* key : {"\"think_steps\"", "\"weights\"", "\"digest\"", "\"think_end\":\"cap\"", "\"train_step\":3"})
    EXPECT_NE(j.find(key), std::string::npos) << key;
}

TEST(GenConfig, Validate) {
  GenConfig g = base_gen();
  EXPECT_NO_THROW(g.validate(12));
  EXPECT_THROW(g.validate(11), InvalidInput);
  g.temperature = 0;
  EXPECT_THROW(g.validate(12), InvalidInput);
}
