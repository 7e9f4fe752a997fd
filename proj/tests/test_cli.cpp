#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    root = fs::temp_directory_path() /
           ("motg_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root);
    fs::create_directories(root);
  }
  void TearDown() override { fs::remove_all(root); }

  Result run(const std::string& args, bool with_root = true) {
    const std::string env = with_root ? "MOTG_OUTPUT_ROOT='" + root.string() + "' " : "";
    const std::string cmd = "cd '" + root.string() + "' && " + env + "'" + MOTG_CLI_PATH + "' " + args + " >'" +
                            (root / "stdout").string() + "' 2>'" + (root / "stderr").string() + "'";
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(root / "stdout");
    r.err = slurp(root / "stderr");
    return r;
  }

  // A config small enough to train in a second or two.
  fs::path tiny_config(const std::string& out_dir, int steps = 6) {
    nlohmann::json j{{"seed", 3},
                     {"output_dir", out_dir},
                     {"trace_samples", 2},
                     {"checkpoint_every", 2},
                     {"model", {{"embed_dim", 8}, {"hidden_dim", 16}, {"num_layers", 1}, {"num_heads", 2}}},
                     {"gen", {{"max_think_steps", 2}, {"max_answer_steps", 4}}},
                     {"grpo", {{"group_size", 3}, {"steps", steps}, {"eval_every", 3}, {"eval_samples", 4}}},
                     {"warmup", {{"steps", 5}}},
                     {"task", {{"max_operand", 1}, {"min_modulus", 2}, {"max_modulus", 2}}}};
    const fs::path p = root / (out_dir + ".json");
    std::ofstream(p) << j.dump(2);
    return p;
  }

  fs::path root;
};

}  // namespace

TEST_F(Cli, HelpListsSubcommandsAndFlags) {
  auto r = run("--help");
  EXPECT_EQ(r.code, 0);
  for (const char* s : {"train", "generate", "analyze", "prop1", "dirichlet", "print-config"})
    EXPECT_NE(r.out.find(s), std::string::npos) << s;
  auto g = run("generate --help");
  for (const char* s : {"--checkpoint", "--prompt", "--k", "--dump-steps", "--seed"})
    EXPECT_NE(g.out.find(s), std::string::npos) << s;
}

TEST_F(Cli, ParseErrorsExitTwo) {
  EXPECT_EQ(run("bogus").code, 2);
  EXPECT_EQ(run("prop1 --trials abc").code, 2);
  EXPECT_EQ(run("prop1 --k-grid 0,1").code, 2);
  EXPECT_EQ(run("dirichlet --p 0,0").code, 2);
  EXPECT_EQ(run("dirichlet --p 0.5,0.5 --c -1").code, 2);
}

TEST_F(Cli, ConfigErrorsExitTwoAndNameTheField) {
  std::ofstream(root / "bad.json") << R"({"output_dir": "x"})";
  auto r = run("train bad.json");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("seed"), std::string::npos);
  std::ofstream(root / "unknown.json") << R"({"seed": 1, "output_dir": "x", "grpo": {"stepz": 3}})";
  r = run("train unknown.json");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("grpo.stepz"), std::string::npos);
  EXPECT_EQ(run("train missing.json").code, 2);
}

TEST_F(Cli, PrintConfigRoundTrips) {
  auto r = run("print-config");
  ASSERT_EQ(r.code, 0);
  std::ofstream(root / "printed.json") << r.out;
  auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j.at("grpo").at("group_size"), 5);
  // The printed defaults are a valid config on their own.
  j["grpo"]["steps"] = 0;
  j["warmup"]["steps"] = 0;
  j["grpo"]["eval_samples"] = 0;
  j["trace_hidden_states"] = false;
  std::ofstream(root / "zero.json") << j.dump();
  EXPECT_EQ(run("train --quiet zero.json").code, 0);
}

TEST_F(Cli, DirichletUniformThree) {
  auto r = run("dirichlet --p 1,1,1 --c 1 --n 100000 --seed 2 --strict");
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_NE(r.out.find("0.1111"), std::string::npos) << r.out;
}

TEST_F(Cli, Prop1WritesCsvUnderOutputRoot) {
  auto r = run("prop1 --trials 500 --G 2 --k-grid 1,2,3 --out p1.csv --strict");
  EXPECT_EQ(r.code, 0) << r.err;
  const std::string csv = slurp(root / "p1.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}

TEST_F(Cli, AnalyzeRejectsEmptyAndMissingDirs) {
  fs::create_directories(root / "empty");
  auto r = run("analyze empty");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("config.json"), std::string::npos);
  EXPECT_NE(run("analyze nowhere").code, 0);
}

TEST_F(Cli, TrainGenerateAnalyze) {
  const auto cfg = tiny_config("tiny");
  auto r = run("train --quiet " + cfg.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const fs::path dir = root / "tiny";
  for (const char* f : {"config.json", "manifest.json", "checkpoint.bin", "run_log.jsonl", "eval.csv",
                        "diversity.csv", "entropy_curves.csv", "summary.json"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_EQ(nlohmann::json::parse(slurp(dir / "summary.json")).at("steps"), 6);

  const std::string ck = (dir / "checkpoint.bin").string();
  auto a = run("generate --checkpoint " + ck + " --prompt '1+0 mod 2' --seed 4 --json");
  auto b = run("generate --checkpoint " + ck + " --prompt '1+0 mod 2' --seed 4 --json");
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  auto t = nlohmann::json::parse(a.out);
  EXPECT_TRUE(t.contains("think_steps"));

  auto k1 = run("generate --checkpoint " + ck + " --prompt '1+1 mod 2' --k 1 --dump-steps --max-think 3");
  ASSERT_EQ(k1.code, 0) << k1.err;
  std::istringstream is(k1.err);
  std::string header;
  std::getline(is, header);
  EXPECT_EQ(header, "step\ttoken_1\tweight_1\ttoken_2\tweight_2\tentropy");

  EXPECT_EQ(run("generate --checkpoint " + ck + " --prompt 'ABC'").code, 2);
  EXPECT_EQ(run("generate --checkpoint " + ck + " --prompt x --rule nope").code, 2);
  EXPECT_EQ(run("generate --checkpoint missing.bin --prompt x").code, 1);

  fs::remove(dir / "diversity.csv");
  EXPECT_EQ(run("analyze tiny").code, 0);
  EXPECT_TRUE(fs::exists(dir / "diversity.csv"));
}

TEST_F(Cli, ResumeMatchesUnbrokenRun) {
  ASSERT_EQ(run("train --quiet " + tiny_config("whole").string()).code, 0);
  const auto split = tiny_config("split");
  auto first = run("train --quiet --stop-after 3 " + split.string());
  ASSERT_EQ(first.code, 0) << first.err;
  EXPECT_NE(first.out.find("stopped 3"), std::string::npos);
  ASSERT_EQ(run("train --quiet --resume " + split.string()).code, 0);
  EXPECT_EQ(slurp(root / "whole" / "run_log.jsonl"), slurp(root / "split" / "run_log.jsonl"));
  EXPECT_EQ(slurp(root / "whole" / "eval.csv"), slurp(root / "split" / "eval.csv"));
  EXPECT_EQ(slurp(root / "whole" / "checkpoint.bin"), slurp(root / "split" / "checkpoint.bin"));
}

TEST_F(Cli, SameSeedSameRun) {
  ASSERT_EQ(run("train --quiet " + tiny_config("a").string()).code, 0);
  ASSERT_EQ(run("train --quiet " + tiny_config("b").string()).code, 0);
  EXPECT_EQ(slurp(root / "a" / "run_log.jsonl"), slurp(root / "b" / "run_log.jsonl"));
  EXPECT_EQ(slurp(root / "a" / "checkpoint.bin"), slurp(root / "b" / "checkpoint.bin"));
}

TEST_F(Cli, OutputRootOverride) {
  const auto cfg = tiny_config("rooted", 1);
  ASSERT_EQ(run("train --quiet " + cfg.string()).code, 0);
  EXPECT_TRUE(fs::exists(root / "rooted" / "checkpoint.bin"));
  // Without the override the relative path resolves against the working directory, also root here.
  fs::remove_all(root / "rooted");
  fs::create_directories(root / "elsewhere");
  const std::string cmd = "cd '" + (root / "elsewhere").string() + "' && MOTG_OUTPUT_ROOT='" + root.string() +
                          "/alt' '" + MOTG_CLI_PATH + "' train --quiet '" + cfg.string() + "' >/dev/null 2>&1";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_TRUE(fs::exists(root / "alt" / "rooted" / "checkpoint.bin"));
  EXPECT_FALSE(fs::exists(root / "elsewhere" / "rooted"));
}
