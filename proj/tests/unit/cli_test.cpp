#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "svsl/harness.hpp"
#include "svsl/model_io.hpp"
#include "test_support.hpp"

namespace svsl {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "svsl");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::path(SVSL_TEST_TMP) / "cli" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path write_config(const fs::path& dir, const nlohmann::json& doc) {
  const fs::path p = dir / "cfg.json";
  std::ofstream(p) << doc.dump(2);
  return p;
}

nlohmann::json quick_config() {
  auto doc = preset_config("quadratic_toy");
  doc["hyperparams"]["iters_per_component"] = 6;
  doc["hyperparams"]["n_components"] = 2;
  doc["hyperparams"]["beta"] = 1.0;
  doc["hyperparams"]["alpha"] = 0.1;
  return doc;
}

TEST(Cli, TrainTwiceIsByteIdentical) {
  const fs::path dir = fresh_dir("determinism");
  const auto cfg = write_config(dir, quick_config());
  const auto a = invoke({"train", "--config", cfg.string(), "--seed", "7", "--out", (dir / "a").string()});
  ASSERT_EQ(a.code, 0) << a.err;
  const auto b = invoke({"train", "--config", cfg.string(), "--seed", "7", "--out", (dir / "b").string()});
  ASSERT_EQ(b.code, 0) << b.err;
  const std::string ma = slurp(dir / "a" / "seed_7" / "model.json");
  EXPECT_FALSE(ma.empty());
  EXPECT_EQ(ma, slurp(dir / "b" / "seed_7" / "model.json"));
  EXPECT_TRUE(fs::exists(dir / "a" / "seed_7" / "metrics.csv"));
  EXPECT_TRUE(fs::exists(dir / "a" / "seed_7" / "run_config.resolved.json"));
}

TEST(Cli, ResolvedConfigReproducesRun) {
  const fs::path dir = fresh_dir("resolved");
  const auto cfg = write_config(dir, quick_config());
  ASSERT_EQ(invoke({"train", "--config", cfg.string(), "--seed", "3", "--out", (dir / "a").string()}).code, 0);
  const fs::path resolved = dir / "a" / "seed_3" / "run_config.resolved.json";
  const auto r = invoke({"train", "--config", resolved.string(), "--out", (dir / "b").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir / "a" / "seed_3" / "model.json"), slurp(dir / "b" / "seed_3" / "model.json"));
}

TEST(Cli, RefusesToOverwriteWithoutForce) {
  const fs::path dir = fresh_dir("overwrite");
  const auto cfg = write_config(dir, quick_config());
  const std::vector<std::string> args = {"train", "--config", cfg.string(), "--out", (dir / "o").string()};
  ASSERT_EQ(invoke(args).code, 0);
  const auto again = invoke(args);
  EXPECT_EQ(again.code, 2);
  EXPECT_NE(again.err.find("--force"), std::string::npos);
  auto forced = args;
  forced.push_back("--force");
  EXPECT_EQ(invoke(forced).code, 0);
}

TEST(Cli, MissingEnvExitsTwo) {
  const fs::path dir = fresh_dir("missing_env");
  auto doc = quick_config();
  doc.erase("env");
  const auto r = invoke({"validate-config", "--config", write_config(dir, doc).string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("env"), std::string::npos);
  const auto t = invoke({"train", "--config", write_config(dir, doc).string(), "--out", (dir / "x").string()});
  EXPECT_EQ(t.code, 2);
}

TEST(Cli, PresetResolvesReacherDefaults) {
  const auto r = invoke({"validate-config", "--preset", "planar_reacher_paper"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["hyperparams"]["beta"], 1.0);
  EXPECT_EQ(j["hyperparams"]["beta_w"], 1.0);
  EXPECT_EQ(j["hyperparams"]["n_components"], 60);
  EXPECT_EQ(j["hyperparams"]["iters_per_component"], 350);
  EXPECT_EQ(j["hyperparams"]["finetune_every"], 50);
}

TEST(Cli, SetOverride) {
  const auto r = invoke({"validate-config", "--preset", "bimodal_ablation", "--set", "hyperparams.beta=0.5", "--set",
                         "hyperparams.alpha=0.25"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(nlohmann::json::parse(r.out)["hyperparams"]["beta"], 0.5);
  EXPECT_EQ(invoke({"validate-config", "--preset", "bimodal_ablation", "--set", "hyperparams.alpha=2"}).code, 2);
}

TEST(Cli, UnknownFlagExitsTwo) { EXPECT_EQ(invoke({"train", "--bogus"}).code, 2); }

class CliModel : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fresh_dir("model");
    Rng rng(1);
    model_ = testing::random_policy(1, 1, 1, rng);
    save_model(dir_ / "model.json", model_, 0.0, 1.0);
  }
  fs::path dir_;
  MoEPolicy model_{1, 1};
};

TEST_F(CliModel, CoverageSingleComponentDensity) {
  const auto r = invoke({"coverage", "--model", (dir_ / "model.json").string(), "--preset", "bimodal_ablation",
                         "--grid", "9"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "c0,log_density,argmax_component,gating_entropy");
  int rows = 0;
  while (std::getline(in, line)) {
    const double c = std::stod(line.substr(0, line.find(',')));
    const double ld = std::stod(line.substr(line.find(',') + 1));
    EXPECT_NEAR(ld, log_density(model_.context(0), Vector::Constant(1, c)), 1e-12);
    ++rows;
  }
  EXPECT_EQ(rows, 9);
}

TEST_F(CliModel, CoverageOneCellGrid) {
  const auto r = invoke({"coverage", "--model", (dir_ / "model.json").string(), "--preset", "bimodal_ablation",
                         "--grid", "1"});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 2);
}

TEST_F(CliModel, GridMismatchExitsTwo) {
  const auto r = invoke({"coverage", "--model", (dir_ / "model.json").string(), "--preset", "bimodal_ablation",
                         "--grid", "3x3"});
  EXPECT_EQ(r.code, 2);
  const auto env = invoke({"coverage", "--model", (dir_ / "model.json").string(), "--preset", "quadratic_toy"});
  EXPECT_EQ(env.code, 2);
}

TEST_F(CliModel, BadModelExitsTwo) {
  std::ofstream(dir_ / "broken.json") << "{\"version\": 1}";
  EXPECT_EQ(invoke({"entropy", "--model", (dir_ / "broken.json").string(), "--preset", "bimodal_ablation"}).code, 2);
  EXPECT_EQ(invoke({"entropy", "--model", (dir_ / "nothing.json").string(), "--preset", "bimodal_ablation"}).code, 2);
}

TEST_F(CliModel, EntropyScalarAndCsv) {
  const auto csv = dir_ / "entropy.csv";
  const auto r = invoke({"entropy", "--model", (dir_ / "model.json").string(), "--preset", "bimodal_ablation",
                         "--contexts", "4", "--samples", "4000", "--out", csv.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_EQ(r.out.rfind("expected_entropy ", 0), 0u);
  const double h = std::stod(r.out.substr(17));
  EXPECT_NEAR(h, entropy(model_.expert(0)), 3 * std::sqrt(0.5 / 16000));
  const std::string body = slurp(csv);
  EXPECT_EQ(body.substr(0, body.find('\n')), "c0,entropy");
  EXPECT_EQ(std::count(body.begin(), body.end(), '\n'), 5);
}

TEST_F(CliModel, HeatmapUsesResolvedConfigNextToModel) {
  std::ofstream(dir_ / "run_config.resolved.json") << preset_config("bimodal_ablation").dump();
  const auto r = invoke({"heatmap", "--model", (dir_ / "model.json").string(), "--grid", "5", "--samples", "10"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "c0,success_rate");
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 6);
}

}  // namespace
}  // namespace svsl
