// Copyright 2026 The ldmrb Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ldmrb/cli.hpp"
#include "ldmrb/dataset.hpp"
#include "ldmrb/harness.hpp"
#include "synthetic.hpp"

namespace ldmrb {
namespace {

using testing::read_file;

const std::filesystem::path kFixtures = LDMRB_FIXTURE_DIR;

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "ldmrb");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  std::filesystem::path dir, plan_path;
  ExperimentPlan plan;
  void SetUp() override {
    dir = testing::scratch_dir(std::string("cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    testing::EvalDatasetOptions o;
    o.images = 1;
    o.prompts = 2;
    const auto manifest = testing::write_eval_dataset(dir / "data", o);
    plan = testing::toy_plan("data/manifest.jsonl", dir / "run", {testing::toy_descriptor("toy", 0)},
                             {ModuleTarget::Encoder});
    plan.models = {{"sd15", "variation", "weights/sd15", "main"}};  // replaced by --model toy
    write_plan(plan);
  }
  void write_plan(const ExperimentPlan& p) {
    plan_path = dir / "plan.json";
    std::ofstream(plan_path) << nlohmann::json(p).dump(2);
  }
};

TEST_F(CliTest, SweepOnToyModel) {
  const auto r = cli({"sweep", "--plan", plan_path.string(), "--model", "toy"});
  EXPECT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("output: " + (dir / "run").string()), std::string::npos);
  EXPECT_NE(r.out.find("plan: "), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(dir / "run" / "report.md"));
}

TEST_F(CliTest, ValidateRejectsLargeEpsilon) {
  const auto r = cli({"validate", "--plan", plan_path.string(), "--set", "attack.epsilon=1.5"});
  EXPECT_EQ(r.code, kExitInvalid);
  EXPECT_NE(r.err.find("AttackConfig"), std::string::npos);
  EXPECT_NE(r.err.find("epsilon"), std::string::npos);
}

TEST_F(CliTest, UnknownOverrideKeyFailsBeforeWork) {
  const auto r = cli({"sweep", "--plan", plan_path.string(), "--model", "toy", "--set", "attack.epsilonn=0.1"});
  EXPECT_EQ(r.code, kExitInvalid);
  EXPECT_FALSE(std::filesystem::exists(dir / "run"));
}

TEST_F(CliTest, JsonErrors) {
  const auto r = cli({"--json", "validate", "--plan", plan_path.string(), "--set", "attack.epsilon=2"});
  EXPECT_EQ(r.code, kExitInvalid);
  const auto j = nlohmann::json::parse(r.err);
  EXPECT_EQ(j["error"], "InvalidArgument");
  EXPECT_EQ(j["exit_code"], 1);
  const auto ok = cli({"--json", "validate", "--plan", plan_path.string()});
  EXPECT_EQ(ok.code, kExitOk);
  EXPECT_EQ(nlohmann::json::parse(ok.out)["plan_hash"], load_plan(plan_path).hash());
}

TEST_F(CliTest, BadArgumentsExitOne) {
  EXPECT_EQ(cli({}).code, kExitInvalid);
  EXPECT_EQ(cli({"frobnicate"}).code, kExitInvalid);
  EXPECT_EQ(cli({"sweep"}).code, kExitInvalid);
  EXPECT_EQ(cli({"validate", "--plan", (dir / "absent.json").string()}).code, kExitRuntime);
  EXPECT_EQ(cli({"--help"}).code, kExitOk);
}

TEST_F(CliTest, SeedOverridePropagates) {
  const auto a = cli({"--json", "sweep", "--plan", plan_path.string(), "--model", "toy", "--seed", "5", "--set",
                      "output_dir=" + (dir / "a").string()});
  const auto b = cli({"--json", "sweep", "--plan", plan_path.string(), "--model", "toy", "--seed", "5", "--set",
                      "output_dir=" + (dir / "b").string()});
  const auto c = cli({"--json", "sweep", "--plan", plan_path.string(), "--model", "toy", "--seed", "6", "--set",
                      "output_dir=" + (dir / "c").string()});
  ASSERT_EQ(a.code, 0);
  ASSERT_EQ(b.code, 0);
  ASSERT_EQ(c.code, 0);
  EXPECT_EQ(nlohmann::json::parse(a.out)["plan_hash"], nlohmann::json::parse(b.out)["plan_hash"]);
  EXPECT_NE(nlohmann::json::parse(a.out)["plan_hash"], nlohmann::json::parse(c.out)["plan_hash"]);
  EXPECT_EQ(read_file(dir / "a" / "report.json"), read_file(dir / "b" / "report.json"));
  const auto ra = nlohmann::json::parse(read_file(dir / "a" / "report.json"));
  const auto rc = nlohmann::json::parse(read_file(dir / "c" / "report.json"));
  EXPECT_NE(ra["results"][0]["CLIP"], rc["results"][0]["CLIP"]);
}

TEST_F(CliTest, CommandsAreThinWrappers) {
  ASSERT_EQ(cli({"sweep", "--plan", plan_path.string(), "--model", "toy"}).code, 0);
  auto direct = load_plan(plan_path);
  direct.models = {testing::toy_descriptor("toy", 0)};
  direct.output_dir = dir / "direct";
  Harness(direct).whitebox_sweep();
  EXPECT_EQ(read_file(dir / "run" / "report.md"), read_file(dir / "direct" / "report.md"));
}

TEST_F(CliTest, SkipThresholdExitsTwo) {
  const auto r = cli({"sweep", "--plan", plan_path.string(), "--set",
                      "models=[{\"model_id\":\"inp\",\"kind\":\"inpainting\",\"weights\":\"toy:seed=1\"}]"});
  EXPECT_EQ(r.code, kExitRuntime) << r.err;
  EXPECT_NE(r.err.find("skipped"), std::string::npos);
}

TEST_F(CliTest, ReportRerendersStoredResults) {
  ASSERT_EQ(cli({"attack", "--plan", plan_path.string(), "--model", "toy"}).code, 0);
  ASSERT_EQ(cli({"sweep", "--plan", plan_path.string(), "--model", "toy"}).code, 0);
  const auto md = read_file(dir / "run" / "report.md");
  std::filesystem::remove(dir / "run" / "report.md");
  const auto r = cli({"report", "--dir", (dir / "run").string(), "--format", "csv"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_file(dir / "run" / "report.md"), md);
  EXPECT_NE(r.out.find("CLIP,PSNR,SSIM,MSSSIM,FID,IS"), std::string::npos);
}

TEST_F(CliTest, TransferAndDefend) {
  auto p = plan;
  p.models = {testing::toy_descriptor("m0", 0), testing::toy_descriptor("m1", 1)};
  p.defenses = {DefenseSpec::jpeg(50)};
  write_plan(p);
  EXPECT_EQ(cli({"transfer", "--plan", plan_path.string()}).code, 0);
  EXPECT_EQ(cli({"transfer", "--plan", plan_path.string(), "--kind", "prompt"}).code, 0);
  EXPECT_EQ(cli({"defend", "--plan", plan_path.string(), "--workers", "2"}).code, 0);
  const auto md = read_file(dir / "run" / "report.md");
  EXPECT_NE(md.find("## model transfer CLIP"), std::string::npos);
  EXPECT_NE(md.find("## defense JPEG"), std::string::npos);
  EXPECT_NE(md.find("## prompt:"), std::string::npos);
}

TEST_F(CliTest, OutputDirEnvironment) {
  auto p = plan;
  p.output_dir = "relative_run";
  write_plan(p);
  setenv("LDMRB_OUTPUT_DIR", (dir / "root").string().c_str(), 1);
  const auto r = cli({"validate", "--plan", plan_path.string()});
  unsetenv("LDMRB_OUTPUT_DIR");
  EXPECT_NE(r.out.find((dir / "root" / "relative_run").string()), std::string::npos);
}

TEST(CliDataset, InpaintingManifestMatchesGolden) {
  const auto dir = testing::scratch_dir("cli_dataset");
  const auto corpus = testing::write_synthetic_corpus(dir / "coco");
  nlohmann::json config = DatasetConfig{};
  config["image_fraction"] = 0.25;
  config["generation"]["size"] = 32;
  config["generation"]["diffusion_steps"] = 3;
  config["crop"]["output_size"] = 32;
  std::ofstream(dir / "config.json") << config.dump();
  const std::vector<std::string> args = {"build-dataset",  "--corpus", (dir / "coco").string(), "--mode",
                                         "inpainting",     "--llm",    "replay:" + corpus.transcripts.string(),
                                         "--out",          (dir / "out").string(), "--config",
                                         (dir / "config.json").string()};
  const auto r = cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto manifest = read_file(dir / "out" / "manifest.jsonl");
  EXPECT_EQ(manifest, read_file(kFixtures / "golden" / "inpainting_manifest.jsonl"));
  const auto m = read_manifest(dir / "out" / "manifest.jsonl");
  ASSERT_EQ(m.items.size(), 5u);
  for (const auto& item : m.items) {
    EXPECT_TRUE(item.is_triplet());
    EXPECT_EQ(item.prompts.size(), 5u);
    EXPECT_TRUE(std::filesystem::exists(dir / "out" / item.mask));
  }
  // a second run resumes from the checkpoint and reproduces the file
  ASSERT_EQ(cli(args).code, 0);
  EXPECT_EQ(read_file(dir / "out" / "manifest.jsonl"), manifest);
}

}  // namespace
}  // namespace ldmrb
