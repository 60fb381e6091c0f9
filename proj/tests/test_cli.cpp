/*
 * Copyright 2026 The mkdsc Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 */

#include <gtest/gtest.h>

#include "json.hpp"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "mkdsc_cli_test";

int run(const std::string& args) {
  const std::string cmd = std::string(MKDSC_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
  }
};

}  // namespace

TEST_F(Cli, VersionAndUsageErrors) {
  EXPECT_EQ(run("--version"), 0);
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("train --bogus"), 1);
  EXPECT_EQ(run("synth"), 1);
}

TEST_F(Cli, SynthIsReproducible) {
  const auto a = kRoot / "synth_a", b = kRoot / "synth_b";
  ASSERT_EQ(run("synth --out " + a.string() + " --samples 3 --seed 4"), 0);
  ASSERT_EQ(run("synth --out " + b.string() + " --samples 3 --seed 4"), 0);
  EXPECT_EQ(slurp(a / "seen.jsonl"), slurp(b / "seen.jsonl"));
  EXPECT_EQ(slurp(a / "unseen.jsonl"), slurp(b / "unseen.jsonl"));
  for (const auto& e : fs::directory_iterator(a / "seen")) {
    EXPECT_EQ(slurp(e.path()), slurp(b / "seen" / e.path().filename()));
  }
  EXPECT_TRUE(fs::exists(a / "config.json"));
}

TEST_F(Cli, MissingInputIsADataError) {
  EXPECT_EQ(run("kernels --manifest " + (kRoot / "absent.jsonl").string() + " --out " + (kRoot / "k").string()), 2);
}

TEST_F(Cli, ConfigFileWithExplicitFlagsWinning) {
  const auto cfg = kRoot / "cfg.json";
  std::ofstream(cfg) << R"({"synth": {"samples": 2, "seed": 9, "noise": 0.2}})";
  const auto a = kRoot / "cfg_a", b = kRoot / "cfg_b";
  ASSERT_EQ(run("--config " + cfg.string() + " synth --out " + a.string() + " --seed 4"), 0);
  ASSERT_EQ(run("synth --out " + b.string() + " --samples 2 --seed 4 --noise 0.2"), 0);
  EXPECT_EQ(slurp(a / "seen.jsonl"), slurp(b / "seen.jsonl"));
  const auto eff = read_json(a / "config.json");
  EXPECT_EQ(eff.at("command"), "synth");
  EXPECT_EQ(eff.at("options").at("samples"), "2");
}

TEST_F(Cli, FullPipelineProducesScores) {
  const auto d = kRoot / "pipe";
  ASSERT_EQ(run("synth --out " + (d / "data").string() + " --samples 5"), 0);
  ASSERT_EQ(run("kernels --manifest " + (d / "data" / "seen.jsonl").string() + " --out " + (d / "kern").string()), 0);
  ASSERT_EQ(run("train --kernels " + (d / "kern").string() + " --manifest " + (d / "data" / "seen.jsonl").string() +
                " --out " + (d / "model").string() + " --k 8 --tx 4 --tbeta 1"),
            0);
  ASSERT_EQ(run("encode --model " + (d / "model").string() + " --manifest " + (d / "data" / "unseen.jsonl").string() +
                " --out " + (d / "enc").string()),
            0);
  ASSERT_EQ(run("cluster --enc " + (d / "enc").string() + " --out " + (d / "tree.json").string() + " --order shuffle:1 --dot " +
                (d / "tree.dot").string()),
            0);
  ASSERT_EQ(run("eval --tree " + (d / "tree.json").string() + " --truth " + (d / "data" / "unseen.jsonl").string() +
                " --out " + (d / "score.json").string()),
            0);
  const auto score = read_json(d / "score.json");
  EXPECT_GE(score.at("ce").get<double>(), 0.0);
  EXPECT_LE(score.at("ce").get<double>(), 1.0);
  EXPECT_GE(score.at("nmi").get<double>(), 0.0);
  EXPECT_LE(score.at("nmi").get<double>(), 1.0);
  EXPECT_TRUE(fs::exists(d / "tree.dot"));
  EXPECT_TRUE(fs::exists(d / "model" / "config.json"));
  EXPECT_EQ(run("encode --model " + (d / "model").string() + " --manifest " + (d / "data" / "unseen.jsonl").string() +
                " --out " + (d / "enc2").string() + " --tx 0 --threshold -1"),
            1);
}
