// Copyright 2026 The NCO Lab Authors
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


#include "nco/checkpoint.h"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "test_util.h"

namespace nco {
namespace {

Checkpoint Sample() {
  const GnnConfig cfg = testing::SmallGnn(ProblemKind::kTsp, 6, 3);
  Checkpoint c;
  c.stage = "finetune";
  c.diffusion_steps = 20;
  c.train.lr = 3e-4;
  c.reward.mode = RewardMode::kStandard;
  c.dataset_hash = "0123456789abcdef";
  Policy p = MakePolicy(cfg, 1);
  p.mask = FinetuneMask::Hybrid(cfg, 1);
  p.lora = MakeLora(p.params, p.mask, 2, 2.0, 3);
  Rng rng(2);
  for (LoraFactor& f : p.lora) {
    for (int k = 0; k < f.b.size(); ++k) f.b(k) = rng.Uniform();
  }
  p.version = 17;
  c.state.policy = p;
  Gradients g = Gradients::ZerosLike(p);
  g.params.head.w.setConstant(0.1);
  ApplyUpdate(c.state.policy, g, c.state.adam, 1e-3);
  c.state.epochs_completed = 2;
  c.state.log = {{0, 4.0, 10.0, 0.1, 0.5}, {1, 3.9, 9.0, 0.2, 1.0}};
  c.state.wallclock_offset = 1.0;
  return c;
}

TEST(Checkpoint, RoundTripIsExact) {
  const Checkpoint c = Sample();
  const std::string text = SerializeCheckpoint(c);
  const Checkpoint back = ParseCheckpoint(text, "mem");
  EXPECT_EQ(SerializeCheckpoint(back), text);
  EXPECT_EQ(back.state.policy.version, 18u);
  EXPECT_EQ(back.state.policy.mask, c.state.policy.mask);
  EXPECT_EQ(back.state.adam.step, 1);
  EXPECT_EQ(back.state.log, c.state.log);
  EXPECT_EQ(back.train, c.train);
  EXPECT_EQ(back.reward, c.reward);
  // Bitwise identical outputs.
  const GraphInput g = BuildGraph(testing::Tsp(5, 1), c.state.policy.params.config);
  Rng rng(1);
  const std::vector<uint8_t> xt = testing::RandomBits(10, rng);
  EXPECT_EQ(Forward(c.state.policy, g, xt, 3, NormMode::kRunning).x0,
            Forward(back.state.policy, g, xt, 3, NormMode::kRunning).x0);
}

TEST(Checkpoint, SchemaMismatchHasRemediationHint) {
  nlohmann::json j = nlohmann::json::parse(SerializeCheckpoint(Sample()));
  j["schema_version"] = kCheckpointSchemaVersion + 1;
  try {
    ParseCheckpoint(j.dump(), "old.json");
    FAIL();
  } catch (const SchemaVersionError& e) {
    EXPECT_NE(std::string(e.what()).find("re-run"), std::string::npos);
  }
}

TEST(Checkpoint, TruncatedOrAlteredFilesAreRejected) {
  const std::string text = SerializeCheckpoint(Sample());
  EXPECT_THROW(ParseCheckpoint(text.substr(0, text.size() - 10), "t"), DataError);
  nlohmann::json j = nlohmann::json::parse(text);
  j["policy"]["tensors"][0]["rows"] = 99;
  EXPECT_THROW(ParseCheckpoint(j.dump(), "t"), DataError);
  EXPECT_THROW(LoadCheckpoint("/nonexistent/ckpt.json"), DataError);
}

TEST(Checkpoint, AtomicSaveLeavesNoTempFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "nco_ckpt_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "c.json").string();
  SaveCheckpoint(Sample(), path);
  SaveCheckpoint(Sample(), path);
  int files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir)) {
    ++files;
  }
  EXPECT_EQ(files, 1);
  EXPECT_EQ(SerializeCheckpoint(LoadCheckpoint(path)), SerializeCheckpoint(Sample()));
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, CompatibilityNamesTheDifference) {
  const Checkpoint c = Sample();
  const GnnConfig& g = c.state.policy.params.config;
  EXPECT_NO_THROW(RequireCompatible(c, "finetune", g, 20, c.beta, c.train,
                                    c.reward, c.dataset_hash));
  auto expect_field = [&](const std::string& field, auto&& call) {
    try {
      call();
      FAIL() << field;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
  };
  TrainConfig t = c.train;
  t.epochs += 1;
  expect_field("train", [&] {
    RequireCompatible(c, "finetune", g, 20, c.beta, t, c.reward, c.dataset_hash);
  });
  expect_field("dataset_hash", [&] {
    RequireCompatible(c, "finetune", g, 20, c.beta, c.train, c.reward, "ff");
  });
  expect_field("stage", [&] {
    RequireCompatible(c, "pretrain", g, 20, c.beta, c.train, c.reward,
                      c.dataset_hash);
  });
  expect_field("diffusion", [&] {
    RequireCompatible(c, "finetune", g, 21, c.beta, c.train, c.reward,
                      c.dataset_hash);
  });
  GnnConfig wider = g;
  wider.hidden += 1;
  expect_field("gnn", [&] {
    RequireCompatible(c, "finetune", wider, 20, c.beta, c.train, c.reward,
                      c.dataset_hash);
  });
}

}  // namespace
}  // namespace nco
