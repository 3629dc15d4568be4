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

namespace nco {
namespace {

using nlohmann::json;

const json& Field(const json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) {
    throw DataError(where + ": missing field '" + key + "'");
  }
  return *it;
}

template <typename T>
T As(const json& j, const char* key, const std::string& where) {
  try {
    return Field(j, key, where).get<T>();
  } catch (const json::exception& e) {
    throw DataError(where + ": field '" + key + "': " + e.what());
  }
}

}  // namespace

json MatrixToJson(const Eigen::MatrixXd& m) {
  json data = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Eigen::MatrixXd MatrixFromJson(const json& j, const std::string& where) {
  const auto rows = As<int64_t>(j, "rows", where);
  const auto cols = As<int64_t>(j, "cols", where);
  const json& data = Field(j, "data", where);
  if (rows < 0 || cols < 0 || !data.is_array() ||
      static_cast<int64_t>(data.size()) != rows * cols) {
    throw DataError(where + ": matrix data does not match its shape");
  }
  Eigen::MatrixXd m(rows, cols);
  for (int64_t i = 0; i < rows; ++i) {
    for (int64_t k = 0; k < cols; ++k) {
      const json& v = data[i * cols + k];
      if (!v.is_number()) throw DataError(where + ": non-numeric entry");
      m(i, k) = v.get<double>();
    }
  }
  return m;
}

json PolicyToJson(const Policy& policy) {
  json tensors = json::array();
  ForEachTensor(policy.params,
                [&](const TensorInfo& info, const Eigen::MatrixXd& m) {
                  json t = MatrixToJson(m);
                  t["name"] = info.name;
                  tensors.push_back(std::move(t));
                });
  json lora = json::array();
  for (const LoraFactor& f : policy.lora) {
    if (!f.active()) {
      lora.push_back(nullptr);
      continue;
    }
    lora.push_back({{"scale", f.scale},
                    {"a", MatrixToJson(f.a)},
                    {"b", MatrixToJson(f.b)}});
  }
  json mask = json::array();
  for (BlockMode m : policy.mask.modes) mask.push_back(BlockModeName(m));
  return {{"config", ToJson(policy.params.config)},
          {"version", policy.version},
          {"mask", std::move(mask)},
          {"tensors", std::move(tensors)},
          {"lora", std::move(lora)}};
}

Policy PolicyFromJson(const json& j) {
  Policy p;
  GnnConfig config;
  try {
    FromJson(Field(j, "config", "policy"), config, "policy.config");
    config.Validate();
  } catch (const ConfigError& e) {
    throw DataError(e.what());
  }
  p.params = InitParams(config, 0);
  p.version = As<uint64_t>(j, "version", "policy");
  const json& tensors = Field(j, "tensors", "policy");
  if (!tensors.is_array()) throw DataError("policy.tensors must be an array");
  size_t idx = 0;
  ForEachTensor(p.params, [&](const TensorInfo& info, Eigen::MatrixXd& m) {
    if (idx >= tensors.size()) {
      throw DataError("policy.tensors: missing tensor '" + info.name + "'");
    }
    const json& t = tensors[idx++];
    const std::string where = "policy.tensors[" + info.name + "]";
    if (As<std::string>(t, "name", where) != info.name) {
      throw DataError(where + ": name mismatch");
    }
    Eigen::MatrixXd value = MatrixFromJson(t, where);
    if (value.rows() != m.rows() || value.cols() != m.cols()) {
      throw DataError(where + ": shape does not match the config");
    }
    m = std::move(value);
  });
  if (idx != tensors.size()) throw DataError("policy.tensors: extra entries");
  const json& mask = Field(j, "mask", "policy");
  for (const json& m : mask) {
    try {
      p.mask.modes.push_back(ParseBlockMode(m.get<std::string>()));
    } catch (const std::exception& e) {
      throw DataError(std::string("policy.mask: ") + e.what());
    }
  }
  if (static_cast<int>(p.mask.modes.size()) != p.params.num_blocks()) {
    throw DataError("policy.mask: wrong number of blocks");
  }
  const json& lora = Field(j, "lora", "policy");
  if (!lora.is_array()) throw DataError("policy.lora must be an array");
  if (!lora.empty() && static_cast<int>(lora.size()) != NumLinears(p.params)) {
    throw DataError("policy.lora: wrong number of entries");
  }
  for (size_t k = 0; k < lora.size(); ++k) {
    LoraFactor f;
    if (!lora[k].is_null()) {
      const std::string where = "policy.lora[" + std::to_string(k) + "]";
      f.scale = As<double>(lora[k], "scale", where);
      f.a = MatrixFromJson(Field(lora[k], "a", where), where + ".a");
      f.b = MatrixFromJson(Field(lora[k], "b", where), where + ".b");
    }
    p.lora.push_back(std::move(f));
  }
  return p;
}

std::string SerializeCheckpoint(const Checkpoint& ckpt) {
  const TrainState& st = ckpt.state;
  json m = json::array(), v = json::array();
  for (const auto& x : st.adam.m) m.push_back(MatrixToJson(x));
  for (const auto& x : st.adam.v) v.push_back(MatrixToJson(x));
  json log = json::array();
  for (const EpochLog& r : st.log) {
    log.push_back({{"epoch", r.epoch},
                   {"mean_cost", r.mean_cost},
                   {"mean_drop", r.mean_drop},
                   {"sl_loss", r.sl_loss},
                   {"wallclock_seconds", r.wallclock_seconds}});
  }
  json out = {{"schema_version", kCheckpointSchemaVersion},
              {"stage", ckpt.stage},
              {"diffusion_steps", ckpt.diffusion_steps},
              {"beta", ToJson(ckpt.beta)},
              {"train", ToJson(ckpt.train)},
              {"reward", ToJson(ckpt.reward)},
              {"dataset_hash", ckpt.dataset_hash},
              {"epochs_completed", st.epochs_completed},
              {"wallclock_offset", st.wallclock_offset},
              {"log", std::move(log)},
              {"adam",
               {{"step", st.adam.step},
                {"beta1", st.adam.beta1},
                {"beta2", st.adam.beta2},
                {"eps", st.adam.eps},
                {"m", std::move(m)},
                {"v", std::move(v)}}},
              {"policy", PolicyToJson(st.policy)}};
  return out.dump() + "\n";
}

Checkpoint ParseCheckpoint(const std::string& text, const std::string& source) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(source + ": checkpoint is not valid json (" + e.what() +
                    ")");
  }
  if (!j.is_object()) throw DataError(source + ": checkpoint must be an object");
  const int version = As<int>(j, "schema_version", source);
  if (version != kCheckpointSchemaVersion) {
    throw SchemaVersionError(
        source + ": checkpoint schema_version " + std::to_string(version) +
        " is not supported (expected " +
        std::to_string(kCheckpointSchemaVersion) +
        "); re-run the producing command with this build");
  }
  Checkpoint c;
  c.stage = As<std::string>(j, "stage", source);
  if (c.stage != "pretrain" && c.stage != "finetune") {
    throw DataError(source + ": unknown stage '" + c.stage + "'");
  }
  c.diffusion_steps = As<int>(j, "diffusion_steps", source);
  try {
    FromJson(Field(j, "beta", source), c.beta, "beta");
    FromJson(Field(j, "train", source), c.train, "train");
    FromJson(Field(j, "reward", source), c.reward, "reward");
  } catch (const ConfigError& e) {
    throw DataError(source + ": " + e.what());
  }
  c.dataset_hash = As<std::string>(j, "dataset_hash", source);
  TrainState& st = c.state;
  st.epochs_completed = As<int>(j, "epochs_completed", source);
  st.wallclock_offset = As<double>(j, "wallclock_offset", source);
  for (const json& r : Field(j, "log", source)) {
    EpochLog row;
    row.epoch = As<int>(r, "epoch", source + " log");
    row.mean_cost = As<double>(r, "mean_cost", source + " log");
    row.mean_drop = As<double>(r, "mean_drop", source + " log");
    row.sl_loss = As<double>(r, "sl_loss", source + " log");
    row.wallclock_seconds = As<double>(r, "wallclock_seconds", source + " log");
    st.log.push_back(row);
  }
  const json& adam = Field(j, "adam", source);
  st.adam.step = As<int64_t>(adam, "step", source + " adam");
  st.adam.beta1 = As<double>(adam, "beta1", source + " adam");
  st.adam.beta2 = As<double>(adam, "beta2", source + " adam");
  st.adam.eps = As<double>(adam, "eps", source + " adam");
  for (const json& x : Field(adam, "m", source)) {
    st.adam.m.push_back(MatrixFromJson(x, source + " adam.m"));
  }
  for (const json& x : Field(adam, "v", source)) {
    st.adam.v.push_back(MatrixFromJson(x, source + " adam.v"));
  }
  if (st.adam.m.size() != st.adam.v.size()) {
    throw DataError(source + ": adam moment lists differ in length");
  }
  try {
    st.policy = PolicyFromJson(Field(j, "policy", source));
  } catch (const DataError& e) {
    throw DataError(source + ": " + e.what());
  }
  return c;
}

void SaveCheckpoint(const Checkpoint& ckpt, const std::string& path) {
  WriteFileAtomic(path, SerializeCheckpoint(ckpt));
}

Checkpoint LoadCheckpoint(const std::string& path) {
  return ParseCheckpoint(ReadFile(path), path);
}

void RequireCompatible(const Checkpoint& ckpt, const std::string& stage,
                       const GnnConfig& gnn, int diffusion_steps,
                       const BetaSpec& beta, const TrainConfig& train,
                       const RewardConfig& reward,
                       const std::string& dataset_hash) {
  auto fail = [](const std::string& what) {
    throw ConfigError("checkpoint does not match the run config: " + what +
                      " differs");
  };
  if (ckpt.stage != stage) fail("stage");
  if (!(ckpt.state.policy.params.config == gnn)) fail("gnn");
  if (ckpt.diffusion_steps != diffusion_steps || !(ckpt.beta == beta)) {
    fail("diffusion schedule");
  }
  if (!(ckpt.train == train)) fail("train");
  if (stage == "finetune" && !(ckpt.reward == reward)) fail("reward");
  if (ckpt.dataset_hash != dataset_hash) fail("dataset_hash");
}

}  // namespace nco
