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

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nco/instances.h"

namespace nco {

using nlohmann::json;

void WriteFileAtomic(const std::string& path, std::string_view contents) {
  const std::filesystem::path target(path);
  if (target.has_parent_path()) {
    std::filesystem::create_directories(target.parent_path());
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + tmp + "' for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw DataError("write to '" + tmp + "' failed");
  }
  std::filesystem::rename(tmp, target);
}

std::string ReadFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

json RecordJson(const Instance& instance, const Solution& label, double cost,
                LabelProvenance provenance) {
  json r;
  r["schema_version"] = kDatasetSchemaVersion;
  r["kind"] = KindName(KindOf(instance));
  r["id"] = IdOf(instance);
  std::vector<int> ones;
  const std::vector<uint8_t> vars = label.ToVariables();
  for (size_t v = 0; v < vars.size(); ++v) {
    if (vars[v]) ones.push_back(static_cast<int>(v));
  }
  if (const auto* tsp = std::get_if<TspInstance>(&instance)) {
    r["n"] = tsp->n();
    json coords = json::array();
    for (const Point& p : tsp->coords) coords.push_back({p.x, p.y});
    r["coords"] = std::move(coords);
  } else {
    const auto& mis = std::get<MisInstance>(instance);
    r["n"] = mis.n;
    json edges = json::array();
    for (const auto& [u, v] : mis.edges) edges.push_back({u, v});
    r["edges"] = std::move(edges);
  }
  r["label_bits"] = {{"encoding", "index_list"},
                     {"num_vars", vars.size()},
                     {"ones", ones}};
  r["label_cost"] = cost;
  r["provenance"] = ProvenanceName(provenance);
  return r;
}

class RecordReader {
 public:
  RecordReader(const json& j, int line) : j_(j), line_(line) {}

  const json& Field(const char* name) const {
    if (!j_.contains(name)) Fail(name, "missing");
    return j_.at(name);
  }

  template <typename T>
  T Get(const char* name) const {
    try {
      return Field(name).get<T>();
    } catch (const json::exception& e) {
      Fail(name, e.what());
    }
  }

  [[noreturn]] void Fail(const std::string& field,
                         const std::string& what) const {
    throw DataError("dataset line " + std::to_string(line_) + ", field '" +
                    field + "': " + what);
  }

  int line() const { return line_; }

 private:
  const json& j_;
  int line_;
};

void CheckVersion(const RecordReader& r) {
  const int version = r.Get<int>("schema_version");
  if (version != kDatasetSchemaVersion) {
    throw SchemaVersionError(
        "dataset line " + std::to_string(r.line()) + ": schema_version " +
        std::to_string(version) + " is not supported (expected " +
        std::to_string(kDatasetSchemaVersion) +
        "); regenerate the dataset with gen-data");
  }
}

}  // namespace

std::string SerializeDataset(const LabeledDataset& dataset) {
  std::string out;
  json header = {{"schema_version", kDatasetSchemaVersion},
                 {"header", true},
                 {"kind", KindName(dataset.kind)},
                 {"count", dataset.size()},
                 {"seed", dataset.seed},
                 {"provenance", ProvenanceName(dataset.provenance)}};
  out += header.dump();
  out += '\n';
  for (int k = 0; k < dataset.size(); ++k) {
    out += RecordJson(dataset.instances[k], dataset.labels[k],
                      dataset.label_costs[k], dataset.provenance)
               .dump();
    out += '\n';
  }
  return out;
}

void SaveDataset(const LabeledDataset& dataset, const std::string& path) {
  WriteFileAtomic(path, SerializeDataset(dataset));
}

std::string DatasetHash(const LabeledDataset& dataset) {
  return HashHex(SerializeDataset(dataset));
}

LabeledDataset LoadDataset(const std::string& path) {
  std::istringstream in(ReadFile(path));
  std::string line;
  int line_no = 0;
  LabeledDataset d;
  int expected = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError("dataset line " + std::to_string(line_no) +
                      ": malformed JSON (" + e.what() + ")");
    }
    RecordReader r(j, line_no);
    CheckVersion(r);
    if (line_no == 1) {
      if (!j.value("header", false)) r.Fail("header", "first line must be the header");
      d.kind = ParseKind(r.Get<std::string>("kind"));
      expected = r.Get<int>("count");
      d.seed = r.Get<uint64_t>("seed");
      d.provenance = ParseProvenance(r.Get<std::string>("provenance"));
      continue;
    }
    const ProblemKind kind = ParseKind(r.Get<std::string>("kind"));
    if (kind != d.kind) r.Fail("kind", "differs from header");
    const int n = r.Get<int>("n");
    Instance instance;
    if (kind == ProblemKind::kTsp) {
      TspInstance g;
      g.id = r.Get<std::string>("id");
      const auto coords = r.Get<std::vector<std::array<double, 2>>>("coords");
      if (static_cast<int>(coords.size()) != n) r.Fail("coords", "length != n");
      for (const auto& c : coords) g.coords.push_back({c[0], c[1]});
      try {
        g.Validate();
      } catch (const DataError& e) {
        r.Fail("coords", e.what());
      }
      instance = std::move(g);
    } else {
      MisInstance g;
      g.id = r.Get<std::string>("id");
      g.n = n;
      for (const auto& e : r.Get<std::vector<std::array<int, 2>>>("edges")) {
        g.edges.emplace_back(e[0], e[1]);
      }
      try {
        g.Validate();
      } catch (const DataError& e) {
        r.Fail("edges", e.what());
      }
      instance = std::move(g);
    }
    const json& bits = r.Field("label_bits");
    RecordReader br(bits, line_no);
    if (br.Get<std::string>("encoding") != "index_list") {
      r.Fail("label_bits.encoding", "unsupported encoding");
    }
    const int num_vars = br.Get<int>("num_vars");
    if (num_vars != NumVariables(instance)) {
      r.Fail("label_bits.num_vars", "does not match instance");
    }
    std::vector<uint8_t> vars(num_vars, 0);
    for (int v : br.Get<std::vector<int>>("ones")) {
      if (v < 0 || v >= num_vars) r.Fail("label_bits.ones", "index out of range");
      vars[v] = 1;
    }
    Solution label = Solution::FromVariables(kind, n, vars);
    const double cost = r.Get<double>("label_cost");
    const Feasibility verdict = CheckFeasible(instance, label);
    if (!verdict) r.Fail("label_bits", "infeasible label: " + verdict.violation);
    if (Cost(instance, label) != cost) {
      r.Fail("label_cost", "does not equal the recomputed label cost");
    }
    d.instances.push_back(std::move(instance));
    d.labels.push_back(std::move(label));
    d.label_costs.push_back(cost);
  }
  if (line_no == 0) throw DataError("dataset '" + path + "' is empty");
  if (d.size() != expected) {
    throw DataError("dataset '" + path + "' is truncated: header declares " +
                    std::to_string(expected) + " records, found " +
                    std::to_string(d.size()));
  }
  return d;
}

}  // namespace nco
