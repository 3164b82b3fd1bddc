#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "casc/io/tensor_file.hpp"

namespace casc::pipeline {

struct StageRecord {
  std::string name;
  std::map<std::string, std::string> inputs;   // key -> content digest
  std::map<std::string, std::string> outputs;  // relative path -> content digest
  double duration_s = 0.0;
  std::string status;  // completed | skipped
};

struct StageLedger {
  std::vector<StageRecord> stages;

  const StageRecord* find(const std::string& name) const {
    for (const auto& s : stages) {
      if (s.name == name) return &s;
    }
    return nullptr;
  }

  void upsert(StageRecord r) {
    for (auto& s : stages) {
      if (s.name == r.name) {
        s = std::move(r);
        return;
      }
    }
    stages.push_back(std::move(r));
  }

  std::size_t count(const std::string& status) const {
    std::size_t n = 0;
    for (const auto& s : stages) n += s.status == status;
    return n;
  }
};

// Equality on everything except wall-clock durations.
inline bool equivalent(const StageLedger& a, const StageLedger& b) {
  if (a.stages.size() != b.stages.size()) return false;
  for (std::size_t i = 0; i < a.stages.size(); ++i) {
    const auto &x = a.stages[i], &y = b.stages[i];
    if (x.name != y.name || x.inputs != y.inputs || x.outputs != y.outputs || x.status != y.status) return false;
  }
  return true;
}

inline nlohmann::json to_json(const StageLedger& l) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : l.stages) {
    stages.push_back({{"name", s.name},
                      {"inputs", s.inputs},
                      {"outputs", s.outputs},
                      {"duration_s", s.duration_s},
                      {"status", s.status}});
  }
  return {{"stages", stages}};
}

inline StageLedger ledger_from_json(const nlohmann::json& j) {
  StageLedger l;
  for (const auto& s : j.at("stages")) {
    StageRecord r;
    r.name = s.at("name").get<std::string>();
    r.inputs = s.at("inputs").get<std::map<std::string, std::string>>();
    r.outputs = s.at("outputs").get<std::map<std::string, std::string>>();
    r.duration_s = s.value("duration_s", 0.0);
    r.status = s.value("status", std::string("completed"));
    l.stages.push_back(std::move(r));
  }
  return l;
}

inline StageLedger load_ledger(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return {};
  return ledger_from_json(nlohmann::json::parse(io::read_file(path)));
}

inline void save_ledger(const std::filesystem::path& path, const StageLedger& l) {
  io::atomic_write(path, to_json(l).dump(2) + "\n");
}

}  // namespace casc::pipeline
