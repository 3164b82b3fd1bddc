#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "casc/core/error.hpp"
#include "casc/core/percentile.hpp"
#include "casc/metrics.hpp"

namespace casc::s3f {

enum class PoolStage { D1, D2, D3, D4 };

inline const char* to_string(PoolStage s) {
  static constexpr const char* names[] = {"D1", "D2", "D3", "D4"};
  return names[static_cast<int>(s)];
}

inline PoolStage pool_stage_from(const std::string& s) {
  if (s == "D1") return PoolStage::D1;
  if (s == "D2") return PoolStage::D2;
  if (s == "D3") return PoolStage::D3;
  if (s == "D4") return PoolStage::D4;
  fail(ErrorKind::io, "unknown pool stage " + s);
}

struct PoolEntry {
  std::string volume_id;
  std::string pseudo_label;  // path of the pseudo-label tensor, relative to the workdir
  std::optional<double> score;
  bool retained = true;

  friend bool operator==(const PoolEntry&, const PoolEntry&) = default;
};

struct TrainingPool {
  std::vector<PoolEntry> entries;
  PoolStage stage = PoolStage::D3;
  std::optional<double> threshold;  // T_beta once filtered

  std::size_t retained_count() const {
    return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [](const auto& e) { return e.retained; }));
  }
};

// Agreement between a prediction and its re-prompted segmentation.
inline double score(const Mask3D& prediction, const Mask3D& resegmented) { return metrics::dsc(prediction, resegmented); }

// Keeps entries whose score is strictly above the nearest-rank beta-th
// percentile of all scores. beta = 0 and all-tied pools keep everything.
inline TrainingPool filter_pool(const TrainingPool& pool, double beta) {
  if (pool.entries.empty()) fail(ErrorKind::empty_pool, "filter_pool: empty pool");
  if (beta < 0.0 || beta >= 100.0) fail(ErrorKind::contract, "filter_pool: beta outside [0,100)");
  std::vector<double> scores;
  for (const auto& e : pool.entries) {
    if (!e.score) fail(ErrorKind::contract, "filter_pool: entry " + e.volume_id + " is unscored");
    scores.push_back(*e.score);
  }
  TrainingPool out = pool;
  out.stage = PoolStage::D4;
  const double cut = percentile_nearest_rank(scores, beta);
  out.threshold = cut;
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  const bool keep_all = beta == 0.0 || *lo == *hi;
  for (auto& e : out.entries) e.retained = keep_all || *e.score > cut;
  return out;
}

// JSON-lines manifest, one record per entry.
inline std::string to_manifest(const TrainingPool& pool) {
  std::string out;
  for (const auto& e : pool.entries) {
    nlohmann::json j;
    j["volume_id"] = e.volume_id;
    j["F"] = e.score ? nlohmann::json(*e.score) : nlohmann::json(nullptr);
    j["retained"] = e.retained;
    j["stage"] = to_string(pool.stage);
    j["pseudo_label"] = e.pseudo_label;
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline TrainingPool from_manifest(const std::string& text) {
  TrainingPool pool;
  std::size_t start = 0;
  bool first = true;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const auto line = text.substr(start, end - start);
    start = end + 1;
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    PoolEntry e;
    e.volume_id = j.at("volume_id").get<std::string>();
    if (!j.at("F").is_null()) e.score = j["F"].get<double>();
    e.retained = j.at("retained").get<bool>();
    e.pseudo_label = j.value("pseudo_label", std::string{});
    const auto stage = pool_stage_from(j.at("stage").get<std::string>());
    if (first) {
      pool.stage = stage;
      first = false;
    }
    pool.entries.push_back(std::move(e));
  }
  return pool;
}

}  // namespace casc::s3f
