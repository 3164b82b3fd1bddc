#pragma once

// One full run per parameter value. Each run works in its own directory under
// workdir/sweeps, seeded by hard-linking the previous run's tree, so stages the
// parameter cannot affect are skipped rather than recomputed.

#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "casc/metrics.hpp"
#include "casc/pipeline/pipeline.hpp"

namespace casc::pipeline {

struct SweepRow {
  double value = 0.0;
  metrics::MetricsReport report;
  std::vector<std::string> executed;  // stages that actually ran for this value
};

inline std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

// Mirrors `from` into `to` with hard links; `skip` names top-level entries to leave out.
inline void link_tree(const fs::path& from, const fs::path& to, const std::string& skip = {}) {
  fs::create_directories(to);
  for (auto it = fs::recursive_directory_iterator(from); it != fs::recursive_directory_iterator(); ++it) {
    const auto rel = fs::relative(it->path(), from);
    if (!skip.empty() && *rel.begin() == skip) {
      if (it->is_directory()) it.disable_recursion_pending();
      continue;
    }
    const auto target = to / rel;
    if (it->is_directory()) {
      fs::create_directories(target);
    } else if (it->is_regular_file()) {
      fs::create_hard_link(it->path(), target);
    }
  }
}

inline void set_param(PipelineConfig& c, const std::string& param, double value) {
  if (param == "alpha") {
    c.alpha = value;
  } else if (param == "beta") {
    c.beta = value;
  } else {
    fail(ErrorKind::config, "sweep: unsupported parameter '" + param + "' (alpha or beta)");
  }
}

inline std::string sweep_csv(const std::string& param, const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << param << ",dsc_mean,dsc_std,hd95_mean,hd95_std,n,executed\n";
  os.precision(6);
  for (const auto& r : rows) {
    std::string executed;
    for (const auto& s : r.executed) executed += (executed.empty() ? "" : ";") + s;
    os << format_value(r.value) << ',' << r.report.dsc.mean << ',' << r.report.dsc.std << ',' << r.report.hd95.mean << ','
       << r.report.hd95.std << ',' << r.report.dsc.n << ',' << executed << '\n';
  }
  return os.str();
}

inline nlohmann::json sweep_json(const std::string& param, const std::vector<SweepRow>& rows) {
  nlohmann::json out = {{"param", param}, {"rows", nlohmann::json::array()}};
  for (const auto& r : rows) {
    out["rows"].push_back({{"value", r.value}, {"executed", r.executed}, {"metrics", metrics::to_json(r.report)}});
  }
  return out;
}

inline std::vector<SweepRow> sweep(const PipelineConfig& base, const std::string& param, const std::vector<double>& values,
                                   std::shared_ptr<const backends::Backend> backend = nullptr) {
  if (values.empty()) fail(ErrorKind::config, "sweep: no values given");
  for (double v : values) {
    PipelineConfig c = base;
    set_param(c, param, v);
    c.validate();
  }
  if (!backend) backend = make_backend(base.backend);
  std::vector<SweepRow> rows;
  fs::path previous = base.workdir;
  for (double v : values) {
    PipelineConfig c = base;
    set_param(c, param, v);
    c.workdir = base.workdir / "sweeps" / (param + "-" + format_value(v));
    fs::remove_all(c.workdir);
    link_tree(previous, c.workdir, previous == base.workdir ? "sweeps" : "");
    const auto ledger = run(c, {}, backend);
    SweepRow row{v, {}, {}};
    for (const auto& s : ledger.stages) {
      if (s.status == "completed") row.executed.push_back(s.name);
    }
    if (!fs::exists(c.workdir / "reports/metrics.json")) {
      fail(ErrorKind::config, "sweep needs JSON metrics; set report_format to json or both");
    }
    row.report = metrics::report_from_json(detail::read_json(c.workdir / "reports/metrics.json"));
    rows.push_back(std::move(row));
    previous = c.workdir;
  }
  io::atomic_write(base.workdir / "reports" / ("sweep_" + param + ".csv"), sweep_csv(param, rows));
  io::atomic_write(base.workdir / "reports" / ("sweep_" + param + ".json"), sweep_json(param, rows).dump(2) + "\n");
  return rows;
}

}  // namespace casc::pipeline
