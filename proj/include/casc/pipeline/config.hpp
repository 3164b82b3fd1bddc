#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "casc/backends/analytic.hpp"
#include "casc/core/error.hpp"
#include "casc/core/grid.hpp"
#include "casc/io/tensor_file.hpp"

namespace casc::pipeline {

inline const std::array<std::string, 2> kDefaultTextPrompts = {
    "an image of brain tissue showing typical signal intensity without any regions of abnormal intensity or "
    "suspicious mass",
    "an image of brain tissue showing a tumor with uneven hyperintensity and irregular borders distinct from "
    "surroundings",
};

enum class ReportFormat { json, table, both };

inline ReportFormat report_format_from(const std::string& s) {
  if (s == "json") return ReportFormat::json;
  if (s == "table") return ReportFormat::table;
  if (s == "both") return ReportFormat::both;
  fail(ErrorKind::config, "report format must be json, table or both (got '" + s + "')");
}

inline const char* to_string(ReportFormat f) {
  switch (f) {
    case ReportFormat::json: return "json";
    case ReportFormat::table: return "table";
    case ReportFormat::both: return "both";
  }
  return "both";
}

enum class CamVariant { literal, elementwise };

struct BackendConfig {
  std::string kind = "analytic";     // analytic | external
  std::vector<std::string> command;  // external: argv of the adapter process
  backends::AnalyticOptions analytic;
};

struct PipelineConfig {
  double alpha = 20.0;
  double beta = 20.0;
  int rounds = 2;
  std::array<std::string, 2> text_prompts = kDefaultTextPrompts;
  BackendConfig backend;
  std::filesystem::path workdir = "work";
  std::uint64_t seed = 0;
  std::array<double, 3> split = {0.7, 0.1, 0.2};
  Spacing spacing;
  ReportFormat report_format = ReportFormat::both;
  double roi_threshold = 0.5;
  std::size_t box_padding = 0;
  CamVariant cam_variant = CamVariant::literal;
  int amda_cycles = 1;
  std::optional<double> hd95_penalty;
  int jobs = 1;

  void validate() const {
    auto bad = [](const std::string& m) { fail(ErrorKind::config, m); };
    if (!(alpha >= 0.0 && alpha <= 100.0)) bad("alpha must lie in [0, 100]");
    if (!(beta >= 0.0 && beta < 100.0)) bad("beta must lie in [0, 100)");
    if (rounds < 1) bad("rounds must be >= 1");
    if (amda_cycles < 1) bad("amda_cycles must be >= 1");
    if (jobs < 1) bad("jobs must be >= 1");
    double total = 0.0;
    for (double f : split) {
      if (f < 0.0) bad("split fractions must be non-negative");
      total += f;
    }
    if (std::abs(total - 1.0) > 1e-9) bad("split fractions must sum to 1");
    if (!(spacing.dz > 0 && spacing.dy > 0 && spacing.dx > 0)) bad("spacing components must be positive");
    if (!(roi_threshold >= 0.0 && roi_threshold < 1.0)) bad("roi_threshold must lie in [0, 1)");
    if (backend.kind != "analytic" && backend.kind != "external") bad("backend.kind must be analytic or external");
    if (backend.kind == "external" && backend.command.empty()) bad("external backend needs a command");
    if (hd95_penalty && *hd95_penalty < 0.0) bad("hd95_penalty must be non-negative");
  }
};

inline nlohmann::json to_json(const PipelineConfig& c) {
  nlohmann::json j;
  j["alpha"] = c.alpha;
  j["beta"] = c.beta;
  j["rounds"] = c.rounds;
  j["text_prompts"] = c.text_prompts;
  j["backend"] = {{"kind", c.backend.kind},
                  {"command", c.backend.command},
                  {"tau", c.backend.analytic.tau},
                  {"smoothing_sigma", c.backend.analytic.smoothing_sigma},
                  {"hyper_angle_deg", c.backend.analytic.hyper_angle_deg}};
  j["workdir"] = c.workdir.string();
  j["seed"] = c.seed;
  j["split"] = c.split;
  j["spacing"] = {c.spacing.dz, c.spacing.dy, c.spacing.dx};
  j["report_format"] = to_string(c.report_format);
  j["roi_threshold"] = c.roi_threshold;
  j["box_padding"] = c.box_padding;
  j["cam_variant"] = c.cam_variant == CamVariant::literal ? "literal" : "elementwise";
  j["amda_cycles"] = c.amda_cycles;
  j["hd95_penalty"] = c.hd95_penalty ? nlohmann::json(*c.hd95_penalty) : nlohmann::json(nullptr);
  j["jobs"] = c.jobs;
  return j;
}

// Parses and validates a config. Relative workdirs resolve against `base_dir`.
inline PipelineConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  PipelineConfig c;
  try {
    if (!j.is_object()) fail(ErrorKind::config, "config must be a JSON object");
    c.alpha = j.value("alpha", c.alpha);
    c.beta = j.value("beta", c.beta);
    c.rounds = j.value("rounds", c.rounds);
    if (j.contains("text_prompts")) {
      const auto tp = j["text_prompts"].get<std::vector<std::string>>();
      if (tp.size() != 2) fail(ErrorKind::config, "text_prompts must hold exactly two strings");
      c.text_prompts = {tp[0], tp[1]};
    }
    if (j.contains("backend")) {
      const auto& b = j["backend"];
      c.backend.kind = b.value("kind", c.backend.kind);
      c.backend.command = b.value("command", c.backend.command);
      c.backend.analytic.tau = b.value("tau", c.backend.analytic.tau);
      c.backend.analytic.smoothing_sigma = b.value("smoothing_sigma", c.backend.analytic.smoothing_sigma);
      c.backend.analytic.hyper_angle_deg = b.value("hyper_angle_deg", c.backend.analytic.hyper_angle_deg);
    }
    if (j.contains("workdir")) {
      std::filesystem::path w = j["workdir"].get<std::string>();
      c.workdir = (w.is_relative() && !base_dir.empty()) ? base_dir / w : w;
    }
    c.seed = j.value("seed", c.seed);
    if (j.contains("split")) {
      const auto s = j["split"].get<std::vector<double>>();
      if (s.size() != 3) fail(ErrorKind::config, "split must hold three fractions");
      c.split = {s[0], s[1], s[2]};
    }
    if (j.contains("spacing")) {
      const auto s = j["spacing"].get<std::vector<double>>();
      if (s.size() != 3) fail(ErrorKind::config, "spacing must hold three values");
      c.spacing = {s[0], s[1], s[2]};
    }
    if (j.contains("report_format")) c.report_format = report_format_from(j["report_format"].get<std::string>());
    c.roi_threshold = j.value("roi_threshold", c.roi_threshold);
    c.box_padding = j.value("box_padding", c.box_padding);
    if (j.contains("cam_variant")) {
      const auto v = j["cam_variant"].get<std::string>();
      if (v == "literal") {
        c.cam_variant = CamVariant::literal;
      } else if (v == "elementwise") {
        c.cam_variant = CamVariant::elementwise;
      } else {
        fail(ErrorKind::config, "cam_variant must be literal or elementwise");
      }
    }
    c.amda_cycles = j.value("amda_cycles", c.amda_cycles);
    if (j.contains("hd95_penalty") && !j["hd95_penalty"].is_null()) c.hd95_penalty = j["hd95_penalty"].get<double>();
    c.jobs = j.value("jobs", c.jobs);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, "cannot parse " + path.string() + ": " + e.what());
  } catch (const Error& e) {
    fail(ErrorKind::config, e.what());
  }
  return config_from_json(j, path.parent_path());
}

}  // namespace casc::pipeline
