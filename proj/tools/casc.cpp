// casc: command-line front end for the pipeline, evaluator and backend tools.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "casc/casc.hpp"

namespace fs = std::filesystem;
using namespace casc;

namespace {

std::vector<double> parse_values(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      fail(ErrorKind::config, "not a number: '" + item + "'");
    }
  }
  return out;
}

void print_ledger(const pipeline::StageLedger& ledger) {
  for (const auto& s : ledger.stages) {
    std::printf("%-8s %-9s %8.2fs\n", s.name.c_str(), s.status.c_str(), s.duration_s);
  }
}

metrics::LabeledMask load_mask(const fs::path& path) {
  const auto t = io::load_tensor(path);
  return {path.stem().string(), io::to_mask3d(t), io::spacing_of(t)};
}

std::vector<metrics::LabeledMask> load_masks(const fs::path& dir) {
  if (!fs::is_directory(dir)) fail(ErrorKind::dependency, "not a directory: " + dir.string());
  std::vector<metrics::LabeledMask> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".tnsr") out.push_back(load_mask(e.path()));
  }
  return out;
}

// Ground truth for exactly the predicted ids; the gt directory may hold more volumes.
std::vector<metrics::LabeledMask> load_matching(const fs::path& dir, const std::vector<metrics::LabeledMask>& preds) {
  if (!fs::is_directory(dir)) fail(ErrorKind::dependency, "not a directory: " + dir.string());
  std::vector<metrics::LabeledMask> out;
  for (const auto& p : preds) {
    const auto path = dir / (p.id + ".tnsr");
    if (!fs::exists(path)) fail(ErrorKind::dependency, "no ground truth for " + p.id + " in " + dir.string());
    out.push_back(load_mask(path));
  }
  return out;
}

std::unique_ptr<backends::Transport> transport_for(const std::vector<std::string>& command) {
  if (command.empty()) return std::make_unique<backends::LoopbackTransport>(std::make_shared<backends::AnalyticBackend>());
  return std::make_unique<backends::ProcessTransport>(command);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"casc: weakly supervised volume segmentation pipeline"};
  app.require_subcommand(1);

  std::string config_path, stage_list = "all";
  bool force = false;
  int jobs = 0;
  auto* run = app.add_subcommand("run", "run (or resume) the pipeline");
  run->add_option("--config", config_path, "config JSON")->required();
  run->add_option("--stage", stage_list, "comma-separated stages, or all");
  run->add_flag("--force", force, "rerun selected stages even when up to date");
  run->add_option("--jobs", jobs, "worker threads (overrides config)");

  std::string param, values_csv;
  auto* sweep = app.add_subcommand("sweep", "run once per value of alpha or beta");
  sweep->add_option("--config", config_path, "config JSON")->required();
  sweep->add_option("--param", param, "alpha or beta")->required();
  sweep->add_option("--values", values_csv, "comma-separated values")->required();
  sweep->add_option("--jobs", jobs, "worker threads (overrides config)");

  std::string pred_dir, gt_dir, out_dir, format = "both";
  double penalty = -1.0;
  auto* eval = app.add_subcommand("eval", "score predicted masks against ground truth");
  eval->add_option("--pred", pred_dir, "directory of predicted mask tensors")->required();
  eval->add_option("--gt", gt_dir, "directory of ground-truth mask tensors")->required();
  eval->add_option("--report-format", format, "json, table or both");
  eval->add_option("--out", out_dir, "write metrics.json / metrics.txt here instead of stdout");
  eval->add_option("--hd95-penalty", penalty, "HD95 when exactly one mask is empty (default: volume diagonal)");

  std::string transcript_path;
  bool record = false;
  std::vector<std::string> command;
  auto* check = app.add_subcommand("backend-check", "replay (or record) a conformance transcript");
  check->add_option("--transcript", transcript_path, "transcript file")->required();
  check->add_flag("--record", record, "record a fresh transcript instead of replaying");
  check->add_option("--command", command, "adapter command line; default is the in-process analytic backend")
      ->expected(-1);

  auto* serve = app.add_subcommand("serve", "serve the analytic backend over stdin/stdout frames");
  double tau = 0.5;
  serve->add_option("--tau", tau, "region-growing tolerance");

  fs::path synth_out;
  pipeline::synthetic::CorpusOptions synth_opt;
  auto* synth = app.add_subcommand("synth", "write a synthetic corpus (input/ and gt/)");
  synth->add_option("--out", synth_out, "workdir to populate")->required();
  synth->add_option("--count", synth_opt.count, "number of volumes");
  synth->add_option("--size", synth_opt.size, "edge length in voxels");
  synth->add_option("--seed", synth_opt.seed, "corpus seed");
  synth->add_option("--noise", synth_opt.noise_sd, "noise standard deviation");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*run) {
      auto cfg = pipeline::load_config(config_path);
      if (jobs > 0) cfg.jobs = jobs;
      const auto ledger = pipeline::run(cfg, {pipeline::parse_stage_list(stage_list), force});
      print_ledger(ledger);
      const auto metrics_path = cfg.workdir / "reports/metrics.txt";
      if (ledger.find("eval") && fs::exists(metrics_path)) std::cout << io::read_file(metrics_path);
    } else if (*sweep) {
      auto cfg = pipeline::load_config(config_path);
      if (jobs > 0) cfg.jobs = jobs;
      const auto rows = pipeline::sweep(cfg, param, parse_values(values_csv));
      std::cout << pipeline::sweep_csv(param, rows);
    } else if (*eval) {
      const auto fmt = pipeline::report_format_from(format);
      const auto preds = load_masks(pred_dir);
      if (preds.empty()) fail(ErrorKind::dependency, "no .tnsr predictions in " + pred_dir);
      const auto report = metrics::evaluate(preds, load_matching(gt_dir, preds),
                                            penalty >= 0.0 ? std::optional<double>(penalty) : std::nullopt);
      const std::string json = metrics::to_json(report).dump(2) + "\n";
      const std::string table = metrics::to_table(report);
      if (out_dir.empty()) {
        if (fmt != pipeline::ReportFormat::table) std::cout << json;
        if (fmt != pipeline::ReportFormat::json) std::cout << table;
      } else {
        if (fmt != pipeline::ReportFormat::table) io::atomic_write(fs::path(out_dir) / "metrics.json", json);
        if (fmt != pipeline::ReportFormat::json) io::atomic_write(fs::path(out_dir) / "metrics.txt", table);
      }
    } else if (*check) {
      auto transport = transport_for(command);
      if (record) {
        const auto exchanges = backends::transcript::record(*transport, backends::transcript::conformance_requests());
        io::atomic_write(transcript_path, backends::transcript::serialize(exchanges));
        std::printf("recorded %zu exchanges to %s\n", exchanges.size(), transcript_path.c_str());
        return 0;
      }
      const auto exchanges = backends::transcript::parse(io::read_file(transcript_path));
      const auto results = backends::transcript::replay(*transport, exchanges);
      std::size_t mismatches = 0;
      for (const auto& r : results) {
        std::printf("%-4zu %-20s %s\n", r.index, r.op.c_str(), r.identical ? "ok" : "MISMATCH");
        mismatches += !r.identical;
      }
      std::printf("%zu/%zu exchanges identical\n", results.size() - mismatches, results.size());
      return mismatches == 0 ? 0 : 4;
    } else if (*serve) {
      backends::AnalyticOptions opt;
      opt.tau = tau;
      const backends::AnalyticBackend backend(opt);
      std::ios::sync_with_stdio(false);
      backends::protocol::serve(backend, std::cin, std::cout);
    } else if (*synth) {
      const auto ids = pipeline::synthetic::write_corpus(synth_out, synth_opt);
      std::printf("wrote %zu volumes to %s\n", ids.size(), synth_out.c_str());
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "casc: %s: %s\n", to_string(e.kind()), e.what());
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "casc: %s\n", e.what());
    return 1;
  }
  return 0;
}
