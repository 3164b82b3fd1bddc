#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <random>
#include <set>

#include "support.hpp"

using namespace casc;
using namespace casc::pipeline;
namespace fs = std::filesystem;
namespace t = casc::testkit;

namespace {

PipelineConfig small_corpus(const std::string& name, std::size_t count = 12) {
  const auto dir = t::scratch_dir("pipe-" + name);
  synthetic::CorpusOptions opt;
  opt.count = count;
  opt.size = 32;
  opt.min_tumor_axis = 3;
  opt.max_tumor_axis = 5;
  synthetic::write_corpus(dir, opt);
  PipelineConfig c;
  c.workdir = dir;
  c.seed = 5;
  return c;
}

std::map<std::string, std::string> stage_outputs(const StageLedger& l) {
  std::map<std::string, std::string> out;
  for (const auto& s : l.stages)
    for (const auto& [k, v] : s.outputs) out[s.name + ":" + k] = v;
  return out;
}

std::vector<std::string> with_status(const StageLedger& l, const std::string& status) {
  std::vector<std::string> out;
  for (const auto& s : l.stages)
    if (s.status == status) out.push_back(s.name);
  return out;
}

int run_cli(const std::string& args) {
  const int rc = std::system((std::string(CASC_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(Config, DefaultsAndValidation) {
  PipelineConfig c;
  EXPECT_EQ(c.alpha, 20.0);
  EXPECT_EQ(c.beta, 20.0);
  EXPECT_EQ(c.rounds, 2);
  EXPECT_NO_THROW(c.validate());
  auto bad = [](auto mutate) {
    PipelineConfig c;
    mutate(c);
    try {
      c.validate();
      return false;
    } catch (const Error& e) {
      return e.kind() == ErrorKind::config;
    }
  };
  EXPECT_TRUE(bad([](PipelineConfig& c) { c.alpha = 101; }));
  EXPECT_TRUE(bad([](PipelineConfig& c) { c.beta = 100; }));
  EXPECT_TRUE(bad([](PipelineConfig& c) { c.rounds = 0; }));
  EXPECT_TRUE(bad([](PipelineConfig& c) { c.split = {0.7, 0.2, 0.2}; }));
  EXPECT_TRUE(bad([](PipelineConfig& c) { c.backend.kind = "external"; }));
}

TEST(Config, JsonRoundTripAndRelativeWorkdir) {
  const auto j = nlohmann::json::parse(R"({"alpha": 30, "beta": 10, "workdir": "runs/a", "split": [0.6, 0.2, 0.2],
                                          "spacing": [2, 1, 1], "cam_variant": "elementwise", "hd95_penalty": 50})");
  const auto c = config_from_json(j, "/base");
  EXPECT_EQ(c.alpha, 30.0);
  EXPECT_EQ(c.workdir, fs::path("/base/runs/a"));
  EXPECT_EQ(c.spacing, (Spacing{2, 1, 1}));
  EXPECT_EQ(c.cam_variant, CamVariant::elementwise);
  EXPECT_EQ(c.hd95_penalty, 50.0);
  EXPECT_EQ(to_json(config_from_json(to_json(c))), to_json(c));

  try {
    config_from_json(nlohmann::json::parse(R"({"alpha": "lots"})"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
  }
  try {
    load_config("/nonexistent/config.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
  }
}

TEST(Split, Sizes) {
  EXPECT_EQ(split_sizes(10, {0.7, 0.1, 0.2}), (std::array<std::size_t, 3>{7, 1, 2}));
  EXPECT_EQ(split_sizes(369, {0.7, 0.1, 0.2}), (std::array<std::size_t, 3>{258, 37, 74}));
}

TEST(Split, DeterministicDisjointCovering) {
  std::vector<std::string> ids;
  for (int i = 0; i < 369; ++i) ids.push_back("id" + std::to_string(i));
  const auto a = split_dataset(ids, {0.7, 0.1, 0.2}, 3), b = split_dataset(ids, {0.7, 0.1, 0.2}, 3);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  EXPECT_NE(split_dataset(ids, {0.7, 0.1, 0.2}, 4).train, a.train);
  EXPECT_EQ(a.train.size(), 258u);
  EXPECT_EQ(a.val.size(), 37u);
  EXPECT_EQ(a.test.size(), 74u);
  std::set<std::string> all(a.train.begin(), a.train.end());
  all.insert(a.val.begin(), a.val.end());
  all.insert(a.test.begin(), a.test.end());
  EXPECT_EQ(all.size(), 369u);
  // input order does not matter
  auto shuffled = ids;
  std::shuffle(shuffled.begin(), shuffled.end(), std::mt19937_64(1));
  EXPECT_EQ(split_dataset(shuffled, {0.7, 0.1, 0.2}, 3).train, a.train);
}

TEST(Split, TooFewVolumes) {
  try {
    split_dataset({"a", "b"}, {0.7, 0.1, 0.2}, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
  }
}

TEST(Digest, KnownVectorAndTrees) {
  EXPECT_EQ(sha256("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  const auto dir = t::scratch_dir("digest");
  EXPECT_EQ(digest_path(dir / "missing"), "");
  io::atomic_write(dir / "t/a.bin", "1");
  io::atomic_write(dir / "t/sub/b.bin", "2");
  const auto d1 = digest_path(dir / "t");
  io::atomic_write(dir / "t/c.tmp", "partial");
  EXPECT_EQ(digest_path(dir / "t"), d1);
  io::atomic_write(dir / "t/sub/b.bin", "3");
  EXPECT_NE(digest_path(dir / "t"), d1);
}

TEST(Ledger, JsonRoundTripAndEquivalence) {
  StageLedger l;
  l.upsert({"label", {{"config", "abc"}}, {{"labels", "def"}}, 1.5, "completed"});
  l.upsert({"cam", {{"x", "1"}}, {{"y", "2"}}, 0.5, "completed"});
  const auto back = ledger_from_json(to_json(l));
  EXPECT_TRUE(equivalent(back, l));
  auto other = l;
  other.stages[0].duration_s = 99;
  EXPECT_TRUE(equivalent(other, l));
  other.stages[1].outputs["y"] = "3";
  EXPECT_FALSE(equivalent(other, l));
  l.upsert({"label", {}, {}, 0, "completed"});
  EXPECT_EQ(l.stages.size(), 2u);
}

TEST(Pipeline, StageListParsing) {
  EXPECT_EQ(parse_stage_list("all").size(), 9u);
  EXPECT_EQ(parse_stage_list("eval,label"), (std::vector<Stage>{Stage::label, Stage::eval}));
  EXPECT_THROW(parse_stage_list("label,nope"), Error);
}

TEST(Pipeline, FullRunThenIdempotentRerun) {
  const auto cfg = small_corpus("full");
  const auto first = run(cfg);
  EXPECT_EQ(with_status(first, "completed").size(), 9u);
  for (const auto* rel : {"labels/split.json", "cams/q0", "cams/q1", "amda", "pseudo/sam", "pseudo/round1",
                          "pseudo/reseg", "models/pool.jsonl", "models/self_training/final.json",
                          "reports/metrics.json", "reports/metrics.txt"}) {
    EXPECT_TRUE(fs::exists(cfg.workdir / rel)) << rel;
  }
  const auto second = run(cfg);
  EXPECT_EQ(with_status(second, "skipped").size(), 9u);
  EXPECT_TRUE(equivalent(load_ledger(cfg.workdir / "ledger.json"), [&] {
    StageLedger l = first;
    return l;
  }()));
  const auto report = metrics::report_from_json(nlohmann::json::parse(io::read_file(cfg.workdir / "reports/metrics.json")));
  EXPECT_GT(report.dsc.mean, 0.8);

  const auto forced = run(cfg, {{Stage::s3f}, true});
  EXPECT_EQ(with_status(forced, "completed"), std::vector<std::string>{"s3f"});
}

TEST(Pipeline, TestSplitNotReadBeforeEval) {
  const auto cfg = small_corpus("leak");
  const auto ledger = run(cfg);
  const auto split = pipeline::detail::split_from_json(pipeline::detail::read_json(cfg.workdir / "labels/split.json"));
  ASSERT_FALSE(split.test.empty());
  for (const auto& s : ledger.stages) {
    for (const auto& id : split.test) {
      const bool mentioned = s.inputs.count("input/" + id + ".tnsr") || s.inputs.count("gt/" + id + ".tnsr");
      EXPECT_EQ(mentioned, s.name == "eval") << s.name << " " << id;
    }
  }
  // nothing derived from a test volume exists outside reports/
  for (const auto& e : fs::recursive_directory_iterator(cfg.workdir)) {
    const auto rel = fs::relative(e.path(), cfg.workdir).generic_string();
    if (rel.starts_with("input/") || rel.starts_with("gt/") || rel.starts_with("reports/")) continue;
    for (const auto& id : split.test) EXPECT_EQ(e.path().filename().string().find(id), std::string::npos) << rel;
  }
}

TEST(Pipeline, MissingUpstreamIsDependencyError) {
  const auto cfg = small_corpus("dep");
  try {
    run(cfg, {{Stage::eval}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::dependency);
    EXPECT_NE(std::string(e.what()).find("'label'"), std::string::npos) << e.what();
  }
  run(cfg, {{Stage::label, Stage::cam}});
  try {
    run(cfg, {{Stage::sam}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::dependency);
    EXPECT_NE(std::string(e.what()).find("'amda'"), std::string::npos) << e.what();
  }
  PipelineConfig empty;
  empty.workdir = t::scratch_dir("pipe-empty");
  try {
    run(empty);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::dependency);
  }
}

TEST(Pipeline, ConfigChangeRerunsOnlyAffectedSuffix) {
  auto cfg = small_corpus("suffix");
  run(cfg);
  cfg.beta = 40;
  EXPECT_EQ(with_status(run(cfg), "completed"), (std::vector<std::string>{"s3f", "round2", "eval"}));
  cfg.report_format = ReportFormat::json;
  EXPECT_EQ(with_status(run(cfg), "completed"), std::vector<std::string>{"eval"});
  cfg.alpha = 30;
  const auto after_alpha = with_status(run(cfg), "completed");
  EXPECT_EQ(after_alpha.front(), "amda");
  EXPECT_EQ(std::find(after_alpha.begin(), after_alpha.end(), "label"), after_alpha.end());
}

TEST(Pipeline, DeterministicAcrossRunsAndJobCounts) {
  auto a = small_corpus("det-a"), b = small_corpus("det-b");
  b.jobs = 4;
  const auto la = run(a), lb = run(b);
  EXPECT_EQ(stage_outputs(la), stage_outputs(lb));
  for (const auto* rel : {"labels", "cams", "amda", "pseudo", "models", "reports"}) {
    EXPECT_EQ(digest_path(a.workdir / rel), digest_path(b.workdir / rel)) << rel;
  }
}

TEST(Pipeline, ResumeAfterInterruptionMatchesUninterrupted) {
  const auto reference = small_corpus("resume-ref");
  run(reference);
  const auto ref_ledger = load_ledger(reference.workdir / "ledger.json");

  for (std::size_t stop = 0; stop + 1 < kAllStages.size(); ++stop) {
    const auto cfg = small_corpus("resume-" + std::to_string(stop));
    std::vector<Stage> prefix(kAllStages.begin(), kAllStages.begin() + static_cast<long>(stop) + 1);
    run(cfg, {prefix});
    // a crash inside the next stage leaves partial output behind
    const auto next = kAllStages[stop + 1];
    io::atomic_write(cfg.workdir / spec(next).outputs.front() / "partial.tnsr", "junk");
    io::atomic_write(cfg.workdir / (spec(next).outputs.front() + ".tmp"), "junk");
    run(cfg);
    EXPECT_TRUE(equivalent(load_ledger(cfg.workdir / "ledger.json"), ref_ledger)) << "stopped after " << stop;
  }
}

TEST(Pipeline, DeletedOutputsAreRebuilt) {
  const auto cfg = small_corpus("rebuild");
  const auto first = run(cfg);
  fs::remove_all(cfg.workdir / "pseudo/reseg");
  const auto again = run(cfg);
  EXPECT_EQ(with_status(again, "completed"), std::vector<std::string>{"reseg"});
  EXPECT_TRUE(equivalent(load_ledger(cfg.workdir / "ledger.json"), [&] {
    auto l = first;
    return l;
  }()));
}

TEST(Pipeline, ExternalBackendProducesIdenticalArtifacts) {
  auto analytic = small_corpus("ext-a"), external = small_corpus("ext-b");
  external.backend.kind = "external";
  external.backend.command = {CASC_CLI, "serve"};
  const auto la = run(analytic), lb = run(external);
  EXPECT_EQ(stage_outputs(la), stage_outputs(lb));
}

TEST(Pipeline, VariantsAndBoundaries) {
  auto cfg = small_corpus("variants");
  cfg.alpha = 0;
  EXPECT_EQ(with_status(run(cfg), "completed").size(), 9u);
  cfg.rounds = 3;
  cfg.amda_cycles = 2;
  cfg.cam_variant = CamVariant::elementwise;
  EXPECT_NO_THROW(run(cfg));
  EXPECT_TRUE(fs::exists(cfg.workdir / "models/self_training/round3.json"));
  const auto sel = pipeline::detail::read_json(cfg.workdir / "models/self_training/selection.json");
  EXPECT_EQ(sel["candidates"].size(), 3u);
  cfg.rounds = 1;
  EXPECT_NO_THROW(run(cfg));
  EXPECT_EQ(pipeline::detail::read_json(cfg.workdir / "models/self_training/selection.json")["selected_round"], 1);
}

TEST(Sweep, BetaReusesPrefix) {
  const auto cfg = small_corpus("sweep");
  const auto rows = sweep(cfg, "beta", {0, 10, 20, 30, 40});
  ASSERT_EQ(rows.size(), 5u);
  std::map<std::string, int> executions;
  for (const auto& r : rows)
    for (const auto& s : r.executed) executions[s]++;
  for (const auto* prefix : {"label", "cam", "amda", "sam", "round1", "reseg"}) EXPECT_EQ(executions[prefix], 1) << prefix;
  EXPECT_EQ(executions["eval"], 5);
  const auto csv = io::read_file(cfg.workdir / "reports/sweep_beta.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
  EXPECT_TRUE(fs::exists(cfg.workdir / "reports/sweep_beta.json"));
}

TEST(Sweep, SingleValueEqualsRun) {
  auto cfg = small_corpus("sweep-one");
  const auto rows = sweep(cfg, "alpha", {20});
  ASSERT_EQ(rows.size(), 1u);
  const auto direct = small_corpus("sweep-one-direct");
  run(direct);
  const auto report = metrics::report_from_json(pipeline::detail::read_json(direct.workdir / "reports/metrics.json"));
  EXPECT_EQ(metrics::to_json(rows[0].report), metrics::to_json(report));
  EXPECT_THROW(sweep(cfg, "gamma", {1}), Error);
  EXPECT_THROW(sweep(cfg, "alpha", {150}), Error);
}

TEST(Cli, ExitCodes) {
  const auto dir = t::scratch_dir("cli");
  EXPECT_EQ(run_cli("run --config " + (dir / "missing.json").string()), 2);
  io::atomic_write(dir / "bad.json", R"({"alpha": 500})");
  EXPECT_EQ(run_cli("run --config " + (dir / "bad.json").string()), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);

  ASSERT_EQ(run_cli("synth --out " + (dir / "work").string() + " --count 10 --size 24"), 0);
  io::atomic_write(dir / "ok.json", R"({"workdir": "work", "seed": 1})");
  EXPECT_EQ(run_cli("run --config " + (dir / "ok.json").string() + " --stage eval"), 3);
  io::atomic_write(dir / "ext.json", R"({"workdir": "work", "backend": {"kind": "external", "command": ["/nonexistent/adapter"]}})");
  EXPECT_EQ(run_cli("run --config " + (dir / "ext.json").string()), 4);
  EXPECT_EQ(run_cli("run --config " + (dir / "ok.json").string()), 0);
  EXPECT_EQ(run_cli("eval --pred " + (dir / "work/reports/pred").string() + " --gt " + (dir / "work/gt").string()), 0);
  EXPECT_EQ(run_cli("eval --pred " + (dir / "work/gt").string() + " --gt " + (dir / "work/reports/pred").string()), 3);
  EXPECT_EQ(run_cli("sweep --config " + (dir / "ok.json").string() + " --param beta --values 10,x"), 2);
}

TEST(Cli, EvalCommandWritesReports) {
  const auto dir = t::scratch_dir("cli-eval");
  std::mt19937_64 g(83);
  for (int i = 0; i < 4; ++i) {
    const auto m = t::random_blobs3(g, 6, 6, 6, 1);
    io::save_tensor(dir / "gt" / ("v" + std::to_string(i) + ".tnsr"), io::to_tensor(m, "v" + std::to_string(i), Spacing{}));
    io::save_tensor(dir / "pred" / ("v" + std::to_string(i) + ".tnsr"), io::to_tensor(m, "v" + std::to_string(i), Spacing{}));
  }
  ASSERT_EQ(run_cli("eval --pred " + (dir / "pred").string() + " --gt " + (dir / "gt").string() + " --out " +
                    (dir / "out").string()),
            0);
  const auto j = pipeline::detail::read_json(dir / "out/metrics.json");
  EXPECT_EQ(j["aggregate"]["dsc"]["mean"], 1.0);
  EXPECT_TRUE(fs::exists(dir / "out/metrics.txt"));
}
