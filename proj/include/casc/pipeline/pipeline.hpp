#pragma once

// Stage orchestration for the full cascade:
//   label -> cam -> amda -> sam -> round1 -> reseg -> s3f -> round2 -> eval
// Every stage persists its outputs under the workdir before the next starts
// and is skipped when its input digests and output files are unchanged.

#include <algorithm>
#include <array>
#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "casc/backends/analytic.hpp"
#include "casc/backends/external.hpp"
#include "casc/core/parallel.hpp"
#include "casc/core/rng.hpp"
#include "casc/io/tensor_file.hpp"
#include "casc/labeling.hpp"
#include "casc/metrics.hpp"
#include "casc/pipeline/config.hpp"
#include "casc/pipeline/digest.hpp"
#include "casc/pipeline/ledger.hpp"
#include "casc/pipeline/split.hpp"
#include "casc/prompting.hpp"
#include "casc/pseudo_label.hpp"
#include "casc/s3f.hpp"
#include "casc/volume.hpp"

namespace casc::pipeline {

namespace fs = std::filesystem;

enum class Stage { label, cam, amda, sam, round1, reseg, s3f, round2, eval };

inline constexpr std::array<Stage, 9> kAllStages = {Stage::label,  Stage::cam,   Stage::amda,
                                                    Stage::sam,    Stage::round1, Stage::reseg,
                                                    Stage::s3f,    Stage::round2, Stage::eval};

inline const char* to_string(Stage s) {
  static constexpr const char* names[] = {"label", "cam", "amda", "sam", "round1", "reseg", "s3f", "round2", "eval"};
  return names[static_cast<int>(s)];
}

inline Stage stage_from(const std::string& name) {
  for (auto s : kAllStages) {
    if (name == to_string(s)) return s;
  }
  fail(ErrorKind::config, "unknown stage '" + name + "'");
}

// "all" or a comma-separated list of stage names.
inline std::vector<Stage> parse_stage_list(const std::string& csv) {
  if (csv.empty() || csv == "all") return {kAllStages.begin(), kAllStages.end()};
  std::set<Stage> picked;
  std::size_t start = 0;
  while (start <= csv.size()) {
    auto end = csv.find(',', start);
    if (end == std::string::npos) end = csv.size();
    const auto name = csv.substr(start, end - start);
    if (!name.empty()) picked.insert(stage_from(name));
    start = end + 1;
  }
  return {picked.begin(), picked.end()};
}

struct StageSpec {
  std::vector<Stage> deps;
  std::vector<std::string> outputs;  // workdir-relative files or directories owned by the stage
};

inline const StageSpec& spec(Stage s) {
  static const std::map<Stage, StageSpec> specs = {
      {Stage::label, {{}, {"labels"}}},
      {Stage::cam, {{Stage::label}, {"cams/q0", "models/classifier_q0.json"}}},
      {Stage::amda, {{Stage::label, Stage::cam}, {"amda", "cams/q1", "models/classifier_q1.json"}}},
      {Stage::sam, {{Stage::label, Stage::amda}, {"pseudo/sam"}}},
      {Stage::round1, {{Stage::label, Stage::sam}, {"models/round1.json", "pseudo/round1"}}},
      {Stage::reseg, {{Stage::label, Stage::round1}, {"pseudo/reseg"}}},
      {Stage::s3f, {{Stage::round1, Stage::reseg}, {"models/pool.jsonl"}}},
      {Stage::round2, {{Stage::label, Stage::sam, Stage::round1, Stage::s3f}, {"models/self_training"}}},
      {Stage::eval, {{Stage::label, Stage::round2}, {"reports/metrics.json", "reports/metrics.txt", "reports/pred"}}},
  };
  return specs.at(s);
}

// Config fields that can change a stage's outputs.
inline nlohmann::json config_subset(const PipelineConfig& c, Stage s) {
  const auto full = to_json(c);
  nlohmann::json j;
  j["backend"] = full["backend"];
  switch (s) {
    case Stage::label:
      j["text_prompts"] = full["text_prompts"];
      j["split"] = full["split"];
      j["seed"] = full["seed"];
      j["spacing"] = full["spacing"];
      break;
    case Stage::cam:
      j["seed"] = full["seed"];
      j["cam_variant"] = full["cam_variant"];
      break;
    case Stage::amda:
      j["seed"] = full["seed"];
      j["alpha"] = full["alpha"];
      j["amda_cycles"] = full["amda_cycles"];
      j["cam_variant"] = full["cam_variant"];
      break;
    case Stage::sam:
      j["roi_threshold"] = full["roi_threshold"];
      j["box_padding"] = full["box_padding"];
      break;
    case Stage::round1: j["seed"] = full["seed"]; break;
    case Stage::reseg: j["box_padding"] = full["box_padding"]; break;
    case Stage::s3f: j["beta"] = full["beta"]; break;
    case Stage::round2:
      j["seed"] = full["seed"];
      j["beta"] = full["beta"];
      j["rounds"] = full["rounds"];
      j["box_padding"] = full["box_padding"];
      break;
    case Stage::eval:
      j["spacing"] = full["spacing"];
      j["hd95_penalty"] = full["hd95_penalty"];
      j["report_format"] = full["report_format"];
      break;
  }
  return j;
}

inline std::shared_ptr<const backends::Backend> make_backend(const BackendConfig& cfg) {
  if (cfg.kind == "analytic") return std::make_shared<backends::AnalyticBackend>(cfg.analytic);
  if (cfg.kind == "external") {
    return std::make_shared<backends::ExternalBackend>(std::make_unique<backends::ProcessTransport>(cfg.command));
  }
  fail(ErrorKind::config, "unknown backend kind " + cfg.kind);
}

// Volume ids present in workdir/input, sorted.
inline std::vector<std::string> input_ids(const fs::path& workdir) {
  const auto dir = workdir / "input";
  if (!fs::is_directory(dir)) fail(ErrorKind::dependency, "no input volumes: " + dir.string() + " is missing");
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".tnsr") ids.push_back(e.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) fail(ErrorKind::dependency, "no input volumes in " + dir.string());
  return ids;
}

namespace detail {

inline std::string tensor_name(const std::string& id) { return id + ".tnsr"; }

inline nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(io::read_file(p)); }

inline void write_json(const fs::path& p, const nlohmann::json& j) { io::atomic_write(p, j.dump(2) + "\n"); }

inline nlohmann::json split_to_json(const DatasetSplit& s) {
  return {{"train", s.train}, {"val", s.val}, {"test", s.test}};
}

inline DatasetSplit split_from_json(const nlohmann::json& j) {
  return {j.at("train").get<std::vector<std::string>>(), j.at("val").get<std::vector<std::string>>(),
          j.at("test").get<std::vector<std::string>>()};
}

template <typename T>
std::vector<T> concat(const std::vector<T>& a, const std::vector<T>& b) {
  std::vector<T> out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

}  // namespace detail

// Everything a stage needs; paths are resolved against the workdir.
class Workspace {
 public:
  Workspace(const PipelineConfig& cfg, const backends::Backend& backend) : cfg_(cfg), backend_(backend) {}

  const PipelineConfig& config() const { return cfg_; }
  const backends::Backend& backend() const { return backend_; }
  fs::path path(const std::string& rel) const { return cfg_.workdir / rel; }

  Volume load_input(const std::string& id) const {
    return io::to_volume(io::load_tensor(path("input/" + detail::tensor_name(id))), id, cfg_.spacing);
  }
  Volume load_normalized(const std::string& id) const {
    return io::to_volume(io::load_tensor(path("labels/norm/" + detail::tensor_name(id))), id, cfg_.spacing);
  }
  Mask3D load_brain(const std::string& id) const {
    return io::to_mask3d(io::load_tensor(path("labels/brain/" + detail::tensor_name(id))));
  }
  std::vector<int> load_slice_labels(const std::string& id) const {
    return detail::read_json(path("labels/" + id + ".json")).at("labels").get<std::vector<int>>();
  }
  Mask3D load_mask(const std::string& rel_dir, const std::string& id) const {
    return io::to_mask3d(io::load_tensor(path(rel_dir + "/" + detail::tensor_name(id))));
  }
  Grid3<float> load_cam_volume(const std::string& rel_dir, const std::string& id) const {
    return io::to_grid3f(io::load_tensor(path(rel_dir + "/" + detail::tensor_name(id))));
  }
  backends::ModelState load_state(const std::string& rel) const { return detail::read_json(path(rel)); }

  const DatasetSplit& split() const {
    if (!split_) split_ = detail::split_from_json(detail::read_json(path("labels/split.json")));
    return *split_;
  }
  void set_split(DatasetSplit s) const { split_ = std::move(s); }

  std::uint64_t seed_for(std::string_view key, std::uint64_t index = 0) const { return mix_seed(cfg_.seed, key, index); }

 private:
  const PipelineConfig& cfg_;
  const backends::Backend& backend_;
  mutable std::optional<DatasetSplit> split_;
};

// Fused CAM of one slice from the classifier's per-layer gradients.
inline CamMap compute_cam(const backends::Backend& backend, const backends::ModelState& classifier, const Image2D& slice,
                          CamVariant variant) {
  const auto out = backend.classify_with_maps(classifier, slice);
  std::vector<CamMap> layers;
  for (const auto& l : out.layers) {
    if (variant == CamVariant::literal) {
      layers.push_back(layer_cam(l.gradients, l.layer_id));
    } else {
      if (l.activations.size() != l.gradients.size())
        fail(ErrorKind::contract, "elementwise CAM needs activations for layer " + l.layer_id);
      layers.push_back(layer_cam_elementwise(l.gradients, l.activations, l.layer_id));
    }
  }
  return fuse_and_upsample(layers, slice.rows(), slice.cols());
}

inline CamMap cam_plane(const Grid3<float>& cams, std::size_t d) {
  CamMap cam{Grid2<double>(cams.rows(), cams.cols(), 0.0), {}};
  const auto p = cams.plane(d);
  for (std::size_t i = 0; i < p.size(); ++i) cam.values[i] = p[i];
  return cam;
}

namespace stages {

inline void run_label(const Workspace& ws) {
  const auto& cfg = ws.config();
  const auto& backend = ws.backend();
  require(backend.describe(), backends::Capability::embed_text);
  require(backend.describe(), backends::Capability::embed_image);
  const auto split = split_dataset(input_ids(cfg.workdir), cfg.split, cfg.seed);
  ws.set_split(split);
  const std::vector<std::vector<double>> text = {backend.embed_text(cfg.text_prompts[0]),
                                                 backend.embed_text(cfg.text_prompts[1])};
  const auto ids = detail::concat(split.train, split.val);
  parallel_for(ids.size(), cfg.jobs, [&](std::size_t i) {
    const auto& id = ids[i];
    const Volume raw = ws.load_input(id);
    const Volume norm = normalize_brain(raw);
    io::save_tensor(ws.path("labels/norm/" + detail::tensor_name(id)), io::to_tensor(norm));
    io::save_tensor(ws.path("labels/brain/" + detail::tensor_name(id)), io::to_tensor(brain_mask(raw), id, raw.spacing));
    std::vector<int> labels;
    nlohmann::json probs = nlohmann::json::array();
    for (const auto& slice : extract_slices(norm)) {
      const auto p = clip_probabilities(backend.embed_image(slice), text);
      labels.push_back(assign_label(p));
      probs.push_back(p.probs);
    }
    detail::write_json(ws.path("labels/" + id + ".json"), {{"volume_id", id}, {"labels", labels}, {"probs", probs}});
  });
  detail::write_json(ws.path("labels/split.json"), detail::split_to_json(split));
}

// CAMs for every positive slice of `ids`, zero planes elsewhere.
inline void write_cams(const Workspace& ws, const backends::ModelState& classifier, const std::vector<std::string>& ids,
                       const std::string& out_dir) {
  const auto& cfg = ws.config();
  parallel_for(ids.size(), cfg.jobs, [&](std::size_t i) {
    const auto& id = ids[i];
    const Volume norm = ws.load_normalized(id);
    const auto labels = ws.load_slice_labels(id);
    Grid3<float> cams(norm.voxels.depth(), norm.voxels.rows(), norm.voxels.cols(), 0.0f);
    for (std::size_t d = 0; d < labels.size(); ++d) {
      if (labels[d] != 1) continue;
      const auto cam = compute_cam(ws.backend(), classifier, norm.voxels.slice(d), cfg.cam_variant);
      auto plane = cams.plane(d);
      for (std::size_t k = 0; k < plane.size(); ++k) plane[k] = static_cast<float>(cam.values[k]);
    }
    io::save_tensor(ws.path(out_dir + "/" + detail::tensor_name(id)), io::to_tensor(cams, id));
  });
}

inline std::vector<backends::LabeledImage> slice_dataset(const Workspace& ws, const std::vector<std::string>& ids) {
  std::vector<backends::LabeledImage> samples;
  for (const auto& id : ids) {
    const Volume norm = ws.load_normalized(id);
    const auto labels = ws.load_slice_labels(id);
    for (std::size_t d = 0; d < labels.size(); ++d) samples.push_back({norm.voxels.slice(d), labels[d]});
  }
  return samples;
}

inline void run_cam(const Workspace& ws) {
  const auto& split = ws.split();
  require(ws.backend().describe(), backends::Capability::train_classifier);
  require(ws.backend().describe(), backends::Capability::gradient_maps);
  const auto classifier = ws.backend().train_classifier(slice_dataset(ws, split.train), ws.seed_for("classifier", 0));
  detail::write_json(ws.path("models/classifier_q0.json"), classifier);
  write_cams(ws, classifier, detail::concat(split.train, split.val), "cams/q0");
}

inline void run_amda(const Workspace& ws) {
  const auto& cfg = ws.config();
  const auto& split = ws.split();
  const auto all = detail::concat(split.train, split.val);
  std::string cam_dir = "cams/q0";
  backends::ModelState classifier;
  for (int cycle = 1; cycle <= cfg.amda_cycles; ++cycle) {
    std::vector<std::vector<backends::LabeledImage>> per_volume(split.train.size());
    parallel_for(split.train.size(), cfg.jobs, [&](std::size_t i) {
      const auto& id = split.train[i];
      const Volume norm = ws.load_normalized(id);
      const Mask3D brain = ws.load_brain(id);
      const auto labels = ws.load_slice_labels(id);
      const auto cams = ws.load_cam_volume(cam_dir, id);
      Grid3<float> augmented(norm.voxels.depth(), norm.voxels.rows(), norm.voxels.cols(), 0.0f);
      Mask3D applied(norm.voxels.depth(), norm.voxels.rows(), norm.voxels.cols(), 0);
      for (std::size_t d = 0; d < labels.size(); ++d) {
        std::optional<CamMap> cam;
        if (labels[d] == 1) cam = cam_plane(cams, d);
        const auto seed = ws.seed_for("amda:" + id, static_cast<std::uint64_t>(cycle) * 1000003u + d);
        auto aug = amda_augment(norm.voxels.slice(d), labels[d], cam, cfg.alpha, seed, brain.slice(d));
        augmented.set_slice(d, aug.pixels);
        applied.set_slice(d, aug.applied_mask);
        per_volume[i].push_back({std::move(aug.pixels), labels[d]});
      }
      if (cycle == cfg.amda_cycles) {
        io::save_tensor(ws.path("amda/" + detail::tensor_name(id)), io::to_tensor(augmented, id, norm.spacing));
        io::save_tensor(ws.path("amda/masks/" + detail::tensor_name(id)), io::to_tensor(applied, id, norm.spacing));
      }
    });
    std::vector<backends::LabeledImage> d2;
    for (auto& v : per_volume) {
      for (auto& s : v) d2.push_back(std::move(s));
    }
    classifier = ws.backend().train_classifier(d2, ws.seed_for("classifier", static_cast<std::uint64_t>(cycle)));
    const std::string out_dir = cycle == cfg.amda_cycles ? "cams/q1" : "amda/cycles/" + std::to_string(cycle);
    write_cams(ws, classifier, all, out_dir);
    cam_dir = out_dir;
  }
  detail::write_json(ws.path("models/classifier_q1.json"), classifier);
}

inline void run_sam(const Workspace& ws) {
  const auto& cfg = ws.config();
  const auto& split = ws.split();
  require(ws.backend().describe(), backends::Capability::segment_prompted);
  const auto ids = detail::concat(split.train, split.val);
  const CamPromptOptions opts{cfg.roi_threshold, cfg.box_padding, 9};
  parallel_for(ids.size(), cfg.jobs, [&](std::size_t i) {
    const auto& id = ids[i];
    const Volume norm = ws.load_normalized(id);
    const Mask3D brain = ws.load_brain(id);
    const auto labels = ws.load_slice_labels(id);
    const auto cams = ws.load_cam_volume("cams/q1", id);
    std::vector<std::optional<Mask2D>> masks;
    nlohmann::json prompt_log = nlohmann::json::array();
    for (std::size_t d = 0; d < labels.size(); ++d) {
      if (labels[d] != 1) continue;
      const auto prompts = prompts_from_cam(cam_plane(cams, d), brain.slice(d), opts);
      if (!prompts) {
        masks.emplace_back(std::nullopt);
        prompt_log.push_back({{"slice", d}, {"prompts", nullptr}});
        continue;
      }
      try {
        masks.emplace_back(ws.backend().segment_prompted(norm.voxels.slice(d), *prompts));
      } catch (const Error& e) {
        fail(ErrorKind::backend, "volume " + id + " slice " + std::to_string(d) + ": " + e.what());
      }
      prompt_log.push_back({{"slice", d}, {"prompts", to_json(*prompts)}});
    }
    const auto pl = assemble(norm, labels, masks, PseudoLabelSource::cam_sam);
    io::save_tensor(ws.path("pseudo/sam/" + detail::tensor_name(id)), io::to_tensor(pl.mask, id, norm.spacing));
    nlohmann::json origins = nlohmann::json::array();
    for (auto o : pl.per_slice_origin) origins.push_back(to_string(o));
    detail::write_json(ws.path("pseudo/sam/" + id + ".json"),
                       {{"volume_id", id}, {"source", to_string(pl.source)}, {"origins", origins}, {"prompts", prompt_log}});
  });
}

inline std::vector<backends::SegmentationSample> segmentation_pool(const Workspace& ws, const std::vector<std::string>& ids,
                                                                   const std::string& label_dir) {
  std::vector<backends::SegmentationSample> samples;
  for (const auto& id : ids) samples.push_back({ws.load_normalized(id), ws.load_mask(label_dir, id)});
  return samples;
}

inline void predict_into(const Workspace& ws, const backends::ModelState& model, const std::vector<std::string>& ids,
                         const std::string& out_dir) {
  parallel_for(ids.size(), ws.config().jobs, [&](std::size_t i) {
    const Volume norm = ws.load_normalized(ids[i]);
    io::save_tensor(ws.path(out_dir + "/" + detail::tensor_name(ids[i])),
                    io::to_tensor(ws.backend().predict_volume(model, norm), ids[i], norm.spacing));
  });
}

inline void run_round1(const Workspace& ws) {
  const auto& split = ws.split();
  require(ws.backend().describe(), backends::Capability::train_segmenter);
  require(ws.backend().describe(), backends::Capability::predict_volume);
  const auto model = ws.backend().train_segmenter(segmentation_pool(ws, split.train, "pseudo/sam"), ws.seed_for("segmenter", 1));
  detail::write_json(ws.path("models/round1.json"), model);
  predict_into(ws, model, split.train, "pseudo/round1");
}

inline void resegment_into(const Workspace& ws, const std::vector<std::string>& ids, const std::string& pred_dir,
                           const std::string& out_dir) {
  parallel_for(ids.size(), ws.config().jobs, [&](std::size_t i) {
    const auto& id = ids[i];
    const Volume norm = ws.load_normalized(id);
    const auto pl = resegment_via_prompts(ws.load_mask(pred_dir, id), norm, ws.backend(), ws.config().box_padding);
    io::save_tensor(ws.path(out_dir + "/" + detail::tensor_name(id)), io::to_tensor(pl.mask, id, norm.spacing));
  });
}

inline void run_reseg(const Workspace& ws) { resegment_into(ws, ws.split().train, "pseudo/round1", "pseudo/reseg"); }

inline s3f::TrainingPool scored_pool(const Workspace& ws, const std::vector<std::string>& ids, const std::string& pred_dir,
                                     const std::string& reseg_dir) {
  s3f::TrainingPool pool;
  pool.stage = s3f::PoolStage::D3;
  pool.entries.resize(ids.size());
  parallel_for(ids.size(), ws.config().jobs, [&](std::size_t i) {
    const auto& id = ids[i];
    pool.entries[i] = {id, pred_dir + "/" + detail::tensor_name(id),
                       s3f::score(ws.load_mask(pred_dir, id), ws.load_mask(reseg_dir, id)), true};
  });
  return pool;
}

inline void run_s3f(const Workspace& ws) {
  const auto pool = s3f::filter_pool(scored_pool(ws, ws.split().train, "pseudo/round1", "pseudo/reseg"), ws.config().beta);
  io::atomic_write(ws.path("models/pool.jsonl"), s3f::to_manifest(pool));
}

inline std::vector<backends::SegmentationSample> retained_samples(const Workspace& ws, const s3f::TrainingPool& pool) {
  std::vector<backends::SegmentationSample> samples;
  for (const auto& e : pool.entries) {
    if (!e.retained) continue;
    samples.push_back({ws.load_normalized(e.volume_id),
                       io::to_mask3d(io::load_tensor(ws.path(e.pseudo_label)))});
  }
  if (samples.empty()) fail(ErrorKind::empty_pool, "self-training: no retained pseudo-labels");
  return samples;
}

inline double mean_val_dsc(const Workspace& ws, const backends::ModelState& model) {
  const auto& val = ws.split().val;
  if (val.empty()) return 0.0;
  std::vector<double> scores(val.size());
  parallel_for(val.size(), ws.config().jobs, [&](std::size_t i) {
    const Volume norm = ws.load_normalized(val[i]);
    scores[i] = metrics::dsc(ws.backend().predict_volume(model, norm), ws.load_mask("pseudo/sam", val[i]));
  });
  double s = 0.0;
  for (double x : scores) s += x;
  return s / static_cast<double>(scores.size());
}

inline void run_round2(const Workspace& ws) {
  const auto& cfg = ws.config();
  const auto& split = ws.split();
  const std::string dir = "models/self_training";
  std::vector<backends::ModelState> models = {ws.load_state("models/round1.json")};
  if (cfg.rounds >= 2) {
    const auto pool = s3f::from_manifest(io::read_file(ws.path("models/pool.jsonl")));
    auto model = ws.backend().train_segmenter(retained_samples(ws, pool), ws.seed_for("segmenter", 2));
    detail::write_json(ws.path(dir + "/round2.json"), model);
    models.push_back(model);
    for (int r = 3; r <= cfg.rounds; ++r) {
      const std::string tag = "round" + std::to_string(r);
      predict_into(ws, model, split.train, dir + "/pred_" + std::to_string(r - 1));
      resegment_into(ws, split.train, dir + "/pred_" + std::to_string(r - 1), dir + "/reseg_" + std::to_string(r - 1));
      const auto next = s3f::filter_pool(
          scored_pool(ws, split.train, dir + "/pred_" + std::to_string(r - 1), dir + "/reseg_" + std::to_string(r - 1)),
          cfg.beta);
      io::atomic_write(ws.path(dir + "/pool_" + tag + ".jsonl"), s3f::to_manifest(next));
      model = ws.backend().train_segmenter(retained_samples(ws, next), ws.seed_for("segmenter", static_cast<std::uint64_t>(r)));
      detail::write_json(ws.path(dir + "/" + tag + ".json"), model);
      models.push_back(model);
    }
  }
  // Pick the round whose validation predictions best match the validation pseudo-labels; later rounds win ties.
  nlohmann::json scores = nlohmann::json::array();
  std::size_t best = models.size() - 1;
  double best_score = -1.0;
  for (std::size_t k = 0; k < models.size(); ++k) {
    const double s = mean_val_dsc(ws, models[k]);
    scores.push_back({{"round", k + 1}, {"val_mean_dsc", s}});
    if (s >= best_score) {
      best_score = s;
      best = k;
    }
  }
  detail::write_json(ws.path(dir + "/final.json"), models[best]);
  detail::write_json(ws.path(dir + "/selection.json"), {{"candidates", scores}, {"selected_round", best + 1}});
}

inline void run_eval(const Workspace& ws) {
  const auto& cfg = ws.config();
  const auto& test = ws.split().test;
  if (test.empty()) fail(ErrorKind::dependency, "eval: the test split is empty");
  const auto model = ws.load_state("models/self_training/final.json");
  std::vector<metrics::LabeledMask> preds(test.size()), gts(test.size());
  parallel_for(test.size(), cfg.jobs, [&](std::size_t i) {
    const auto& id = test[i];
    const auto gt_path = ws.path("gt/" + detail::tensor_name(id));
    if (!fs::exists(gt_path)) fail(ErrorKind::dependency, "eval: ground truth missing for " + id + " (expected gt/)");
    const Volume norm = normalize_brain(ws.load_input(id));
    Mask3D pred = ws.backend().predict_volume(model, norm);
    io::save_tensor(ws.path("reports/pred/" + detail::tensor_name(id)), io::to_tensor(pred, id, norm.spacing));
    const auto gt_tensor = io::load_tensor(gt_path);
    preds[i] = {id, std::move(pred), norm.spacing};
    gts[i] = {id, io::to_mask3d(gt_tensor), io::spacing_of(gt_tensor, norm.spacing)};
  });
  const auto report = metrics::evaluate(preds, gts, cfg.hd95_penalty);
  if (cfg.report_format != ReportFormat::table) detail::write_json(ws.path("reports/metrics.json"), metrics::to_json(report));
  if (cfg.report_format != ReportFormat::json) io::atomic_write(ws.path("reports/metrics.txt"), metrics::to_table(report));
}

inline void execute(Stage s, const Workspace& ws) {
  switch (s) {
    case Stage::label: return run_label(ws);
    case Stage::cam: return run_cam(ws);
    case Stage::amda: return run_amda(ws);
    case Stage::sam: return run_sam(ws);
    case Stage::round1: return run_round1(ws);
    case Stage::reseg: return run_reseg(ws);
    case Stage::s3f: return run_s3f(ws);
    case Stage::round2: return run_round2(ws);
    case Stage::eval: return run_eval(ws);
  }
}

}  // namespace stages

struct RunOptions {
  std::vector<Stage> stages;  // empty = all
  bool force = false;
};

namespace detail {

inline std::map<std::string, std::string> output_digests(const fs::path& workdir, Stage s) {
  std::map<std::string, std::string> out;
  for (const auto& rel : spec(s).outputs) out[rel] = digest_path(workdir / rel);
  return out;
}

inline bool outputs_present(const fs::path& workdir, Stage s) {
  for (const auto& rel : spec(s).outputs) {
    if (!fs::exists(workdir / rel)) return false;
  }
  return true;
}

// Inputs of the external data a stage reads directly.
inline void add_external_inputs(std::map<std::string, std::string>& inputs, const fs::path& workdir, Stage s,
                                const PipelineConfig& cfg) {
  if (s == Stage::label) {
    const auto split = split_dataset(input_ids(workdir), cfg.split, cfg.seed);
    for (const auto& id : concat(split.train, split.val)) inputs["input/" + tensor_name(id)] = digest_path(workdir / "input" / tensor_name(id));
  } else if (s == Stage::eval) {
    const auto split = split_from_json(read_json(workdir / "labels/split.json"));
    for (const auto& id : split.test) {
      inputs["input/" + tensor_name(id)] = digest_path(workdir / "input" / tensor_name(id));
      inputs["gt/" + tensor_name(id)] = digest_path(workdir / "gt" / tensor_name(id));
    }
  }
}

}  // namespace detail

// Runs the selected stages in dependency order and returns what happened to each.
// The persisted ledger (workdir/ledger.json) accumulates the latest completed record per stage.
inline StageLedger run(const PipelineConfig& cfg, const RunOptions& options = {},
                       std::shared_ptr<const backends::Backend> backend = nullptr) {
  cfg.validate();
  const auto ledger_path = cfg.workdir / "ledger.json";
  StageLedger persisted = load_ledger(ledger_path);
  std::vector<Stage> selected = options.stages.empty() ? std::vector<Stage>(kAllStages.begin(), kAllStages.end())
                                                       : options.stages;
  std::sort(selected.begin(), selected.end());
  selected.erase(std::unique(selected.begin(), selected.end()), selected.end());

  std::shared_ptr<const backends::Backend> live = std::move(backend);
  std::unique_ptr<Workspace> ws;
  StageLedger result;
  for (Stage s : selected) {
    for (Stage dep : spec(s).deps) {
      if (!persisted.find(to_string(dep)) || !detail::outputs_present(cfg.workdir, dep)) {
        fail(ErrorKind::dependency, std::string("stage '") + to_string(s) + "' needs the outputs of stage '" +
                                        to_string(dep) + "', which has not completed");
      }
    }
    StageRecord rec;
    rec.name = to_string(s);
    rec.inputs["config"] = sha256(config_subset(cfg, s).dump());
    for (Stage dep : spec(s).deps) {
      for (const auto& [rel, d] : detail::output_digests(cfg.workdir, dep)) rec.inputs[std::string(to_string(dep)) + ":" + rel] = d;
    }
    detail::add_external_inputs(rec.inputs, cfg.workdir, s, cfg);

    const auto* prev = persisted.find(rec.name);
    if (!options.force && prev && prev->inputs == rec.inputs && detail::output_digests(cfg.workdir, s) == prev->outputs) {
      StageRecord skipped = *prev;
      skipped.status = "skipped";
      result.stages.push_back(std::move(skipped));
      continue;
    }

    if (!live) live = make_backend(cfg.backend);
    if (!ws) ws = std::make_unique<Workspace>(cfg, *live);
    for (const auto& rel : spec(s).outputs) fs::remove_all(cfg.workdir / rel);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      stages::execute(s, *ws);
    } catch (const Error& e) {
      const auto kind = e.kind();
      const bool backend_side = kind == ErrorKind::backend || kind == ErrorKind::state ||
                                kind == ErrorKind::unsupported_capability || kind == ErrorKind::protocol;
      fail(backend_side ? ErrorKind::backend : kind, std::string("stage '") + rec.name + "': " + e.what());
    }
    rec.duration_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rec.outputs = detail::output_digests(cfg.workdir, s);
    rec.status = "completed";
    persisted.upsert(rec);
    // keep the persisted ledger in canonical stage order
    std::stable_sort(persisted.stages.begin(), persisted.stages.end(),
                     [](const auto& a, const auto& b) { return stage_from(a.name) < stage_from(b.name); });
    save_ledger(ledger_path, persisted);
    result.stages.push_back(std::move(rec));
  }
  return result;
}

}  // namespace casc::pipeline
