#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "casc/core/error.hpp"
#include "casc/core/grid.hpp"
#include "casc/prompting.hpp"

namespace casc::backends {

enum class BackendKind { analytic, external };

enum class Capability {
  embed_image,
  embed_text,
  train_classifier,
  gradient_maps,
  segment_prompted,
  train_segmenter,
  predict_volume,
};

inline const char* to_string(Capability c) {
  switch (c) {
    case Capability::embed_image: return "embed_image";
    case Capability::embed_text: return "embed_text";
    case Capability::train_classifier: return "train_classifier";
    case Capability::gradient_maps: return "gradient_maps";
    case Capability::segment_prompted: return "segment_prompted";
    case Capability::train_segmenter: return "train_segmenter";
    case Capability::predict_volume: return "predict_volume";
  }
  return "?";
}

inline Capability capability_from(const std::string& s) {
  for (auto c : {Capability::embed_image, Capability::embed_text, Capability::train_classifier,
                 Capability::gradient_maps, Capability::segment_prompted, Capability::train_segmenter,
                 Capability::predict_volume}) {
    if (s == to_string(c)) return c;
  }
  fail(ErrorKind::protocol, "unknown capability " + s);
}

struct BackendDescriptor {
  BackendKind kind = BackendKind::analytic;
  std::set<Capability> capabilities;
  std::vector<std::string> layer_ids;

  bool has(Capability c) const { return capabilities.count(c) != 0; }
  friend bool operator==(const BackendDescriptor&, const BackendDescriptor&) = default;
};

inline nlohmann::json to_json(const BackendDescriptor& d) {
  nlohmann::json caps = nlohmann::json::array();
  for (auto c : d.capabilities) caps.push_back(to_string(c));
  return {{"kind", d.kind == BackendKind::analytic ? "analytic" : "external"},
          {"capabilities", caps},
          {"layer_ids", d.layer_ids}};
}

inline BackendDescriptor descriptor_from_json(const nlohmann::json& j) {
  BackendDescriptor d;
  d.kind = j.at("kind").get<std::string>() == "analytic" ? BackendKind::analytic : BackendKind::external;
  for (const auto& c : j.at("capabilities")) d.capabilities.insert(capability_from(c.get<std::string>()));
  d.layer_ids = j.at("layer_ids").get<std::vector<std::string>>();
  return d;
}

// Gradient (and optional activation) grids for one layer, one grid per channel.
struct LayerMaps {
  std::string layer_id;
  std::vector<Image2D> gradients;
  std::vector<Image2D> activations;

  friend bool operator==(const LayerMaps&, const LayerMaps&) = default;
};

struct ClassifierOutput {
  double probability = 0.0;
  std::vector<LayerMaps> layers;

  friend bool operator==(const ClassifierOutput&, const ClassifierOutput&) = default;
};

struct LabeledImage {
  Image2D image;
  int label = 0;
};

struct SegmentationSample {
  Volume volume;
  Mask3D label;
};

// Opaque trained-model state; the engine persists it and hands it back verbatim.
using ModelState = nlohmann::json;

// The only boundary to learned components. Implementations are stateless:
// training returns a model state, inference takes one.
class Backend {
 public:
  virtual ~Backend() = default;

  virtual BackendDescriptor describe() const = 0;
  virtual std::vector<double> embed_image(const Image2D& image) const = 0;
  virtual std::vector<double> embed_text(const std::string& text) const = 0;
  virtual ModelState train_classifier(const std::vector<LabeledImage>& samples, std::uint64_t seed) const = 0;
  virtual ClassifierOutput classify_with_maps(const ModelState& classifier, const Image2D& slice) const = 0;
  virtual Mask2D segment_prompted(const Image2D& slice, const PromptSet& prompts) const = 0;
  virtual ModelState train_segmenter(const std::vector<SegmentationSample>& samples, std::uint64_t seed) const = 0;
  virtual Mask3D predict_volume(const ModelState& segmenter, const Volume& volume) const = 0;
};

inline void require(const BackendDescriptor& d, Capability c) {
  if (!d.has(c)) fail(ErrorKind::unsupported_capability, std::string("backend does not declare ") + to_string(c));
}

}  // namespace casc::backends
