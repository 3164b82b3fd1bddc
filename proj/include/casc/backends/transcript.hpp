#pragma once

// Golden transcripts: a file of frames alternating request, expected response.
// Replaying one against a backend must reproduce every response byte for byte.

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "casc/backends/backend.hpp"
#include "casc/backends/external.hpp"
#include "casc/backends/protocol.hpp"
#include "casc/io/tensor_file.hpp"

namespace casc::backends::transcript {

struct Exchange {
  std::string request;
  std::string response;
};

inline std::string serialize(const std::vector<Exchange>& exchanges) {
  std::ostringstream os(std::ios::binary);
  for (const auto& e : exchanges) {
    protocol::write_frame(os, e.request);
    protocol::write_frame(os, e.response);
  }
  return std::move(os).str();
}

inline std::vector<Exchange> parse(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  std::vector<Exchange> out;
  while (auto req = protocol::read_frame(is)) {
    auto resp = protocol::read_frame(is);
    if (!resp) fail(ErrorKind::protocol, "transcript ends with a request and no response");
    out.push_back({std::move(*req), std::move(*resp)});
  }
  return out;
}

// Fixed request script covering every op, including error frames.
inline std::vector<std::string> conformance_requests() {
  using protocol::encode_body;
  using protocol::request;
  std::vector<std::string> reqs;
  std::uint64_t id = 0;

  Image2D slice(16, 16, 0.0f);
  for (std::size_t r = 2; r < 14; ++r)
    for (std::size_t c = 2; c < 14; ++c) slice(r, c) = 0.1f * static_cast<float>((r * 7 + c * 3) % 5) - 0.2f;
  for (std::size_t r = 6; r < 10; ++r)
    for (std::size_t c = 7; c < 11; ++c) slice(r, c) = 4.0f;
  const Image2D blank(16, 16, 0.0f);
  Mask2D mask(16, 16, 0);
  for (std::size_t r = 5; r < 11; ++r)
    for (std::size_t c = 6; c < 12; ++c) mask(r, c) = 1;

  Volume vol{"conf-vol", Grid3<float>(4, 16, 16, 0.0f), Spacing{1.0, 1.0, 2.0}};
  Mask3D vol_label(4, 16, 16, 0);
  for (std::size_t d = 0; d < 4; ++d) {
    vol.voxels.set_slice(d, slice);
    if (d >= 1 && d <= 2)
      for (std::size_t r = 6; r < 10; ++r)
        for (std::size_t c = 7; c < 11; ++c) vol_label(d, r, c) = 1;
  }

  const nlohmann::json trained_classifier = {{"model", "analytic-classifier"}, {"trained", true}, {"positives", 1},
                                             {"samples", 2},                    {"seed", 7},       {"sigma", 1.0}};
  const nlohmann::json trained_segmenter = {{"model", "analytic-segmenter"}, {"trained", true}, {"samples", 1},
                                            {"seed", 7},                      {"box", {1, 6, 7, 2, 9, 10}}};
  PromptSet prompts = prompts_from(Box{6, 7, 9, 10}, 7, 8);
  PromptSet outside = prompts_from(Box{6, 7, 9, 10}, 40, 8);

  reqs.push_back(encode_body(request("describe", ++id)));
  reqs.push_back(encode_body(request("echo", ++id, {}, {io::to_tensor(slice, "echo-f32"), io::to_tensor(mask)})));
  reqs.push_back(encode_body(request("embed_text", ++id,
                                     {{"text", "an image of brain tissue showing typical signal intensity without any "
                                               "regions of abnormal intensity or suspicious mass"}})));
  reqs.push_back(encode_body(request("embed_text", ++id,
                                     {{"text", "an image of brain tissue showing a tumor with uneven hyperintensity and "
                                               "irregular borders distinct from surroundings"}})));
  reqs.push_back(encode_body(request("embed_image", ++id, {}, {io::to_tensor(slice)})));
  reqs.push_back(encode_body(request("embed_image", ++id, {}, {io::to_tensor(blank)})));
  reqs.push_back(encode_body(
      request("train_classifier", ++id, {{"labels", {1, 0}}, {"seed", 7}}, {io::to_tensor(slice), io::to_tensor(blank)})));
  reqs.push_back(encode_body(request("classify_with_maps", ++id, {{"state", trained_classifier}}, {io::to_tensor(slice)})));
  reqs.push_back(encode_body(request("classify_with_maps", ++id, {{"state", nullptr}}, {io::to_tensor(slice)})));
  reqs.push_back(encode_body(request("segment_prompted", ++id, {{"prompts", to_json(prompts)}}, {io::to_tensor(slice)})));
  reqs.push_back(encode_body(request("segment_prompted", ++id, {{"prompts", to_json(outside)}}, {io::to_tensor(slice)})));
  reqs.push_back(encode_body(
      request("train_segmenter", ++id, {{"seed", 7}}, {io::to_tensor(vol), io::to_tensor(vol_label, vol.id, vol.spacing)})));
  reqs.push_back(encode_body(request("train_segmenter", ++id, {{"seed", 7}})));
  reqs.push_back(encode_body(request("predict_volume", ++id, {{"state", trained_segmenter}}, {io::to_tensor(vol)})));
  reqs.push_back(encode_body(request("predict_volume", ++id, {{"state", nullptr}}, {io::to_tensor(vol)})));
  reqs.push_back(encode_body(request("no_such_op", ++id)));
  reqs.push_back(std::string("{not json\n"));
  reqs.push_back(encode_body(request("describe", ++id)));  // connection still usable after errors
  return reqs;
}

inline std::vector<Exchange> record(Transport& transport, const std::vector<std::string>& requests) {
  std::vector<Exchange> out;
  for (const auto& r : requests) out.push_back({r, transport.round_trip(r)});
  return out;
}

struct ReplayResult {
  std::size_t index = 0;
  std::string op;
  bool identical = false;
};

inline std::string op_of(const std::string& body) {
  try {
    const auto m = protocol::decode_body(body);
    return m.header.value("op", std::string("?"));
  } catch (const Error&) {
    return "<malformed>";
  }
}

inline std::vector<ReplayResult> replay(Transport& transport, const std::vector<Exchange>& exchanges) {
  std::vector<ReplayResult> results;
  for (std::size_t i = 0; i < exchanges.size(); ++i) {
    const auto got = transport.round_trip(exchanges[i].request);
    results.push_back({i, op_of(exchanges[i].request), got == exchanges[i].response});
  }
  return results;
}

}  // namespace casc::backends::transcript
