#pragma once

// External-process wire protocol.
//
// Frame  = u32 little-endian body length | body
// Body   = JSON header line '\n' | zero or more tensor files back to back
// Request header:  {"op": ..., "request_id": n, "params": {...}}
// Response header: {"request_id": n, "ok": true, "result": {...}}
//              or  {"request_id": n, "error": {"code": ..., "message": ...}}

#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "casc/backends/backend.hpp"
#include "casc/io/tensor_file.hpp"

namespace casc::backends::protocol {

struct Message {
  nlohmann::json header;
  std::vector<io::Tensor> tensors;
};

inline std::string encode_body(const Message& m) {
  std::ostringstream os(std::ios::binary);
  const auto h = m.header.dump();
  os.write(h.data(), static_cast<std::streamsize>(h.size()));
  os.put('\n');
  for (const auto& t : m.tensors) io::write_tensor(os, t);
  return std::move(os).str();
}

inline Message decode_body(const std::string& body) {
  const auto nl = body.find('\n');
  if (nl == std::string::npos) fail(ErrorKind::protocol, "frame body has no header line");
  Message m;
  try {
    m.header = nlohmann::json::parse(body.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::protocol, std::string("malformed frame header: ") + e.what());
  }
  std::istringstream is(body.substr(nl + 1), std::ios::binary);
  while (is.peek() != std::char_traits<char>::eof()) {
    try {
      m.tensors.push_back(io::read_tensor(is));
    } catch (const Error& e) {
      fail(ErrorKind::protocol, std::string("malformed frame payload: ") + e.what());
    }
  }
  return m;
}

inline void write_frame(std::ostream& os, const std::string& body) {
  const auto n = static_cast<std::uint32_t>(body.size());
  char len[4];
  for (int b = 0; b < 4; ++b) len[b] = static_cast<char>((n >> (8 * b)) & 0xffu);
  os.write(len, 4);
  os.write(body.data(), static_cast<std::streamsize>(body.size()));
  os.flush();
  if (!os) fail(ErrorKind::protocol, "frame write failed");
}

// Returns nullopt on clean EOF before a frame starts.
inline std::optional<std::string> read_frame(std::istream& is) {
  char len[4];
  is.read(len, 4);
  if (is.gcount() == 0 && is.eof()) return std::nullopt;
  if (is.gcount() != 4) fail(ErrorKind::protocol, "truncated frame length");
  std::uint32_t n = 0;
  for (int b = 0; b < 4; ++b) n |= static_cast<std::uint32_t>(static_cast<unsigned char>(len[b])) << (8 * b);
  std::string body(n, '\0');
  is.read(body.data(), n);
  if (static_cast<std::uint32_t>(is.gcount()) != n) fail(ErrorKind::protocol, "truncated frame body");
  return body;
}

inline std::string error_code(ErrorKind kind) { return to_string(kind); }

inline ErrorKind kind_from_code(const std::string& code) {
  for (auto k : {ErrorKind::shape, ErrorKind::invalid_embedding, ErrorKind::contract, ErrorKind::no_roi,
                 ErrorKind::config, ErrorKind::dependency, ErrorKind::backend, ErrorKind::state,
                 ErrorKind::unsupported_capability, ErrorKind::io, ErrorKind::protocol, ErrorKind::empty_pool}) {
    if (code == to_string(k)) return k;
  }
  return ErrorKind::backend;
}

// --- request builders (client side) ----------------------------------------------

inline Message request(const std::string& op, std::uint64_t id, nlohmann::json params = nlohmann::json::object(),
                       std::vector<io::Tensor> tensors = {}) {
  return Message{{{"op", op}, {"request_id", id}, {"params", std::move(params)}}, std::move(tensors)};
}

inline nlohmann::json encode_classifier_output_header(const ClassifierOutput& out) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : out.layers) {
    layers.push_back({{"layer_id", l.layer_id}, {"channels", l.gradients.size()}, {"activations", l.activations.size()}});
  }
  return {{"probability", out.probability}, {"layers", layers}};
}

inline ClassifierOutput decode_classifier_output(const Message& m) {
  ClassifierOutput out;
  const auto& r = m.header.at("result");
  out.probability = r.at("probability").get<double>();
  std::size_t t = 0;
  for (const auto& lj : r.at("layers")) {
    LayerMaps l;
    l.layer_id = lj.at("layer_id").get<std::string>();
    const auto nch = lj.at("channels").get<std::size_t>();
    const auto nact = lj.at("activations").get<std::size_t>();
    if (t + nch + nact > m.tensors.size()) fail(ErrorKind::protocol, "classify_with_maps: missing gradient tensors");
    for (std::size_t i = 0; i < nch; ++i) l.gradients.push_back(io::to_image2d(m.tensors[t++]));
    for (std::size_t i = 0; i < nact; ++i) l.activations.push_back(io::to_image2d(m.tensors[t++]));
    out.layers.push_back(std::move(l));
  }
  return out;
}

// --- server-side dispatch -------------------------------------------------------

namespace detail {

inline const io::Tensor& tensor_at(const Message& m, std::size_t i, const char* op) {
  if (i >= m.tensors.size()) fail(ErrorKind::protocol, std::string(op) + ": missing tensor payload");
  return m.tensors[i];
}

inline Message handle(const Backend& backend, const Message& req) {
  const auto op = req.header.at("op").get<std::string>();
  const auto id = req.header.at("request_id");
  const nlohmann::json params = req.header.value("params", nlohmann::json::object());
  const auto desc = backend.describe();
  Message resp;
  resp.header = {{"request_id", id}, {"ok", true}};
  nlohmann::json result = nlohmann::json::object();

  if (op == "describe") {
    result = to_json(desc);
  } else if (op == "echo") {
    resp.tensors = req.tensors;
    result["count"] = req.tensors.size();
  } else if (op == "embed_image") {
    require(desc, Capability::embed_image);
    result["embedding"] = backend.embed_image(io::to_image2d(tensor_at(req, 0, "embed_image")));
  } else if (op == "embed_text") {
    require(desc, Capability::embed_text);
    result["embedding"] = backend.embed_text(params.at("text").get<std::string>());
  } else if (op == "train_classifier") {
    require(desc, Capability::train_classifier);
    const auto labels = params.at("labels").get<std::vector<int>>();
    if (labels.size() != req.tensors.size()) fail(ErrorKind::protocol, "train_classifier: label/tensor count mismatch");
    std::vector<LabeledImage> samples;
    for (std::size_t i = 0; i < labels.size(); ++i) samples.push_back({io::to_image2d(req.tensors[i]), labels[i]});
    result["state"] = backend.train_classifier(samples, params.value("seed", std::uint64_t{0}));
  } else if (op == "classify_with_maps") {
    require(desc, Capability::gradient_maps);
    const auto out = backend.classify_with_maps(params.value("state", nlohmann::json()),
                                                io::to_image2d(tensor_at(req, 0, "classify_with_maps")));
    result = encode_classifier_output_header(out);
    for (const auto& l : out.layers) {
      for (const auto& g : l.gradients) resp.tensors.push_back(io::to_tensor(g));
      for (const auto& a : l.activations) resp.tensors.push_back(io::to_tensor(a));
    }
  } else if (op == "segment_prompted") {
    require(desc, Capability::segment_prompted);
    const auto prompts = prompt_set_from_json(params.at("prompts"));
    resp.tensors.push_back(io::to_tensor(backend.segment_prompted(io::to_image2d(tensor_at(req, 0, op.c_str())), prompts)));
  } else if (op == "train_segmenter") {
    require(desc, Capability::train_segmenter);
    if (req.tensors.size() % 2 != 0) fail(ErrorKind::protocol, "train_segmenter: expected volume/label tensor pairs");
    std::vector<SegmentationSample> samples;
    for (std::size_t i = 0; i < req.tensors.size(); i += 2) {
      samples.push_back({io::to_volume(req.tensors[i]), io::to_mask3d(req.tensors[i + 1])});
    }
    result["state"] = backend.train_segmenter(samples, params.value("seed", std::uint64_t{0}));
  } else if (op == "predict_volume") {
    require(desc, Capability::predict_volume);
    const auto vol = io::to_volume(tensor_at(req, 0, "predict_volume"));
    resp.tensors.push_back(io::to_tensor(backend.predict_volume(params.value("state", nlohmann::json()), vol), vol.id,
                                         vol.spacing));
  } else {
    fail(ErrorKind::unsupported_capability, "unknown op " + op);
  }
  resp.header["result"] = std::move(result);
  return resp;
}

}  // namespace detail

inline std::string error_body(const nlohmann::json& request_id, ErrorKind kind, const std::string& message) {
  Message m;
  m.header = {{"request_id", request_id}, {"error", {{"code", error_code(kind)}, {"message", message}}}};
  return encode_body(m);
}

// Answers one request body; never throws, failures become error frames.
inline std::string handle_body(const Backend& backend, const std::string& body) {
  nlohmann::json request_id = nullptr;
  try {
    const auto req = decode_body(body);
    if (!req.header.is_object() || !req.header.contains("op") || !req.header.contains("request_id"))
      fail(ErrorKind::protocol, "request header needs op and request_id");
    request_id = req.header["request_id"];
    return encode_body(detail::handle(backend, req));
  } catch (const Error& e) {
    return error_body(request_id, e.kind(), e.what());
  } catch (const nlohmann::json::exception& e) {
    return error_body(request_id, ErrorKind::protocol, e.what());
  } catch (const std::exception& e) {
    return error_body(request_id, ErrorKind::backend, e.what());
  }
}

// Serves frames until EOF. One request in flight at a time.
inline void serve(const Backend& backend, std::istream& in, std::ostream& out) {
  while (true) {
    std::optional<std::string> body;
    try {
      body = read_frame(in);
    } catch (const Error&) {
      return;  // truncated stream: peer is gone
    }
    if (!body) return;
    write_frame(out, handle_body(backend, *body));
  }
}

}  // namespace casc::backends::protocol
