#pragma once

#include <atomic>
#include <csignal>
#include <cstring>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include "casc/backends/backend.hpp"
#include "casc/backends/protocol.hpp"

extern char** environ;

namespace casc::backends {

// Carries one request body to a peer and returns its response body.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual std::string round_trip(const std::string& request_body) = 0;
};

// Answers in-process through the protocol codec; used for conformance tests.
class LoopbackTransport final : public Transport {
 public:
  explicit LoopbackTransport(std::shared_ptr<const Backend> backend) : backend_(std::move(backend)) {}
  std::string round_trip(const std::string& body) override { return protocol::handle_body(*backend_, body); }

 private:
  std::shared_ptr<const Backend> backend_;
};

// Child process speaking the protocol on its stdin/stdout.
class ProcessTransport final : public Transport {
 public:
  explicit ProcessTransport(const std::vector<std::string>& command) {
    if (command.empty()) fail(ErrorKind::config, "external backend command is empty");
    std::signal(SIGPIPE, SIG_IGN);
    int to_child[2], from_child[2];
    if (pipe(to_child) != 0 || pipe(from_child) != 0) fail(ErrorKind::backend, "pipe() failed");
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, to_child[0], STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&actions, from_child[1], STDOUT_FILENO);
    posix_spawn_file_actions_addclose(&actions, to_child[1]);
    posix_spawn_file_actions_addclose(&actions, from_child[0]);
    std::vector<char*> argv;
    for (const auto& a : command) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    const int rc = posix_spawnp(&pid_, argv[0], &actions, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    close(to_child[0]);
    close(from_child[1]);
    if (rc != 0) {
      close(to_child[1]);
      close(from_child[0]);
      fail(ErrorKind::backend, "cannot launch backend '" + command[0] + "': " + std::strerror(rc));
    }
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
  }

  ProcessTransport(const ProcessTransport&) = delete;
  ProcessTransport& operator=(const ProcessTransport&) = delete;

  ~ProcessTransport() override {
    if (write_fd_ >= 0) close(write_fd_);
    if (read_fd_ >= 0) close(read_fd_);
    if (pid_ > 0) {
      int status = 0;
      waitpid(pid_, &status, 0);
    }
  }

  std::string round_trip(const std::string& body) override {
    const auto n = static_cast<std::uint32_t>(body.size());
    char len[4];
    for (int b = 0; b < 4; ++b) len[b] = static_cast<char>((n >> (8 * b)) & 0xffu);
    write_all(len, 4);
    write_all(body.data(), body.size());
    read_all(len, 4);
    std::uint32_t m = 0;
    for (int b = 0; b < 4; ++b) m |= static_cast<std::uint32_t>(static_cast<unsigned char>(len[b])) << (8 * b);
    std::string out(m, '\0');
    read_all(out.data(), m);
    return out;
  }

 private:
  void write_all(const char* p, std::size_t n) {
    while (n > 0) {
      const ssize_t w = write(write_fd_, p, n);
      if (w <= 0) fail(ErrorKind::backend, "backend process closed its input");
      p += w;
      n -= static_cast<std::size_t>(w);
    }
  }
  void read_all(char* p, std::size_t n) {
    while (n > 0) {
      const ssize_t r = read(read_fd_, p, n);
      if (r <= 0) fail(ErrorKind::backend, "backend process closed its output");
      p += r;
      n -= static_cast<std::size_t>(r);
    }
  }

  pid_t pid_ = -1;
  int write_fd_ = -1;
  int read_fd_ = -1;
};

// Backend reached over the wire protocol. One request in flight per connection.
class ExternalBackend final : public Backend {
 public:
  explicit ExternalBackend(std::unique_ptr<Transport> transport) : transport_(std::move(transport)) {
    descriptor_ = descriptor_from_json(call(protocol::request("describe", next_id())).header.at("result"));
    descriptor_.kind = BackendKind::external;
  }

  BackendDescriptor describe() const override { return descriptor_; }

  std::vector<double> embed_image(const Image2D& image) const override {
    require(descriptor_, Capability::embed_image);
    auto m = call(protocol::request("embed_image", next_id(), nlohmann::json::object(), {io::to_tensor(image)}));
    return m.header.at("result").at("embedding").get<std::vector<double>>();
  }

  std::vector<double> embed_text(const std::string& text) const override {
    require(descriptor_, Capability::embed_text);
    auto m = call(protocol::request("embed_text", next_id(), {{"text", text}}));
    return m.header.at("result").at("embedding").get<std::vector<double>>();
  }

  ModelState train_classifier(const std::vector<LabeledImage>& samples, std::uint64_t seed) const override {
    require(descriptor_, Capability::train_classifier);
    std::vector<int> labels;
    std::vector<io::Tensor> tensors;
    for (const auto& s : samples) {
      labels.push_back(s.label);
      tensors.push_back(io::to_tensor(s.image));
    }
    auto m = call(protocol::request("train_classifier", next_id(), {{"labels", labels}, {"seed", seed}}, std::move(tensors)));
    return m.header.at("result").at("state");
  }

  ClassifierOutput classify_with_maps(const ModelState& classifier, const Image2D& slice) const override {
    require(descriptor_, Capability::gradient_maps);
    auto m = call(protocol::request("classify_with_maps", next_id(), {{"state", classifier}}, {io::to_tensor(slice)}));
    return protocol::decode_classifier_output(m);
  }

  Mask2D segment_prompted(const Image2D& slice, const PromptSet& prompts) const override {
    require(descriptor_, Capability::segment_prompted);
    auto m = call(protocol::request("segment_prompted", next_id(), {{"prompts", to_json(prompts)}}, {io::to_tensor(slice)}));
    if (m.tensors.size() != 1) fail(ErrorKind::protocol, "segment_prompted: expected one mask");
    return io::to_mask2d(m.tensors[0]);
  }

  ModelState train_segmenter(const std::vector<SegmentationSample>& samples, std::uint64_t seed) const override {
    require(descriptor_, Capability::train_segmenter);
    std::vector<io::Tensor> tensors;
    for (const auto& s : samples) {
      tensors.push_back(io::to_tensor(s.volume));
      tensors.push_back(io::to_tensor(s.label));
    }
    auto m = call(protocol::request("train_segmenter", next_id(), {{"seed", seed}}, std::move(tensors)));
    return m.header.at("result").at("state");
  }

  Mask3D predict_volume(const ModelState& segmenter, const Volume& volume) const override {
    require(descriptor_, Capability::predict_volume);
    auto m = call(protocol::request("predict_volume", next_id(), {{"state", segmenter}}, {io::to_tensor(volume)}));
    if (m.tensors.size() != 1) fail(ErrorKind::protocol, "predict_volume: expected one mask");
    return io::to_mask3d(m.tensors[0]);
  }

 private:
  std::uint64_t next_id() const { return ++counter_; }

  protocol::Message call(const protocol::Message& req) const {
    std::string body;
    {
      std::lock_guard lock(mutex_);
      body = transport_->round_trip(protocol::encode_body(req));
    }
    auto resp = protocol::decode_body(body);
    if (resp.header.contains("error")) {
      const auto& e = resp.header["error"];
      fail(protocol::kind_from_code(e.value("code", "backend_error")), e.value("message", "backend error"));
    }
    if (resp.header.value("request_id", nlohmann::json()) != req.header.at("request_id"))
      fail(ErrorKind::protocol, "response request_id does not match request");
    return resp;
  }

  std::unique_ptr<Transport> transport_;
  mutable std::mutex mutex_;
  mutable std::atomic<std::uint64_t> counter_{0};
  BackendDescriptor descriptor_;
};

}  // namespace casc::backends
