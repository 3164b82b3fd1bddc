#pragma once

#include <stdexcept>
#include <string>

namespace casc {

enum class ErrorKind {
  shape,
  invalid_embedding,
  contract,
  no_roi,
  config,
  dependency,
  backend,
  state,
  unsupported_capability,
  io,
  protocol,
  empty_pool,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape: return "shape_error";
    case ErrorKind::invalid_embedding: return "invalid_embedding";
    case ErrorKind::contract: return "contract_error";
    case ErrorKind::no_roi: return "no_roi";
    case ErrorKind::config: return "config_error";
    case ErrorKind::dependency: return "dependency_error";
    case ErrorKind::backend: return "backend_error";
    case ErrorKind::state: return "state_error";
    case ErrorKind::unsupported_capability: return "unsupported_capability";
    case ErrorKind::io: return "io_error";
    case ErrorKind::protocol: return "protocol_error";
    case ErrorKind::empty_pool: return "empty_pool";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Process exit codes used by the CLI.
inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return 2;
    case ErrorKind::dependency: return 3;
    case ErrorKind::backend:
    case ErrorKind::unsupported_capability:
    case ErrorKind::protocol:
    case ErrorKind::state: return 4;
    default: return 1;
  }
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace casc
