#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "casc/core/error.hpp"
#include "casc/io/tensor_file.hpp"

namespace casc::pipeline {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) fail(ErrorKind::io, "sha256 init failed");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  Sha256& update(const std::string& bytes) {
    EVP_DigestUpdate(ctx_, bytes.data(), bytes.size());
    return *this;
  }

  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int n = 0;
    EVP_DigestFinal_ex(ctx_, md, &n);
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < n; ++i) {
      out += digits[md[i] >> 4];
      out += digits[md[i] & 0xf];
    }
    return out;
  }

 private:
  EVP_MD_CTX* ctx_;
};

inline std::string sha256(const std::string& bytes) { return Sha256().update(bytes).hex(); }

inline std::string digest_file(const std::filesystem::path& path) { return sha256(io::read_file(path)); }

// Content digest of a file or of a directory tree (relative paths + file digests, sorted).
// Missing paths digest to the empty string.
inline std::string digest_path(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) return {};
  if (fs::is_regular_file(path)) return digest_file(path);
  std::vector<std::pair<std::string, std::string>> entries;
  for (const auto& e : fs::recursive_directory_iterator(path)) {
    if (!e.is_regular_file()) continue;
    if (e.path().extension() == ".tmp") continue;
    entries.emplace_back(fs::relative(e.path(), path).generic_string(), digest_file(e.path()));
  }
  std::sort(entries.begin(), entries.end());
  Sha256 h;
  for (const auto& [rel, d] : entries) h.update(rel).update("|").update(d).update("\n");
  return h.hex();
}

}  // namespace casc::pipeline
