#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace bronchograde {

/// Incremental SHA-256; digest rendered as lowercase hex.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  Sha256& update(std::span<const unsigned char> bytes);
  Sha256& update(std::string_view text);
  std::string hex_digest();

 private:
  void* ctx_;
};

std::string sha256_hex(std::string_view text);
std::string sha256_file(const std::filesystem::path& path);

/// Hash of every regular file below `root`, keyed by relative path, in sorted order.
std::string sha256_tree(const std::filesystem::path& root);

}  // namespace bronchograde
