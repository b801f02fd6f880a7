#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

namespace exammon {

// Content-addressed store for captured images: a blob's reference is the
// lowercase hex SHA-256 of its bytes.
class BlobStore {
 public:
  explicit BlobStore(std::filesystem::path dir);

  std::string put(std::string_view bytes);
  std::optional<std::string> get(std::string_view ref) const;
  bool contains(std::string_view ref) const;

  static bool is_valid_ref(std::string_view ref);

 private:
  std::filesystem::path dir_;
};

std::string sha256_hex(std::string_view bytes);
// Throws Error(kMalformedRecord) on invalid base64.
std::string base64_decode(std::string_view text);
std::string base64_encode(std::string_view bytes);

}  // namespace exammon
