#include "service/blob_store.hpp"

#include <openssl/evp.h>

#include <atomic>
#include <fstream>
#include <iterator>

#include "core/errors.hpp"

namespace exammon {

namespace fs = std::filesystem;

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::kInternal, "SHA-256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

std::string base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw Error(ErrorCode::kMalformedRecord, "base64 length not a multiple of 4");
  std::string out(text.size() / 4 * 3, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw Error(ErrorCode::kMalformedRecord, "invalid base64");
  // EVP_DecodeBlock keeps the bytes produced by '=' padding; drop them.
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

BlobStore::BlobStore(fs::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) throw Error(ErrorCode::kIoFailure, "cannot create blob directory " + dir_.string());
}

bool BlobStore::is_valid_ref(std::string_view ref) {
  if (ref.size() != 64) return false;
  for (char c : ref) {
    if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
  }
  return true;
}

std::string BlobStore::put(std::string_view bytes) {
  std::string ref = sha256_hex(bytes);
  const fs::path final_path = dir_ / ref;
  if (fs::exists(final_path)) return ref;
  // Write-then-rename so readers never observe a partial blob.
  static std::atomic<unsigned> counter{0};
  const fs::path tmp = dir_ / (ref + ".tmp." + std::to_string(counter++));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::kIoFailure, "cannot write blob " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, final_path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(ErrorCode::kIoFailure, "cannot store blob " + ref);
  }
  return ref;
}

bool BlobStore::contains(std::string_view ref) const {
  return is_valid_ref(ref) && fs::exists(dir_ / std::string(ref));
}

std::optional<std::string> BlobStore::get(std::string_view ref) const {
  if (!is_valid_ref(ref)) return std::nullopt;
  std::ifstream in(dir_ / std::string(ref), std::ios::binary);
  if (!in) return std::nullopt;
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace exammon
