#include "vibrec_app/content_hash.hpp"

#include <algorithm>
#include <array>
#include <cstdio>

#include <openssl/evp.h>

#include "vibrec/error.hpp"

namespace vibrec::app {

namespace fs = std::filesystem;

std::string git_blob_sha1(std::string_view bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  const bool ok = ctx && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) &&
                  EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) && EVP_DigestFinal_ex(ctx, digest.data(), &len);
  EVP_MD_CTX_free(ctx);
  if (!ok) throw IoError("SHA-1 computation failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    const unsigned char b = digest[i];
    std::snprintf(buf, sizeof buf, "%02x", b);
    hex += buf;
  }
  return hex;
}

void InputLedger::add_bytes(const std::string& label, std::string_view bytes) {
  entries_.emplace_back(label, git_blob_sha1(bytes));
}

void InputLedger::add_file(const fs::path& path) { add_bytes(path.generic_string(), read_text_file(path)); }

void InputLedger::add_tree(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) add_file(f);
}

Json InputLedger::to_json() const {
  auto sorted = entries_;
  std::sort(sorted.begin(), sorted.end());
  Json list = Json::array();
  std::string listing;
  for (const auto& [path, sha] : sorted) {
    list.push_back({{"path", path}, {"sha1", sha}});
    listing += sha + ' ' + path + '\n';
  }
  return {{"inputs", list}, {"combined_sha1", git_blob_sha1(listing)}};
}

}  // namespace vibrec::app
