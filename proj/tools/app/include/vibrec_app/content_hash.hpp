#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "vibrec/json_io.hpp"

namespace vibrec::app {

/// Hex SHA-1 of "blob <size>\0<bytes>", the id git gives the same content.
std::string git_blob_sha1(std::string_view bytes);

/// Records the content ids of everything a command read.
class InputLedger {
 public:
  void add_bytes(const std::string& label, std::string_view bytes);
  void add_file(const std::filesystem::path& path);
  /// Every regular file below `dir`, in sorted path order.
  void add_tree(const std::filesystem::path& dir);

  /// {"inputs": [{path, sha1}...], "combined_sha1": id of the sorted listing}.
  Json to_json() const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace vibrec::app
