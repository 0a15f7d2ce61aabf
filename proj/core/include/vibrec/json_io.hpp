#pragma once

// JSON conversions for the value types that appear in manifests, checkpoints
// and reports.

#include <filesystem>
#include <string>

#include "json.hpp"
#include "vibrec/apsim.hpp"
#include "vibrec/dataset.hpp"

namespace vibrec {

using Json = nlohmann::json;

/// Writes `j.dump(2)` plus a trailing newline.
void write_json_file(const std::filesystem::path& path, const Json& j);
Json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace vibrec

namespace vibrec::sim {
void to_json(Json& j, const SimConfig& c);
void from_json(const Json& j, SimConfig& c);
void to_json(Json& j, const SamplingConfig& c);
void from_json(const Json& j, SamplingConfig& c);
void to_json(Json& j, const CaseMeta& m);
void from_json(const Json& j, CaseMeta& m);
}  // namespace vibrec::sim

namespace vibrec::data {
void to_json(Json& j, const PlanEntry& e);
void from_json(const Json& j, PlanEntry& e);
void to_json(Json& j, const Manifest& m);
void from_json(const Json& j, Manifest& m);
}  // namespace vibrec::data
