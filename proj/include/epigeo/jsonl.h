#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace epigeo {

constexpr std::string_view kToolVersion = "0.3.0";

// Stable serialization: sorted keys, shortest round-trip doubles, no spaces.
std::string CanonicalDump(const nlohmann::json& value);

std::string Sha256Hex(std::string_view bytes);
std::string Sha256File(const std::filesystem::path& path);
// First 16 hex digits of the SHA-256 of the canonical dump.
std::string Digest(const nlohmann::json& value);

struct JsonlDocument {
  std::optional<nlohmann::json> header;  // from a leading "# {...}" line
  std::vector<nlohmann::json> records;
};

// Lines starting with '#' are metadata; only the first is parsed as the
// header. Blank lines are ignored.
JsonlDocument ReadJsonl(const std::filesystem::path& path);
JsonlDocument ParseJsonl(std::string_view text);
std::string FormatJsonl(const JsonlDocument& doc);
void WriteJsonl(const std::filesystem::path& path, const JsonlDocument& doc);
void WriteText(const std::filesystem::path& path, std::string_view text);

}  // namespace epigeo
