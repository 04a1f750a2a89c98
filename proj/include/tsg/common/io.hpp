#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace tsg {

using json = nlohmann::json;

std::string read_text_file(const std::filesystem::path& path);
std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path);

// Writes via a temporary sibling and renames, so readers never see partial files.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const json& j);

// Hex FNV-1a digest of arbitrary bytes; used for config and manifest digests.
std::string hex_digest(std::string_view bytes);

// UTC ISO-8601 timestamp, second resolution.
std::string utc_timestamp();

// Build identifier baked in at configure time.
const char* version_tag() noexcept;

}  // namespace tsg
