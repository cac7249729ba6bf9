#pragma once

#include <filesystem>

#include <json.hpp>

#include "pdenet/field.hpp"

namespace pdenet {

using Json = nlohmann::json;

Json grid_to_json(const Grid2D& g);
/// Throws ConfigError on missing or invalid keys.
Grid2D grid_from_json(const Json& j);

std::string to_string(Boundary b);
Boundary boundary_from_string(const std::string& s);

/// Pretty-printed, newline-terminated. Throws IoError.
void write_json_file(const std::filesystem::path& path, const Json& j);
/// Throws IoError when unreadable, ConfigError when not valid JSON.
Json read_json_file(const std::filesystem::path& path);

} // namespace pdenet
