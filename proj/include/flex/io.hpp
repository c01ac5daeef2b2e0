#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace flex {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string read_file(const fs::path& path);

// Writes to a sibling temp file, then renames over the target.
void write_file_atomic(const fs::path& path, std::string_view content);

// Calls `on_object(object, line_number)` for every non-blank line. Lines that
// fail to parse raise SchemaError naming the file and 1-based line number.
void for_each_jsonl(const fs::path& path, const std::function<void(const json&, std::size_t)>& on_object);

std::string to_jsonl(const std::vector<json>& objects);

// Current UTC time as ISO-8601 with a trailing 'Z'. SOURCE_DATE_EPOCH, when set,
// replaces the wall clock.
std::string utc_timestamp();

}  // namespace flex
