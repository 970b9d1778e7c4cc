#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace todrr {

using Json = nlohmann::json;

// Calls on_record(json, line_number) for every non-blank line. Parse errors
// and exceptions thrown by on_record are rethrown as DataError naming the
// file and 1-based line.
void read_jsonl(const std::filesystem::path& path,
                const std::function<void(const Json&, std::size_t)>& on_record);

std::string read_text_file(const std::filesystem::path& path);

// Writes content to `path` through a sibling temp file and a rename, so a
// failed run never leaves a truncated output behind.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string to_jsonl(const std::vector<Json>& records);

// Required-field accessors that throw DataError with the field name.
const Json& require(const Json& obj, std::string_view key);
std::string require_string(const Json& obj, std::string_view key);

}  // namespace todrr
