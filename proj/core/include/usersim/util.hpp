#pragma once
// Small text, hashing, and JSON-lines helpers used by every module.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace usersim {

/// Library version, also recorded in manifests.
std::string_view version();

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

/// Compact, key-sorted serialization. Byte-stable for equal documents.
std::string canonical_dump(const json& value);

/// Lowercase hex SHA-256 of raw bytes.
std::string sha256_hex(std::string_view bytes);

/// Number of Unicode code points in a UTF-8 string. Invalid bytes count as one each.
std::size_t utf8_length(std::string_view text);

std::string trim(std::string_view text);
std::string to_lower(std::string_view text);
/// Trims and collapses interior whitespace runs to a single space.
std::string collapse_whitespace(std::string_view text);
bool contains_ci(std::string_view haystack, std::string_view needle);
std::vector<std::string> split_lines(std::string_view text);

/// Replaces every `{name}` occurrence with the mapped value. Unknown
/// placeholders are left in place.
std::string fill_placeholders(std::string_view tmpl,
                              const std::vector<std::pair<std::string, std::string>>& values);

/// Locates the first balanced top-level JSON object in free text, tolerating
/// code fences and prose around it. Returns an empty string when none exists.
std::string extract_json_object(std::string_view text);

// ---------------------------------------------------------------------------
// Files

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

/// Reads newline-delimited JSON. Blank lines are skipped; parse failures throw
/// with the offending line number.
std::vector<json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records);

}  // namespace usersim
