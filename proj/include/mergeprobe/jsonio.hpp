#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "mergeprobe/errors.hpp"

namespace mergeprobe {

/// Read and parse a JSON file. Unreadable files raise IoFailure; parse errors
/// raise `parse_code` (IoFailure by default, ManifestError for manifests).
nlohmann::json read_json_file(const std::filesystem::path& path,
                              ErrorCode parse_code = ErrorCode::io_failure);

std::string read_text_file(const std::filesystem::path& path);

/// Write text, creating parent directories as needed. Throws IoFailure.
void write_text_file(const std::filesystem::path& path, const std::string& content);

/// Serialize with 2-space indentation and a trailing newline. nlohmann keeps
/// object keys sorted, so the bytes are a pure function of the value.
std::string dump_json(const nlohmann::json& j);

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

/// Shortest decimal representation that round-trips to the same double
/// (what nlohmann emits for numbers); used for CSV cells and metadata.
std::string fmt_double(double x);

/// True for any JSON integer >= 0. nlohmann stores programmatically built
/// non-negative ints as signed, so checking is_number_unsigned() alone would
/// reject them.
inline bool is_nonneg_integer(const nlohmann::json& v) {
    if (v.is_number_unsigned()) return true;
    return v.is_number_integer() && v.get<std::int64_t>() >= 0;
}

}  // namespace mergeprobe
