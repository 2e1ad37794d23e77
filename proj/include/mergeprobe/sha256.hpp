#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace mergeprobe {

/// SHA-256 of a byte buffer, as a lowercase hex string.
std::string sha256_hex(const void* data, std::size_t size);

inline std::string sha256_hex(const std::string& s) {
    return sha256_hex(s.data(), s.size());
}

/// SHA-256 of a file's contents. Throws Error(io_failure) if unreadable.
std::string sha256_file(const std::string& path);

}  // namespace mergeprobe
