#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace cmie {

/// SHA-256 of the given bytes, lowercase hex.
std::string sha256_hex(std::string_view bytes);

/// SHA-256 of a file's contents, lowercase hex.
std::string sha256_file(const std::filesystem::path& path);

/// Standard base64, with padding.
std::string base64_encode(std::string_view bytes);

} // namespace cmie
