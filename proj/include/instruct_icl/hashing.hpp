#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace instruct_icl {

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file_hex(const std::filesystem::path& path);

std::string base64_encode(std::string_view bytes);

std::string read_file_bytes(const std::filesystem::path& path);

// Writes through a sibling temp file and renames, so readers never observe a
// partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace instruct_icl
