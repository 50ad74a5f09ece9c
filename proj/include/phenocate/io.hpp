#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace phenocate::io {

// Shortest decimal text that round-trips the double exactly.
std::string fmt(double v);

std::vector<std::string> split_csv_line(std::string_view line);

// Parses a full numeric token; throws DataError naming `what` on failure.
double parse_double(std::string_view token, const std::string& what);

void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

// 64-bit FNV-1a, rendered as 16 hex digits.
std::string fnv1a_hex(std::string_view data);

}  // namespace phenocate::io
