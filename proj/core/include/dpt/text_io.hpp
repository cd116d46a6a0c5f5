#pragma once

#include <charconv>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dpt {

// Whole-file reads and writes. Missing or unreadable files raise IoError
// naming the path.
std::string read_file(const std::filesystem::path& path);
// Creates missing parent directories.
void write_file(const std::filesystem::path& path, std::string_view contents);

// Lenient UTF-8 decoding: malformed bytes decode to U+FFFD.
std::u32string utf8_decode(std::string_view s);
std::string utf8_encode(std::u32string_view s);
void utf8_append(std::string& out, char32_t c);

std::string trim(std::string_view s);

// `key = value` lines with '#' comments and blank lines skipped. A line
// without '=' raises ConfigError naming `what` and the line number.
std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text, std::string_view what);

// Whole-string numeric parse of a config value; ConfigError naming `key`
// otherwise.
template <typename N>
N parse_number(const std::string& key, const std::string& value);

// Shortest text that parses back to exactly `x`.
std::string format_double(double x);

}  // namespace dpt
