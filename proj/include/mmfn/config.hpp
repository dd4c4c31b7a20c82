#pragma once

// Line-oriented `key = value` files with `#` comments.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mmfn {

// Keys in file order. Duplicate keys and lines without '=' are ConfigErrors.
std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text);

std::uint64_t parse_size(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace mmfn
