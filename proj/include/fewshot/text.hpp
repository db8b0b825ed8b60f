#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace fewshot::text {

// Number of UTF-8 code points; continuation bytes are not counted.
std::size_t utf8_length(std::string_view s);

// Splits into code points, each returned as its byte sequence.
std::vector<std::string_view> utf8_chars(std::string_view s);

std::string_view trim(std::string_view s);

// ASCII lowercasing; other bytes pass through unchanged.
std::string to_lower(std::string_view s);

// Whitespace-delimited words (runs of ' ', '\t', '\n', '\r', '\f', '\v').
std::vector<std::string_view> split_whitespace(std::string_view s);

bool is_space(char c);

}  // namespace fewshot::text
