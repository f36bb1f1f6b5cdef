#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace gritcap::unicode {

// Throws ValidationError naming the byte offset of the first malformed sequence.
std::vector<char32_t> decode_utf8(std::string_view text);
void append_utf8(std::string& out, char32_t cp);

char32_t to_lower(char32_t cp);
bool is_punctuation(char32_t cp);
bool is_space(char32_t cp);

}  // namespace gritcap::unicode
