#pragma once

#include <string>
#include <string_view>

namespace sttk::unicode {

// Invalid sequences decode to U+FFFD.
std::u32string decode_utf8(std::string_view s);
std::string encode_utf8(std::u32string_view s);
void append_utf8(std::string& out, char32_t cp);

bool is_punctuation(char32_t cp);
bool is_space(char32_t cp);
char32_t to_lower(char32_t cp);

}  // namespace sttk::unicode
