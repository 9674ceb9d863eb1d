#pragma once

#include <string>
#include <vector>

namespace gencone::text {

// One surface token with byte offsets [begin, end) into the source string.
struct Token {
  std::string text;
  int begin = 0;
  int end = 0;
};

// Splits into alphanumeric runs and single punctuation characters.
// Bytes >= 0x80 count as word characters so UTF-8 words stay in one piece.
std::vector<Token> tokenize(const std::string& s);

// Whitespace-separated words; dataset length statistics are on this scale.
std::vector<std::string> split_whitespace(const std::string& s);

std::string to_lower(std::string s);

// Lowercase plus stripping of surrounding whitespace/punctuation. Groups
// trivially variant answer strings before frequency voting.
std::string normalize_surface(const std::string& s);

// Case-insensitive whole-word token-sequence search of `needle` inside
// `haystack`. "villa" does not match inside "villanova".
bool contains_token_seq(const std::string& haystack, const std::string& needle);

// Joins tokens back into display text: words separated by spaces, closing
// punctuation attached to the left, openers attached to the right.
std::string detokenize(const std::vector<std::string>& tokens);

// Byte offset of the cp_index-th Unicode codepoint, or -1 when the string is
// shorter. SQuAD offsets count codepoints; internal offsets count bytes.
int byte_offset_of_codepoint(const std::string& s, int cp_index);

}  // namespace gencone::text
