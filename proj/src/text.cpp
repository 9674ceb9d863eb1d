#include "gencone/text.hpp"

#include <algorithm>
#include <cctype>

namespace gencone::text {

namespace {

inline bool is_word_byte(unsigned char c) {
  return std::isalnum(c) || c >= 0x80;
}

inline bool is_space_byte(unsigned char c) { return std::isspace(c) != 0; }

const std::string kClosers = ".,!?;:)]}%'\"";
const std::string kOpeners = "([{";

}  // namespace

std::vector<Token> tokenize(const std::string& s) {
  std::vector<Token> out;
  const int n = static_cast<int>(s.size());
  int i = 0;
  while (i < n) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    if (is_space_byte(c)) {
      ++i;
      continue;
    }
    if (is_word_byte(c)) {
      int j = i;
      while (j < n && is_word_byte(static_cast<unsigned char>(s[j]))) ++j;
      out.push_back({s.substr(i, j - i), i, j});
      i = j;
    } else {
      out.push_back({s.substr(i, 1), i, i + 1});
      ++i;
    }
  }
  return out;
}

std::vector<std::string> split_whitespace(const std::string& s) {
  std::vector<std::string> out;
  const int n = static_cast<int>(s.size());
  int i = 0;
  while (i < n) {
    while (i < n && is_space_byte(static_cast<unsigned char>(s[i]))) ++i;
    int j = i;
    while (j < n && !is_space_byte(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string to_lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string normalize_surface(const std::string& s) {
  int b = 0;
  int e = static_cast<int>(s.size());
  auto strippable = [&](unsigned char c) {
    return !is_word_byte(c);
  };
  while (b < e && strippable(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && strippable(static_cast<unsigned char>(s[e - 1]))) --e;
  return to_lower(s.substr(b, e - b));
}

bool contains_token_seq(const std::string& haystack, const std::string& needle) {
  auto htoks = tokenize(to_lower(haystack));
  auto ntoks = tokenize(to_lower(needle));
  if (ntoks.empty()) return false;
  if (htoks.size() < ntoks.size()) return false;
  for (size_t i = 0; i + ntoks.size() <= htoks.size(); ++i) {
    bool all = true;
    for (size_t k = 0; k < ntoks.size(); ++k) {
      if (htoks[i + k].text != ntoks[k].text) {
        all = false;
        break;
      }
    }
    if (all) return true;
  }
  return false;
}

std::string detokenize(const std::vector<std::string>& tokens) {
  std::string out;
  bool glue_next = false;
  for (const auto& tok : tokens) {
    if (tok.empty()) continue;
    const bool single = tok.size() == 1;
    const bool closer = single && kClosers.find(tok[0]) != std::string::npos;
    const bool opener = single && kOpeners.find(tok[0]) != std::string::npos;
    if (out.empty() || closer || glue_next) {
      out += tok;
    } else {
      out += ' ';
      out += tok;
    }
    glue_next = opener || (single && tok[0] == '\'');
  }
  return out;
}

int byte_offset_of_codepoint(const std::string& s, int cp_index) {
  if (cp_index < 0) return -1;
  int count = 0;
  for (int i = 0; i <= static_cast<int>(s.size()); ++i) {
    if (i == static_cast<int>(s.size())) {
      return count == cp_index ? i : -1;
    }
    unsigned char c = static_cast<unsigned char>(s[i]);
    const bool continuation = (c & 0xC0) == 0x80;
    if (!continuation) {
      if (count == cp_index) return i;
      ++count;
    }
  }
  return -1;
}

}  // namespace gencone::text
