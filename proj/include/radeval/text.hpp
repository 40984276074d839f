#pragma once

#include <cctype>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace radeval {

// Lowercase alphanumeric tokens, the unit every metric and the decoder
// work in.
using TokenSequence = std::vector<std::string>;

namespace text {

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

// ASCII only; bytes of multi-byte UTF-8 sequences count as separators.
inline bool is_alnum(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u < 0x80 && std::isalnum(u) != 0;
}

inline char to_lower(char c) {
  return static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = to_lower(c);
  return out;
}

// Collapses every run of whitespace to one space and trims both ends.
inline std::string normalize_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char c : s) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

inline bool iequals(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (to_lower(a[i]) != to_lower(b[i])) return false;
  }
  return true;
}

// A token together with its byte offsets [begin, end) in the source.
struct Word {
  std::string text;
  std::size_t begin = 0;
  std::size_t end = 0;
};

inline std::vector<Word> words(std::string_view s, std::size_t base = 0) {
  std::vector<Word> out;
  std::size_t i = 0;
  while (i < s.size()) {
    if (!is_alnum(s[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < s.size() && is_alnum(s[j])) ++j;
    out.push_back({to_lower(s.substr(i, j - i)), base + i, base + j});
    i = j;
  }
  return out;
}

}  // namespace text

// Lowercases and splits on any non-alphanumeric character.
inline TokenSequence tokenize(std::string_view s) {
  TokenSequence out;
  for (auto& w : text::words(s)) out.push_back(std::move(w.text));
  return out;
}

inline std::string join(const TokenSequence& tokens, std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

}  // namespace radeval
