#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace gencone {

// Word-level, case-sensitive vocabulary. Ids 0..4 are reserved; corpus tokens
// follow in sorted order so two builds over the same texts agree exactly.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kSep = 4;

  static Vocab build(const std::vector<std::string>& texts);
  static Vocab load(const std::string& path);
  void save(const std::string& path) const;

  int id(const std::string& token) const;           // kUnk when absent
  const std::string& token(int id) const;
  std::vector<int> encode(const std::string& text) const;
  std::string decode(const std::vector<int>& ids) const;  // skips specials

  int size() const { return static_cast<int>(tokens_.size()); }

 private:
  void add(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace gencone
