#include "gencone/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <json.hpp>

#include "gencone/common.hpp"
#include "gencone/text.hpp"

namespace gencone {

namespace {
const std::vector<std::string> kSpecials = {"<pad>", "<unk>", "<bos>", "<eos>",
                                            "<sep>"};
}

void Vocab::add(const std::string& token) {
  index_[token] = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
}

Vocab Vocab::build(const std::vector<std::string>& texts) {
  std::set<std::string> unique;
  for (const std::string& t : texts)
    for (const text::Token& tok : text::tokenize(t)) unique.insert(tok.text);
  Vocab v;
  for (const std::string& s : kSpecials) v.add(s);
  for (const std::string& s : unique)
    if (!v.index_.count(s)) v.add(s);
  return v;
}

int Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw ContractError("token id out of range");
  return tokens_[id];
}

std::vector<int> Vocab::encode(const std::string& s) const {
  std::vector<int> out;
  for (const text::Token& tok : text::tokenize(s)) out.push_back(id(tok.text));
  return out;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::vector<std::string> words;
  for (int i : ids) {
    if (i == kPad || i == kBos || i == kEos || i == kSep) continue;
    words.push_back(token(i));
  }
  return text::detokenize(words);
}

void Vocab::save(const std::string& path) const {
  nlohmann::ordered_json j;
  j["tokens"] = tokens_;
  std::ofstream out(path);
  if (!out) throw Error("cannot write vocab file: " + path);
  out << j.dump(2) << "\n";
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read vocab file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  if (!j.contains("tokens") || !j["tokens"].is_array())
    throw ParseError(path + ": missing tokens array");
  Vocab v;
  for (const auto& tok : j["tokens"]) v.add(tok.get<std::string>());
  if (v.size() < static_cast<int>(kSpecials.size()))
    throw ParseError(path + ": vocabulary smaller than the reserved id range");
  for (size_t k = 0; k < kSpecials.size(); ++k)
    if (v.tokens_[k] != kSpecials[k])
      throw ParseError(path + ": reserved ids do not match");
  return v;
}

}  // namespace gencone
