#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "gencone/common.hpp"
#include "gencone/vocab.hpp"

using gencone::Vocab;

TEST_CASE("build reserves special ids and sorts corpus tokens") {
  Vocab v = Vocab::build({"beta alpha", "alpha gamma?"});
  CHECK(v.size() == 5 + 4);  // alpha beta gamma ? plus the specials
  // specials take 0..4, then corpus tokens in byte order: ? < alpha < beta
  CHECK(v.id("?") == 5);
  CHECK(v.id("alpha") == 6);
  CHECK(v.id("beta") == 7);
  CHECK(v.token(Vocab::kPad) == "<pad>");
  CHECK(v.token(Vocab::kSep) == "<sep>");
  CHECK(v.id("unknown-token") == Vocab::kUnk);
}

TEST_CASE("two builds over permuted texts agree") {
  Vocab a = Vocab::build({"x y", "z w"});
  Vocab b = Vocab::build({"z w", "x y"});
  REQUIRE(a.size() == b.size());
  for (int i = 0; i < a.size(); ++i) CHECK(a.token(i) == b.token(i));
}

TEST_CASE("encode and decode round-trip question text") {
  Vocab v = Vocab::build({"What powers the mill at Drevuna?"});
  std::string q = "What powers the mill at Drevuna?";
  auto ids = v.encode(q);
  CHECK(ids.size() == 7);  // 6 words + '?'
  CHECK(v.decode(ids) == q);
}

TEST_CASE("decode skips special ids") {
  Vocab v = Vocab::build({"hello world"});
  std::vector<int> ids = {Vocab::kBos, v.id("hello"), Vocab::kSep,
                          v.id("world"), Vocab::kEos, Vocab::kPad};
  CHECK(v.decode(ids) == "hello world");
}

TEST_CASE("save and load preserve the vocabulary exactly") {
  Vocab v = Vocab::build({"alpha beta gamma", "delta?"});
  std::string path = "/tmp/gencone_vocab_test.json";
  v.save(path);
  Vocab w = Vocab::load(path);
  REQUIRE(w.size() == v.size());
  for (int i = 0; i < v.size(); ++i) CHECK(w.token(i) == v.token(i));
  std::remove(path.c_str());
}
