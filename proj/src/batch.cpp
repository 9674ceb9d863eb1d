#include "gencone/batch.hpp"

#include <algorithm>

#include "gencone/common.hpp"
#include "gencone/text.hpp"

namespace gencone {

namespace {

int prefix_len(const IntMat& mask, int row) {
  int n = 0;
  while (n < mask.cols() && mask(row, n) == 1) ++n;
  for (int i = n; i < mask.cols(); ++i)
    if (mask(row, i) != 0) throw ContractError("mask is not prefix-true");
  return n;
}

void check_bits(const IntMat& bits, const IntMat& mask, const char* what) {
  if (bits.rows() != mask.rows() || bits.cols() != mask.cols())
    throw ContractError(std::string(what) + ": shape mismatch with mask");
  for (int r = 0; r < bits.rows(); ++r) {
    int set = 0;
    for (int c = 0; c < bits.cols(); ++c) {
      int v = bits(r, c);
      if (v != 0 && v != 1) throw ContractError(std::string(what) + ": non-bit value");
      if (v == 1 && mask(r, c) == 0)
        throw ContractError(std::string(what) + ": bit set on a masked position");
      set += v;
    }
    if (set == 0) throw ContractError(std::string(what) + ": row has no set bit");
  }
}

nlohmann::json mat_to_json(const IntMat& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

int TokenBatch::src_true_len(int b) const { return prefix_len(attention_mask, b); }
int TokenBatch::tgt_true_len(int b) const { return prefix_len(question_mask, b); }

void TokenBatch::validate(int max_src, int max_tgt) const {
  const int B = batch();
  if (B == 0) throw ContractError("empty batch");
  if (attention_mask.rows() != B || focus_bits.rows() != B ||
      answer_bits.rows() != B || question_ids.rows() != B ||
      question_mask.rows() != B ||
      static_cast<int>(sample_ids.size()) != B)
    throw ContractError("batch row counts disagree");
  if (attention_mask.cols() != src_len() || focus_bits.cols() != src_len() ||
      answer_bits.cols() != src_len())
    throw ContractError("source-side widths disagree");
  if (question_mask.cols() != tgt_len())
    throw ContractError("question-side widths disagree");
  if (src_len() > max_src) throw ContractError("source side exceeds maximum length");
  if (tgt_len() > max_tgt) throw ContractError("question side exceeds maximum length");
  for (int b = 0; b < B; ++b) {
    if (src_true_len(b) == 0) throw ContractError("sample with empty source");
    if (tgt_true_len(b) == 0) throw ContractError("sample with empty question");
    for (int c = 0; c < src_len(); ++c)
      if (attention_mask(b, c) == 0 && input_ids(b, c) != Vocab::kPad)
        throw ContractError("non-pad token on a masked source position");
  }
  check_bits(focus_bits, attention_mask, "focus_bits");
  check_bits(answer_bits, attention_mask, "answer_bits");
}

nlohmann::ordered_json TokenBatch::to_json() const {
  nlohmann::ordered_json j;
  j["input_ids"] = mat_to_json(input_ids);
  j["attention_mask"] = mat_to_json(attention_mask);
  j["focus_bits"] = mat_to_json(focus_bits);
  j["answer_bits"] = mat_to_json(answer_bits);
  j["question_ids"] = mat_to_json(question_ids);
  j["question_mask"] = mat_to_json(question_mask);
  j["sample_ids"] = sample_ids;
  return j;
}

BatchResult make_batch(const std::vector<data::ECQGSample>& samples,
                       const Vocab& vocab, int max_src, int max_tgt) {
  if (samples.empty()) throw ContractError("make_batch: no samples");
  struct Built {
    std::string id;
    std::vector<int> src, bits, gold;
  };
  std::vector<Built> kept;
  std::vector<std::string> dropped;
  for (const data::ECQGSample& s : samples) {
    std::vector<text::Token> ent_toks = text::tokenize(s.entity);
    std::vector<text::Token> ctx_toks = text::tokenize(s.context);
    std::vector<int> src;
    for (const text::Token& t : ent_toks) src.push_back(vocab.id(t.text));
    src.push_back(Vocab::kSep);
    int prefix = static_cast<int>(src.size());
    for (const text::Token& t : ctx_toks) {
      if (static_cast<int>(src.size()) >= max_src) break;
      src.push_back(vocab.id(t.text));
    }
    std::vector<int> bits;
    try {
      bits = data::align_span(ctx_toks, s.answer_start,
                              static_cast<int>(s.answer_text.size()), prefix,
                              max_src);
    } catch (const AlignmentError&) {
      dropped.push_back(s.id);
      continue;
    }
    std::vector<int> gold = vocab.encode(s.question);
    if (gold.empty()) {
      dropped.push_back(s.id);
      continue;
    }
    if (static_cast<int>(gold.size()) > max_tgt - 1) gold.resize(max_tgt - 1);
    gold.push_back(Vocab::kEos);
    bits.resize(src.size(), 0);
    kept.push_back({s.id, std::move(src), std::move(bits), std::move(gold)});
  }
  if (kept.empty()) throw ContractError("make_batch: every sample was dropped");

  int S = 0, T = 0;
  for (const Built& b : kept) {
    S = std::max(S, static_cast<int>(b.src.size()));
    T = std::max(T, static_cast<int>(b.gold.size()));
  }
  const int B = static_cast<int>(kept.size());
  TokenBatch batch;
  batch.input_ids = IntMat::Constant(B, S, Vocab::kPad);
  batch.attention_mask = IntMat::Zero(B, S);
  batch.focus_bits = IntMat::Zero(B, S);
  batch.answer_bits = IntMat::Zero(B, S);
  batch.question_ids = IntMat::Constant(B, T, Vocab::kPad);
  batch.question_mask = IntMat::Zero(B, T);
  for (int b = 0; b < B; ++b) {
    const Built& k = kept[static_cast<size_t>(b)];
    batch.sample_ids.push_back(k.id);
    for (size_t i = 0; i < k.src.size(); ++i) {
      int c = static_cast<int>(i);
      batch.input_ids(b, c) = k.src[i];
      batch.attention_mask(b, c) = 1;
      // The gold answer span is both the focus target and the answer target.
      batch.focus_bits(b, c) = k.bits[i];
      batch.answer_bits(b, c) = k.bits[i];
    }
    for (size_t i = 0; i < k.gold.size(); ++i) {
      batch.question_ids(b, static_cast<int>(i)) = k.gold[i];
      batch.question_mask(b, static_cast<int>(i)) = 1;
    }
  }
  batch.validate(max_src, max_tgt);
  return {std::move(batch), std::move(dropped)};
}

}  // namespace gencone
