#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "gencone/data.hpp"
#include "gencone/vocab.hpp"

namespace gencone {

using IntMat = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;

// One padded batch. The source sequence is entity <sep> context; question_ids
// holds the gold question followed by <eos>. Masks are prefix-true, so a
// sample's live tokens always occupy a leading slice.
struct TokenBatch {
  IntMat input_ids;
  IntMat attention_mask;
  IntMat focus_bits;
  IntMat answer_bits;
  IntMat question_ids;
  IntMat question_mask;
  std::vector<std::string> sample_ids;

  int batch() const { return static_cast<int>(input_ids.rows()); }
  int src_len() const { return static_cast<int>(input_ids.cols()); }
  int tgt_len() const { return static_cast<int>(question_ids.cols()); }
  int src_true_len(int b) const;
  int tgt_true_len(int b) const;

  void validate(int max_src, int max_tgt) const;

  // Serialized with the field order above; used by the divergence dump.
  nlohmann::ordered_json to_json() const;
};

struct BatchResult {
  TokenBatch batch;
  std::vector<std::string> dropped_ids;  // answer span truncated away, etc.
};

BatchResult make_batch(const std::vector<data::ECQGSample>& samples,
                       const Vocab& vocab, int max_src, int max_tgt);

}  // namespace gencone
