#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gencone/text.hpp"

namespace gencone::data {

struct RawAnswer {
  std::string text;
  int char_start = 0;
};

struct RawQA {
  std::string id;
  std::string title;
  std::string context;
  std::string question;
  std::vector<RawAnswer> answers;
  bool is_impossible = false;
};

struct ECQGSample {
  std::string id;
  std::string context;
  std::string entity;
  std::string question;
  std::string answer_text;
  int answer_start = 0;
};

struct DatasetStats {
  std::string split;
  int size = 0;
  double entity_len_mean = 0.0;
  int entity_len_min = 0;
  int entity_len_max = 0;
  double context_len_mean = 0.0;
  int context_len_min = 0;
  int context_len_max = 0;
};

struct NERSpan {
  std::string text;
  int begin = 0;  // byte offsets into the tagged text
  int end = 0;
  std::string label;
};

class NERProvider {
 public:
  virtual ~NERProvider() = default;
  virtual std::vector<NERSpan> entities(const std::string& text) const = 0;
  virtual std::string name() const = 0;
  virtual std::string version() const = 0;
};

// Deterministic provider backed by a fixed surface-form list. Matches are
// case-insensitive whole-word token sequences.
class DictionaryNER : public NERProvider {
 public:
  explicit DictionaryNER(std::vector<std::string> entries,
                         std::string label = "ENT");
  static DictionaryNER from_file(const std::string& path);

  std::vector<NERSpan> entities(const std::string& text) const override;
  std::string name() const override { return "dictionary"; }
  std::string version() const override { return "1"; }

 private:
  struct Entry {
    std::vector<std::string> lower_tokens;
    std::string surface;
  };
  std::vector<Entry> entries_;
  std::string label_;
};

// Shells out to a tagger command. The command receives the text on stdin and
// must print a JSON array of {"text","start","end","label"} objects.
class ExternalNER : public NERProvider {
 public:
  ExternalNER(std::string command, std::string tool_name, std::string tool_version);
  std::vector<NERSpan> entities(const std::string& text) const override;
  std::string name() const override { return name_; }
  std::string version() const override { return version_; }

 private:
  std::string command_, name_, version_;
};

std::vector<RawQA> parse_squad(const nlohmann::json& doc,
                               const std::string& source_name);
std::vector<RawQA> parse_squad_file(const std::string& path);

// Majority vote on normalized answer text; ties broken by shortest normalized
// text, then smallest char_start.
RawAnswer vote_answer(const std::vector<RawAnswer>& answers);

// Rule 1: the article title, when the question contains it as a whole-word
// token sequence. Rule 2: the single entity shared by question and context.
std::optional<std::string> assign_central_entity(const std::string& title,
                                                 const std::string& context,
                                                 const std::string& question,
                                                 const NERProvider& ner);

struct BuildOptions {
  double val_fraction = 0.074;
  std::uint64_t seed = 13;
};

struct BuiltDataset {
  std::vector<ECQGSample> train, validation, test;
  int removed_unanswerable = 0;
  int dropped_no_entity = 0;
  int dropped_answer_is_entity = 0;
  int dropped_entity_absent = 0;
};

// The dev corpus becomes the test split; the train corpus is partitioned into
// train/validation by a seeded shuffle. Output splits are sorted by id.
BuiltDataset build_dataset(const std::vector<RawQA>& train_corpus,
                           const std::vector<RawQA>& dev_corpus,
                           const NERProvider& ner, const BuildOptions& opt);

DatasetStats compute_stats(const std::vector<ECQGSample>& samples,
                           const std::string& split);

// Bit vector over the model input sequence (entity, separator, context).
// `context_tokens` carries byte offsets into the context; the first context
// token sits at position `prefix_len`. Token i is set iff its byte range
// overlaps [answer_start, answer_start + answer_len). Prefix positions stay 0.
std::vector<int> align_span(const std::vector<text::Token>& context_tokens,
                            int answer_start, int answer_len, int prefix_len,
                            int max_len);

void write_jsonl(const std::vector<ECQGSample>& samples, const std::string& path);
std::vector<ECQGSample> read_jsonl(const std::string& path);

nlohmann::ordered_json stats_to_json(const DatasetStats& s);

}  // namespace gencone::data
