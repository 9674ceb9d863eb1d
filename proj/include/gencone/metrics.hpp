#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace gencone::metrics {

// Lowercased alphanumeric runs; punctuation and whitespace both separate.
std::vector<std::string> metric_tokenize(const std::string& s);

// Porter (1980) stemming, used by the METEOR stem-match stage.
std::string porter_stem(const std::string& word);

// Corpus-level BLEU-n with brevity penalty, in [0, 100]. `smooth` applies
// add-one smoothing to orders above 1; off by default.
double compute_bleu(const std::vector<std::string>& candidates,
                    const std::vector<std::string>& references, int n,
                    bool smooth = false);

// Mean per-pair LCS F-measure in [0, 100]. beta weighs recall; the default 1
// is the plain harmonic mean.
double compute_rouge_l(const std::vector<std::string>& candidates,
                       const std::vector<std::string>& references,
                       double beta = 1.0);

// Mean per-pair METEOR (exact + stem matching, alpha = 0.9, chunk penalty
// 0.5 * (chunks/m)^3), in [0, 100].
double compute_meteor(const std::vector<std::string>& candidates,
                      const std::vector<std::string>& references);

struct EvalReport {
  double bleu1 = 0, bleu2 = 0, bleu3 = 0, bleu4 = 0;
  double meteor = 0, rouge_l = 0;
  int n = 0;
  struct PerSample {
    std::string id;
    double bleu4 = 0;
    double rouge_l = 0;
  };
  std::vector<PerSample> per_sample;

  nlohmann::ordered_json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  // One table row in the column order BLEU-1..4, METEOR, ROUGE_L.
  std::string table_md(const std::string& row_label) const;
};

using IdText = std::pair<std::string, std::string>;

// Aligns predictions to references by id; missing ids on either side are an
// error listing the offenders.
EvalReport evaluate_corpus(const std::vector<IdText>& predictions,
                           const std::vector<IdText>& references);

std::vector<IdText> read_id_text_jsonl(const std::string& path);
void write_id_text_jsonl(const std::vector<IdText>& rows, const std::string& path);

}  // namespace gencone::metrics
