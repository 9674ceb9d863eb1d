#include "gencone/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "gencone/common.hpp"

namespace gencone::metrics {

using nlohmann::json;
using nlohmann::ordered_json;

std::vector<std::string> metric_tokenize(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// ---- Porter stemmer -------------------------------------------------------

namespace {

bool is_consonant(const std::string& w, size_t i) {
  char c = w[i];
  if (c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u') return false;
  if (c == 'y') return i == 0 ? true : !is_consonant(w, i - 1);
  return true;
}

// Number of VC sequences in w[0..end).
int measure(const std::string& w, size_t end) {
  int m = 0;
  size_t i = 0;
  while (i < end && is_consonant(w, i)) ++i;
  while (i < end) {
    while (i < end && !is_consonant(w, i)) ++i;
    if (i == end) break;
    ++m;
    while (i < end && is_consonant(w, i)) ++i;
  }
  return m;
}

bool has_vowel(const std::string& w, size_t end) {
  for (size_t i = 0; i < end; ++i)
    if (!is_consonant(w, i)) return true;
  return false;
}

bool double_consonant(const std::string& w) {
  size_t n = w.size();
  return n >= 2 && w[n - 1] == w[n - 2] && is_consonant(w, n - 1);
}

// consonant-vowel-consonant ending where the final consonant is not w, x, y.
bool cvc(const std::string& w) {
  size_t n = w.size();
  if (n < 3) return false;
  if (!is_consonant(w, n - 3) || is_consonant(w, n - 2) || !is_consonant(w, n - 1))
    return false;
  char c = w[n - 1];
  return c != 'w' && c != 'x' && c != 'y';
}

bool ends_with(const std::string& w, const char* suf) {
  size_t len = std::strlen(suf);
  return w.size() >= len && w.compare(w.size() - len, len, suf) == 0;
}

// Replaces `suf` with `rep` when the stem before it has measure > m_min.
bool replace_if(std::string& w, const char* suf, const char* rep, int m_min) {
  size_t len = std::strlen(suf);
  if (!ends_with(w, suf)) return false;
  size_t stem = w.size() - len;
  if (measure(w, stem) > m_min) w = w.substr(0, stem) + rep;
  return true;  // suffix matched, rule consumed either way
}

}  // namespace

std::string porter_stem(const std::string& word) {
  std::string w = word;
  if (w.size() <= 2) return w;

  // Step 1a
  if (ends_with(w, "sses")) w.resize(w.size() - 2);
  else if (ends_with(w, "ies")) w.resize(w.size() - 2);
  else if (!ends_with(w, "ss") && ends_with(w, "s")) w.resize(w.size() - 1);

  // Step 1b
  bool fix_ending = false;
  if (ends_with(w, "eed")) {
    if (measure(w, w.size() - 3) > 0) w.resize(w.size() - 1);
  } else if (ends_with(w, "ed") && has_vowel(w, w.size() - 2)) {
    w.resize(w.size() - 2);
    fix_ending = true;
  } else if (ends_with(w, "ing") && has_vowel(w, w.size() - 3)) {
    w.resize(w.size() - 3);
    fix_ending = true;
  }
  if (fix_ending) {
    if (ends_with(w, "at") || ends_with(w, "bl") || ends_with(w, "iz")) {
      w.push_back('e');
    } else if (double_consonant(w) && !ends_with(w, "l") && !ends_with(w, "s") &&
               !ends_with(w, "z")) {
      w.resize(w.size() - 1);
    } else if (measure(w, w.size()) == 1 && cvc(w)) {
      w.push_back('e');
    }
  }

  // Step 1c
  if (ends_with(w, "y") && has_vowel(w, w.size() - 1)) w.back() = 'i';

  // Step 2 (m > 0)
  static const std::pair<const char*, const char*> step2[] = {
      {"ational", "ate"}, {"tional", "tion"}, {"enci", "ence"}, {"anci", "ance"},
      {"izer", "ize"},    {"abli", "able"},   {"alli", "al"},   {"entli", "ent"},
      {"eli", "e"},       {"ousli", "ous"},   {"ization", "ize"}, {"ation", "ate"},
      {"ator", "ate"},    {"alism", "al"},    {"iveness", "ive"}, {"fulness", "ful"},
      {"ousness", "ous"}, {"aliti", "al"},    {"iviti", "ive"},   {"biliti", "ble"}};
  for (const auto& [suf, rep] : step2)
    if (replace_if(w, suf, rep, 0)) break;

  // Step 3 (m > 0)
  static const std::pair<const char*, const char*> step3[] = {
      {"icate", "ic"}, {"ative", ""}, {"alize", "al"}, {"iciti", "ic"},
      {"ical", "ic"},  {"ful", ""},   {"ness", ""}};
  for (const auto& [suf, rep] : step3)
    if (replace_if(w, suf, rep, 0)) break;

  // Step 4 (m > 1)
  static const char* step4[] = {"al",  "ance", "ence", "er",  "ic",  "able",
                                "ible", "ant",  "ement", "ment", "ent"};
  bool done4 = false;
  for (const char* suf : step4) {
    if (ends_with(w, suf)) {
      size_t stem = w.size() - std::strlen(suf);
      if (measure(w, stem) > 1) w.resize(stem);
      done4 = true;
      break;
    }
  }
  if (!done4 && ends_with(w, "ion")) {
    size_t stem = w.size() - 3;
    if (stem > 0 && (w[stem - 1] == 's' || w[stem - 1] == 't') &&
        measure(w, stem) > 1)
      w.resize(stem);
    done4 = true;
  }
  if (!done4) {
    static const char* tail4[] = {"ou", "ism", "ate", "iti", "ous", "ive", "ize"};
    for (const char* suf : tail4) {
      if (ends_with(w, suf)) {
        size_t stem = w.size() - std::strlen(suf);
        if (measure(w, stem) > 1) w.resize(stem);
        break;
      }
    }
  }

  // Step 5a
  if (ends_with(w, "e")) {
    size_t stem = w.size() - 1;
    int m = measure(w, stem);
    std::string without = w.substr(0, stem);
    if (m > 1 || (m == 1 && !cvc(without))) w = std::move(without);
  }
  // Step 5b
  if (measure(w, w.size()) > 1 && double_consonant(w) && ends_with(w, "l"))
    w.resize(w.size() - 1);
  return w;
}

// ---- BLEU -----------------------------------------------------------------

namespace {

void check_lengths(const std::vector<std::string>& c,
                   const std::vector<std::string>& r) {
  if (c.size() != r.size())
    throw ContractError("candidate and reference counts differ");
}

std::map<std::vector<std::string>, int> ngram_counts(
    const std::vector<std::string>& toks, int k) {
  std::map<std::vector<std::string>, int> counts;
  if (static_cast<int>(toks.size()) < k) return counts;
  for (size_t i = 0; i + static_cast<size_t>(k) <= toks.size(); ++i)
    ++counts[std::vector<std::string>(toks.begin() + static_cast<long>(i),
                                      toks.begin() + static_cast<long>(i) + k)];
  return counts;
}

}  // namespace

double compute_bleu(const std::vector<std::string>& candidates,
                    const std::vector<std::string>& references, int n,
                    bool smooth) {
  check_lengths(candidates, references);
  if (n < 1 || n > 4) throw ContractError("BLEU order must be 1..4");
  if (candidates.empty()) return 0.0;
  std::vector<long> matched(static_cast<size_t>(n), 0);
  std::vector<long> total(static_cast<size_t>(n), 0);
  long cand_len = 0, ref_len = 0;
  for (size_t p = 0; p < candidates.size(); ++p) {
    std::vector<std::string> c = metric_tokenize(candidates[p]);
    std::vector<std::string> r = metric_tokenize(references[p]);
    cand_len += static_cast<long>(c.size());
    ref_len += static_cast<long>(r.size());
    for (int k = 1; k <= n; ++k) {
      auto cc = ngram_counts(c, k);
      auto rc = ngram_counts(r, k);
      for (const auto& [gram, count] : cc) {
        total[static_cast<size_t>(k - 1)] += count;
        auto it = rc.find(gram);
        if (it != rc.end())
          matched[static_cast<size_t>(k - 1)] += std::min(count, it->second);
      }
    }
  }
  if (cand_len == 0) return 0.0;
  double log_sum = 0.0;
  for (int k = 1; k <= n; ++k) {
    double num = static_cast<double>(matched[static_cast<size_t>(k - 1)]);
    double den = static_cast<double>(total[static_cast<size_t>(k - 1)]);
    if (smooth && k > 1) {
      num += 1.0;
      den += 1.0;
    }
    if (num <= 0.0 || den <= 0.0) return 0.0;
    log_sum += std::log(num / den);
  }
  double precision_geo = std::exp(log_sum / n);
  double bp = cand_len >= ref_len
                  ? 1.0
                  : std::exp(1.0 - static_cast<double>(ref_len) /
                                       static_cast<double>(cand_len));
  return 100.0 * bp * precision_geo;
}

// ---- ROUGE-L --------------------------------------------------------------

namespace {

int lcs_len(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<int> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (size_t i = 1; i <= a.size(); ++i) {
    for (size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1
                                    : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

double compute_rouge_l(const std::vector<std::string>& candidates,
                       const std::vector<std::string>& references, double beta) {
  check_lengths(candidates, references);
  if (candidates.empty()) return 0.0;
  double sum = 0.0;
  for (size_t p = 0; p < candidates.size(); ++p) {
    std::vector<std::string> c = metric_tokenize(candidates[p]);
    std::vector<std::string> r = metric_tokenize(references[p]);
    if (c.empty() || r.empty()) continue;
    int l = lcs_len(c, r);
    if (l == 0) continue;
    double prec = static_cast<double>(l) / static_cast<double>(c.size());
    double rec = static_cast<double>(l) / static_cast<double>(r.size());
    double b2 = beta * beta;
    sum += (1.0 + b2) * prec * rec / (rec + b2 * prec);
  }
  return 100.0 * sum / static_cast<double>(candidates.size());
}

// ---- METEOR ---------------------------------------------------------------

namespace {

struct MatchPair {
  int cand, ref;
};

// First-available alignment for one match stage; returns matched index pairs
// and marks consumed positions.
void align_stage(const std::vector<std::string>& cand,
                 const std::vector<std::string>& ref, std::vector<bool>& cand_used,
                 std::vector<bool>& ref_used, std::vector<MatchPair>& matches) {
  for (size_t i = 0; i < cand.size(); ++i) {
    if (cand_used[i]) continue;
    for (size_t j = 0; j < ref.size(); ++j) {
      if (ref_used[j]) continue;
      if (cand[i] == ref[j]) {
        cand_used[i] = true;
        ref_used[j] = true;
        matches.push_back({static_cast<int>(i), static_cast<int>(j)});
        break;
      }
    }
  }
}

double meteor_pair(const std::vector<std::string>& cand,
                   const std::vector<std::string>& ref) {
  if (cand.empty() || ref.empty()) return 0.0;
  std::vector<bool> cand_used(cand.size(), false), ref_used(ref.size(), false);
  std::vector<MatchPair> matches;
  align_stage(cand, ref, cand_used, ref_used, matches);
  std::vector<std::string> cand_stem(cand.size()), ref_stem(ref.size());
  for (size_t i = 0; i < cand.size(); ++i) cand_stem[i] = porter_stem(cand[i]);
  for (size_t j = 0; j < ref.size(); ++j) ref_stem[j] = porter_stem(ref[j]);
  align_stage(cand_stem, ref_stem, cand_used, ref_used, matches);
  if (matches.empty()) return 0.0;
  double m = static_cast<double>(matches.size());
  double prec = m / static_cast<double>(cand.size());
  double rec = m / static_cast<double>(ref.size());
  double fmean = prec * rec / (0.9 * prec + 0.1 * rec);
  std::sort(matches.begin(), matches.end(),
            [](const MatchPair& a, const MatchPair& b) { return a.cand < b.cand; });
  int chunks = 0;
  for (size_t k = 0; k < matches.size(); ++k) {
    if (k == 0 || matches[k].cand != matches[k - 1].cand + 1 ||
        matches[k].ref != matches[k - 1].ref + 1)
      ++chunks;
  }
  double penalty = 0.5 * std::pow(static_cast<double>(chunks) / m, 3.0);
  return fmean * (1.0 - penalty);
}

}  // namespace

double compute_meteor(const std::vector<std::string>& candidates,
                      const std::vector<std::string>& references) {
  check_lengths(candidates, references);
  if (candidates.empty()) return 0.0;
  double sum = 0.0;
  for (size_t p = 0; p < candidates.size(); ++p)
    sum += meteor_pair(metric_tokenize(candidates[p]),
                       metric_tokenize(references[p]));
  return 100.0 * sum / static_cast<double>(candidates.size());
}

// ---- Corpus report --------------------------------------------------------

ordered_json EvalReport::to_json() const {
  ordered_json j;
  j["bleu1"] = bleu1;
  j["bleu2"] = bleu2;
  j["bleu3"] = bleu3;
  j["bleu4"] = bleu4;
  j["meteor"] = meteor;
  j["rouge_l"] = rouge_l;
  j["n"] = n;
  j["tokenization"] = "lowercase alphanumeric runs";
  ordered_json per = ordered_json::array();
  for (const PerSample& s : per_sample) {
    ordered_json e;
    e["id"] = s.id;
    e["bleu4"] = s.bleu4;
    e["rouge_l"] = s.rouge_l;
    per.push_back(std::move(e));
  }
  j["per_sample"] = std::move(per);
  return j;
}

EvalReport EvalReport::from_json(const json& j) {
  EvalReport r;
  r.bleu1 = j.at("bleu1").get<double>();
  r.bleu2 = j.at("bleu2").get<double>();
  r.bleu3 = j.at("bleu3").get<double>();
  r.bleu4 = j.at("bleu4").get<double>();
  r.meteor = j.at("meteor").get<double>();
  r.rouge_l = j.at("rouge_l").get<double>();
  r.n = j.value("n", 0);
  if (j.contains("per_sample")) {
    for (const auto& e : j.at("per_sample")) {
      PerSample s;
      s.id = e.at("id").get<std::string>();
      s.bleu4 = e.at("bleu4").get<double>();
      s.rouge_l = e.at("rouge_l").get<double>();
      r.per_sample.push_back(std::move(s));
    }
  }
  return r;
}

std::string EvalReport::table_md(const std::string& row_label) const {
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return std::string(buf);
  };
  std::ostringstream os;
  os << "| Model | BLEU-1 | BLEU-2 | BLEU-3 | BLEU-4 | METEOR | ROUGE_L |\n";
  os << "|---|---|---|---|---|---|---|\n";
  os << "| " << row_label << " | " << fmt(bleu1) << " | " << fmt(bleu2) << " | "
     << fmt(bleu3) << " | " << fmt(bleu4) << " | " << fmt(meteor) << " | "
     << fmt(rouge_l) << " |\n";
  return os.str();
}

EvalReport evaluate_corpus(const std::vector<IdText>& predictions,
                           const std::vector<IdText>& references) {
  std::map<std::string, std::string> ref_by_id;
  for (const IdText& r : references) {
    if (!ref_by_id.emplace(r.first, r.second).second)
      throw ContractError("duplicate reference id: " + r.first);
  }
  std::map<std::string, std::string> pred_by_id;
  for (const IdText& p : predictions) {
    if (!pred_by_id.emplace(p.first, p.second).second)
      throw ContractError("duplicate prediction id: " + p.first);
  }
  std::vector<std::string> missing;
  for (const auto& [id, _] : pred_by_id)
    if (!ref_by_id.count(id)) missing.push_back("reference for " + id);
  for (const auto& [id, _] : ref_by_id)
    if (!pred_by_id.count(id)) missing.push_back("prediction for " + id);
  if (!missing.empty()) {
    std::string msg = "unaligned ids:";
    for (const std::string& m : missing) msg += " " + m + ";";
    throw ContractError(msg);
  }

  std::vector<std::string> cands, refs;
  EvalReport report;
  for (const auto& [id, pred] : pred_by_id) {
    const std::string& ref = ref_by_id.at(id);
    cands.push_back(pred);
    refs.push_back(ref);
    EvalReport::PerSample s;
    s.id = id;
    s.bleu4 = compute_bleu({pred}, {ref}, 4);
    s.rouge_l = compute_rouge_l({pred}, {ref});
    report.per_sample.push_back(std::move(s));
  }
  report.n = static_cast<int>(cands.size());
  report.bleu1 = compute_bleu(cands, refs, 1);
  report.bleu2 = compute_bleu(cands, refs, 2);
  report.bleu3 = compute_bleu(cands, refs, 3);
  report.bleu4 = compute_bleu(cands, refs, 4);
  report.meteor = compute_meteor(cands, refs);
  report.rouge_l = compute_rouge_l(cands, refs);
  return report;
}

std::vector<IdText> read_id_text_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open file: " + path);
  std::vector<IdText> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      out.emplace_back(j.at("id").get<std::string>(),
                       j.at("text").get<std::string>());
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_id_text_jsonl(const std::vector<IdText>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write file: " + path);
  for (const IdText& r : rows) {
    ordered_json j;
    j["id"] = r.first;
    j["text"] = r.second;
    out << j.dump() << "\n";
  }
}

}  // namespace gencone::metrics
