#include "gencone/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "gencone/common.hpp"

namespace gencone::data {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string path_str(const std::string& source, const std::string& inner) {
  return source + ": " + inner;
}

const json& require(const json& obj, const char* key, const std::string& where,
                    const std::string& source) {
  if (!obj.is_object() || !obj.contains(key))
    throw ParseError(path_str(source, where + ": missing \"" + key + "\""));
  return obj.at(key);
}

}  // namespace

std::vector<RawQA> parse_squad(const json& doc, const std::string& source_name) {
  const json& data = require(doc, "data", "$", source_name);
  if (!data.is_array())
    throw ParseError(path_str(source_name, "$.data: expected an array"));
  std::vector<RawQA> out;
  std::set<std::string> seen_ids;
  for (size_t ai = 0; ai < data.size(); ++ai) {
    const json& article = data[ai];
    std::string apath = "$.data[" + std::to_string(ai) + "]";
    std::string title = article.value("title", "");
    const json& paragraphs = require(article, "paragraphs", apath, source_name);
    if (!paragraphs.is_array())
      throw ParseError(path_str(source_name, apath + ".paragraphs: expected an array"));
    for (size_t pi = 0; pi < paragraphs.size(); ++pi) {
      const json& para = paragraphs[pi];
      std::string ppath = apath + ".paragraphs[" + std::to_string(pi) + "]";
      const json& ctx = require(para, "context", ppath, source_name);
      if (!ctx.is_string())
        throw ParseError(path_str(source_name, ppath + ".context: expected a string"));
      const json& qas = require(para, "qas", ppath, source_name);
      if (!qas.is_array())
        throw ParseError(path_str(source_name, ppath + ".qas: expected an array"));
      std::string context = ctx.get<std::string>();
      for (size_t qi = 0; qi < qas.size(); ++qi) {
        const json& qa = qas[qi];
        std::string qpath = ppath + ".qas[" + std::to_string(qi) + "]";
        RawQA r;
        r.title = title;
        r.context = context;
        r.id = require(qa, "id", qpath, source_name).get<std::string>();
        r.question = require(qa, "question", qpath, source_name).get<std::string>();
        r.is_impossible = qa.value("is_impossible", false);
        const json& answers = require(qa, "answers", qpath, source_name);
        if (!answers.is_array())
          throw ParseError(path_str(source_name, qpath + ".answers: expected an array"));
        if (!seen_ids.insert(r.id).second)
          throw IntegrityError("duplicate qa id: " + r.id);
        if (r.is_impossible != answers.empty())
          throw IntegrityError("id " + r.id +
                               ": answers must be empty iff is_impossible");
        for (const json& a : answers) {
          RawAnswer ans;
          ans.text = require(a, "text", qpath + ".answers[]", source_name)
                         .get<std::string>();
          int cp_start = require(a, "answer_start", qpath + ".answers[]", source_name)
                             .get<int>();
          // SQuAD offsets count codepoints; internal offsets count bytes.
          int byte_start = text::byte_offset_of_codepoint(context, cp_start);
          if (cp_start < 0 || byte_start < 0)
            throw IntegrityError("id " + r.id + ": answer_start out of range");
          if (context.compare(byte_start, ans.text.size(), ans.text) != 0)
            throw IntegrityError("id " + r.id +
                                 ": answer text does not match context span");
          ans.char_start = byte_start;
          r.answers.push_back(std::move(ans));
        }
        out.push_back(std::move(r));
      }
    }
  }
  return out;
}

std::vector<RawQA> parse_squad_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open corpus file: " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return parse_squad(doc, path);
}

RawAnswer vote_answer(const std::vector<RawAnswer>& answers) {
  if (answers.empty()) throw ContractError("vote_answer: empty answer list");
  std::map<std::string, int> freq;
  for (const RawAnswer& a : answers) ++freq[text::normalize_surface(a.text)];
  const RawAnswer* best = nullptr;
  std::string best_norm;
  for (const RawAnswer& a : answers) {
    std::string norm = text::normalize_surface(a.text);
    if (!best) {
      best = &a;
      best_norm = norm;
      continue;
    }
    auto key = [&](const std::string& n, const RawAnswer& r) {
      return std::make_tuple(-freq[n], n.size(), n, r.char_start, r.text.size(),
                             r.text);
    };
    if (key(norm, a) < key(best_norm, *best)) {
      best = &a;
      best_norm = norm;
    }
  }
  return *best;
}

std::optional<std::string> assign_central_entity(const std::string& title,
                                                 const std::string& context,
                                                 const std::string& question,
                                                 const NERProvider& ner) {
  if (!title.empty() && text::contains_token_seq(question, title)) return title;
  std::vector<NERSpan> cents = ner.entities(context);
  std::vector<NERSpan> qents = ner.entities(question);
  std::set<std::string> qnorm;
  for (const NERSpan& e : qents) qnorm.insert(text::normalize_surface(e.text));
  std::set<std::string> shared;
  for (const NERSpan& e : cents) {
    std::string n = text::normalize_surface(e.text);
    if (qnorm.count(n)) shared.insert(n);
  }
  if (shared.size() != 1) return std::nullopt;
  for (const NERSpan& e : cents)
    if (text::normalize_surface(e.text) == *shared.begin()) return e.text;
  return std::nullopt;
}

namespace {

struct ProcessCounts {
  int unanswerable = 0, no_entity = 0, answer_is_entity = 0, entity_absent = 0;
};

std::vector<ECQGSample> process_corpus(const std::vector<RawQA>& corpus,
                                       const NERProvider& ner,
                                       ProcessCounts& counts) {
  std::vector<ECQGSample> out;
  for (const RawQA& r : corpus) {
    if (r.is_impossible || r.answers.empty()) {
      ++counts.unanswerable;
      continue;
    }
    RawAnswer ans = vote_answer(r.answers);
    std::optional<std::string> entity =
        assign_central_entity(r.title, r.context, r.question, ner);
    if (!entity) {
      ++counts.no_entity;
      continue;
    }
    if (!text::contains_token_seq(r.context, *entity)) {
      ++counts.entity_absent;
      continue;
    }
    if (text::to_lower(ans.text) == text::to_lower(*entity)) {
      ++counts.answer_is_entity;
      continue;
    }
    ECQGSample s;
    s.id = r.id;
    s.context = r.context;
    s.entity = *entity;
    s.question = r.question;
    s.answer_text = ans.text;
    s.answer_start = ans.char_start;
    out.push_back(std::move(s));
  }
  return out;
}

void sort_by_id(std::vector<ECQGSample>& v) {
  std::sort(v.begin(), v.end(),
            [](const ECQGSample& a, const ECQGSample& b) { return a.id < b.id; });
}

}  // namespace

BuiltDataset build_dataset(const std::vector<RawQA>& train_corpus,
                           const std::vector<RawQA>& dev_corpus,
                           const NERProvider& ner, const BuildOptions& opt) {
  if (opt.val_fraction <= 0.0 || opt.val_fraction >= 1.0)
    throw ConfigError("val_fraction must lie in (0, 1)");
  ProcessCounts counts;
  std::vector<ECQGSample> pool = process_corpus(train_corpus, ner, counts);
  std::vector<ECQGSample> test = process_corpus(dev_corpus, ner, counts);

  std::vector<size_t> order(pool.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  // Hand-rolled Fisher-Yates: identical shuffles on every platform.
  std::mt19937_64 rng(opt.seed);
  for (size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng() % i]);

  size_t n_val = static_cast<size_t>(
      std::llround(opt.val_fraction * static_cast<double>(pool.size())));
  if (n_val >= pool.size() && !pool.empty()) n_val = pool.size() - 1;

  BuiltDataset ds;
  for (size_t k = 0; k < order.size(); ++k)
    (k < n_val ? ds.validation : ds.train).push_back(pool[order[k]]);
  ds.test = std::move(test);
  sort_by_id(ds.train);
  sort_by_id(ds.validation);
  sort_by_id(ds.test);
  ds.removed_unanswerable = counts.unanswerable;
  ds.dropped_no_entity = counts.no_entity;
  ds.dropped_answer_is_entity = counts.answer_is_entity;
  ds.dropped_entity_absent = counts.entity_absent;
  return ds;
}

DatasetStats compute_stats(const std::vector<ECQGSample>& samples,
                           const std::string& split) {
  DatasetStats st;
  st.split = split;
  st.size = static_cast<int>(samples.size());
  if (samples.empty()) return st;
  auto round2 = [](double x) { return std::round(x * 100.0) / 100.0; };
  long esum = 0, csum = 0;
  int emin = 0, emax = 0, cmin = 0, cmax = 0;
  bool first = true;
  for (const ECQGSample& s : samples) {
    int el = static_cast<int>(text::split_whitespace(s.entity).size());
    int cl = static_cast<int>(text::split_whitespace(s.context).size());
    esum += el;
    csum += cl;
    if (first) {
      emin = emax = el;
      cmin = cmax = cl;
      first = false;
    } else {
      emin = std::min(emin, el);
      emax = std::max(emax, el);
      cmin = std::min(cmin, cl);
      cmax = std::max(cmax, cl);
    }
  }
  st.entity_len_mean = round2(static_cast<double>(esum) / st.size);
  st.entity_len_min = emin;
  st.entity_len_max = emax;
  st.context_len_mean = round2(static_cast<double>(csum) / st.size);
  st.context_len_min = cmin;
  st.context_len_max = cmax;
  return st;
}

std::vector<int> align_span(const std::vector<text::Token>& context_tokens,
                            int answer_start, int answer_len, int prefix_len,
                            int max_len) {
  if (answer_len <= 0) throw ContractError("align_span: empty answer span");
  if (prefix_len < 0 || max_len <= 0) throw ContractError("align_span: bad layout");
  int kept_ctx = std::min(static_cast<int>(context_tokens.size()),
                          std::max(0, max_len - prefix_len));
  int total = std::min(prefix_len + static_cast<int>(context_tokens.size()), max_len);
  std::vector<int> bits(static_cast<size_t>(std::max(total, 0)), 0);
  int span_end = answer_start + answer_len;
  bool any = false;
  for (int i = 0; i < kept_ctx; ++i) {
    const text::Token& tok = context_tokens[static_cast<size_t>(i)];
    if (tok.begin < span_end && tok.end > answer_start) {
      bits[static_cast<size_t>(prefix_len + i)] = 1;
      any = true;
    }
  }
  if (!any)
    throw AlignmentError("answer span overlaps no surviving context token");
  return bits;
}

void write_jsonl(const std::vector<ECQGSample>& samples, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write dataset file: " + path);
  for (const ECQGSample& s : samples) {
    ordered_json j;
    j["id"] = s.id;
    j["context"] = s.context;
    j["entity"] = s.entity;
    j["question"] = s.question;
    j["answer_text"] = s.answer_text;
    j["answer_start"] = s.answer_start;
    out << j.dump() << "\n";
  }
}

std::vector<ECQGSample> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset file: " + path);
  std::vector<ECQGSample> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    ECQGSample s;
    try {
      s.id = j.at("id").get<std::string>();
      s.context = j.at("context").get<std::string>();
      s.entity = j.at("entity").get<std::string>();
      s.question = j.at("question").get<std::string>();
      s.answer_text = j.at("answer_text").get<std::string>();
      s.answer_start = j.at("answer_start").get<int>();
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (s.context.compare(static_cast<size_t>(s.answer_start),
                          s.answer_text.size(), s.answer_text) != 0)
      throw IntegrityError("id " + s.id +
                           ": answer text does not match context span");
    out.push_back(std::move(s));
  }
  return out;
}

nlohmann::ordered_json stats_to_json(const DatasetStats& s) {
  ordered_json j;
  j["split"] = s.split;
  j["size"] = s.size;
  j["entity_len_mean"] = s.entity_len_mean;
  j["entity_len_min"] = s.entity_len_min;
  j["entity_len_max"] = s.entity_len_max;
  j["context_len_mean"] = s.context_len_mean;
  j["context_len_min"] = s.context_len_min;
  j["context_len_max"] = s.context_len_max;
  return j;
}

DictionaryNER::DictionaryNER(std::vector<std::string> entries, std::string label)
    : label_(std::move(label)) {
  std::sort(entries.begin(), entries.end());
  entries.erase(std::unique(entries.begin(), entries.end()), entries.end());
  for (std::string& e : entries) {
    Entry entry;
    entry.surface = e;
    for (const text::Token& t : text::tokenize(e))
      entry.lower_tokens.push_back(text::to_lower(t.text));
    if (!entry.lower_tokens.empty()) entries_.push_back(std::move(entry));
  }
}

DictionaryNER DictionaryNER::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open entity dictionary: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  const json& list = j.is_array() ? j : j.at("entities");
  std::vector<std::string> entries;
  for (const auto& e : list) entries.push_back(e.get<std::string>());
  std::string label = j.is_object() ? j.value("label", "ENT") : "ENT";
  return DictionaryNER(std::move(entries), std::move(label));
}

std::vector<NERSpan> DictionaryNER::entities(const std::string& s) const {
  std::vector<text::Token> toks = text::tokenize(s);
  std::vector<std::string> lower;
  lower.reserve(toks.size());
  for (const text::Token& t : toks) lower.push_back(text::to_lower(t.text));
  std::vector<NERSpan> out;
  for (size_t i = 0; i < toks.size(); ++i) {
    for (const Entry& e : entries_) {
      size_t k = e.lower_tokens.size();
      if (i + k > toks.size()) continue;
      bool match = true;
      for (size_t m = 0; m < k; ++m)
        if (lower[i + m] != e.lower_tokens[m]) {
          match = false;
          break;
        }
      if (!match) continue;
      NERSpan span;
      span.begin = toks[i].begin;
      span.end = toks[i + k - 1].end;
      span.text = s.substr(static_cast<size_t>(span.begin),
                           static_cast<size_t>(span.end - span.begin));
      span.label = label_;
      out.push_back(std::move(span));
    }
  }
  std::sort(out.begin(), out.end(), [](const NERSpan& a, const NERSpan& b) {
    return std::tie(a.begin, a.end, a.label) < std::tie(b.begin, b.end, b.label);
  });
  out.erase(std::unique(out.begin(), out.end(),
                        [](const NERSpan& a, const NERSpan& b) {
                          return a.begin == b.begin && a.end == b.end &&
                                 a.label == b.label;
                        }),
            out.end());
  return out;
}

ExternalNER::ExternalNER(std::string command, std::string tool_name,
                         std::string tool_version)
    : command_(std::move(command)),
      name_(std::move(tool_name)),
      version_(std::move(tool_version)) {}

std::vector<NERSpan> ExternalNER::entities(const std::string& s) const {
  char tmpl[] = "/tmp/gencone_ner_XXXXXX";
  int fd = mkstemp(tmpl);
  if (fd < 0) throw Error("cannot create temp file for external tagger");
  {
    FILE* f = fdopen(fd, "w");
    if (!f) throw Error("cannot open temp file for external tagger");
    fwrite(s.data(), 1, s.size(), f);
    fclose(f);
  }
  std::string cmd = command_ + " < " + tmpl;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) {
    std::remove(tmpl);
    throw Error("cannot run external tagger: " + command_);
  }
  std::string output;
  char buf[4096];
  size_t got;
  while ((got = fread(buf, 1, sizeof(buf), pipe)) > 0) output.append(buf, got);
  int rc = pclose(pipe);
  std::remove(tmpl);
  if (rc != 0)
    throw Error("external tagger exited with status " + std::to_string(rc));
  json j;
  try {
    j = json::parse(output);
  } catch (const json::exception& e) {
    throw ParseError(std::string("external tagger output: ") + e.what());
  }
  std::vector<NERSpan> out;
  for (const auto& e : j) {
    NERSpan span;
    span.text = e.at("text").get<std::string>();
    span.begin = e.at("start").get<int>();
    span.end = e.at("end").get<int>();
    span.label = e.value("label", "ENT");
    if (span.begin < 0 || span.end > static_cast<int>(s.size()) ||
        span.begin >= span.end)
      throw IntegrityError("external tagger returned a span outside the text");
    out.push_back(std::move(span));
  }
  return out;
}

}  // namespace gencone::data
