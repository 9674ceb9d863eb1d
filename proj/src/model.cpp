#include "gencone/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "gencone/common.hpp"
#include "gencone/text.hpp"

namespace gencone {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

Mode mode_from_string(const std::string& s) {
  if (s == "full") return Mode::full;
  if (s == "cf_only") return Mode::cf_only;
  if (s == "qv_only") return Mode::qv_only;
  if (s == "seq2seq") return Mode::seq2seq;
  throw ConfigError("unknown mode: " + s);
}

std::string mode_to_string(Mode m) {
  switch (m) {
    case Mode::full: return "full";
    case Mode::cf_only: return "cf_only";
    case Mode::qv_only: return "qv_only";
    case Mode::seq2seq: return "seq2seq";
  }
  throw ConfigError("unknown mode value");
}

void ModelConfig::validate() const {
  if (d_model <= 0 || heads <= 0 || d_ff <= 0) throw ConfigError("widths must be positive");
  if (d_model % heads != 0) throw ConfigError("d_model must divide across heads");
  if (enc_layers <= 0 || dec_layers <= 0 || cls_layers <= 0)
    throw ConfigError("layer counts must be positive");
  if (max_source_len <= 1 || max_target_len <= 1)
    throw ConfigError("sequence length limits are too small");
  if (!(lambda1 > 0.0 && lambda1 < 1.0) || !(lambda2 > 0.0 && lambda2 < 1.0))
    throw ConfigError("loss weights must lie in (0, 1)");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
}

ordered_json ModelConfig::to_json() const {
  ordered_json j;
  j["d_model"] = d_model;
  j["heads"] = heads;
  j["enc_layers"] = enc_layers;
  j["dec_layers"] = dec_layers;
  j["cls_layers"] = cls_layers;
  j["d_ff"] = d_ff;
  j["max_source_len"] = max_source_len;
  j["max_target_len"] = max_target_len;
  j["lambda1"] = lambda1;
  j["lambda2"] = lambda2;
  j["dropout"] = dropout;
  j["fusion_use_logits"] = fusion_use_logits;
  j["loss_literal_positive_only"] = loss_literal_positive_only;
  j["classifier_fresh_init"] = classifier_fresh_init;
  j["mode"] = mode_to_string(mode);
  j["base_model"] = base_model;
  return j;
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  c.d_model = j.value("d_model", c.d_model);
  c.heads = j.value("heads", c.heads);
  c.enc_layers = j.value("enc_layers", c.enc_layers);
  c.dec_layers = j.value("dec_layers", c.dec_layers);
  c.cls_layers = j.value("cls_layers", c.cls_layers);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.max_source_len = j.value("max_source_len", c.max_source_len);
  c.max_target_len = j.value("max_target_len", c.max_target_len);
  c.lambda1 = j.value("lambda1", c.lambda1);
  c.lambda2 = j.value("lambda2", c.lambda2);
  c.dropout = j.value("dropout", c.dropout);
  c.fusion_use_logits = j.value("fusion_use_logits", c.fusion_use_logits);
  c.loss_literal_positive_only =
      j.value("loss_literal_positive_only", c.loss_literal_positive_only);
  c.classifier_fresh_init = j.value("classifier_fresh_init", c.classifier_fresh_init);
  if (j.contains("mode")) c.mode = mode_from_string(j.at("mode").get<std::string>());
  c.base_model = j.value("base_model", c.base_model);
  c.validate();
  return c;
}

std::optional<std::string> resolve_base_weights(const std::string& base_model) {
  if (base_model.empty() || base_model == "scratch") return std::nullopt;
  const char* cache = std::getenv("ECQG_CACHE_DIR");
  if (!cache) return std::nullopt;
  fs::path p = fs::path(cache) / base_model;
  if (fs::exists(p / "weights.bin") && fs::exists(p / "manifest.json"))
    return p.string();
  return std::nullopt;
}

namespace {

void write_weights(const std::string& path, const nn::ParamStore& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write weights file: " + path);
  for (const nn::Param* p : store.all()) {
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(sizeof(double) * p->value.size()));
  }
}

void read_weights_into(const std::string& dir, nn::ParamStore& store,
                       bool allow_missing) {
  std::ifstream mf(dir + "/manifest.json");
  if (!mf) throw Error("cannot open manifest: " + dir);
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw ParseError(dir + "/manifest.json: " + e.what());
  }
  std::ifstream in(dir + "/weights.bin", std::ios::binary);
  if (!in) throw Error("cannot open weights file: " + dir);
  for (const auto& entry : manifest.at("params")) {
    std::string name = entry.at("name").get<std::string>();
    int rows = entry.at("rows").get<int>();
    int cols = entry.at("cols").get<int>();
    ag::Mat m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
    if (!in) throw ParseError(dir + "/weights.bin: truncated at " + name);
    nn::Param* p = store.find(name);
    if (!p) {
      if (allow_missing) continue;
      throw ParseError(dir + ": unknown parameter in checkpoint: " + name);
    }
    if (p->value.rows() != rows || p->value.cols() != cols)
      throw ParseError(dir + ": shape mismatch for " + name);
    p->value = std::move(m);
  }
}

}  // namespace

GenconeModel::GenconeModel(ModelConfig cfg, int vocab_size, std::uint64_t init_seed)
    : cfg_(std::move(cfg)), vocab_size_(vocab_size), init_seed_(init_seed) {
  cfg_.validate();
  if (vocab_size_ <= Vocab::kSep) throw ConfigError("vocabulary too small");
  std::mt19937_64 rng(init_seed_);
  const int d = cfg_.d_model;

  store_.create("embed.tok", vocab_size_, d, rng);
  store_.create("embed.pos_src", cfg_.max_source_len, d, rng);
  store_.create("embed.pos_tgt", cfg_.max_target_len, d, rng);
  for (int i = 0; i < cfg_.enc_layers; ++i)
    enc_layers_.push_back(nn::EncoderLayer::create(
        store_, "enc." + std::to_string(i), d, cfg_.heads, cfg_.d_ff, rng));
  enc_final_ = nn::LayerNorm::create(store_, "enc.final", d);
  for (int i = 0; i < cfg_.dec_layers; ++i)
    dec_layers_.push_back(nn::DecoderLayer::create(
        store_, "dec." + std::to_string(i), d, cfg_.heads, cfg_.d_ff, rng));
  dec_final_ = nn::LayerNorm::create(store_, "dec.final", d);
  lm_head_ = nn::Linear::create(store_, "lm_head", d, vocab_size_, rng);

  store_.create("fusion.w_cf", d + 2, d, rng);
  for (int i = 0; i < cfg_.cls_layers; ++i)
    cf_stack_.push_back(nn::EncoderLayer::create(
        store_, "cf.stack." + std::to_string(i), d, cfg_.heads, cfg_.d_ff, rng));
  cf_final_ = nn::LayerNorm::create(store_, "cf.final", d);
  cf_head_ = nn::Linear::create(store_, "cf.head", d, 2, rng);

  store_.create("dual.w_s", 1, 3 * d, rng);
  store_.create("dual.w_cq", 4 * d, d, rng);
  for (int i = 0; i < cfg_.cls_layers; ++i)
    qv_stack_.push_back(nn::EncoderLayer::create(
        store_, "qv.stack." + std::to_string(i), d, cfg_.heads, cfg_.d_ff, rng));
  qv_final_ = nn::LayerNorm::create(store_, "qv.final", d);
  qv_head_ = nn::Linear::create(store_, "qv.head", d, 2, rng);

  if (cfg_.base_model != "scratch") {
    std::optional<std::string> base = resolve_base_weights(cfg_.base_model);
    if (base) {
      read_weights_into(*base, store_, true);
    } else if (!cfg_.classifier_fresh_init) {
      throw ConfigError("base weights for " + cfg_.base_model +
                        " not found under ECQG_CACHE_DIR");
    }
  }
}

ag::Var GenconeModel::encode_tokens(ag::Tape& t, const std::vector<int>& ids,
                                    bool training, std::mt19937_64* rng) const {
  if (ids.empty()) throw ContractError("encode: empty input");
  if (static_cast<int>(ids.size()) > cfg_.max_source_len)
    throw ContractError("encode: input exceeds max source length");
  std::vector<int> pos(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) pos[i] = static_cast<int>(i);
  ag::Var x = t.add(t.rows_select(nn::use(t, store_.at("embed.tok")), ids),
                    t.rows_select(nn::use(t, store_.at("embed.pos_src")), pos));
  if (training && cfg_.dropout > 0.0 && rng) x = t.dropout(x, cfg_.dropout, *rng);
  for (const nn::EncoderLayer& layer : enc_layers_) x = layer(t, x);
  return enc_final_(t, x);
}

ag::Var GenconeModel::classifier_logits(ag::Tape& t, ag::Var x,
                                        const std::vector<nn::EncoderLayer>& stack,
                                        const nn::LayerNorm& final_ln,
                                        const nn::Linear& head) const {
  for (const nn::EncoderLayer& layer : stack) x = layer(t, x);
  return head(t, final_ln(t, x));
}

ag::Var GenconeModel::focus_locate(ag::Tape& t, ag::Var h_c) const {
  return t.softmax_rows(classifier_logits(t, h_c, cf_stack_, cf_final_, cf_head_));
}

ag::Var GenconeModel::fuse(ag::Tape& t, ag::Var h_c, ag::Var h_f) const {
  if (h_f.cols() != 2 || h_c.cols() != cfg_.d_model || h_f.rows() != h_c.rows())
    throw ContractError("fuse: shape mismatch");
  return t.matmul(t.concat_cols({h_c, h_f}), nn::use(t, store_.at("fusion.w_cf")));
}

GenconeModel::DecoderOut GenconeModel::qg_forward(ag::Tape& t, ag::Var memory,
                                                  const std::vector<int>& gold,
                                                  bool training,
                                                  std::mt19937_64* rng) const {
  if (gold.empty()) throw ContractError("decode: empty target");
  const int m = static_cast<int>(gold.size());
  if (m > cfg_.max_target_len)
    throw ContractError("decode: target exceeds max target length");
  std::vector<int> dec_in(gold.size());
  dec_in[0] = Vocab::kBos;
  for (int j = 1; j < m; ++j) dec_in[static_cast<size_t>(j)] = gold[static_cast<size_t>(j - 1)];
  std::vector<int> pos(gold.size());
  for (int j = 0; j < m; ++j) pos[static_cast<size_t>(j)] = j;
  ag::Var x = t.add(t.rows_select(nn::use(t, store_.at("embed.tok")), dec_in),
                    t.rows_select(nn::use(t, store_.at("embed.pos_tgt")), pos));
  if (training && cfg_.dropout > 0.0 && rng) x = t.dropout(x, cfg_.dropout, *rng);
  ag::Mat mask = nn::causal_mask(m);
  for (const nn::DecoderLayer& layer : dec_layers_) x = layer(t, x, memory, &mask);
  ag::Var h_q = dec_final_(t, x);
  ag::Var p_q = t.softmax_rows(lm_head_(t, h_q));
  return {p_q, h_q};
}

GenconeModel::DualOut GenconeModel::dual_attention(ag::Tape& t, ag::Var h_c,
                                                   ag::Var h_q) const {
  const int d = cfg_.d_model;
  if (h_c.cols() != d || h_q.cols() != d) throw ContractError("dual attention: width mismatch");
  if (h_q.rows() == 0) throw ContractError("dual attention: empty question");
  const int n_c = h_c.rows(), n_q = h_q.rows();
  ag::Var ws = nn::use(t, store_.at("dual.w_s"));
  ag::Var w1 = t.slice_cols(ws, 0, d);
  ag::Var w2 = t.slice_cols(ws, d, d);
  ag::Var w3 = t.slice_cols(ws, 2 * d, d);
  // S_ij = w1.h_c_i + w2.h_q_j + w3.(h_c_i o h_q_j)
  ag::Var term_c = t.bcast_col(t.matmul_nt(h_c, w1), n_q);
  ag::Var term_q = t.bcast_row(t.transpose(t.matmul_nt(h_q, w2)), n_c);
  ag::Var term_x = t.matmul_nt(t.mul_rowvec(h_c, w3), h_q);
  ag::Var sim = t.add(t.add(term_c, term_q), term_x);

  ag::Var att_cq = t.softmax_rows(sim);          // context -> question
  ag::Var hq_att = t.matmul(att_cq, h_q);        // [n_c x d]
  ag::Var pooled = t.row_max(sim);               // strongest question link per token
  ag::Var att_qc = t.softmax_rows(t.transpose(pooled));  // [1 x n_c]
  ag::Var hc_att = t.bcast_row(t.matmul(att_qc, h_c), n_c);

  ag::Var cat = t.concat_cols({h_c, hq_att, t.mul(h_c, hq_att), t.mul(h_c, hc_att)});
  ag::Var h_cq = t.matmul(cat, nn::use(t, store_.at("dual.w_cq")));
  return {sim, h_cq};
}

ag::Var GenconeModel::answer_infer(ag::Tape& t, ag::Var h_cq) const {
  return t.softmax_rows(classifier_logits(t, h_cq, qv_stack_, qv_final_, qv_head_));
}

ag::Var GenconeModel::class_loss(ag::Tape& t, ag::Var probs,
                                 const std::vector<int>& bits,
                                 bool literal_positive_only) {
  if (probs.cols() != 2) throw ContractError("class loss: expected 2-class probabilities");
  if (static_cast<int>(bits.size()) != probs.rows())
    throw ContractError("class loss: bit vector length mismatch");
  std::vector<std::pair<int, int>> idx;
  for (size_t i = 0; i < bits.size(); ++i) {
    if (literal_positive_only) {
      if (bits[i] == 1) idx.emplace_back(static_cast<int>(i), 0);
    } else {
      idx.emplace_back(static_cast<int>(i), bits[i] == 1 ? 0 : 1);
    }
  }
  if (idx.empty()) throw ContractError("class loss: no tokens to score");
  ag::Var picked = t.log_clamped(t.gather(probs, std::move(idx)));
  // The literal objective is an unnormalized sum over positive tokens.
  if (literal_positive_only) return t.scale(t.sum_all(picked), -1.0);
  return t.scale(t.mean_all(picked), -1.0);
}

ag::Var GenconeModel::nll_loss(ag::Tape& t, ag::Var p_q, const std::vector<int>& gold) {
  if (gold.empty()) throw ContractError("nll: no target tokens");
  if (static_cast<int>(gold.size()) != p_q.rows())
    throw ContractError("nll: target length mismatch");
  std::vector<std::pair<int, int>> idx;
  for (size_t j = 0; j < gold.size(); ++j) {
    if (gold[j] < 0 || gold[j] >= p_q.cols())
      throw ContractError("nll: token id outside vocabulary");
    idx.emplace_back(static_cast<int>(j), gold[j]);
  }
  return t.scale(t.mean_all(t.log_clamped(t.gather(p_q, std::move(idx)))), -1.0);
}

double GenconeModel::total_loss(double l_qg, double l_cf, double l_qv,
                                double lambda1, double lambda2) {
  if (!(lambda1 > 0.0 && lambda1 < 1.0) || !(lambda2 > 0.0 && lambda2 < 1.0))
    throw ConfigError("loss weights must lie in (0, 1)");
  return l_qg + lambda1 * l_cf + lambda2 * l_qv;
}

namespace {

std::vector<int> row_slice(const IntMat& m, int row, int n) {
  std::vector<int> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) out[static_cast<size_t>(i)] = m(row, i);
  return out;
}

ag::Mat pad_rows(const ag::Mat& m, int rows, double fill) {
  if (m.rows() == rows) return m;
  ag::Mat out = ag::Mat::Constant(rows, m.cols(), fill);
  out.topRows(m.rows()) = m;
  return out;
}

ag::Mat pad_both(const ag::Mat& m, int rows, int cols, double fill) {
  ag::Mat out = ag::Mat::Constant(rows, cols, fill);
  out.topLeftCorner(m.rows(), m.cols()) = m;
  return out;
}

ag::Var mean_of(ag::Tape& t, const std::vector<ag::Var>& parts) {
  ag::Var acc = parts[0];
  for (size_t i = 1; i < parts.size(); ++i) acc = t.add(acc, parts[i]);
  return t.scale(acc, 1.0 / static_cast<double>(parts.size()));
}

}  // namespace

ForwardOutputs GenconeModel::forward(ag::Tape& t, const TokenBatch& batch,
                                     Mode mode, bool training,
                                     std::mt19937_64* rng) const {
  batch.validate(cfg_.max_source_len, cfg_.max_target_len);
  const bool use_cf = (mode == Mode::full || mode == Mode::cf_only);
  const bool use_qv = (mode == Mode::full || mode == Mode::qv_only);
  const int B = batch.batch();
  const int S = batch.src_len();
  const int T = batch.tgt_len();
  const double v_uniform = 1.0 / static_cast<double>(vocab_size_);

  ForwardOutputs out;
  std::vector<ag::Var> qg_parts, cf_parts, qv_parts;
  for (int b = 0; b < B; ++b) {
    const int n = batch.src_true_len(b);
    const int m = batch.tgt_true_len(b);
    std::vector<int> src = row_slice(batch.input_ids, b, n);
    std::vector<int> fbits = row_slice(batch.focus_bits, b, n);
    std::vector<int> abits = row_slice(batch.answer_bits, b, n);
    std::vector<int> gold = row_slice(batch.question_ids, b, m);

    ag::Var h_c = encode_tokens(t, src, training, rng);
    out.h_c.push_back(pad_rows(h_c.val(), S, 0.0));

    ag::Var memory = h_c;
    if (use_cf) {
      ag::Var logits = classifier_logits(t, h_c, cf_stack_, cf_final_, cf_head_);
      ag::Var probs = t.softmax_rows(logits);
      cf_parts.push_back(class_loss(t, probs, fbits, cfg_.loss_literal_positive_only));
      memory = fuse(t, h_c, cfg_.fusion_use_logits ? logits : probs);
      out.h_f.push_back(pad_rows(probs.val(), S, 0.5));
    }
    out.h_cf.push_back(pad_rows(memory.val(), S, 0.0));

    DecoderOut dec = qg_forward(t, memory, gold, training, rng);
    qg_parts.push_back(nll_loss(t, dec.p_q, gold));
    out.h_q.push_back(pad_rows(dec.h_q.val(), T, 0.0));
    out.p_q.push_back(pad_rows(dec.p_q.val(), T, v_uniform));

    if (use_qv) {
      DualOut dual = dual_attention(t, h_c, dec.h_q);
      ag::Var h_a = answer_infer(t, dual.h_cq);
      qv_parts.push_back(class_loss(t, h_a, abits, cfg_.loss_literal_positive_only));
      out.s.push_back(pad_both(dual.sim.val(), S, T, 0.0));
      out.h_cq.push_back(pad_rows(dual.h_cq.val(), S, 0.0));
      out.h_a.push_back(pad_rows(h_a.val(), S, 0.5));
    }
  }

  ag::Var qg = mean_of(t, qg_parts);
  ag::Var total = qg;
  out.loss.qg = qg.scalar();
  if (use_cf) {
    ag::Var cf = mean_of(t, cf_parts);
    out.loss.cf = cf.scalar();
    total = t.add(total, t.scale(cf, cfg_.lambda1));
  }
  if (use_qv) {
    ag::Var qv = mean_of(t, qv_parts);
    out.loss.qv = qv.scalar();
    total = t.add(total, t.scale(qv, cfg_.lambda2));
  }
  out.loss.total = total.scalar();
  out.loss_var = total;
  return out;
}

Eigen::RowVectorXd GenconeModel::step_log_probs(const std::vector<int>& generated,
                                                const ag::Mat& memory) const {
  ag::Tape t;
  std::vector<int> dec_in;
  dec_in.push_back(Vocab::kBos);
  dec_in.insert(dec_in.end(), generated.begin(), generated.end());
  std::vector<int> pos(dec_in.size());
  for (size_t j = 0; j < dec_in.size(); ++j) pos[j] = static_cast<int>(j);
  ag::Var x = t.add(t.rows_select(nn::use(t, store_.at("embed.tok")), dec_in),
                    t.rows_select(nn::use(t, store_.at("embed.pos_tgt")), pos));
  ag::Mat mask = nn::causal_mask(static_cast<int>(dec_in.size()));
  ag::Var mem = t.constant(memory);
  for (const nn::DecoderLayer& layer : dec_layers_) x = layer(t, x, mem, &mask);
  ag::Var h_q = dec_final_(t, x);
  ag::Var logits = lm_head_(t, h_q);
  Eigen::RowVectorXd row = logits.val().row(logits.rows() - 1);
  double mx = row.maxCoeff();
  double lse = std::log((row.array() - mx).exp().sum()) + mx;
  return row.array() - lse;
}

std::vector<int> GenconeModel::generate_ids(const std::vector<int>& src_ids,
                                            const DecodeOptions& opt) const {
  if (src_ids.empty()) throw ContractError("generate: empty input");
  if (opt.beam_size <= 0) throw ConfigError("beam size must be positive");
  const int cap = std::min(opt.max_len, cfg_.max_target_len - 1);
  if (cap <= 0) throw ConfigError("max_len leaves no room to generate");

  ag::Mat memory;
  {
    ag::Tape t;
    ag::Var h_c = encode_tokens(t, src_ids);
    ag::Var mem = h_c;
    if (cfg_.mode == Mode::full || cfg_.mode == Mode::cf_only) {
      ag::Var logits = classifier_logits(t, h_c, cf_stack_, cf_final_, cf_head_);
      mem = fuse(t, h_c, cfg_.fusion_use_logits ? logits : t.softmax_rows(logits));
    }
    memory = mem.val();
  }

  struct Beam {
    std::vector<int> ids;
    double score = 0.0;
    bool done = false;
  };
  const int width = opt.greedy ? 1 : opt.beam_size;
  std::vector<Beam> beams(1);
  for (int step = 0; step < cap; ++step) {
    bool all_done = true;
    std::vector<Beam> next;
    for (const Beam& beam : beams) {
      if (beam.done) {
        next.push_back(beam);
        continue;
      }
      all_done = false;
      Eigen::RowVectorXd lp = step_log_probs(beam.ids, memory);
      std::vector<int> order(static_cast<size_t>(lp.size()));
      for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
      std::partial_sort(order.begin(),
                        order.begin() + std::min<size_t>(order.size(),
                                                         static_cast<size_t>(width)),
                        order.end(), [&](int a, int b) {
                          if (lp(a) != lp(b)) return lp(a) > lp(b);
                          return a < b;
                        });
      for (int k = 0; k < width && k < lp.size(); ++k) {
        Beam nb = beam;
        int tok = order[static_cast<size_t>(k)];
        nb.ids.push_back(tok);
        nb.score += lp(tok);
        nb.done = (tok == Vocab::kEos);
        next.push_back(std::move(nb));
      }
    }
    if (all_done) break;
    std::stable_sort(next.begin(), next.end(), [](const Beam& a, const Beam& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.ids < b.ids;
    });
    if (static_cast<int>(next.size()) > width) next.resize(static_cast<size_t>(width));
    beams = std::move(next);
  }
  const Beam* best = nullptr;
  for (const Beam& b : beams)
    if (b.done && (!best || b.score > best->score)) best = &b;
  if (!best) best = &beams.front();
  std::vector<int> ids = best->ids;
  if (!ids.empty() && ids.back() == Vocab::kEos) ids.pop_back();
  return ids;
}

std::string GenconeModel::generate(const std::string& entity,
                                   const std::string& context, const Vocab& vocab,
                                   const DecodeOptions& opt) const {
  std::vector<text::Token> ctx_toks = text::tokenize(context);
  if (ctx_toks.empty()) throw ContractError("generate: empty context");
  std::vector<int> src;
  for (const text::Token& tk : text::tokenize(entity)) src.push_back(vocab.id(tk.text));
  src.push_back(Vocab::kSep);
  for (const text::Token& tk : ctx_toks) {
    if (static_cast<int>(src.size()) >= cfg_.max_source_len) break;
    src.push_back(vocab.id(tk.text));
  }
  return vocab.decode(generate_ids(src, opt));
}

void GenconeModel::save(const std::string& dir, const Vocab& vocab,
                        std::uint64_t seed, const json& extra) const {
  fs::create_directories(dir);
  ordered_json manifest;
  manifest["format_version"] = 1;
  manifest["model"] = cfg_.to_json();
  manifest["vocab_size"] = vocab_size_;
  manifest["init_seed"] = init_seed_;
  manifest["seed"] = seed;
  manifest["separator"] = "<sep>";
  for (auto it = extra.begin(); it != extra.end(); ++it) manifest[it.key()] = it.value();
  json plist = json::array();
  for (const nn::Param* p : store_.all()) {
    json e;
    e["name"] = p->name;
    e["rows"] = static_cast<int>(p->value.rows());
    e["cols"] = static_cast<int>(p->value.cols());
    plist.push_back(std::move(e));
  }
  manifest["params"] = std::move(plist);
  std::ofstream mf(dir + "/manifest.json");
  if (!mf) throw Error("cannot write manifest: " + dir);
  mf << manifest.dump(2) << "\n";
  vocab.save(dir + "/vocab.json");
  write_weights(dir + "/weights.bin", store_);
}

GenconeModel GenconeModel::load(const std::string& dir, Vocab* vocab_out) {
  std::ifstream mf(dir + "/manifest.json");
  if (!mf) throw Error("cannot open manifest: " + dir);
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw ParseError(dir + "/manifest.json: " + e.what());
  }
  ModelConfig cfg = ModelConfig::from_json(manifest.at("model"));
  // Skip the base-weight overlay: the checkpoint carries every weight.
  std::string base = cfg.base_model;
  cfg.base_model = "scratch";
  GenconeModel model(cfg, manifest.at("vocab_size").get<int>(),
                     manifest.value("init_seed", 0ULL));
  model.cfg_.base_model = base;
  read_weights_into(dir, model.store_, false);
  if (vocab_out) *vocab_out = Vocab::load(dir + "/vocab.json");
  return model;
}

}  // namespace gencone
