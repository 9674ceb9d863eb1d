// Acceptance gate: nine end-to-end criteria, one printed verdict line each.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "gencone/batch.hpp"
#include "gencone/common.hpp"
#include "gencone/data.hpp"
#include "gencone/metrics.hpp"
#include "gencone/model.hpp"
#include "gencone/trainer.hpp"
#include "gencone/vocab.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gencone;

namespace {

void verdict(int criterion, const std::string& name, bool pass,
             const std::string& detail = "") {
  std::cout << "[acceptance] " << criterion << " " << name << ": "
            << (pass ? "PASS" : "FAIL");
  if (!detail.empty()) std::cout << " (" << detail << ")";
  std::cout << std::endl;
}

std::vector<data::ECQGSample> memorize_corpus() {
  auto samples = data::read_jsonl("fixtures/memorize_16.jsonl");
  REQUIRE(samples.size() == 16);
  return samples;
}

Vocab corpus_vocab(const std::vector<data::ECQGSample>& samples) {
  std::vector<std::string> texts;
  for (const auto& s : samples) {
    texts.push_back(s.entity);
    texts.push_back(s.context);
    texts.push_back(s.question);
  }
  return Vocab::build(texts);
}

// Random but structurally valid toy batch for the composition checks.
TokenBatch random_batch(std::mt19937_64& rng, int vocab, int batch_size) {
  auto tok = [&]() { return 5 + static_cast<int>(rng() % (vocab - 5)); };
  const int S = 6 + static_cast<int>(rng() % 5);
  const int T = 3 + static_cast<int>(rng() % 4);
  TokenBatch b;
  b.input_ids = IntMat::Constant(batch_size, S, Vocab::kPad);
  b.attention_mask = IntMat::Zero(batch_size, S);
  b.focus_bits = IntMat::Zero(batch_size, S);
  b.answer_bits = IntMat::Zero(batch_size, S);
  b.question_ids = IntMat::Constant(batch_size, T, Vocab::kPad);
  b.question_mask = IntMat::Zero(batch_size, T);
  for (int r = 0; r < batch_size; ++r) {
    int n = S - static_cast<int>(rng() % 2);
    int m = T - static_cast<int>(rng() % 2);
    for (int c = 0; c < n; ++c) {
      b.input_ids(r, c) = c == 1 ? Vocab::kSep : tok();
      b.attention_mask(r, c) = 1;
    }
    b.focus_bits(r, 2 + static_cast<int>(rng() % (n - 2))) = 1;
    b.answer_bits(r, 2 + static_cast<int>(rng() % (n - 2))) = 1;
    for (int c = 0; c < m; ++c) {
      b.question_ids(r, c) = c == m - 1 ? Vocab::kEos : tok();
      b.question_mask(r, c) = 1;
    }
    b.sample_ids.push_back("s" + std::to_string(r));
  }
  return b;
}

TokenBatch single_row(const TokenBatch& b, int row) {
  const int n = b.src_true_len(row);
  const int m = b.tgt_true_len(row);
  TokenBatch s;
  s.input_ids = b.input_ids.block(row, 0, 1, n);
  s.attention_mask = b.attention_mask.block(row, 0, 1, n);
  s.focus_bits = b.focus_bits.block(row, 0, 1, n);
  s.answer_bits = b.answer_bits.block(row, 0, 1, n);
  s.question_ids = b.question_ids.block(row, 0, 1, m);
  s.question_mask = b.question_mask.block(row, 0, 1, m);
  s.sample_ids = {b.sample_ids[static_cast<size_t>(row)]};
  return s;
}

// Same live content, wider pad margins on both sides of the layout.
TokenBatch widen(const TokenBatch& b, int extra_src, int extra_tgt) {
  TokenBatch w;
  const int B = b.batch();
  w.input_ids = IntMat::Constant(B, b.src_len() + extra_src, Vocab::kPad);
  w.attention_mask = IntMat::Zero(B, b.src_len() + extra_src);
  w.focus_bits = IntMat::Zero(B, b.src_len() + extra_src);
  w.answer_bits = IntMat::Zero(B, b.src_len() + extra_src);
  w.question_ids = IntMat::Constant(B, b.tgt_len() + extra_tgt, Vocab::kPad);
  w.question_mask = IntMat::Zero(B, b.tgt_len() + extra_tgt);
  w.input_ids.leftCols(b.src_len()) = b.input_ids;
  w.attention_mask.leftCols(b.src_len()) = b.attention_mask;
  w.focus_bits.leftCols(b.src_len()) = b.focus_bits;
  w.answer_bits.leftCols(b.src_len()) = b.answer_bits;
  w.question_ids.leftCols(b.tgt_len()) = b.question_ids;
  w.question_mask.leftCols(b.tgt_len()) = b.question_mask;
  w.sample_ids = b.sample_ids;
  return w;
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

}  // namespace

TEST_CASE("1 gradient fidelity") {
  auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string worst_param;
  bool pass = true;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    GradCheckReport rep = grad_check("all", 1e-5, 1e-4, seed);
    if (rep.max_rel_err > worst) {
      worst = rep.max_rel_err;
      worst_param = rep.worst_param;
    }
    pass = pass && rep.pass;
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  pass = pass && secs < 120.0;
  verdict(1, "gradient-fidelity", pass,
          "5 seeds, max_rel_err=" + fmt(worst) + " at " + worst_param + ", " +
              fmt(secs) + "s");
  CHECK(pass);
}

TEST_CASE("2 loss composition") {
  GenconeModel model(
      [] {
        ModelConfig c;
        c.d_model = 4;
        c.heads = 2;
        c.d_ff = 8;
        c.max_source_len = 16;
        c.max_target_len = 8;
        return c;
      }(),
      23, 11);
  std::mt19937_64 rng(2024);
  double worst_gap = 0.0;
  bool affine_exact = true;
  for (int i = 0; i < 100; ++i) {
    TokenBatch b = random_batch(rng, 23, 2);
    ag::Tape t;
    ForwardOutputs out = model.forward(t, b, Mode::full);
    double gap = std::abs(out.loss.total -
                          (out.loss.qg + 0.15 * out.loss.cf + 0.15 * out.loss.qv));
    worst_gap = std::max(worst_gap, gap);
    affine_exact = affine_exact && out.lambda1_grad() == out.loss.cf &&
                   out.lambda2_grad() == out.loss.qv;
  }
  bool pass = worst_gap <= 1e-9 && affine_exact;
  verdict(2, "loss-composition", pass,
          "100 batches, worst gap=" + fmt(worst_gap) +
              (affine_exact ? ", dL/dlambda exact" : ", dL/dlambda BROKEN"));
  CHECK(pass);
}

TEST_CASE("3 tiny-corpus memorization") {
  auto samples = memorize_corpus();
  Vocab vocab = corpus_vocab(samples);

  TrainConfig cfg;
  cfg.learning_rate = 2e-3;
  cfg.batch_size = 4;
  cfg.max_epochs = 125;
  cfg.max_steps = 500;
  cfg.early_stop_patience = 200;
  cfg.d_model = 32;
  cfg.heads = 2;
  cfg.d_ff = 64;
  cfg.max_source_len = 32;
  cfg.max_target_len = 16;
  cfg.seeds = {7};
  GenconeModel model(cfg.model_config(), vocab.size(), 7);

  auto eval_loss = [&]() {
    TokenBatch all = make_batch(samples, vocab, 32, 16).batch;
    ag::Tape t;
    return model.forward(t, all, Mode::full).loss.total;
  };
  double initial = eval_loss();
  TrainResult res = train(model, vocab, samples, samples, cfg, 7, ".");
  double final_loss = eval_loss();

  int verbatim = 0;
  DecodeOptions opt;
  opt.greedy = true;
  opt.max_len = 15;
  for (const auto& s : samples)
    if (model.generate(s.entity, s.context, vocab, opt) == s.question) ++verbatim;

  bool pass = res.history.steps <= 500 && final_loss < 0.1 * initial &&
              verbatim >= 14;
  verdict(3, "tiny-corpus-memorization", pass,
          "steps=" + std::to_string(res.history.steps) + ", loss " +
              fmt(initial) + " -> " + fmt(final_loss) + ", verbatim " +
              std::to_string(verbatim) + "/16");
  CHECK(pass);
}

TEST_CASE("4 ablation structure") {
  auto samples = memorize_corpus();
  Vocab vocab = corpus_vocab(samples);

  // qv_only forwards the encoder output unchanged into the decoder.
  bool qv_identity = true;
  {
    TrainConfig cfg;
    cfg.d_model = 8;
    cfg.heads = 2;
    cfg.d_ff = 16;
    cfg.max_source_len = 32;
    cfg.max_target_len = 16;
    GenconeModel model(cfg.model_config(), vocab.size(), 5);
    TokenBatch b = make_batch(samples, vocab, 32, 16).batch;
    ag::Tape t;
    ForwardOutputs out = model.forward(t, b, Mode::qv_only);
    for (size_t i = 0; i < out.h_c.size(); ++i)
      qv_identity = qv_identity &&
                    (out.h_cf[i] - out.h_c[i]).cwiseAbs().maxCoeff() == 0.0;
  }

  // 100 seq2seq steps leave every auxiliary parameter bitwise at init.
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 8;
  cfg.max_epochs = 100;
  cfg.max_steps = 100;
  cfg.early_stop_patience = 200;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.d_ff = 16;
  cfg.max_source_len = 32;
  cfg.max_target_len = 16;
  cfg.mode = Mode::seq2seq;
  GenconeModel model(cfg.model_config(), vocab.size(), 5);

  const char* frozen[] = {"dual.w_s",  "dual.w_cq",  "cf.head.w", "cf.head.b",
                          "qv.head.w", "qv.head.b",  "fusion.w_cf"};
  std::vector<ag::Mat> before;
  for (const char* name : frozen) before.push_back(model.params().at(name).value);
  ag::Mat embed_before = model.params().at("embed.tok").value;

  TrainResult res = train(model, vocab, samples, samples, cfg, 5, ".");

  bool untouched = res.history.steps == 100;
  for (size_t i = 0; i < before.size(); ++i)
    untouched = untouched && model.params().at(frozen[i]).value == before[i];
  bool trained = model.params().at("embed.tok").value != embed_before;

  bool pass = qv_identity && untouched && trained;
  verdict(4, "ablation-structure", pass,
          std::string("qv_only H_CF==H_C: ") + (qv_identity ? "yes" : "NO") +
              ", seq2seq aux params bitwise-frozen after 100 steps: " +
              (untouched ? "yes" : "NO"));
  CHECK(pass);
}

TEST_CASE("5 dataset builder determinism and integrity") {
  auto train_corpus = data::parse_squad_file("fixtures/squad_train.json");
  auto dev_corpus = data::parse_squad_file("fixtures/squad_dev.json");
  bool fixture_scale = train_corpus.size() + dev_corpus.size() == 200;
  data::DictionaryNER ner =
      data::DictionaryNER::from_file("fixtures/ner_dictionary.json");
  data::BuildOptions opt;

  auto emit = [&](const std::string& dir) {
    data::BuiltDataset ds = data::build_dataset(train_corpus, dev_corpus, ner, opt);
    fs::create_directories(dir);
    data::write_jsonl(ds.train, dir + "/train.jsonl");
    data::write_jsonl(ds.validation, dir + "/validation.jsonl");
    data::write_jsonl(ds.test, dir + "/test.jsonl");
    return ds;
  };
  data::BuiltDataset a = emit("acc_build_a");
  data::BuiltDataset b = emit("acc_build_b");

  auto bytes = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  bool identical = true;
  for (const char* leaf : {"/train.jsonl", "/validation.jsonl", "/test.jsonl"})
    identical = identical && bytes("acc_build_a" + std::string(leaf)) ==
                                 bytes("acc_build_b" + std::string(leaf));
  fs::remove_all("acc_build_a");
  fs::remove_all("acc_build_b");

  int impossible = 0;
  for (const auto& r : train_corpus) impossible += r.is_impossible;
  for (const auto& r : dev_corpus) impossible += r.is_impossible;
  bool unanswerable_removed = a.removed_unanswerable == impossible && impossible > 0;

  bool invariants = true;
  for (const auto* split : {&a.train, &a.validation, &a.test})
    for (const auto& s : *split) {
      invariants = invariants &&
                   s.context.compare(s.answer_start, s.answer_text.size(),
                                     s.answer_text) == 0 &&
                   text::contains_token_seq(s.context, s.entity) &&
                   text::to_lower(s.answer_text) != text::to_lower(s.entity);
    }

  bool pass = fixture_scale && identical && unanswerable_removed && invariants;
  verdict(5, "dataset-determinism-integrity", pass,
          "byte-identical reruns: " + std::string(identical ? "yes" : "NO") +
              ", unanswerable removed: " + std::to_string(a.removed_unanswerable) +
              "/" + std::to_string(impossible));
  CHECK(pass);
}

TEST_CASE("6 dataset builder at full scale") {
  const char* dir = std::getenv("ECQG_SQUAD_DIR");
  const char* ner_cmd = std::getenv("ECQG_NER_CMD");
  if (!dir || !ner_cmd) {
    std::cout << "[acceptance] 6 full-squad-dataset: SKIP "
                 "(set ECQG_SQUAD_DIR and ECQG_NER_CMD to run)"
              << std::endl;
    return;
  }
  auto train_corpus =
      data::parse_squad_file(std::string(dir) + "/train-v2.0.json");
  auto dev_corpus = data::parse_squad_file(std::string(dir) + "/dev-v2.0.json");
  data::ExternalNER ner(ner_cmd, "external", "1");
  data::BuildOptions opt;
  data::BuiltDataset ds = data::build_dataset(train_corpus, dev_corpus, ner, opt);

  auto within = [](size_t got, double want) {
    return std::abs(static_cast<double>(got) - want) <= 0.05 * want;
  };
  data::DatasetStats st = data::compute_stats(ds.train, "train");
  bool pass = within(ds.train.size(), 42128.0) &&
              within(ds.validation.size(), 3364.0) &&
              within(ds.test.size(), 2338.0) && st.entity_len_min >= 1 &&
              st.entity_len_max <= 10;
  verdict(6, "full-squad-dataset", pass,
          "sizes " + std::to_string(ds.train.size()) + "/" +
              std::to_string(ds.validation.size()) + "/" +
              std::to_string(ds.test.size()));
  CHECK(pass);
}

TEST_CASE("7 metric oracle agreement") {
  std::vector<std::string> cand, ref;
  {
    std::ifstream in("fixtures/metrics_pairs.jsonl");
    REQUIRE(in);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json j = json::parse(line);
      cand.push_back(j.at("candidate").get<std::string>());
      ref.push_back(j.at("reference").get<std::string>());
    }
  }
  std::ifstream ef("fixtures/metrics_expected.json");
  REQUIRE(ef);
  json want = json::parse(ef);

  double gaps[6] = {
      std::abs(metrics::compute_bleu(cand, ref, 1) - want["bleu1"].get<double>()),
      std::abs(metrics::compute_bleu(cand, ref, 2) - want["bleu2"].get<double>()),
      std::abs(metrics::compute_bleu(cand, ref, 3) - want["bleu3"].get<double>()),
      std::abs(metrics::compute_bleu(cand, ref, 4) - want["bleu4"].get<double>()),
      std::abs(metrics::compute_meteor(cand, ref) - want["meteor"].get<double>()),
      std::abs(metrics::compute_rouge_l(cand, ref) - want["rouge_l"].get<double>())};
  double worst = 0.0;
  for (double g : gaps) worst = std::max(worst, g);

  bool identity = metrics::compute_bleu(ref, ref, 4) == 100.0 &&
                  metrics::compute_bleu(ref, ref, 1) == 100.0 &&
                  metrics::compute_rouge_l(ref, ref) == 100.0;

  bool pass = worst < 1e-4 && identity;
  verdict(7, "metric-oracle-agreement", pass,
          std::to_string(cand.size()) + " pairs, worst gap=" + fmt(worst) +
              ", identity exact: " + (identity ? "yes" : "NO"));
  CHECK(pass);
}

TEST_CASE("8 masking and batch invariance") {
  ModelConfig mc;
  mc.d_model = 4;
  mc.heads = 2;
  mc.d_ff = 8;
  mc.max_source_len = 16;
  mc.max_target_len = 8;
  GenconeModel model(mc, 23, 31);
  std::mt19937_64 rng(88);

  double worst_pad = 0.0, worst_batch = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    TokenBatch b = random_batch(rng, 23, 4);
    ag::Tape t1;
    LossParts base = model.forward(t1, b, Mode::full).loss;

    ag::Tape t2;
    LossParts padded = model.forward(t2, widen(b, 3, 2), Mode::full).loss;
    worst_pad = std::max({worst_pad, std::abs(padded.total - base.total),
                          std::abs(padded.qg - base.qg),
                          std::abs(padded.cf - base.cf),
                          std::abs(padded.qv - base.qv)});

    // The batch loss is the mean of the per-sample losses.
    double qg = 0, cf = 0, qv = 0;
    for (int r = 0; r < b.batch(); ++r) {
      ag::Tape t3;
      LossParts one = model.forward(t3, single_row(b, r), Mode::full).loss;
      qg += one.qg;
      cf += one.cf;
      qv += one.qv;
    }
    const double n = b.batch();
    worst_batch = std::max({worst_batch, std::abs(qg / n - base.qg),
                            std::abs(cf / n - base.cf),
                            std::abs(qv / n - base.qv)});
  }
  bool pass = worst_pad < 1e-6 && worst_batch < 1e-6;
  verdict(8, "masking-batch-invariance", pass,
          "pad gap=" + fmt(worst_pad) + ", batch-vs-single gap=" + fmt(worst_batch));
  CHECK(pass);
}

TEST_CASE("9 dual-attention unit truths") {
  ModelConfig mc;
  mc.d_model = 2;
  mc.heads = 2;
  mc.d_ff = 4;
  mc.max_source_len = 16;
  mc.max_target_len = 8;
  GenconeModel model(mc, 23, 1);
  model.params().at("dual.w_s").value = ag::Mat::Ones(1, 6);

  ag::Tape t;
  ag::Mat h_c(1, 2), h_q(1, 2);
  h_c << 1.0, 0.0;
  h_q << 0.0, 1.0;
  double s = model.dual_attention(t, t.constant(h_c), t.constant(h_q)).sim.val()(0, 0);
  bool hand_example = s == 2.0;

  // |Q| = 1: every context row attends to the single question token exactly.
  ag::Mat sel = ag::Mat::Zero(8, 2);
  sel(2, 0) = 1.0;
  sel(3, 1) = 1.0;
  model.params().at("dual.w_cq").value = sel;
  ag::Mat many_c(3, 2);
  many_c << 0.3, -0.7, 1.5, 0.2, -0.9, 0.4;
  ag::Mat one_q(1, 2);
  one_q << 0.4, -1.2;
  ag::Tape t2;
  ag::Mat got =
      model.dual_attention(t2, t2.constant(many_c), t2.constant(one_q)).h_cq.val();
  bool singleton = true;
  for (int r = 0; r < 3; ++r)
    singleton = singleton && got(r, 0) == 0.4 && got(r, 1) == -1.2;

  bool pass = hand_example && singleton;
  verdict(9, "dual-attention-unit-truths", pass,
          "S entry=" + fmt(s) + ", singleton rows exact: " +
              (singleton ? "yes" : "NO"));
  CHECK(pass);
}
