#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "gencone/common.hpp"
#include "gencone/data.hpp"
#include "gencone/trainer.hpp"
#include "gencone/vocab.hpp"

using namespace gencone;

namespace {

// Handful of memorizable samples, enough for a couple of quick epochs.
std::vector<data::ECQGSample> tiny_corpus() {
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

TrainConfig quick_config() {
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 8;
  cfg.max_epochs = 2;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.d_ff = 16;
  cfg.max_source_len = 32;
  cfg.max_target_len = 16;
  cfg.seeds = {3};
  return cfg;
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig cfg = quick_config();
  cfg.validate();

  SUBCASE("the loss weights must keep their joint budget") {
    cfg.lambda1 = 0.2;  // 0.2 + 0.15 != 0.3
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.lambda_override = true;
    cfg.validate();  // override lifts the budget
  }
  SUBCASE("rates and clips must be positive") {
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = quick_config();
    cfg.grad_clip = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = quick_config();
    cfg.warmup_fraction = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("model size names are fixed") {
    cfg.base_model_size = "enormous";
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("a large preset widens batch and schedule defaults") {
    TrainConfig large = TrainConfig::from_json({{"base_model_size", "large"}});
    CHECK(large.batch_size == 32);
    CHECK(large.max_epochs == 10);
    // Explicit keys still win over the preset.
    TrainConfig mixed = TrainConfig::from_json(
        {{"base_model_size", "large"}, {"batch_size", 4}});
    CHECK(mixed.batch_size == 4);
  }
  SUBCASE("json round trip") {
    cfg.mode = Mode::qv_only;
    cfg.seeds = {1, 2, 3};
    TrainConfig back = TrainConfig::from_json(cfg.to_json());
    CHECK(back.mode == Mode::qv_only);
    CHECK(back.seeds == cfg.seeds);
    CHECK(back.learning_rate == cfg.learning_rate);
  }
}

TEST_CASE("early stopping fires after patience epochs without improvement") {
  // Improves on epochs 1 and 2, then worsens; patience 3 stops at epoch 5
  // and remembers epoch 2 as best.
  EarlyStopper stop(3);
  CHECK(!stop.update(5.0));
  CHECK(stop.improved());
  CHECK(!stop.update(4.0));
  CHECK(stop.improved());
  CHECK(!stop.update(4.5));
  CHECK(!stop.improved());
  CHECK(!stop.update(4.6));
  CHECK(stop.update(4.7));
  CHECK(stop.best_index() == 1);
  CHECK(stop.best() == 4.0);
}

TEST_CASE("early stopping demands strict improvement") {
  EarlyStopper stop(1);
  CHECK(!stop.update(2.0));
  CHECK(stop.update(2.0));  // a tie is not an improvement
}

TEST_CASE("patience must be positive") {
  CHECK_THROWS_AS(EarlyStopper(0), ConfigError);
}

TEST_CASE("the optimizer skips parameters that never got a gradient") {
  std::mt19937_64 rng(1);
  nn::ParamStore store;
  nn::Param& active = store.create("active", 2, 2, rng);
  nn::Param& idle = store.create("idle", 2, 2, rng);
  ag::Mat idle_before = idle.value;
  ag::Mat active_before = active.value;

  {
    ag::Tape t;
    t.backward(t.sum_all(nn::use(t, active)));
  }
  AdamW opt(0.9, 0.999, 1e-8, 0.01);
  opt.step(store, 0.1);

  CHECK(idle.value == idle_before);  // bitwise, decay included
  CHECK(active.value != active_before);

  // A later pass that touches the idle parameter updates it normally.
  store.zero_grads();
  {
    ag::Tape t;
    t.backward(t.sum_all(nn::use(t, idle)));
  }
  opt.step(store, 0.1);
  CHECK(idle.value != idle_before);
}

TEST_CASE("adam takes signed unit-ish steps early on") {
  std::mt19937_64 rng(2);
  nn::ParamStore store;
  nn::Param& p = store.create_const("w", 1, 1, 1.0);
  {
    ag::Tape t;
    t.backward(t.sum_all(t.scale(nn::use(t, p), 3.0)));  // grad = 3
  }
  AdamW opt(0.9, 0.999, 1e-8, 0.0);
  opt.step(store, 0.01);
  // First step: mhat = g, vhat = g^2, update = g/(|g|+eps) = ~1.
  CHECK(p.value(0, 0) == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
}

TEST_CASE("decoupled weight decay pulls values toward zero") {
  nn::ParamStore store;
  nn::Param& p = store.create_const("w", 1, 1, 10.0);
  p.grad = ag::Mat::Zero(1, 1);  // participated, zero gradient
  AdamW opt(0.9, 0.999, 1e-8, 0.1);
  opt.step(store, 0.5);
  // Pure decay: value -= lr * wd * value = 10 - 0.5*0.1*10.
  CHECK(p.value(0, 0) == doctest::Approx(9.5).epsilon(1e-12));
}

TEST_CASE("gradient clipping rescales to the requested norm") {
  nn::ParamStore store;
  std::mt19937_64 rng(3);
  nn::Param& a = store.create("a", 1, 2, rng);
  nn::Param& b = store.create("b", 1, 2, rng);
  a.grad = ag::Mat::Constant(1, 2, 3.0);
  b.grad = ag::Mat::Constant(1, 2, 4.0);
  // Global norm = sqrt(2*9 + 2*16) = sqrt(50).
  double pre = clip_global_norm(store, 1.0);
  CHECK(pre == doctest::Approx(std::sqrt(50.0)).epsilon(1e-12));
  double now = std::sqrt(a.grad.squaredNorm() + b.grad.squaredNorm());
  CHECK(now == doctest::Approx(1.0).epsilon(1e-9));

  // Under the cap nothing changes.
  a.grad.setConstant(0.1);
  b.grad.setConstant(0.1);
  clip_global_norm(store, 1.0);
  CHECK(a.grad(0, 0) == 0.1);
}

TEST_CASE("training runs, records history, and restores the best epoch") {
  auto samples = tiny_corpus();
  Vocab vocab = corpus_vocab(samples);
  TrainConfig cfg = quick_config();
  GenconeModel model(cfg.model_config(), vocab.size(), 3);

  TrainResult res = train(model, vocab, samples, samples, cfg, 3, ".");
  const TrainHistory& h = res.history;
  CHECK(h.seed == 3);
  CHECK(h.stop_reason == "max_epochs");
  REQUIRE(h.epochs.size() == 2);
  CHECK(h.epochs[0].epoch == 1);
  CHECK(h.epochs[0].train.total > 0.0);
  CHECK(h.epochs[0].val.total > 0.0);
  CHECK(h.best_epoch >= 1);
  CHECK(h.steps == 4);  // ceil(16/8) * 2 epochs

  nlohmann::ordered_json j = h.to_json();
  CHECK(j["seed"] == 3);
  CHECK(j["epochs"].size() == 2);
  CHECK(j["epochs"][0]["train"]["total"] == h.epochs[0].train.total);
}

TEST_CASE("training is bit-reproducible for a fixed seed") {
  auto samples = tiny_corpus();
  Vocab vocab = corpus_vocab(samples);
  TrainConfig cfg = quick_config();

  GenconeModel m1(cfg.model_config(), vocab.size(), 3);
  GenconeModel m2(cfg.model_config(), vocab.size(), 3);
  TrainResult r1 = train(m1, vocab, samples, samples, cfg, 3, ".");
  TrainResult r2 = train(m2, vocab, samples, samples, cfg, 3, ".");

  REQUIRE(r1.history.epochs.size() == r2.history.epochs.size());
  for (size_t e = 0; e < r1.history.epochs.size(); ++e) {
    CHECK(r1.history.epochs[e].train.total == r2.history.epochs[e].train.total);
    CHECK(r1.history.epochs[e].val.total == r2.history.epochs[e].val.total);
  }
  auto p1 = m1.params().all();
  auto p2 = m2.params().all();
  for (size_t i = 0; i < p1.size(); ++i) CHECK(p1[i]->value == p2[i]->value);

  GenconeModel m3(cfg.model_config(), vocab.size(), 3);
  TrainResult r3 = train(m3, vocab, samples, samples, cfg, 4, ".");
  CHECK(r3.history.epochs[0].train.total != r1.history.epochs[0].train.total);
}

TEST_CASE("max_steps cuts training short") {
  auto samples = tiny_corpus();
  Vocab vocab = corpus_vocab(samples);
  TrainConfig cfg = quick_config();
  cfg.max_steps = 3;
  cfg.max_epochs = 50;
  GenconeModel model(cfg.model_config(), vocab.size(), 3);
  TrainResult res = train(model, vocab, samples, samples, cfg, 3, ".");
  CHECK(res.history.steps == 3);
  CHECK(res.history.stop_reason == "max_steps");
}

TEST_CASE("seq2seq training leaves both auxiliary heads untouched") {
  auto samples = tiny_corpus();
  Vocab vocab = corpus_vocab(samples);
  TrainConfig cfg = quick_config();
  cfg.mode = Mode::seq2seq;
  cfg.max_epochs = 1;
  GenconeModel model(cfg.model_config(), vocab.size(), 3);

  auto snapshot = [&](const char* name) { return model.params().at(name).value; };
  ag::Mat w_cf = snapshot("fusion.w_cf");
  ag::Mat w_s = snapshot("dual.w_s");
  ag::Mat w_cq = snapshot("dual.w_cq");
  ag::Mat cf_head = snapshot("cf.head.w");
  ag::Mat qv_head = snapshot("qv.head.w");
  ag::Mat embed = snapshot("embed.tok");

  train(model, vocab, samples, samples, cfg, 3, ".");

  CHECK(model.params().at("fusion.w_cf").value == w_cf);
  CHECK(model.params().at("dual.w_s").value == w_s);
  CHECK(model.params().at("dual.w_cq").value == w_cq);
  CHECK(model.params().at("cf.head.w").value == cf_head);
  CHECK(model.params().at("qv.head.w").value == qv_head);
  CHECK(model.params().at("embed.tok").value != embed);
}

TEST_CASE("learning rate search reports the grid and a winner") {
  auto samples = tiny_corpus();
  Vocab vocab = corpus_vocab(samples);
  TrainConfig cfg = quick_config();
  cfg.max_epochs = 1;
  LrSearchResult res = lr_search(vocab, samples, samples, cfg, {1e-4, 1e-3});
  REQUIRE(res.tried.size() == 2);
  CHECK((res.best_rate == 1e-4 || res.best_rate == 1e-3));
  double best_loss = 1e300;
  for (const auto& [rate, loss] : res.tried) best_loss = std::min(best_loss, loss);
  for (const auto& [rate, loss] : res.tried)
    if (rate == res.best_rate) CHECK(loss == best_loss);
  CHECK_THROWS_AS(lr_search(vocab, samples, samples, cfg, {}), ConfigError);
}

TEST_CASE("multi-seed evaluation averages the per-seed reports") {
  auto samples = tiny_corpus();
  Vocab vocab = corpus_vocab(samples);
  TrainConfig cfg = quick_config();
  cfg.max_epochs = 1;
  cfg.seeds = {3, 4};
  MultiSeedResult res = multi_seed(vocab, samples, samples, samples, cfg);
  REQUIRE(res.per_seed.size() == 2);
  CHECK(res.per_seed[0].first == 3);
  CHECK(res.mean.rouge_l ==
        doctest::Approx((res.per_seed[0].second.rouge_l +
                         res.per_seed[1].second.rouge_l) / 2.0)
            .epsilon(1e-12));
  CHECK(res.mean.bleu4 ==
        doctest::Approx((res.per_seed[0].second.bleu4 +
                         res.per_seed[1].second.bleu4) / 2.0)
            .epsilon(1e-12));
  CHECK(res.mean.n == res.per_seed[0].second.n);
}

TEST_CASE("gradient check passes for every component on the toy model") {
  for (const std::string comp :
       {"fusion", "similarity", "dual_fusion", "cf_head", "qv_head"}) {
    GradCheckReport rep = grad_check(comp, 1e-5, 1e-4, 1);
    INFO(comp, " worst=", rep.worst_param, " err=", rep.max_rel_err);
    CHECK(rep.pass);
    CHECK(rep.params_checked > 0);
    CHECK(rep.max_rel_err <= 1e-4);
  }
  CHECK_THROWS_AS(grad_check("nonsense", 1e-5, 1e-4, 1), ConfigError);
}

TEST_CASE("gradient check report serializes its verdict") {
  GradCheckReport rep = grad_check("fusion", 1e-5, 1e-4, 7);
  nlohmann::ordered_json j = rep.to_json();
  CHECK(j["component"] == "fusion");
  CHECK(j["pass"] == rep.pass);
  CHECK(j["max_rel_err"] == rep.max_rel_err);
  CHECK(j["per_param"].size() == rep.per_param.size());
  CHECK(j["worst_param"] == rep.worst_param);
}
