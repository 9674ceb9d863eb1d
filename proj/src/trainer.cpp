#include "gencone/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "gencone/batch.hpp"
#include "gencone/common.hpp"

namespace gencone {

using nlohmann::json;
using nlohmann::ordered_json;

void TrainConfig::validate() const {
  if (base_model_size != "base" && base_model_size != "large")
    throw ConfigError("base_model_size must be base or large");
  if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be nonnegative");
  if (batch_size < 1 || max_epochs < 1) throw ConfigError("batch_size and max_epochs must be positive");
  if (early_stop_patience < 1) throw ConfigError("early_stop_patience must be at least 1");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (grad_clip <= 0.0) throw ConfigError("grad_clip must be positive");
  if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
    throw ConfigError("warmup_fraction must lie in [0, 1)");
  if (max_steps < 0) throw ConfigError("max_steps must be nonnegative");
  if (!lambda_override && std::abs(lambda1 + lambda2 - 0.3) > 1e-12)
    throw ConfigError("lambda1 + lambda2 must equal 0.3 unless lambda_override is set");
  model_config().validate();
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig m;
  m.d_model = d_model;
  m.heads = heads;
  m.enc_layers = enc_layers;
  m.dec_layers = dec_layers;
  m.cls_layers = cls_layers;
  m.d_ff = d_ff;
  m.max_source_len = max_source_len;
  m.max_target_len = max_target_len;
  m.lambda1 = lambda1;
  m.lambda2 = lambda2;
  m.dropout = dropout;
  m.fusion_use_logits = fusion_use_logits;
  m.loss_literal_positive_only = loss_literal_positive_only;
  m.classifier_fresh_init = classifier_fresh_init;
  m.mode = mode;
  m.base_model = base_model;
  return m;
}

ordered_json TrainConfig::to_json() const {
  ordered_json j;
  j["base_model_size"] = base_model_size;
  j["learning_rate"] = learning_rate;
  j["weight_decay"] = weight_decay;
  j["batch_size"] = batch_size;
  j["max_epochs"] = max_epochs;
  j["early_stop_patience"] = early_stop_patience;
  j["lambda1"] = lambda1;
  j["lambda2"] = lambda2;
  j["lambda_override"] = lambda_override;
  j["max_source_len"] = max_source_len;
  j["max_target_len"] = max_target_len;
  j["seeds"] = seeds;
  j["mode"] = mode_to_string(mode);
  j["d_model"] = d_model;
  j["heads"] = heads;
  j["enc_layers"] = enc_layers;
  j["dec_layers"] = dec_layers;
  j["cls_layers"] = cls_layers;
  j["d_ff"] = d_ff;
  j["dropout"] = dropout;
  j["base_model"] = base_model;
  j["fusion_use_logits"] = fusion_use_logits;
  j["loss_literal_positive_only"] = loss_literal_positive_only;
  j["classifier_fresh_init"] = classifier_fresh_init;
  j["grad_clip"] = grad_clip;
  j["warmup_fraction"] = warmup_fraction;
  j["max_steps"] = max_steps;
  return j;
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.base_model_size = j.value("base_model_size", c.base_model_size);
  if (c.base_model_size == "large") {
    c.batch_size = 32;
    c.max_epochs = 10;
  }
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
  c.lambda1 = j.value("lambda1", c.lambda1);
  c.lambda2 = j.value("lambda2", c.lambda2);
  c.lambda_override = j.value("lambda_override", c.lambda_override);
  c.max_source_len = j.value("max_source_len", c.max_source_len);
  c.max_target_len = j.value("max_target_len", c.max_target_len);
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("mode")) c.mode = mode_from_string(j.at("mode").get<std::string>());
  c.d_model = j.value("d_model", c.d_model);
  c.heads = j.value("heads", c.heads);
  c.enc_layers = j.value("enc_layers", c.enc_layers);
  c.dec_layers = j.value("dec_layers", c.dec_layers);
  c.cls_layers = j.value("cls_layers", c.cls_layers);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.dropout = j.value("dropout", c.dropout);
  c.base_model = j.value("base_model", c.base_model);
  c.fusion_use_logits = j.value("fusion_use_logits", c.fusion_use_logits);
  c.loss_literal_positive_only =
      j.value("loss_literal_positive_only", c.loss_literal_positive_only);
  c.classifier_fresh_init = j.value("classifier_fresh_init", c.classifier_fresh_init);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return from_json(j);
}

namespace {

ordered_json parts_to_json(const LossParts& p) {
  ordered_json j;
  j["qg"] = p.qg;
  j["cf"] = p.cf;
  j["qv"] = p.qv;
  j["total"] = p.total;
  return j;
}

}  // namespace

ordered_json TrainHistory::to_json() const {
  ordered_json j;
  j["seed"] = seed;
  j["best_epoch"] = best_epoch;
  j["stop_reason"] = stop_reason;
  j["steps"] = steps;
  ordered_json eps = ordered_json::array();
  for (const EpochRecord& e : epochs) {
    ordered_json r;
    r["epoch"] = e.epoch;
    r["train"] = parts_to_json(e.train);
    r["val"] = parts_to_json(e.val);
    eps.push_back(std::move(r));
  }
  j["epochs"] = std::move(eps);
  return j;
}

EarlyStopper::EarlyStopper(int patience) : patience_(patience) {
  if (patience < 1) throw ConfigError("patience must be at least 1");
}

bool EarlyStopper::update(double value) {
  improved_ = !has_best_ || value < best_;
  if (improved_) {
    best_ = value;
    best_index_ = updates_;
    since_best_ = 0;
    has_best_ = true;
  } else {
    ++since_best_;
  }
  ++updates_;
  return since_best_ >= patience_;
}

AdamW::AdamW(double beta1, double beta2, double eps, double weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

void AdamW::step(nn::ParamStore& store, double lr) {
  for (nn::Param* p : store.all()) {
    if (!p->participated()) continue;
    Slot& s = slots_[p->name];
    if (s.m.size() == 0) {
      s.m = ag::Mat::Zero(p->value.rows(), p->value.cols());
      s.v = ag::Mat::Zero(p->value.rows(), p->value.cols());
    }
    ++s.t;
    s.m = beta1_ * s.m + (1.0 - beta1_) * p->grad;
    s.v = beta2_ * s.v + (1.0 - beta2_) * p->grad.cwiseProduct(p->grad);
    double c1 = 1.0 - std::pow(beta1_, static_cast<double>(s.t));
    double c2 = 1.0 - std::pow(beta2_, static_cast<double>(s.t));
    ag::Mat mhat = s.m / c1;
    ag::Mat vhat = s.v / c2;
    ag::Mat update =
        mhat.cwiseQuotient((vhat.cwiseSqrt().array() + eps_).matrix()) +
        weight_decay_ * p->value;
    p->value -= lr * update;
  }
}

double clip_global_norm(nn::ParamStore& store, double max_norm) {
  double sq = 0.0;
  for (nn::Param* p : store.all())
    if (p->participated()) sq += p->grad.squaredNorm();
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    double scale = max_norm / norm;
    for (nn::Param* p : store.all())
      if (p->participated()) p->grad *= scale;
  }
  return norm;
}

namespace {

std::vector<ag::Mat> snapshot_values(nn::ParamStore& store) {
  std::vector<ag::Mat> out;
  for (nn::Param* p : store.all()) out.push_back(p->value);
  return out;
}

void restore_values(nn::ParamStore& store, const std::vector<ag::Mat>& snap) {
  std::vector<nn::Param*> all = store.all();
  for (size_t i = 0; i < all.size(); ++i) all[i]->value = snap[i];
}

LossParts eval_split(const GenconeModel& model, const Vocab& vocab,
                     const std::vector<data::ECQGSample>& samples,
                     const TrainConfig& cfg) {
  LossParts acc;
  long plan = 0;
  for (size_t off = 0; off < samples.size(); off += static_cast<size_t>(cfg.batch_size)) {
    std::vector<data::ECQGSample> chunk(
        samples.begin() + static_cast<long>(off),
        samples.begin() + static_cast<long>(
                              std::min(samples.size(),
                                       off + static_cast<size_t>(cfg.batch_size))));
    BatchResult br = make_batch(chunk, vocab, cfg.max_source_len, cfg.max_target_len);
    ag::Tape tape;
    ForwardOutputs fo = model.forward(tape, br.batch, cfg.mode, false, nullptr);
    int B = br.batch.batch();
    acc.qg += fo.loss.qg * B;
    acc.cf += fo.loss.cf * B;
    acc.qv += fo.loss.qv * B;
    acc.total += fo.loss.total * B;
    plan += B;
  }
  if (plan == 0) throw ContractError("validation split produced no usable batch");
  acc.qg /= static_cast<double>(plan);
  acc.cf /= static_cast<double>(plan);
  acc.qv /= static_cast<double>(plan);
  acc.total /= static_cast<double>(plan);
  return acc;
}

void shuffle_indices(std::vector<size_t>& idx, std::mt19937_64& rng) {
  for (size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
}

}  // namespace

TrainResult train(GenconeModel& model, const Vocab& vocab,
                  const std::vector<data::ECQGSample>& train_samples,
                  const std::vector<data::ECQGSample>& val_samples,
                  const TrainConfig& cfg, std::uint64_t seed,
                  const std::string& dump_dir) {
  cfg.validate();
  if (train_samples.empty() || val_samples.empty())
    throw ContractError("training requires nonempty train and validation splits");

  const long steps_per_epoch = static_cast<long>(
      (train_samples.size() + static_cast<size_t>(cfg.batch_size) - 1) /
      static_cast<size_t>(cfg.batch_size));
  const long planned_steps =
      cfg.max_steps > 0 ? cfg.max_steps
                        : steps_per_epoch * static_cast<long>(cfg.max_epochs);
  const long warmup_steps = std::max<long>(
      1, static_cast<long>(std::ceil(cfg.warmup_fraction *
                                     static_cast<double>(planned_steps))));

  AdamW opt(0.9, 0.999, 1e-8, cfg.weight_decay);
  EarlyStopper stopper(cfg.early_stop_patience);
  TrainHistory history;
  history.seed = seed;
  std::mt19937_64 dropout_rng(seed ^ 0x5eedD40Full);

  std::vector<ag::Mat> best;
  long step = 0;
  bool out_of_steps = false;
  for (int epoch = 1; epoch <= cfg.max_epochs && !out_of_steps; ++epoch) {
    std::vector<size_t> order(train_samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 epoch_rng(seed * 1000003ULL + static_cast<std::uint64_t>(epoch));
    shuffle_indices(order, epoch_rng);

    LossParts train_acc;
    long seen = 0;
    for (size_t off = 0; off < order.size();
         off += static_cast<size_t>(cfg.batch_size)) {
      if (cfg.max_steps > 0 && step >= cfg.max_steps) {
        out_of_steps = true;
        break;
      }
      std::vector<data::ECQGSample> chunk;
      for (size_t k = off;
           k < std::min(order.size(), off + static_cast<size_t>(cfg.batch_size)); ++k)
        chunk.push_back(train_samples[order[k]]);
      BatchResult br = make_batch(chunk, vocab, cfg.max_source_len, cfg.max_target_len);

      model.params().zero_grads();
      ag::Tape tape;
      ForwardOutputs fo =
          model.forward(tape, br.batch, cfg.mode, true, &dropout_rng);
      if (!std::isfinite(fo.loss.total)) {
        if (!dump_dir.empty()) {
          std::filesystem::create_directories(dump_dir);
          std::ofstream dump(dump_dir + "/diverged_batch.json");
          dump << br.batch.to_json().dump(2) << "\n";
        }
        throw DivergenceError("non-finite loss at step " + std::to_string(step) +
                              "; offending batch dumped");
      }
      tape.backward(fo.loss_var);
      clip_global_norm(model.params(), cfg.grad_clip);
      double lr = cfg.learning_rate *
                  std::min(1.0, static_cast<double>(step + 1) /
                                    static_cast<double>(warmup_steps));
      opt.step(model.params(), lr);
      ++step;

      int B = br.batch.batch();
      train_acc.qg += fo.loss.qg * B;
      train_acc.cf += fo.loss.cf * B;
      train_acc.qv += fo.loss.qv * B;
      train_acc.total += fo.loss.total * B;
      seen += B;
    }
    if (seen == 0) break;
    train_acc.qg /= static_cast<double>(seen);
    train_acc.cf /= static_cast<double>(seen);
    train_acc.qv /= static_cast<double>(seen);
    train_acc.total /= static_cast<double>(seen);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train = train_acc;
    rec.val = eval_split(model, vocab, val_samples, cfg);
    history.epochs.push_back(rec);

    bool stop = stopper.update(rec.val.total);
    if (stopper.improved()) {
      best = snapshot_values(model.params());
      history.best_epoch = epoch;
    }
    if (stop) {
      history.stop_reason = "early_stop";
      break;
    }
  }
  history.steps = static_cast<int>(step);
  if (history.stop_reason.empty())
    history.stop_reason = out_of_steps ? "max_steps" : "max_epochs";
  if (!best.empty()) restore_values(model.params(), best);
  return {std::move(history)};
}

LrSearchResult lr_search(const Vocab& vocab,
                         const std::vector<data::ECQGSample>& train_samples,
                         const std::vector<data::ECQGSample>& val_samples,
                         const TrainConfig& cfg, const std::vector<double>& grid) {
  if (grid.empty()) throw ConfigError("learning-rate grid is empty");
  LrSearchResult result;
  bool any = false;
  double best_loss = 0.0;
  for (double rate : grid) {
    TrainConfig c = cfg;
    c.learning_rate = rate;
    GenconeModel model(c.model_config(), vocab.size(), cfg.seeds[0]);
    try {
      TrainResult tr = train(model, vocab, train_samples, val_samples, c,
                             cfg.seeds[0], "");
      double loss = tr.history.epochs[static_cast<size_t>(
                                           tr.history.best_epoch - 1)]
                        .val.total;
      result.tried.emplace_back(rate, loss);
      if (!any || loss < best_loss) {
        any = true;
        best_loss = loss;
        result.best_rate = rate;
      }
    } catch (const DivergenceError&) {
      continue;
    }
  }
  if (!any) throw DivergenceError("every learning rate in the grid diverged");
  return result;
}

MultiSeedResult multi_seed(const Vocab& vocab,
                           const std::vector<data::ECQGSample>& train_samples,
                           const std::vector<data::ECQGSample>& val_samples,
                           const std::vector<data::ECQGSample>& eval_samples,
                           const TrainConfig& cfg) {
  MultiSeedResult out;
  for (std::uint64_t seed : cfg.seeds) {
    GenconeModel model(cfg.model_config(), vocab.size(), seed);
    train(model, vocab, train_samples, val_samples, cfg, seed, "");
    std::vector<metrics::IdText> preds, refs;
    DecodeOptions opt;
    opt.greedy = true;
    opt.max_len = cfg.max_target_len;
    for (const data::ECQGSample& s : eval_samples) {
      preds.emplace_back(s.id, model.generate(s.entity, s.context, vocab, opt));
      refs.emplace_back(s.id, s.question);
    }
    out.per_seed.emplace_back(seed, metrics::evaluate_corpus(preds, refs));
  }
  const double k = static_cast<double>(out.per_seed.size());
  for (const auto& [seed, rep] : out.per_seed) {
    out.mean.bleu1 += rep.bleu1 / k;
    out.mean.bleu2 += rep.bleu2 / k;
    out.mean.bleu3 += rep.bleu3 / k;
    out.mean.bleu4 += rep.bleu4 / k;
    out.mean.meteor += rep.meteor / k;
    out.mean.rouge_l += rep.rouge_l / k;
  }
  out.mean.n = out.per_seed.empty() ? 0 : out.per_seed.front().second.n;
  return out;
}

ordered_json GradCheckReport::to_json() const {
  ordered_json j;
  j["component"] = component;
  j["params_checked"] = params_checked;
  j["entries_checked"] = entries_checked;
  j["max_rel_err"] = max_rel_err;
  j["worst_param"] = worst_param;
  j["tolerance"] = tolerance;
  j["pass"] = pass;
  ordered_json per = ordered_json::object();
  for (const auto& [name, err] : per_param) per[name] = err;
  j["per_param"] = std::move(per);
  return j;
}

namespace {

TokenBatch synthetic_batch(std::mt19937_64& rng, int vocab_size, int max_src,
                           int max_tgt) {
  const int B = 2;
  auto randint = [&](int lo, int hi) {
    return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
  };
  std::vector<int> src_lens, tgt_lens;
  int S = 0, T = 0;
  for (int b = 0; b < B; ++b) {
    src_lens.push_back(randint(6, std::min(10, max_src)));
    tgt_lens.push_back(randint(3, std::min(6, max_tgt)));
    S = std::max(S, src_lens.back());
    T = std::max(T, tgt_lens.back());
  }
  TokenBatch batch;
  batch.input_ids = IntMat::Constant(B, S, Vocab::kPad);
  batch.attention_mask = IntMat::Zero(B, S);
  batch.focus_bits = IntMat::Zero(B, S);
  batch.answer_bits = IntMat::Zero(B, S);
  batch.question_ids = IntMat::Constant(B, T, Vocab::kPad);
  batch.question_mask = IntMat::Zero(B, T);
  for (int b = 0; b < B; ++b) {
    int n = src_lens[static_cast<size_t>(b)];
    int m = tgt_lens[static_cast<size_t>(b)];
    for (int i = 0; i < n; ++i) {
      batch.input_ids(b, i) = randint(Vocab::kSep + 1, vocab_size - 1);
      batch.attention_mask(b, i) = 1;
    }
    batch.input_ids(b, 1) = Vocab::kSep;
    batch.focus_bits(b, randint(2, n - 1)) = 1;
    batch.answer_bits(b, randint(2, n - 1)) = 1;
    for (int j = 0; j < m; ++j) {
      batch.question_ids(b, j) = randint(Vocab::kSep + 1, vocab_size - 1);
      batch.question_mask(b, j) = 1;
    }
    batch.question_ids(b, m - 1) = Vocab::kEos;
    batch.sample_ids.push_back("toy-" + std::to_string(b));
  }
  batch.validate(max_src, max_tgt);
  return batch;
}

std::string component_prefix(const std::string& component) {
  if (component == "fusion") return "fusion.";
  if (component == "similarity") return "dual.w_s";
  if (component == "dual_fusion") return "dual.w_cq";
  if (component == "cf_head") return "cf.";
  if (component == "qv_head") return "qv.";
  if (component == "all") return "";
  throw ConfigError("unknown gradcheck component: " + component);
}

}  // namespace

GradCheckReport grad_check(const std::string& component, double step,
                           double tolerance, std::uint64_t seed) {
  std::string prefix = component_prefix(component);
  ModelConfig mc;
  mc.d_model = 4;
  mc.heads = 2;
  mc.enc_layers = 1;
  mc.dec_layers = 1;
  mc.cls_layers = 1;
  mc.d_ff = 8;
  mc.max_source_len = 16;
  mc.max_target_len = 8;
  const int vocab_size = 23;
  GenconeModel model(mc, vocab_size, seed);
  std::mt19937_64 rng(seed ^ 0xabcdef12345ULL);
  TokenBatch batch = synthetic_batch(rng, vocab_size, mc.max_source_len,
                                     mc.max_target_len);

  model.params().zero_grads();
  {
    ag::Tape tape;
    ForwardOutputs fo = model.forward(tape, batch, Mode::full);
    tape.backward(fo.loss_var);
  }
  std::vector<nn::Param*> targets = model.params().matching(prefix);
  if (targets.empty()) throw ContractError("no parameters match component " + component);

  std::vector<ag::Mat> analytic;
  for (nn::Param* p : targets)
    analytic.push_back(p->participated()
                           ? p->grad
                           : ag::Mat::Zero(p->value.rows(), p->value.cols()));

  auto loss_at = [&]() {
    ag::Tape tape;
    return model.forward(tape, batch, Mode::full).loss.total;
  };

  GradCheckReport report;
  report.component = component;
  report.tolerance = tolerance;
  for (size_t pi = 0; pi < targets.size(); ++pi) {
    nn::Param* p = targets[pi];
    double param_max = 0.0;
    for (int r = 0; r < p->value.rows(); ++r) {
      for (int c = 0; c < p->value.cols(); ++c) {
        double saved = p->value(r, c);
        p->value(r, c) = saved + step;
        double up = loss_at();
        p->value(r, c) = saved - step;
        double down = loss_at();
        p->value(r, c) = saved;
        double numeric = (up - down) / (2.0 * step);
        double exact = analytic[pi](r, c);
        if (!std::isfinite(exact) || !std::isfinite(numeric))
          throw Error("non-finite gradient at " + p->name);
        double rel = std::abs(exact - numeric) /
                     std::max({std::abs(exact), std::abs(numeric), 1e-6});
        param_max = std::max(param_max, rel);
        ++report.entries_checked;
      }
    }
    report.per_param.emplace_back(p->name, param_max);
    if (param_max > report.max_rel_err) {
      report.max_rel_err = param_max;
      report.worst_param = p->name;
    }
    ++report.params_checked;
  }
  report.pass = report.max_rel_err <= tolerance;
  return report;
}

}  // namespace gencone
