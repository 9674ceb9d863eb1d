#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <json.hpp>

#include "gencone/common.hpp"
#include "gencone/data.hpp"
#include "gencone/metrics.hpp"
#include "gencone/model.hpp"
#include "gencone/trainer.hpp"
#include "gencone/vocab.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw gencone::Error("cannot open input file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  char hex[32];
  std::snprintf(hex, sizeof hex, "fnv1a:%016llx",
                static_cast<unsigned long long>(fnv1a(buf.str())));
  return hex;
}

void write_json_file(const ordered_json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw gencone::Error("cannot write " + path);
  out << j.dump(2) << "\n";
}

struct BuildDataArgs {
  std::string squad, squad_dev, out_dir;
  std::string ner = "stub";
  std::string ner_dict, ner_cmd;
  std::uint64_t seed = 13;
  double val_fraction = 0.074;
};

int run_build_data(const BuildDataArgs& a) {
  std::vector<gencone::data::RawQA> train_corpus =
      gencone::data::parse_squad_file(a.squad);
  std::vector<gencone::data::RawQA> dev_corpus;
  if (!a.squad_dev.empty()) dev_corpus = gencone::data::parse_squad_file(a.squad_dev);

  std::unique_ptr<gencone::data::NERProvider> ner;
  if (a.ner == "stub") {
    if (!a.ner_dict.empty()) {
      ner = std::make_unique<gencone::data::DictionaryNER>(
          gencone::data::DictionaryNER::from_file(a.ner_dict));
    } else {
      // No dictionary given: the article titles themselves are the entity list.
      std::vector<std::string> titles;
      for (const auto& qa : train_corpus) titles.push_back(qa.title);
      for (const auto& qa : dev_corpus) titles.push_back(qa.title);
      ner = std::make_unique<gencone::data::DictionaryNER>(std::move(titles));
    }
  } else if (a.ner == "external") {
    if (a.ner_cmd.empty())
      throw gencone::ConfigError("--ner external requires --ner-cmd");
    ner = std::make_unique<gencone::data::ExternalNER>(a.ner_cmd, "external", "1");
  } else {
    throw gencone::ConfigError("--ner must be stub or external");
  }

  gencone::data::BuildOptions opt;
  opt.seed = a.seed;
  opt.val_fraction = a.val_fraction;
  gencone::data::BuiltDataset built =
      gencone::data::build_dataset(train_corpus, dev_corpus, *ner, opt);

  fs::create_directories(a.out_dir);
  gencone::data::write_jsonl(built.train, a.out_dir + "/train.jsonl");
  gencone::data::write_jsonl(built.validation, a.out_dir + "/validation.jsonl");
  gencone::data::write_jsonl(built.test, a.out_dir + "/test.jsonl");

  ordered_json stats;
  stats["train"] = stats_to_json(compute_stats(built.train, "train"));
  stats["validation"] =
      stats_to_json(compute_stats(built.validation, "validation"));
  stats["test"] = stats_to_json(compute_stats(built.test, "test"));
  write_json_file(stats, a.out_dir + "/stats.json");

  ordered_json meta;
  meta["command"] = "build-data";
  meta["seed"] = a.seed;
  meta["val_fraction"] = a.val_fraction;
  meta["ner"] = {{"name", ner->name()}, {"version", ner->version()}};
  ordered_json inputs;
  inputs["squad"] = file_digest(a.squad);
  if (!a.squad_dev.empty()) inputs["squad_dev"] = file_digest(a.squad_dev);
  if (!a.ner_dict.empty()) inputs["ner_dict"] = file_digest(a.ner_dict);
  meta["inputs"] = std::move(inputs);
  ordered_json flags;
  flags["squad"] = a.squad;
  if (!a.squad_dev.empty()) flags["squad_dev"] = a.squad_dev;
  flags["ner"] = a.ner;
  if (!a.ner_dict.empty()) flags["ner_dict"] = a.ner_dict;
  if (!a.ner_cmd.empty()) flags["ner_cmd"] = a.ner_cmd;
  meta["flags"] = std::move(flags);
  meta["removed_unanswerable"] = built.removed_unanswerable;
  meta["dropped_no_entity"] = built.dropped_no_entity;
  meta["dropped_answer_is_entity"] = built.dropped_answer_is_entity;
  meta["dropped_entity_absent"] = built.dropped_entity_absent;
  meta["sizes"] = {{"train", built.train.size()},
                   {"validation", built.validation.size()},
                   {"test", built.test.size()}};
  write_json_file(meta, a.out_dir + "/meta.json");

  std::cout << "train=" << built.train.size()
            << " validation=" << built.validation.size()
            << " test=" << built.test.size() << "\n";
  return 0;
}

struct TrainArgs {
  std::string config, data_dir, out_dir, mode;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

int run_train(const TrainArgs& a) {
  gencone::TrainConfig cfg = gencone::TrainConfig::from_file(a.config);
  if (!a.mode.empty()) cfg.mode = gencone::mode_from_string(a.mode);
  std::uint64_t seed = a.seed_set ? a.seed : cfg.seeds.at(0);

  std::vector<gencone::data::ECQGSample> train_samples =
      gencone::data::read_jsonl(a.data_dir + "/train.jsonl");
  std::vector<gencone::data::ECQGSample> val_samples =
      gencone::data::read_jsonl(a.data_dir + "/validation.jsonl");

  std::vector<std::string> texts;
  for (const auto& s : train_samples) {
    texts.push_back(s.entity);
    texts.push_back(s.context);
    texts.push_back(s.question);
  }
  gencone::Vocab vocab = gencone::Vocab::build(texts);

  gencone::GenconeModel model(cfg.model_config(), vocab.size(), seed);
  gencone::TrainResult result =
      gencone::train(model, vocab, train_samples, val_samples, cfg, seed, a.out_dir);

  fs::create_directories(a.out_dir);
  ordered_json extra;
  extra["inputs"] = {{"config", file_digest(a.config)},
                     {"train", file_digest(a.data_dir + "/train.jsonl")},
                     {"validation", file_digest(a.data_dir + "/validation.jsonl")}};
  extra["train_config"] = cfg.to_json();
  model.save(a.out_dir, vocab, seed, extra);

  ordered_json history = result.history.to_json();
  history["inputs"] = extra["inputs"];
  write_json_file(history, a.out_dir + "/history.json");

  const gencone::EpochRecord& best = result.history.epochs.at(
      static_cast<size_t>(result.history.best_epoch - 1));
  std::cout << "best_epoch=" << result.history.best_epoch
            << " val_total=" << best.val.total
            << " stop=" << result.history.stop_reason << "\n";
  return 0;
}

struct GenerateArgs {
  std::string ckpt, entity, context, input, out;
  int beam = 4;
  int max_len = 32;
  bool greedy = false;
};

int run_generate(const GenerateArgs& a) {
  gencone::Vocab vocab;
  gencone::GenconeModel model = gencone::GenconeModel::load(a.ckpt, &vocab);
  gencone::DecodeOptions opt;
  opt.greedy = a.greedy;
  opt.beam_size = a.beam;
  opt.max_len = a.max_len;

  if (!a.input.empty()) {
    if (a.out.empty()) throw gencone::ConfigError("--input requires --out");
    std::vector<gencone::data::ECQGSample> rows = gencone::data::read_jsonl(a.input);
    std::vector<gencone::metrics::IdText> preds;
    for (const auto& s : rows)
      preds.emplace_back(s.id, model.generate(s.entity, s.context, vocab, opt));
    gencone::metrics::write_id_text_jsonl(preds, a.out);
    ordered_json meta;
    meta["command"] = "generate";
    meta["inputs"] = {{"input", file_digest(a.input)},
                      {"weights", file_digest(a.ckpt + "/weights.bin")}};
    meta["flags"] = {{"beam", a.beam}, {"greedy", a.greedy}, {"max_len", a.max_len}};
    write_json_file(meta, a.out + ".meta.json");
    std::cout << "wrote " << preds.size() << " predictions\n";
    return 0;
  }
  if (a.entity.empty() || a.context.empty())
    throw gencone::ConfigError("provide --entity and --context, or --input/--out");
  std::cout << model.generate(a.entity, a.context, vocab, opt) << "\n";
  return 0;
}

struct EvalArgs {
  std::string pred, ref, out, table;
  std::string label = "model";
};

int run_eval(const EvalArgs& a) {
  gencone::metrics::EvalReport report = gencone::metrics::evaluate_corpus(
      gencone::metrics::read_id_text_jsonl(a.pred),
      gencone::metrics::read_id_text_jsonl(a.ref));
  ordered_json j = report.to_json();
  j["inputs"] = {{"pred", file_digest(a.pred)}, {"ref", file_digest(a.ref)}};
  write_json_file(j, a.out);
  if (!a.table.empty()) {
    std::ofstream t(a.table);
    if (!t) throw gencone::Error("cannot write " + a.table);
    t << report.table_md(a.label);
  }
  std::cout << "BLEU-4=" << report.bleu4 << " METEOR=" << report.meteor
            << " ROUGE_L=" << report.rouge_l << "\n";
  return 0;
}

struct GradcheckArgs {
  std::string component = "all";
  double step = 1e-5;
  double tol = 1e-4;
  std::uint64_t seed = 1;
  std::string out;
};

int run_gradcheck(const GradcheckArgs& a) {
  gencone::GradCheckReport r =
      gencone::grad_check(a.component, a.step, a.tol, a.seed);
  if (!a.out.empty()) write_json_file(r.to_json(), a.out);
  std::cout << "component=" << r.component << " params=" << r.params_checked
            << " entries=" << r.entries_checked
            << " max_rel_err=" << r.max_rel_err << " worst=" << r.worst_param
            << " tol=" << r.tolerance << (r.pass ? " PASS" : " FAIL") << "\n";
  return r.pass ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"entity-centric question generation"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "worker thread cap")->capture_default_str();

  BuildDataArgs bd;
  CLI::App* bd_cmd = app.add_subcommand("build-data", "build dataset splits from SQuAD-format corpora");
  bd_cmd->add_option("--squad", bd.squad, "train corpus (SQuAD JSON)")->required();
  bd_cmd->add_option("--squad-dev", bd.squad_dev, "dev corpus; becomes the test split");
  bd_cmd->add_option("--out", bd.out_dir, "output directory")->required();
  bd_cmd->add_option("--ner", bd.ner, "entity tagger: stub or external")
      ->capture_default_str();
  bd_cmd->add_option("--ner-dict", bd.ner_dict, "surface-form list for the stub tagger");
  bd_cmd->add_option("--ner-cmd", bd.ner_cmd, "external tagger command");
  bd_cmd->add_option("--seed", bd.seed, "shuffle seed")->capture_default_str();
  bd_cmd->add_option("--val-fraction", bd.val_fraction, "validation share of the train corpus")
      ->capture_default_str();

  TrainArgs tr;
  CLI::App* tr_cmd = app.add_subcommand("train", "train a model");
  tr_cmd->add_option("--config", tr.config, "train config JSON")->required();
  tr_cmd->add_option("--data", tr.data_dir, "dataset directory")->required();
  tr_cmd->add_option("--out", tr.out_dir, "checkpoint directory")->required();
  tr_cmd->add_option("--mode", tr.mode, "full, cf_only, qv_only, or seq2seq");
  tr_cmd->add_option("--seed", tr.seed, "override the config seed")
      ->each([&tr](const std::string&) { tr.seed_set = true; });

  GenerateArgs gen;
  CLI::App* gen_cmd = app.add_subcommand("generate", "generate questions from a checkpoint");
  gen_cmd->add_option("--ckpt", gen.ckpt, "checkpoint directory")->required();
  gen_cmd->add_option("--entity", gen.entity, "central entity");
  gen_cmd->add_option("--context", gen.context, "context passage");
  gen_cmd->add_option("--input", gen.input, "dataset jsonl for batch generation");
  gen_cmd->add_option("--out", gen.out, "predictions jsonl");
  gen_cmd->add_option("--beam", gen.beam, "beam width")->capture_default_str();
  gen_cmd->add_flag("--greedy", gen.greedy, "greedy decoding");
  gen_cmd->add_option("--max-len", gen.max_len, "generation cap")->capture_default_str();

  EvalArgs ev;
  CLI::App* ev_cmd = app.add_subcommand("eval", "score predictions against references");
  ev_cmd->add_option("--pred", ev.pred, "predictions jsonl")->required();
  ev_cmd->add_option("--ref", ev.ref, "references jsonl")->required();
  ev_cmd->add_option("--out", ev.out, "report JSON path")->required();
  ev_cmd->add_option("--table", ev.table, "also write a markdown table row");
  ev_cmd->add_option("--label", ev.label, "row label for the table")->capture_default_str();

  GradcheckArgs gc;
  CLI::App* gc_cmd = app.add_subcommand("gradcheck", "compare analytic gradients with central differences");
  gc_cmd->add_option("--component", gc.component,
                     "fusion, similarity, dual_fusion, cf_head, qv_head, or all")
      ->capture_default_str();
  gc_cmd->add_option("--step", gc.step, "finite-difference step")->capture_default_str();
  gc_cmd->add_option("--tol", gc.tol, "max relative error")->capture_default_str();
  gc_cmd->add_option("--seed", gc.seed, "toy model seed")->capture_default_str();
  gc_cmd->add_option("--out", gc.out, "write the JSON report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  Eigen::setNbThreads(threads);
  try {
    if (*bd_cmd) return run_build_data(bd);
    if (*tr_cmd) return run_train(tr);
    if (*gen_cmd) return run_generate(gen);
    if (*ev_cmd) return run_eval(ev);
    if (*gc_cmd) return run_gradcheck(gc);
  } catch (const gencone::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
