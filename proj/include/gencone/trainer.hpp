#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "gencone/data.hpp"
#include "gencone/metrics.hpp"
#include "gencone/model.hpp"

namespace gencone {

struct TrainConfig {
  std::string base_model_size = "base";  // base | large
  double learning_rate = 2e-5;
  double weight_decay = 0.01;
  int batch_size = 64;
  int max_epochs = 15;
  int early_stop_patience = 3;
  double lambda1 = 0.15;
  double lambda2 = 0.15;
  bool lambda_override = false;  // lifts the lambda1 + lambda2 = 0.3 budget
  int max_source_len = 128;
  int max_target_len = 32;
  std::vector<std::uint64_t> seeds = {42};
  Mode mode = Mode::full;

  int d_model = 64;
  int heads = 2;
  int enc_layers = 1;
  int dec_layers = 1;
  int cls_layers = 1;
  int d_ff = 128;
  double dropout = 0.0;
  std::string base_model = "scratch";
  bool fusion_use_logits = false;
  bool loss_literal_positive_only = false;
  bool classifier_fresh_init = true;

  double grad_clip = 1.0;
  double warmup_fraction = 0.05;
  int max_steps = 0;  // 0 = epochs decide

  void validate() const;
  ModelConfig model_config() const;
  nlohmann::ordered_json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig from_file(const std::string& path);
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  LossParts train;
  LossParts val;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // 1-based
  std::string stop_reason;  // early_stop | max_epochs | max_steps
  std::uint64_t seed = 0;
  int steps = 0;

  nlohmann::ordered_json to_json() const;
};

// Patience counter on a minimized criterion. update() returns true when the
// criterion has not improved for `patience` consecutive updates.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience);
  bool update(double value);
  bool improved() const { return improved_; }
  double best() const { return best_; }
  int best_index() const { return best_index_; }  // 0-based update index

 private:
  int patience_;
  int since_best_ = 0;
  int updates_ = 0;
  int best_index_ = -1;
  double best_ = 0.0;
  bool improved_ = false;
  bool has_best_ = false;
};

// Decoupled weight decay. Parameters whose gradient never materialized in the
// last backward pass are skipped outright, decay included, so unused modules
// stay bitwise identical to their initialization.
class AdamW {
 public:
  AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
        double weight_decay = 0.01);
  void step(nn::ParamStore& store, double lr);

 private:
  struct Slot {
    ag::Mat m, v;
    long t = 0;
  };
  double beta1_, beta2_, eps_, weight_decay_;
  std::unordered_map<std::string, Slot> slots_;
};

// Scales participating gradients so their global norm is at most max_norm.
// Returns the pre-clip norm.
double clip_global_norm(nn::ParamStore& store, double max_norm);

struct TrainResult {
  TrainHistory history;
};

// Optimizes the model in place; on return the weights are those of the best
// validation epoch. `dump_dir` receives the offending batch when the loss
// turns non-finite.
TrainResult train(GenconeModel& model, const Vocab& vocab,
                  const std::vector<data::ECQGSample>& train_samples,
                  const std::vector<data::ECQGSample>& val_samples,
                  const TrainConfig& cfg, std::uint64_t seed,
                  const std::string& dump_dir);

struct LrSearchResult {
  double best_rate = 0.0;
  // (rate, best validation loss); diverged rates are absent.
  std::vector<std::pair<double, double>> tried;
};

LrSearchResult lr_search(const Vocab& vocab,
                         const std::vector<data::ECQGSample>& train_samples,
                         const std::vector<data::ECQGSample>& val_samples,
                         const TrainConfig& cfg,
                         const std::vector<double>& grid);

struct MultiSeedResult {
  metrics::EvalReport mean;
  std::vector<std::pair<std::uint64_t, metrics::EvalReport>> per_seed;
};

// Trains once per seed, generates greedily on the eval split, and averages
// the corpus metrics across seeds.
MultiSeedResult multi_seed(const Vocab& vocab,
                           const std::vector<data::ECQGSample>& train_samples,
                           const std::vector<data::ECQGSample>& val_samples,
                           const std::vector<data::ECQGSample>& eval_samples,
                           const TrainConfig& cfg);

struct GradCheckReport {
  std::string component;
  int params_checked = 0;
  int entries_checked = 0;
  double max_rel_err = 0.0;
  std::string worst_param;
  bool pass = false;
  double tolerance = 0.0;
  std::vector<std::pair<std::string, double>> per_param;

  nlohmann::ordered_json to_json() const;
};

// Central-difference check of the analytic gradients on a toy model.
// component picks a parameter family: fusion, similarity, dual_fusion,
// cf_head, qv_head, or all.
GradCheckReport grad_check(const std::string& component, double step,
                           double tolerance, std::uint64_t seed);

}  // namespace gencone
