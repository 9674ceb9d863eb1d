#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "gencone/autodiff.hpp"
#include "gencone/batch.hpp"
#include "gencone/nn.hpp"
#include "gencone/vocab.hpp"

namespace gencone {

enum class Mode { full, cf_only, qv_only, seq2seq };

Mode mode_from_string(const std::string& s);
std::string mode_to_string(Mode m);

struct ModelConfig {
  int d_model = 64;
  int heads = 2;
  int enc_layers = 1;
  int dec_layers = 1;
  int cls_layers = 1;  // focus/answer classifier stacks
  int d_ff = 128;
  int max_source_len = 128;
  int max_target_len = 32;
  double lambda1 = 0.15;
  double lambda2 = 0.15;
  double dropout = 0.0;
  bool fusion_use_logits = false;
  bool loss_literal_positive_only = false;
  bool classifier_fresh_init = true;
  Mode mode = Mode::full;
  std::string base_model = "scratch";

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct LossParts {
  double qg = 0.0;
  double cf = 0.0;
  double qv = 0.0;
  double total = 0.0;
};

// Everything one forward pass produced. Tensor fields hold one matrix per
// sample, padded to the widest sample in the batch: probability tensors pad
// with uniform rows so every slice still sums to 1, representations pad with
// zeros. Fields of inactive paths stay empty.
struct ForwardOutputs {
  std::vector<ag::Mat> h_c;   // [|C| x d]
  std::vector<ag::Mat> h_f;   // [|C| x 2]
  std::vector<ag::Mat> h_cf;  // [|C| x d]
  std::vector<ag::Mat> h_q;   // [|Q| x d]
  std::vector<ag::Mat> p_q;   // [|Q| x V]
  std::vector<ag::Mat> s;     // [|C| x |Q|]
  std::vector<ag::Mat> h_cq;  // [|C| x d]
  std::vector<ag::Mat> h_a;   // [|C| x 2]
  LossParts loss;
  ag::Var loss_var;  // lives on the tape the forward ran on

  // Eq-8 linearity: the loss is affine in each weight.
  double lambda1_grad() const { return loss.cf; }
  double lambda2_grad() const { return loss.qv; }
};

struct DecodeOptions {
  bool greedy = false;
  int beam_size = 4;
  int max_len = 32;
};

class GenconeModel {
 public:
  GenconeModel(ModelConfig cfg, int vocab_size, std::uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  int vocab_size() const { return vocab_size_; }
  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }

  // Per-sample building blocks, all on true (unpadded) lengths.
  ag::Var encode_tokens(ag::Tape& t, const std::vector<int>& ids,
                        bool training = false,
                        std::mt19937_64* rng = nullptr) const;  // [n x d]
  ag::Var focus_locate(ag::Tape& t, ag::Var h_c) const;         // [n x 2] probs
  ag::Var fuse(ag::Tape& t, ag::Var h_c, ag::Var h_f) const;    // [n x d]

  struct DecoderOut {
    ag::Var p_q;  // [m x V]
    ag::Var h_q;  // [m x d]
  };
  // Teacher forcing: decoder input is <bos> followed by gold[0..m-2].
  DecoderOut qg_forward(ag::Tape& t, ag::Var memory,
                        const std::vector<int>& gold, bool training = false,
                        std::mt19937_64* rng = nullptr) const;

  struct DualOut {
    ag::Var sim;   // [n_c x n_q]
    ag::Var h_cq;  // [n_c x d]
  };
  DualOut dual_attention(ag::Tape& t, ag::Var h_c, ag::Var h_q) const;
  ag::Var answer_infer(ag::Tape& t, ag::Var h_cq) const;  // [n x 2] probs

  // Mean over positions of -log p[position, gold class/token].
  static ag::Var class_loss(ag::Tape& t, ag::Var probs,
                            const std::vector<int>& bits,
                            bool literal_positive_only);
  static ag::Var nll_loss(ag::Tape& t, ag::Var p_q, const std::vector<int>& gold);

  static double total_loss(double l_qg, double l_cf, double l_qv, double lambda1,
                           double lambda2);

  ForwardOutputs forward(ag::Tape& t, const TokenBatch& batch, Mode mode,
                         bool training = false,
                         std::mt19937_64* rng = nullptr) const;

  std::vector<int> generate_ids(const std::vector<int>& src_ids,
                                const DecodeOptions& opt) const;
  std::string generate(const std::string& entity, const std::string& context,
                       const Vocab& vocab, const DecodeOptions& opt) const;

  void save(const std::string& dir, const Vocab& vocab, std::uint64_t seed,
            const nlohmann::json& extra = nlohmann::json::object()) const;
  static GenconeModel load(const std::string& dir, Vocab* vocab_out = nullptr);

 private:
  ag::Var classifier_logits(ag::Tape& t, ag::Var x,
                            const std::vector<nn::EncoderLayer>& stack,
                            const nn::LayerNorm& final_ln,
                            const nn::Linear& head) const;
  Eigen::RowVectorXd step_log_probs(const std::vector<int>& generated,
                                    const ag::Mat& memory) const;

  ModelConfig cfg_;
  int vocab_size_ = 0;
  std::uint64_t init_seed_ = 0;
  // Mutable: const forward passes put parameters on the tape, and the tape
  // needs each Param's grad matrix as a sink.
  mutable nn::ParamStore store_;

  nn::LayerNorm enc_final_, dec_final_;
  std::vector<nn::EncoderLayer> enc_layers_;
  std::vector<nn::DecoderLayer> dec_layers_;
  std::vector<nn::EncoderLayer> cf_stack_, qv_stack_;
  nn::LayerNorm cf_final_, qv_final_;
  nn::Linear cf_head_, qv_head_, lm_head_;
};

// Looks for <base_model>/weights.bin under ECQG_CACHE_DIR. Absent cache or
// model directory means fresh initialization.
std::optional<std::string> resolve_base_weights(const std::string& base_model);

}  // namespace gencone
