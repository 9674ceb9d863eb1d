#pragma once

#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "gencone/autodiff.hpp"

namespace gencone::nn {

// A named trainable tensor. `grad` stays empty (size 0) until some backward
// pass actually deposits into it; the optimizer treats an empty grad as
// "did not participate" and leaves the value untouched.
struct Param {
  std::string name;
  ag::Mat value;
  ag::Mat grad;

  bool participated() const { return grad.size() != 0; }
};

// Owns all parameters of a model. Iteration order is creation order, which
// fixes the serialization layout of checkpoints.
class ParamStore {
 public:
  Param& create(const std::string& name, int rows, int cols,
                std::mt19937_64& rng, double sd = 0.02);
  Param& create_const(const std::string& name, int rows, int cols, double fill);

  Param* find(const std::string& name);
  const Param* find(const std::string& name) const;
  Param& at(const std::string& name);

  std::vector<Param*> all();
  std::vector<const Param*> all() const;
  std::vector<Param*> matching(const std::string& prefix);

  void zero_grads();
  size_t size() const { return params_.size(); }

 private:
  Param& insert(const std::string& name, ag::Mat value);

  std::vector<std::unique_ptr<Param>> params_;
  std::unordered_map<std::string, int> index_;
};

// Puts a parameter on the tape as a leaf whose gradient accumulates into
// Param::grad. A param may be used several times on one tape.
ag::Var use(ag::Tape& t, Param& p);

struct Linear {
  Param* w = nullptr;  // [in x out]
  Param* b = nullptr;  // [1 x out], nullptr when bias-free

  static Linear create(ParamStore& store, const std::string& name, int in,
                       int out, std::mt19937_64& rng, bool bias = true);
  ag::Var operator()(ag::Tape& t, ag::Var x) const;
};

struct LayerNorm {
  Param* gain = nullptr;  // [1 x dim]
  Param* bias = nullptr;  // [1 x dim]

  static LayerNorm create(ParamStore& store, const std::string& name, int dim);
  ag::Var operator()(ag::Tape& t, ag::Var x) const;
};

struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  int heads = 1;
  int d_model = 0;

  static MultiHeadAttention create(ParamStore& store, const std::string& name,
                                   int d_model, int heads, std::mt19937_64& rng);
  // q_in: [Tq x d], kv_in: [Tk x d]. `mask` is additive on the score matrix
  // ([Tq x Tk], 0 = visible, -inf = blocked) and may be null.
  ag::Var operator()(ag::Tape& t, ag::Var q_in, ag::Var kv_in,
                     const ag::Mat* mask = nullptr) const;
};

struct FeedForward {
  Linear w1, w2;

  static FeedForward create(ParamStore& store, const std::string& name,
                            int d_model, int d_ff, std::mt19937_64& rng);
  ag::Var operator()(ag::Tape& t, ag::Var x) const;
};

// Pre-norm residual blocks.
struct EncoderLayer {
  LayerNorm ln1, ln2;
  MultiHeadAttention attn;
  FeedForward ffn;

  static EncoderLayer create(ParamStore& store, const std::string& name,
                             int d_model, int heads, int d_ff,
                             std::mt19937_64& rng);
  ag::Var operator()(ag::Tape& t, ag::Var x, const ag::Mat* mask = nullptr) const;
};

struct DecoderLayer {
  LayerNorm ln1, ln2, ln3;
  MultiHeadAttention self_attn, cross_attn;
  FeedForward ffn;

  static DecoderLayer create(ParamStore& store, const std::string& name,
                             int d_model, int heads, int d_ff,
                             std::mt19937_64& rng);
  ag::Var operator()(ag::Tape& t, ag::Var x, ag::Var memory,
                     const ag::Mat* self_mask) const;
};

// [n x n], zero on and below the diagonal, -inf above.
ag::Mat causal_mask(int n);

}  // namespace gencone::nn
