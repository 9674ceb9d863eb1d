#include "gencone/nn.hpp"

#include <cmath>
#include <limits>

#include "gencone/common.hpp"

namespace gencone::nn {

Param& ParamStore::insert(const std::string& name, ag::Mat value) {
  if (index_.count(name)) throw ContractError("duplicate parameter: " + name);
  auto p = std::make_unique<Param>();
  p->name = name;
  p->value = std::move(value);
  index_[name] = static_cast<int>(params_.size());
  params_.push_back(std::move(p));
  return *params_.back();
}

Param& ParamStore::create(const std::string& name, int rows, int cols,
                          std::mt19937_64& rng, double sd) {
  std::normal_distribution<double> dist(0.0, sd);
  ag::Mat v(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) v(r, c) = dist(rng);
  return insert(name, std::move(v));
}

Param& ParamStore::create_const(const std::string& name, int rows, int cols,
                                double fill) {
  return insert(name, ag::Mat::Constant(rows, cols, fill));
}

Param* ParamStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

const Param* ParamStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

Param& ParamStore::at(const std::string& name) {
  Param* p = find(name);
  if (!p) throw ContractError("unknown parameter: " + name);
  return *p;
}

std::vector<Param*> ParamStore::all() {
  std::vector<Param*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Param*> ParamStore::all() const {
  std::vector<const Param*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<Param*> ParamStore::matching(const std::string& prefix) {
  std::vector<Param*> out;
  for (auto& p : params_)
    if (p->name.rfind(prefix, 0) == 0) out.push_back(p.get());
  return out;
}

void ParamStore::zero_grads() {
  for (auto& p : params_) p->grad.resize(0, 0);
}

ag::Var use(ag::Tape& t, Param& p) { return t.leaf(p.value, &p.grad); }

Linear Linear::create(ParamStore& store, const std::string& name, int in,
                      int out, std::mt19937_64& rng, bool bias) {
  Linear l;
  l.w = &store.create(name + ".w", in, out, rng);
  if (bias) l.b = &store.create_const(name + ".b", 1, out, 0.0);
  return l;
}

ag::Var Linear::operator()(ag::Tape& t, ag::Var x) const {
  ag::Var y = t.matmul(x, use(t, *w));
  if (b) y = t.add_rowvec(y, use(t, *b));
  return y;
}

LayerNorm LayerNorm::create(ParamStore& store, const std::string& name, int dim) {
  LayerNorm ln;
  ln.gain = &store.create_const(name + ".gain", 1, dim, 1.0);
  ln.bias = &store.create_const(name + ".bias", 1, dim, 0.0);
  return ln;
}

ag::Var LayerNorm::operator()(ag::Tape& t, ag::Var x) const {
  return t.layer_norm(x, use(t, *gain), use(t, *bias));
}

MultiHeadAttention MultiHeadAttention::create(ParamStore& store,
                                              const std::string& name,
                                              int d_model, int heads,
                                              std::mt19937_64& rng) {
  if (heads <= 0 || d_model % heads != 0)
    throw ConfigError("attention width must divide evenly across heads");
  MultiHeadAttention a;
  a.heads = heads;
  a.d_model = d_model;
  a.wq = Linear::create(store, name + ".wq", d_model, d_model, rng);
  a.wk = Linear::create(store, name + ".wk", d_model, d_model, rng);
  a.wv = Linear::create(store, name + ".wv", d_model, d_model, rng);
  a.wo = Linear::create(store, name + ".wo", d_model, d_model, rng);
  return a;
}

ag::Var MultiHeadAttention::operator()(ag::Tape& t, ag::Var q_in, ag::Var kv_in,
                                       const ag::Mat* mask) const {
  ag::Var q = wq(t, q_in);
  ag::Var k = wk(t, kv_in);
  ag::Var v = wv(t, kv_in);
  const int dh = d_model / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<ag::Var> ctx;
  ctx.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    ag::Var qh = t.slice_cols(q, h * dh, dh);
    ag::Var kh = t.slice_cols(k, h * dh, dh);
    ag::Var vh = t.slice_cols(v, h * dh, dh);
    ag::Var scores = t.scale(t.matmul_nt(qh, kh), inv_scale);
    if (mask) scores = t.add_const(scores, *mask);
    ctx.push_back(t.matmul(t.softmax_rows(scores), vh));
  }
  return wo(t, t.concat_cols(ctx));
}

FeedForward FeedForward::create(ParamStore& store, const std::string& name,
                                int d_model, int d_ff, std::mt19937_64& rng) {
  FeedForward f;
  f.w1 = Linear::create(store, name + ".w1", d_model, d_ff, rng);
  f.w2 = Linear::create(store, name + ".w2", d_ff, d_model, rng);
  return f;
}

ag::Var FeedForward::operator()(ag::Tape& t, ag::Var x) const {
  return w2(t, t.gelu(w1(t, x)));
}

EncoderLayer EncoderLayer::create(ParamStore& store, const std::string& name,
                                  int d_model, int heads, int d_ff,
                                  std::mt19937_64& rng) {
  EncoderLayer e;
  e.ln1 = LayerNorm::create(store, name + ".ln1", d_model);
  e.ln2 = LayerNorm::create(store, name + ".ln2", d_model);
  e.attn = MultiHeadAttention::create(store, name + ".attn", d_model, heads, rng);
  e.ffn = FeedForward::create(store, name + ".ffn", d_model, d_ff, rng);
  return e;
}

ag::Var EncoderLayer::operator()(ag::Tape& t, ag::Var x, const ag::Mat* mask) const {
  ag::Var n1 = ln1(t, x);
  x = t.add(x, attn(t, n1, n1, mask));
  x = t.add(x, ffn(t, ln2(t, x)));
  return x;
}

DecoderLayer DecoderLayer::create(ParamStore& store, const std::string& name,
                                  int d_model, int heads, int d_ff,
                                  std::mt19937_64& rng) {
  DecoderLayer d;
  d.ln1 = LayerNorm::create(store, name + ".ln1", d_model);
  d.ln2 = LayerNorm::create(store, name + ".ln2", d_model);
  d.ln3 = LayerNorm::create(store, name + ".ln3", d_model);
  d.self_attn =
      MultiHeadAttention::create(store, name + ".self_attn", d_model, heads, rng);
  d.cross_attn =
      MultiHeadAttention::create(store, name + ".cross_attn", d_model, heads, rng);
  d.ffn = FeedForward::create(store, name + ".ffn", d_model, d_ff, rng);
  return d;
}

ag::Var DecoderLayer::operator()(ag::Tape& t, ag::Var x, ag::Var memory,
                                 const ag::Mat* self_mask) const {
  ag::Var n1 = ln1(t, x);
  x = t.add(x, self_attn(t, n1, n1, self_mask));
  x = t.add(x, cross_attn(t, ln2(t, x), memory));
  x = t.add(x, ffn(t, ln3(t, x)));
  return x;
}

ag::Mat causal_mask(int n) {
  ag::Mat m = ag::Mat::Zero(n, n);
  const double neg_inf = -std::numeric_limits<double>::infinity();
  for (int r = 0; r < n; ++r)
    for (int c = r + 1; c < n; ++c) m(r, c) = neg_inf;
  return m;
}

}  // namespace gencone::nn
