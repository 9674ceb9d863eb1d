#include "gencone/autodiff.hpp"

#include <cmath>

namespace gencone::ag {

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

const Mat& Var::val() const { return tape_->node(idx_).value; }
const Mat& Var::grad() const { return tape_->node(idx_).grad; }
int Var::rows() const { return static_cast<int>(val().rows()); }
int Var::cols() const { return static_cast<int>(val().cols()); }

double Var::scalar() const {
  if (rows() != 1 || cols() != 1) throw ContractError("Var::scalar on non-scalar node");
  return val()(0, 0);
}

int Tape::push(Mat value, std::function<void(Tape&)> back, Mat* sink) {
  Node n;
  n.value = std::move(value);
  n.back = std::move(back);
  n.sink = sink;
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Mat& Tape::grad_of(int idx) {
  Node& n = nodes_[idx];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

bool Tape::has_grad(int idx) const { return nodes_[idx].grad.size() != 0; }

Var Tape::constant(Mat v) { return Var(this, push(std::move(v))); }

Var Tape::leaf(const Mat& value, Mat* grad_sink) {
  return Var(this, push(value, nullptr, grad_sink));
}

Var Tape::add(Var a, Var b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ContractError("add: shape mismatch");
  int ia = a.idx_, ib = b.idx_;
  int out = push(a.val() + b.val());
  nodes_[out].back = [ia, ib, out](Tape& t) {
    const Mat& g = t.nodes_[out].grad;
    t.grad_of(ia) += g;
    t.grad_of(ib) += g;
  };
  return Var(this, out);
}

Var Tape::sub(Var a, Var b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ContractError("sub: shape mismatch");
  int ia = a.idx_, ib = b.idx_;
  int out = push(a.val() - b.val());
  nodes_[out].back = [ia, ib, out](Tape& t) {
    const Mat& g = t.nodes_[out].grad;
    t.grad_of(ia) += g;
    t.grad_of(ib) -= g;
  };
  return Var(this, out);
}

Var Tape::mul(Var a, Var b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ContractError("mul: shape mismatch");
  int ia = a.idx_, ib = b.idx_;
  int out = push(a.val().cwiseProduct(b.val()));
  nodes_[out].back = [ia, ib, out](Tape& t) {
    const Mat& g = t.nodes_[out].grad;
    t.grad_of(ia) += g.cwiseProduct(t.nodes_[ib].value);
    t.grad_of(ib) += g.cwiseProduct(t.nodes_[ia].value);
  };
  return Var(this, out);
}

Var Tape::matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw ContractError("matmul: inner dimension mismatch");
  int ia = a.idx_, ib = b.idx_;
  int out = push(a.val() * b.val());
  nodes_[out].back = [ia, ib, out](Tape& t) {
    const Mat& g = t.nodes_[out].grad;
    t.grad_of(ia) += g * t.nodes_[ib].value.transpose();
    t.grad_of(ib) += t.nodes_[ia].value.transpose() * g;
  };
  return Var(this, out);
}

Var Tape::matmul_nt(Var a, Var b) {
  if (a.cols() != b.cols()) throw ContractError("matmul_nt: inner dimension mismatch");
  int ia = a.idx_, ib = b.idx_;
  int out = push(a.val() * b.val().transpose());
  nodes_[out].back = [ia, ib, out](Tape& t) {
    const Mat& g = t.nodes_[out].grad;
    t.grad_of(ia) += g * t.nodes_[ib].value;
    t.grad_of(ib) += g.transpose() * t.nodes_[ia].value;
  };
  return Var(this, out);
}

Var Tape::scale(Var a, double s) {
  int ia = a.idx_;
  int out = push(a.val() * s);
  nodes_[out].back = [ia, s, out](Tape& t) {
    t.grad_of(ia) += t.nodes_[out].grad * s;
  };
  return Var(this, out);
}

Var Tape::add_rowvec(Var a, Var r) {
  if (r.rows() != 1 || r.cols() != a.cols())
    throw ContractError("add_rowvec: shape mismatch");
  int ia = a.idx_, ir = r.idx_;
  Mat v = a.val();
  v.rowwise() += r.val().row(0);
  int out = push(std::move(v));
  nodes_[out].back = [ia, ir, out](Tape& t) {
    const Mat& g = t.nodes_[out].grad;
    t.grad_of(ia) += g;
    t.grad_of(ir) += g.colwise().sum();
  };
  return Var(this, out);
}

Var Tape::mul_rowvec(Var a, Var r) {
  if (r.rows() != 1 || r.cols() != a.cols())
    throw ContractError("mul_rowvec: shape mismatch");
  int ia = a.idx_, ir = r.idx_;
  Mat v = a.val();
  v.array().rowwise() *= r.val().row(0).array();
  int out = push(std::move(v));
  nodes_[out].back = [ia, ir, out](Tape& t) {
    const Mat& g = t.nodes_[out].grad;
    Mat gm = g;
    gm.array().rowwise() *= t.nodes_[ir].value.row(0).array();
    t.grad_of(ia) += gm;
    t.grad_of(ir) += (g.cwiseProduct(t.nodes_[ia].value)).colwise().sum();
  };
  return Var(this, out);
}

Var Tape::bcast_col(Var a, int cols) {
  if (a.cols() != 1) throw ContractError("bcast_col: input must be a column");
  int ia = a.idx_;
  int out = push(a.val().replicate(1, cols));
  nodes_[out].back = [ia, out](Tape& t) {
    t.grad_of(ia) += t.nodes_[out].grad.rowwise().sum();
  };
  return Var(this, out);
}

Var Tape::bcast_row(Var a, int rows) {
  if (a.rows() != 1) throw ContractError("bcast_row: input must be a row");
  int ia = a.idx_;
  int out = push(a.val().replicate(rows, 1));
  nodes_[out].back = [ia, out](Tape& t) {
    t.grad_of(ia) += t.nodes_[out].grad.colwise().sum();
  };
  return Var(this, out);
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no parts");
  int rows = parts[0].rows();
  int total = 0;
  std::vector<int> idx, widths;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ContractError("concat_cols: row mismatch");
    idx.push_back(p.idx_);
    widths.push_back(p.cols());
    total += p.cols();
  }
  Mat v(rows, total);
  int off = 0;
  for (const Var& p : parts) {
    v.middleCols(off, p.cols()) = p.val();
    off += p.cols();
  }
  int out = push(std::move(v));
  nodes_[out].back = [idx, widths, out](Tape& t) {
    const Mat& g = t.nodes_[out].grad;
    int o = 0;
    for (size_t k = 0; k < idx.size(); ++k) {
      t.grad_of(idx[k]) += g.middleCols(o, widths[k]);
      o += widths[k];
    }
  };
  return Var(this, out);
}

Var Tape::slice_cols(Var a, int begin, int n) {
  if (begin < 0 || n < 0 || begin + n > a.cols())
    throw ContractError("slice_cols: out of range");
  int ia = a.idx_;
  int out = push(a.val().middleCols(begin, n));
  nodes_[out].back = [ia, begin, n, out](Tape& t) {
    t.grad_of(ia).middleCols(begin, n) += t.nodes_[out].grad;
  };
  return Var(this, out);
}

Var Tape::transpose(Var a) {
  int ia = a.idx_;
  int out = push(a.val().transpose());
  nodes_[out].back = [ia, out](Tape& t) {
    t.grad_of(ia) += t.nodes_[out].grad.transpose();
  };
  return Var(this, out);
}

Var Tape::rows_select(Var table, std::vector<int> ids) {
  int ia = table.idx_;
  Mat v(static_cast<int>(ids.size()), table.cols());
  for (size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] < 0 || ids[k] >= table.rows())
      throw ContractError("rows_select: index out of range");
    v.row(static_cast<int>(k)) = table.val().row(ids[k]);
  }
  int out = push(std::move(v));
  nodes_[out].back = [ia, ids = std::move(ids), out](Tape& t) {
    const Mat& g = t.nodes_[out].grad;
    Mat& tg = t.grad_of(ia);
    for (size_t k = 0; k < ids.size(); ++k) {
      tg.row(ids[k]) += g.row(static_cast<int>(k));
    }
  };
  return Var(this, out);
}

Var Tape::softmax_rows(Var a) {
  int ia = a.idx_;
  Mat v = a.val();
  for (int r = 0; r < v.rows(); ++r) {
    double m = v.row(r).maxCoeff();
    v.row(r) = (v.row(r).array() - m).exp();
    v.row(r) /= v.row(r).sum();
  }
  int out = push(std::move(v));
  nodes_[out].back = [ia, out](Tape& t) {
    const Mat& g = t.nodes_[out].grad;
    const Mat& s = t.nodes_[out].value;
    Mat gs = g.cwiseProduct(s);
    Eigen::VectorXd dots = gs.rowwise().sum();
    t.grad_of(ia) += gs - s.cwiseProduct(dots.replicate(1, s.cols()));
  };
  return Var(this, out);
}

Var Tape::log_clamped(Var a, double floor) {
  int ia = a.idx_;
  Mat clamped = a.val().cwiseMax(floor);
  Mat v = clamped.array().log().matrix();
  int out = push(std::move(v));
  nodes_[out].back = [ia, out, clamped = std::move(clamped)](Tape& t) {
    t.grad_of(ia) += t.nodes_[out].grad.cwiseQuotient(clamped);
  };
  return Var(this, out);
}

Var Tape::row_max(Var a) {
  int ia = a.idx_;
  const Mat& x = a.val();
  Mat v(x.rows(), 1);
  std::vector<int> arg(x.rows());
  for (int r = 0; r < x.rows(); ++r) {
    int c = 0;
    x.row(r).maxCoeff(&c);
    arg[r] = c;
    v(r, 0) = x(r, c);
  }
  int out = push(std::move(v));
  nodes_[out].back = [ia, out, arg = std::move(arg)](Tape& t) {
    const Mat& g = t.nodes_[out].grad;
    Mat& tg = t.grad_of(ia);
    for (int r = 0; r < g.rows(); ++r) tg(r, arg[r]) += g(r, 0);
  };
  return Var(this, out);
}

Var Tape::sum_all(Var a) {
  int ia = a.idx_;
  Mat v(1, 1);
  v(0, 0) = a.val().sum();
  int out = push(std::move(v));
  nodes_[out].back = [ia, out](Tape& t) {
    double g = t.nodes_[out].grad(0, 0);
    t.grad_of(ia).array() += g;
  };
  return Var(this, out);
}

Var Tape::mean_all(Var a) {
  double inv = 1.0 / static_cast<double>(a.rows() * a.cols());
  return scale(sum_all(a), inv);
}

Var Tape::gather(Var a, std::vector<std::pair<int, int>> idx) {
  int ia = a.idx_;
  Mat v(static_cast<int>(idx.size()), 1);
  for (size_t k = 0; k < idx.size(); ++k) {
    auto [r, c] = idx[k];
    if (r < 0 || r >= a.rows() || c < 0 || c >= a.cols())
      throw ContractError("gather: index out of range");
    v(static_cast<int>(k), 0) = a.val()(r, c);
  }
  int out = push(std::move(v));
  nodes_[out].back = [ia, out, idx = std::move(idx)](Tape& t) {
    const Mat& g = t.nodes_[out].grad;
    Mat& tg = t.grad_of(ia);
    for (size_t k = 0; k < idx.size(); ++k) {
      tg(idx[k].first, idx[k].second) += g(static_cast<int>(k), 0);
    }
  };
  return Var(this, out);
}

Var Tape::layer_norm(Var a, Var gain, Var bias, double eps) {
  const int m = a.cols();
  if (gain.rows() != 1 || gain.cols() != m || bias.rows() != 1 || bias.cols() != m)
    throw ContractError("layer_norm: gain/bias must be [1 x cols]");
  int ia = a.idx_, ig = gain.idx_, ib = bias.idx_;
  const Mat& x = a.val();
  Mat xhat(x.rows(), m);
  Eigen::VectorXd inv_sd(x.rows());
  for (int r = 0; r < x.rows(); ++r) {
    double mu = x.row(r).mean();
    Eigen::RowVectorXd c = x.row(r).array() - mu;
    double var = c.squaredNorm() / m;
    double inv = 1.0 / std::sqrt(var + eps);
    inv_sd(r) = inv;
    xhat.row(r) = c * inv;
  }
  Mat v = xhat;
  v.array().rowwise() *= gain.val().row(0).array();
  v.rowwise() += bias.val().row(0);
  int out = push(std::move(v));
  nodes_[out].back = [ia, ig, ib, out, xhat = std::move(xhat),
                      inv_sd = std::move(inv_sd)](Tape& t) {
    const Mat& g = t.nodes_[out].grad;
    const int m2 = static_cast<int>(g.cols());
    const Mat& gv = t.nodes_[ig].value;
    Mat gstd = g;
    gstd.array().rowwise() *= gv.row(0).array();
    Mat& da = t.grad_of(ia);
    for (int r = 0; r < g.rows(); ++r) {
      double mean_g = gstd.row(r).mean();
      double mean_gx = (gstd.row(r).cwiseProduct(xhat.row(r))).mean();
      da.row(r) += inv_sd(r) *
                   (gstd.row(r).array() - mean_g - xhat.row(r).array() * mean_gx).matrix();
    }
    t.grad_of(ig) += (g.cwiseProduct(xhat)).colwise().sum();
    t.grad_of(ib) += g.colwise().sum();
  };
  return Var(this, out);
}

Var Tape::gelu(Var a) {
  int ia = a.idx_;
  const Mat& x = a.val();
  Mat phi = x.unaryExpr([](double u) { return std::erf(u * kInvSqrt2); });
  Mat v = (0.5 * x.array() * (1.0 + phi.array())).matrix();
  int out = push(std::move(v));
  nodes_[out].back = [ia, out](Tape& t) {
    const Mat& g = t.nodes_[out].grad;
    const Mat& x2 = t.nodes_[ia].value;
    Mat phi2 = x2.unaryExpr([](double u) { return std::erf(u * kInvSqrt2); });
    Mat d = (0.5 * (1.0 + phi2.array()) +
             x2.array() * kInvSqrt2Pi * (-0.5 * x2.array().square()).exp()).matrix();
    t.grad_of(ia) += g.cwiseProduct(d);
  };
  return Var(this, out);
}

Var Tape::dropout(Var a, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return a;
  if (rate >= 1.0) throw ContractError("dropout: rate must be < 1");
  int ia = a.idx_;
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  Mat mask(a.rows(), a.cols());
  double keep = 1.0 - rate;
  for (int r = 0; r < mask.rows(); ++r)
    for (int c = 0; c < mask.cols(); ++c)
      mask(r, c) = dist(rng) < keep ? 1.0 / keep : 0.0;
  int out = push(a.val().cwiseProduct(mask));
  nodes_[out].back = [ia, out, mask = std::move(mask)](Tape& t) {
    t.grad_of(ia) += t.nodes_[out].grad.cwiseProduct(mask);
  };
  return Var(this, out);
}

Var Tape::add_const(Var a, Mat m) {
  if (m.rows() != a.rows() || m.cols() != a.cols())
    throw ContractError("add_const: shape mismatch");
  int ia = a.idx_;
  int out = push(a.val() + m);
  nodes_[out].back = [ia, out](Tape& t) {
    t.grad_of(ia) += t.nodes_[out].grad;
  };
  return Var(this, out);
}

void Tape::backward(Var root) {
  if (backward_done_) throw ContractError("Tape::backward called twice");
  if (root.tape_ != this) throw ContractError("backward: root from another tape");
  if (root.rows() != 1 || root.cols() != 1)
    throw ContractError("backward: root must be 1x1");
  backward_done_ = true;
  grad_of(root.idx_)(0, 0) = 1.0;
  for (int i = root.idx_; i >= 0; --i) {
    if (!has_grad(i)) continue;
    if (nodes_[i].back) nodes_[i].back(*this);
    if (nodes_[i].sink != nullptr) {
      Mat& s = *nodes_[i].sink;
      if (s.size() == 0) s = Mat::Zero(nodes_[i].value.rows(), nodes_[i].value.cols());
      s += nodes_[i].grad;
    }
  }
}

}  // namespace gencone::ag
