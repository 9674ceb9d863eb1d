#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <utility>
#include <vector>

#include "gencone/common.hpp"

namespace gencone::ag {

using Mat = Eigen::MatrixXd;

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;
  const Mat& val() const;
  const Mat& grad() const;
  double scalar() const;  // requires a 1x1 value
  int rows() const;
  int cols() const;
  int index() const { return idx_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, int i) : tape_(t), idx_(i) {}
  Tape* tape_ = nullptr;
  int idx_ = -1;
};

// Reverse-mode tape over dense double matrices. Nodes are created in
// topological order; backward() sweeps them in reverse. Leaves created with a
// grad sink accumulate their gradient into external parameter storage, which
// the optimizer uses to tell participating parameters from untouched ones.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat v);
  Var leaf(const Mat& value, Mat* grad_sink);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);          // elementwise
  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);    // a * b^T
  Var scale(Var a, double s);
  Var add_rowvec(Var a, Var r);   // [n x m] + broadcast of [1 x m]
  Var mul_rowvec(Var a, Var r);   // [n x m] ∘ broadcast of [1 x m]
  Var bcast_col(Var a, int cols); // [n x 1] -> [n x cols]
  Var bcast_row(Var a, int rows); // [1 x m] -> [rows x m]
  Var concat_cols(const std::vector<Var>& parts);
  Var slice_cols(Var a, int begin, int n);
  Var transpose(Var a);
  Var rows_select(Var table, std::vector<int> ids);
  Var softmax_rows(Var a);
  Var log_clamped(Var a, double floor = 1e-300);
  Var row_max(Var a);             // [n x m] -> [n x 1], subgradient to first argmax
  Var sum_all(Var a);             // -> 1x1
  Var mean_all(Var a);            // -> 1x1
  Var gather(Var a, std::vector<std::pair<int, int>> idx);  // -> [k x 1]
  Var layer_norm(Var a, Var gain, Var bias, double eps = 1e-5);  // rowwise
  Var gelu(Var a);
  Var dropout(Var a, double rate, std::mt19937_64& rng);
  Var add_const(Var a, Mat m);    // additive constant (attention masks)

  // Backpropagates from a 1x1 root. May be called once per tape.
  void backward(Var root);

  size_t size() const { return nodes_.size(); }

 private:
  friend class Var;

  struct Node {
    Mat value;
    Mat grad;  // lazily allocated; empty means "not on the gradient path"
    std::function<void(Tape&)> back;
    Mat* sink = nullptr;
  };

  int push(Mat value, std::function<void(Tape&)> back = nullptr, Mat* sink = nullptr);
  Mat& grad_of(int idx);             // allocates zeros on first touch
  bool has_grad(int idx) const;
  const Node& node(int idx) const { return nodes_[idx]; }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace gencone::ag
