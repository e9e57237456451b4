#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <vector>

#include "fbsde/linalg.hpp"

// Eager reverse-mode tape over Eigen matrices. Forward values are computed
// at node creation; backward() runs the adjoint sweep in reverse creation
// order. Scalars are 1x1 matrices, column vectors are nx1.

namespace fbsde::ad {

using Mat = Eigen::MatrixXd;

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape {
 public:
  Var constant(Mat value);
  Var scalar(double v);
  Var param(const Mat& value, int key);  // differentiable leaf tagged by key

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var neg(Var a);
  Var scale(Var a, double c);
  Var matmul(Var a, Var b);
  Var cwise_mul(Var a, Var b);
  Var transpose(Var a);

  Var tanh(Var a);
  Var sigmoid(Var a);
  Var sin(Var a);
  Var cos(Var a);
  Var recip(Var a);

  Var segment(Var a, int start, int len);  // rows [start, start+len)
  Var concat_rows(const std::vector<Var>& parts);
  Var concat_cols(const std::vector<Var>& parts);
  // Expand a packed lower triangle (row-wise, length n(n+1)/2) to the full
  // symmetric n x n matrix.
  Var sym_from_packed(Var packed, int n);
  // x = a^-1 b for symmetric a, with the shared jitter policy applied before
  // factorization. Throws SingularControlError like the plain-path solver.
  Var solve_spd(Var a, Var b);
  Var squared_norm(Var a);  // Frobenius, returns 1x1

  const Mat& val(Var v) const { return nodes_[v.id].value; }
  const Mat& grad(Var v) const { return nodes_[v.id].grad; }
  double jitter_of_last_solve() const;

  void backward(Var root);  // root must be 1x1
  void clear();
  std::size_t size() const { return nodes_.size(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }

  struct ParamLeaf {
    int key;
    Var var;
  };
  const std::vector<ParamLeaf>& params() const { return params_; }

 private:
  enum class Op : unsigned char {
    kConst,
    kParam,
    kAdd,
    kSub,
    kNeg,
    kScale,
    kMatMul,
    kCwiseMul,
    kTranspose,
    kTanh,
    kSigmoid,
    kSin,
    kCos,
    kRecip,
    kSegment,
    kConcatRows,
    kConcatCols,
    kSymFromPacked,
    kSolveSpd,
    kSquaredNorm,
  };

  struct Node {
    Mat value;
    Mat grad;
    Op op;
    int a = -1;
    int b = -1;
    double c = 0.0;          // scale factor
    int i0 = 0;              // segment start / packed n / solve-cache slot
    int i1 = 0;              // segment length
    std::vector<int> multi;  // concat inputs
  };

  Var push(Node&& n);
  const Mat& v(int id) const { return nodes_[id].value; }
  Mat& g(int id) { return nodes_[id].grad; }

  std::vector<Node> nodes_;
  std::vector<SpdFactor> solves_;
  std::vector<ParamLeaf> params_;
};

}  // namespace fbsde::ad
