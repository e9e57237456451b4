#include "fbsde/tape.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace fbsde::ad {

namespace {

void require(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(what);
}

}  // namespace

Var Tape::push(Node&& n) {
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Mat value) {
  Node n;
  n.value = std::move(value);
  n.op = Op::kConst;
  return push(std::move(n));
}

Var Tape::scalar(double v) {
  Mat m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

Var Tape::param(const Mat& value, int key) {
  Node n;
  n.value = value;
  n.op = Op::kParam;
  n.i0 = key;
  Var var = push(std::move(n));
  params_.push_back({key, var});
  return var;
}

Var Tape::add(Var a, Var b) {
  require(v(a.id).rows() == v(b.id).rows() && v(a.id).cols() == v(b.id).cols(), "add: shape mismatch");
  Node n;
  n.value = v(a.id) + v(b.id);
  n.op = Op::kAdd;
  n.a = a.id;
  n.b = b.id;
  return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
  require(v(a.id).rows() == v(b.id).rows() && v(a.id).cols() == v(b.id).cols(), "sub: shape mismatch");
  Node n;
  n.value = v(a.id) - v(b.id);
  n.op = Op::kSub;
  n.a = a.id;
  n.b = b.id;
  return push(std::move(n));
}

Var Tape::neg(Var a) {
  Node n;
  n.value = -v(a.id);
  n.op = Op::kNeg;
  n.a = a.id;
  return push(std::move(n));
}

Var Tape::scale(Var a, double c) {
  Node n;
  n.value = c * v(a.id);
  n.op = Op::kScale;
  n.a = a.id;
  n.c = c;
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
  require(v(a.id).cols() == v(b.id).rows(), "matmul: inner dimension mismatch");
  Node n;
  n.value = v(a.id) * v(b.id);
  n.op = Op::kMatMul;
  n.a = a.id;
  n.b = b.id;
  return push(std::move(n));
}

Var Tape::cwise_mul(Var a, Var b) {
  require(v(a.id).rows() == v(b.id).rows() && v(a.id).cols() == v(b.id).cols(), "cwise_mul: shape mismatch");
  Node n;
  n.value = v(a.id).cwiseProduct(v(b.id));
  n.op = Op::kCwiseMul;
  n.a = a.id;
  n.b = b.id;
  return push(std::move(n));
}

Var Tape::transpose(Var a) {
  Node n;
  n.value = v(a.id).transpose();
  n.op = Op::kTranspose;
  n.a = a.id;
  return push(std::move(n));
}

Var Tape::tanh(Var a) {
  Node n;
  n.value = v(a.id).array().tanh();
  n.op = Op::kTanh;
  n.a = a.id;
  return push(std::move(n));
}

Var Tape::sigmoid(Var a) {
  Node n;
  n.value = (1.0 / (1.0 + (-v(a.id).array()).exp()));
  n.op = Op::kSigmoid;
  n.a = a.id;
  return push(std::move(n));
}

Var Tape::sin(Var a) {
  Node n;
  n.value = v(a.id).array().sin();
  n.op = Op::kSin;
  n.a = a.id;
  return push(std::move(n));
}

Var Tape::cos(Var a) {
  Node n;
  n.value = v(a.id).array().cos();
  n.op = Op::kCos;
  n.a = a.id;
  return push(std::move(n));
}

Var Tape::recip(Var a) {
  Node n;
  n.value = v(a.id).array().inverse();
  n.op = Op::kRecip;
  n.a = a.id;
  return push(std::move(n));
}

Var Tape::segment(Var a, int start, int len) {
  require(start >= 0 && len >= 1 && start + len <= v(a.id).rows(), "segment: rows out of range");
  Node n;
  n.value = v(a.id).middleRows(start, len);
  n.op = Op::kSegment;
  n.a = a.id;
  n.i0 = start;
  n.i1 = len;
  return push(std::move(n));
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: empty");
  Eigen::Index rows = 0;
  const Eigen::Index cols = v(parts[0].id).cols();
  for (Var p : parts) {
    require(v(p.id).cols() == cols, "concat_rows: column mismatch");
    rows += v(p.id).rows();
  }
  Node n;
  n.value.resize(rows, cols);
  Eigen::Index off = 0;
  n.multi.reserve(parts.size());
  for (Var p : parts) {
    n.value.middleRows(off, v(p.id).rows()) = v(p.id);
    off += v(p.id).rows();
    n.multi.push_back(p.id);
  }
  n.op = Op::kConcatRows;
  return push(std::move(n));
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: empty");
  Eigen::Index cols = 0;
  const Eigen::Index rows = v(parts[0].id).rows();
  for (Var p : parts) {
    require(v(p.id).rows() == rows, "concat_cols: row mismatch");
    cols += v(p.id).cols();
  }
  Node n;
  n.value.resize(rows, cols);
  Eigen::Index off = 0;
  n.multi.reserve(parts.size());
  for (Var p : parts) {
    n.value.middleCols(off, v(p.id).cols()) = v(p.id);
    off += v(p.id).cols();
    n.multi.push_back(p.id);
  }
  n.op = Op::kConcatCols;
  return push(std::move(n));
}

Var Tape::sym_from_packed(Var packed, int dim) {
  require(v(packed.id).cols() == 1 && v(packed.id).rows() == dim * (dim + 1) / 2,
          "sym_from_packed: packed length != n(n+1)/2");
  Node n;
  n.value.resize(dim, dim);
  const Mat& p = v(packed.id);
  int k = 0;
  for (int i = 0; i < dim; ++i) {
    for (int j = 0; j <= i; ++j, ++k) {
      n.value(i, j) = p(k, 0);
      n.value(j, i) = p(k, 0);
    }
  }
  n.op = Op::kSymFromPacked;
  n.a = packed.id;
  n.i0 = dim;
  return push(std::move(n));
}

Var Tape::solve_spd(Var a, Var b) {
  require(v(a.id).rows() == v(a.id).cols(), "solve_spd: matrix not square");
  require(v(a.id).cols() == v(b.id).rows(), "solve_spd: rhs rows mismatch");
  Node n;
  SpdFactor f = factor_spd_with_jitter(v(a.id));
  n.value = f.solve(v(b.id));
  n.op = Op::kSolveSpd;
  n.a = a.id;
  n.b = b.id;
  n.i0 = static_cast<int>(solves_.size());
  solves_.push_back(std::move(f));
  return push(std::move(n));
}

double Tape::jitter_of_last_solve() const {
  return solves_.empty() ? 0.0 : solves_.back().jitter;
}

Var Tape::squared_norm(Var a) {
  Node n;
  n.value.resize(1, 1);
  n.value(0, 0) = v(a.id).squaredNorm();
  n.op = Op::kSquaredNorm;
  n.a = a.id;
  return push(std::move(n));
}

void Tape::backward(Var root) {
  require(root.valid() && root.id < static_cast<int>(nodes_.size()), "backward: bad root");
  require(v(root.id).rows() == 1 && v(root.id).cols() == 1, "backward: root must be scalar");

  for (Node& n : nodes_) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  nodes_[root.id].grad(0, 0) = 1.0;

  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[id];
    const Mat& gr = n.grad;
    switch (n.op) {
      case Op::kConst:
      case Op::kParam:
        break;
      case Op::kAdd:
        g(n.a) += gr;
        g(n.b) += gr;
        break;
      case Op::kSub:
        g(n.a) += gr;
        g(n.b) -= gr;
        break;
      case Op::kNeg:
        g(n.a) -= gr;
        break;
      case Op::kScale:
        g(n.a) += n.c * gr;
        break;
      case Op::kMatMul:
        g(n.a) += gr * v(n.b).transpose();
        g(n.b) += v(n.a).transpose() * gr;
        break;
      case Op::kCwiseMul:
        g(n.a) += gr.cwiseProduct(v(n.b));
        g(n.b) += gr.cwiseProduct(v(n.a));
        break;
      case Op::kTranspose:
        g(n.a) += gr.transpose();
        break;
      case Op::kTanh:
        g(n.a).array() += gr.array() * (1.0 - n.value.array().square());
        break;
      case Op::kSigmoid:
        g(n.a).array() += gr.array() * n.value.array() * (1.0 - n.value.array());
        break;
      case Op::kSin:
        g(n.a).array() += gr.array() * v(n.a).array().cos();
        break;
      case Op::kCos:
        g(n.a).array() -= gr.array() * v(n.a).array().sin();
        break;
      case Op::kRecip:
        g(n.a).array() -= gr.array() * n.value.array().square();
        break;
      case Op::kSegment:
        g(n.a).middleRows(n.i0, n.i1) += gr;
        break;
      case Op::kConcatRows: {
        Eigen::Index off = 0;
        for (int pid : n.multi) {
          g(pid) += gr.middleRows(off, v(pid).rows());
          off += v(pid).rows();
        }
        break;
      }
      case Op::kConcatCols: {
        Eigen::Index off = 0;
        for (int pid : n.multi) {
          g(pid) += gr.middleCols(off, v(pid).cols());
          off += v(pid).cols();
        }
        break;
      }
      case Op::kSymFromPacked: {
        Mat& gp = g(n.a);
        int k = 0;
        for (int i = 0; i < n.i0; ++i) {
          for (int j = 0; j <= i; ++j, ++k) {
            gp(k, 0) += gr(i, j);
            if (i != j) gp(k, 0) += gr(j, i);
          }
        }
        break;
      }
      case Op::kSolveSpd: {
        // x = S^-1 b with S = sym(A): dL/db = S^-1 g, dL/dA = -sym((S^-1 g) x')
        const Mat s = solves_[n.i0].solve(gr);
        g(n.b) += s;
        const Mat m = s * n.value.transpose();
        g(n.a) -= 0.5 * (m + m.transpose());
        break;
      }
      case Op::kSquaredNorm:
        g(n.a) += 2.0 * gr(0, 0) * v(n.a);
        break;
    }
  }
}

void Tape::clear() {
  nodes_.clear();
  solves_.clear();
  params_.clear();
}

}  // namespace fbsde::ad
