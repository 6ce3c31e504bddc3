#pragma once

#include "moka/common.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

namespace moka {

// Handle to one node on a Tape.
struct Value {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode differentiation over a linear record of primitive ops.
// Nodes are appended in topological order during the forward pass and the
// backward pass walks them in exact reverse order. A tape is immutable once
// built; replaying the same ops on the same inputs at fixed precision
// reproduces bit-identical values.
//
// Each op also books its forward cost in flops (multiply-add counted as 2,
// softmax as 5 per entry, fused residual a + c*b as 1 per entry), which the
// efficiency harness compares against the analytic formulas.
template <typename Scalar>
class Tape {
 public:
  using Mat = MatX<Scalar>;

  enum class Op {
    Leaf,
    MatMul,       // c0 * (a . b)
    Add,          // a + b
    Axpy,         // a + c0 * b
    Scale,        // c0 * a
    Transpose,
    SoftmaxRows,
    ConcatRows,
    SliceRows,    // rows [i0, i0+i1)
    MeanRows,     // 1 x cols
    Sigmoid,
    Silu,
    AddRowVec,    // a + broadcast(b: 1 x cols)
    ScaleRows,    // a * broadcast(b: rows x 1)
    MaskRows,     // rows with keep[i]==0 zeroed
    CrossEntropy  // mean over rows of -log softmax(a)[label]
  };

  Value leaf(Mat v) {
    Node n;
    n.op = Op::Leaf;
    n.val = std::move(v);
    return push(std::move(n));
  }

  Value matmul(Value a, Value b, Scalar coeff = Scalar(1)) {
    const Mat& ma = val(a);
    const Mat& mb = val(b);
    if (ma.cols() != mb.rows())
      throw ShapeError("matmul: " + shape_str(ma.rows(), ma.cols()) + " vs " +
                       shape_str(mb.rows(), mb.cols()));
    Node n;
    n.op = Op::MatMul;
    n.a = a.id;
    n.b = b.id;
    n.c0 = coeff;
    if (coeff == Scalar(1))
      n.val = ma * mb;
    else
      n.val = coeff * (ma * mb).eval();
    flops_ += 2ull * ma.rows() * ma.cols() * mb.cols();
    return push(std::move(n));
  }

  Value add(Value a, Value b) {
    check_same_shape("add", val(a), val(b));
    Node n;
    n.op = Op::Add;
    n.a = a.id;
    n.b = b.id;
    n.val = val(a) + val(b);
    flops_ += entries(n.val);
    return push(std::move(n));
  }

  // a + coeff * b, booked as one fused op.
  Value axpy(Value a, Value b, Scalar coeff) {
    check_same_shape("axpy", val(a), val(b));
    Node n;
    n.op = Op::Axpy;
    n.a = a.id;
    n.b = b.id;
    n.c0 = coeff;
    n.val = val(a) + coeff * val(b);
    flops_ += entries(n.val);
    return push(std::move(n));
  }

  Value scale(Value a, Scalar c) {
    Node n;
    n.op = Op::Scale;
    n.a = a.id;
    n.c0 = c;
    n.val = c * val(a);
    flops_ += entries(n.val);
    return push(std::move(n));
  }

  Value transpose(Value a) {
    Node n;
    n.op = Op::Transpose;
    n.a = a.id;
    n.val = val(a).transpose();
    return push(std::move(n));
  }

  // Row-wise softmax with per-row max subtraction.
  Value softmax_rows(Value a) {
    const Mat& m = val(a);
    Node n;
    n.op = Op::SoftmaxRows;
    n.a = a.id;
    n.val.resize(m.rows(), m.cols());
    for (Index i = 0; i < m.rows(); ++i) {
      const Scalar mx = m.row(i).maxCoeff();
      auto e = (m.row(i).array() - mx).exp();
      n.val.row(i) = e / e.sum();
    }
    flops_ += 5ull * entries(m);
    return push(std::move(n));
  }

  Value concat_rows(const std::vector<Value>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: no inputs");
    Index rows = 0;
    const Index cols = val(parts[0]).cols();
    for (Value p : parts) {
      if (val(p).cols() != cols)
        throw ShapeError("concat_rows: column mismatch " +
                         shape_str(val(p).rows(), val(p).cols()));
      rows += val(p).rows();
    }
    Node n;
    n.op = Op::ConcatRows;
    n.val.resize(rows, cols);
    Index at = 0;
    for (Value p : parts) {
      n.inputs.push_back(p.id);
      n.val.middleRows(at, val(p).rows()) = val(p);
      at += val(p).rows();
    }
    return push(std::move(n));
  }

  Value slice_rows(Value a, Index start, Index len) {
    const Mat& m = val(a);
    if (start < 0 || len < 0 || start + len > m.rows())
      throw ShapeError("slice_rows: [" + std::to_string(start) + ", " +
                       std::to_string(start + len) + ") out of " +
                       std::to_string(m.rows()) + " rows");
    Node n;
    n.op = Op::SliceRows;
    n.a = a.id;
    n.i0 = start;
    n.i1 = len;
    n.val = m.middleRows(start, len);
    return push(std::move(n));
  }

  Value mean_rows(Value a) {
    const Mat& m = val(a);
    if (m.rows() == 0) throw ContractError("mean_rows: empty input");
    Node n;
    n.op = Op::MeanRows;
    n.a = a.id;
    n.val = m.colwise().mean();
    flops_ += entries(m);
    return push(std::move(n));
  }

  Value sigmoid(Value a) {
    Node n;
    n.op = Op::Sigmoid;
    n.a = a.id;
    n.val = val(a).unaryExpr([](Scalar x) { return sigmoid_scalar(x); });
    flops_ += 4ull * entries(n.val);
    return push(std::move(n));
  }

  // Smooth gated unit x * sigmoid(x); differentiable everywhere.
  Value silu(Value a) {
    Node n;
    n.op = Op::Silu;
    n.a = a.id;
    n.val = val(a).unaryExpr([](Scalar x) { return x * sigmoid_scalar(x); });
    flops_ += 5ull * entries(n.val);
    return push(std::move(n));
  }

  Value add_rowvec(Value a, Value v) {
    const Mat& ma = val(a);
    const Mat& mv = val(v);
    if (mv.rows() != 1 || mv.cols() != ma.cols())
      throw ShapeError("add_rowvec: " + shape_str(ma.rows(), ma.cols()) +
                       " vs " + shape_str(mv.rows(), mv.cols()));
    Node n;
    n.op = Op::AddRowVec;
    n.a = a.id;
    n.b = v.id;
    n.val = ma.rowwise() + mv.row(0);
    flops_ += entries(ma);
    return push(std::move(n));
  }

  Value scale_rows(Value a, Value s) {
    const Mat& ma = val(a);
    const Mat& ms = val(s);
    if (ms.cols() != 1 || ms.rows() != ma.rows())
      throw ShapeError("scale_rows: " + shape_str(ma.rows(), ma.cols()) +
                       " vs " + shape_str(ms.rows(), ms.cols()));
    Node n;
    n.op = Op::ScaleRows;
    n.a = a.id;
    n.b = s.id;
    n.val = ma.array().colwise() * ms.col(0).array();
    flops_ += entries(ma);
    return push(std::move(n));
  }

  // Zero-fill rows whose keep flag is false. Kept rows are copied bitwise.
  Value mask_rows(Value a, std::vector<char> keep) {
    const Mat& m = val(a);
    if (static_cast<Index>(keep.size()) != m.rows())
      throw ShapeError("mask_rows: " + std::to_string(keep.size()) +
                       " flags for " + std::to_string(m.rows()) + " rows");
    Node n;
    n.op = Op::MaskRows;
    n.a = a.id;
    n.keep = std::move(keep);
    n.val = m;
    for (Index i = 0; i < m.rows(); ++i)
      if (!n.keep[static_cast<std::size_t>(i)]) n.val.row(i).setZero();
    return push(std::move(n));
  }

  // Mean over rows of -log softmax(logits_row)[label], stabilized by row max.
  // Output is 1x1. The row softmax is cached for the backward pass.
  Value cross_entropy(Value logits, std::vector<int> labels) {
    const Mat& m = val(logits);
    if (static_cast<Index>(labels.size()) != m.rows())
      throw ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                       " labels for " + std::to_string(m.rows()) + " rows");
    Node n;
    n.op = Op::CrossEntropy;
    n.a = logits.id;
    n.aux.resize(m.rows(), m.cols());
    double total = 0.0;
    for (Index i = 0; i < m.rows(); ++i) {
      const int y = labels[static_cast<std::size_t>(i)];
      if (y < 0 || y >= m.cols())
        throw ContractError("cross_entropy: label " + std::to_string(y) +
                            " outside " + std::to_string(m.cols()) + " classes");
      const Scalar mx = m.row(i).maxCoeff();
      auto shifted = (m.row(i).array() - mx).eval();
      const Scalar lse = std::log(shifted.exp().sum());
      n.aux.row(i) = (shifted - lse).exp();
      total += static_cast<double>(lse - shifted(y));
    }
    n.labels = std::move(labels);
    n.val.resize(1, 1);
    n.val(0, 0) = static_cast<Scalar>(total / static_cast<double>(m.rows()));
    flops_ += 7ull * entries(m);
    return push(std::move(n));
  }

  const Mat& val(Value v) const { return nodes_[check_id(v)].val; }

  int size() const { return static_cast<int>(nodes_.size()); }

  // Forward cost booked so far.
  std::uint64_t flops() const { return flops_; }

  // Gradients of a scalar loss node with respect to every node on the tape.
  // Leaves the loss does not depend on get zero gradients.
  std::vector<Mat> backward(Value loss) const {
    const Mat& l = val(loss);
    if (l.rows() != 1 || l.cols() != 1)
      throw ContractError("backward: loss node is " +
                          shape_str(l.rows(), l.cols()) + ", expected 1x1");
    std::vector<Mat> g(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      g[i] = Mat::Zero(nodes_[i].val.rows(), nodes_[i].val.cols());
    g[static_cast<std::size_t>(loss.id)](0, 0) = Scalar(1);

    for (int id = loss.id; id >= 0; --id) {
      const Node& n = nodes_[static_cast<std::size_t>(id)];
      const Mat& gy = g[static_cast<std::size_t>(id)];
      switch (n.op) {
        case Op::Leaf:
          break;
        case Op::MatMul:
          g[n.a] += n.c0 * (gy * nodes_[n.b].val.transpose()).eval();
          g[n.b] += n.c0 * (nodes_[n.a].val.transpose() * gy).eval();
          break;
        case Op::Add:
          g[n.a] += gy;
          g[n.b] += gy;
          break;
        case Op::Axpy:
          g[n.a] += gy;
          g[n.b] += n.c0 * gy;
          break;
        case Op::Scale:
          g[n.a] += n.c0 * gy;
          break;
        case Op::Transpose:
          g[n.a] += gy.transpose();
          break;
        case Op::SoftmaxRows:
          for (Index i = 0; i < n.val.rows(); ++i) {
            const Scalar dot = gy.row(i).cwiseProduct(n.val.row(i)).sum();
            g[n.a].row(i) +=
                (n.val.row(i).array() * (gy.row(i).array() - dot)).matrix();
          }
          break;
        case Op::ConcatRows: {
          Index at = 0;
          for (int src : n.inputs) {
            const Index r = nodes_[src].val.rows();
            g[src] += gy.middleRows(at, r);
            at += r;
          }
          break;
        }
        case Op::SliceRows:
          g[n.a].middleRows(n.i0, n.i1) += gy;
          break;
        case Op::MeanRows: {
          const Scalar inv = Scalar(1) / static_cast<Scalar>(nodes_[n.a].val.rows());
          g[n.a].rowwise() += (inv * gy.row(0)).eval();
          break;
        }
        case Op::Sigmoid:
          g[n.a] += gy.cwiseProduct(
              n.val.cwiseProduct((Scalar(1) - n.val.array()).matrix()));
          break;
        case Op::Silu: {
          const Mat& x = nodes_[n.a].val;
          g[n.a] += gy.cwiseProduct(x.unaryExpr([](Scalar v) {
            const Scalar s = sigmoid_scalar(v);
            return s * (Scalar(1) + v * (Scalar(1) - s));
          }));
          break;
        }
        case Op::AddRowVec:
          g[n.a] += gy;
          g[n.b].row(0) += gy.colwise().sum();
          break;
        case Op::ScaleRows:
          g[n.a] += (gy.array().colwise() * nodes_[n.b].val.col(0).array()).matrix();
          g[n.b].col(0) += gy.cwiseProduct(nodes_[n.a].val).rowwise().sum();
          break;
        case Op::MaskRows:
          for (Index i = 0; i < n.val.rows(); ++i)
            if (n.keep[static_cast<std::size_t>(i)]) g[n.a].row(i) += gy.row(i);
          break;
        case Op::CrossEntropy: {
          const Scalar w = gy(0, 0) / static_cast<Scalar>(n.aux.rows());
          Mat d = n.aux;
          for (Index i = 0; i < d.rows(); ++i)
            d(i, n.labels[static_cast<std::size_t>(i)]) -= Scalar(1);
          g[n.a] += w * d;
          break;
        }
      }
    }
    return g;
  }

 private:
  struct Node {
    Op op = Op::Leaf;
    int a = -1;
    int b = -1;
    Scalar c0 = Scalar(0);
    Index i0 = 0;
    Index i1 = 0;
    std::vector<int> inputs;
    std::vector<int> labels;
    std::vector<char> keep;
    Mat val;
    Mat aux;
  };

  static Scalar sigmoid_scalar(Scalar x) {
    if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
    const Scalar e = std::exp(x);
    return e / (Scalar(1) + e);
  }

  static std::uint64_t entries(const Mat& m) {
    return static_cast<std::uint64_t>(m.rows()) * static_cast<std::uint64_t>(m.cols());
  }

  static void check_same_shape(const char* who, const Mat& a, const Mat& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
      throw ShapeError(std::string(who) + ": " + shape_str(a.rows(), a.cols()) +
                       " vs " + shape_str(b.rows(), b.cols()));
  }

  int check_id(Value v) const {
    if (v.id < 0 || v.id >= size())
      throw ContractError("invalid tape value id " + std::to_string(v.id));
    return v.id;
  }

  Value push(Node n) {
    nodes_.push_back(std::move(n));
    return Value{static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
  std::uint64_t flops_ = 0;
};

}  // namespace moka
