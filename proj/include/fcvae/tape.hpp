#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "fcvae/matrix.hpp"
#include "fcvae/nn.hpp"

namespace fcvae {

// Reverse-mode autodiff at matrix granularity. A Tape owns the graph for one
// objective evaluation: build forward, call backward() on a 1x1 root, read
// grads off the leaves, discard. Creation order is topological, so the
// backward sweep is a reverse scan, no DFS.
class Tape {
 public:
  struct Var {
    int id = -1;
  };

  Var constant(Matrix value) { return push(std::move(value), false, {}); }
  Var param(Matrix value) { return push(std::move(value), true, {}); }

  const Matrix& value(Var v) const { return nodes_[v.id].value; }

  // Zero matrix if the node was never touched by backward.
  const Matrix& grad(Var v) {
    Node& n = nodes_[v.id];
    if (!n.grad_live) {
      n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
      n.grad_live = true;
    }
    return n.grad;
  }

  Var add(Var a, Var b) {
    shape_match(a, b, "add");
    return push(value(a) + value(b), needs(a) || needs(b), [this, a, b](const Matrix& g) {
      accum(a, g);
      accum(b, g);
    });
  }

  Var sub(Var a, Var b) {
    shape_match(a, b, "sub");
    return push(value(a) - value(b), needs(a) || needs(b), [this, a, b](const Matrix& g) {
      accum(a, g);
      if (needs(b)) accum_expr(b, -g);
    });
  }

  Var mul(Var a, Var b) {  // elementwise
    shape_match(a, b, "mul");
    return push(value(a).cwiseProduct(value(b)), needs(a) || needs(b),
                [this, a, b](const Matrix& g) {
                  if (needs(a)) accum_expr(a, g.cwiseProduct(value(b)));
                  if (needs(b)) accum_expr(b, g.cwiseProduct(value(a)));
                });
  }

  Var matmul(Var a, Var b) {
    require(value(a).cols() == value(b).rows(), "matmul: inner dimensions disagree");
    return push(value(a) * value(b), needs(a) || needs(b), [this, a, b](const Matrix& g) {
      if (needs(a)) accum_expr(a, g * value(b).transpose());
      if (needs(b)) accum_expr(b, value(a).transpose() * g);
    });
  }

  // a: n x m, rv: 1 x m broadcast over rows.
  Var add_rowvec(Var a, Var rv) {
    require(value(rv).rows() == 1 && value(rv).cols() == value(a).cols(),
            "add_rowvec: need 1 x cols(a)");
    Matrix out = value(a);
    out.rowwise() += value(rv).row(0);
    return push(std::move(out), needs(a) || needs(rv), [this, a, rv](const Matrix& g) {
      accum(a, g);
      if (needs(rv)) accum_expr(rv, g.colwise().sum());
    });
  }

  Var scale(Var a, double c) {
    return push(value(a) * c, needs(a),
                [this, a, c](const Matrix& g) { accum_expr(a, g * c); });
  }

  Var add_scalar(Var a, double c) {
    return push((value(a).array() + c).matrix(), needs(a),
                [this, a](const Matrix& g) { accum(a, g); });
  }

  Var elu(Var a) {
    Matrix out = value(a).unaryExpr([](double v) { return fcvae::elu(v); });
    return push(std::move(out), needs(a), [this, a, out_id = next_id()](const Matrix& g) {
      const Matrix& y = nodes_[out_id].value;
      const Matrix& x = value(a);
      // d/dx elu = 1 for x >= 0, exp(x) = y + 1 otherwise
      Matrix d(x.rows(), x.cols());
      for (Index i = 0; i < x.size(); ++i)
        d.data()[i] = x.data()[i] >= 0.0 ? 1.0 : y.data()[i] + 1.0;
      accum_expr(a, g.cwiseProduct(d));
    });
  }

  Var sigmoid(Var a) {
    Matrix out = value(a).unaryExpr([](double v) { return fcvae::sigmoid(v); });
    return push(std::move(out), needs(a), [this, a, out_id = next_id()](const Matrix& g) {
      const Matrix& y = nodes_[out_id].value;
      accum_expr(a, g.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
    });
  }

  Var exp(Var a) {
    Matrix out = value(a).array().exp().matrix();
    return push(std::move(out), needs(a), [this, a, out_id = next_id()](const Matrix& g) {
      accum_expr(a, g.cwiseProduct(nodes_[out_id].value));
    });
  }

  Var log(Var a) {
    Matrix out = value(a).array().log().matrix();
    return push(std::move(out), needs(a), [this, a](const Matrix& g) {
      accum_expr(a, g.cwiseQuotient(value(a)));
    });
  }

  // Gradient passes through inside [lo, hi], zero outside.
  Var clamp(Var a, double lo, double hi) {
    Matrix out = value(a).array().max(lo).min(hi).matrix();
    return push(std::move(out), needs(a), [this, a, lo, hi](const Matrix& g) {
      const Matrix& x = value(a);
      Matrix d(x.rows(), x.cols());
      for (Index i = 0; i < x.size(); ++i) {
        double v = x.data()[i];
        d.data()[i] = (v >= lo && v <= hi) ? 1.0 : 0.0;
      }
      accum_expr(a, g.cwiseProduct(d));
    });
  }

  // Stack `times` copies of a vertically.
  Var tile_rows(Var a, int times) {
    const Matrix& x = value(a);
    Matrix out(x.rows() * times, x.cols());
    for (int s = 0; s < times; ++s) out.middleRows(s * x.rows(), x.rows()) = x;
    return push(std::move(out), needs(a), [this, a, times](const Matrix& g) {
      Index rows = value(a).rows();
      Matrix acc = g.middleRows(0, rows);
      for (int s = 1; s < times; ++s) acc += g.middleRows(s * rows, rows);
      accum(a, acc);
    });
  }

  Var select_rows(Var a, std::vector<int> idx) {
    const Matrix& x = value(a);
    Matrix out(static_cast<Index>(idx.size()), x.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Index>(i)) = x.row(idx[i]);
    return push(std::move(out), needs(a), [this, a, idx = std::move(idx)](const Matrix& g) {
      if (!needs(a)) return;
      Matrix acc = Matrix::Zero(value(a).rows(), value(a).cols());
      for (std::size_t i = 0; i < idx.size(); ++i)
        acc.row(idx[i]) += g.row(static_cast<Index>(i));
      accum(a, acc);
    });
  }

  // Inverse of select_rows: place row i of a at row idx[i] of a zero
  // (total_rows x cols) matrix.
  Var scatter_rows(Var a, std::vector<int> idx, int total_rows) {
    const Matrix& x = value(a);
    require(static_cast<Index>(idx.size()) == x.rows(), "scatter_rows: index count mismatch");
    Matrix out = Matrix::Zero(total_rows, x.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(idx[i]) = x.row(static_cast<Index>(i));
    return push(std::move(out), needs(a), [this, a, idx = std::move(idx)](const Matrix& g) {
      if (!needs(a)) return;
      Matrix acc(value(a).rows(), value(a).cols());
      for (std::size_t i = 0; i < idx.size(); ++i)
        acc.row(static_cast<Index>(i)) = g.row(idx[i]);
      accum(a, acc);
    });
  }

  Var cols(Var a, int start, int count) {
    const Matrix& x = value(a);
    require(start >= 0 && start + count <= x.cols(), "cols: slice out of range");
    return push(x.middleCols(start, count), needs(a),
                [this, a, start, count](const Matrix& g) {
                  if (!needs(a)) return;
                  Matrix acc = Matrix::Zero(value(a).rows(), value(a).cols());
                  acc.middleCols(start, count) = g;
                  accum(a, acc);
                });
  }

  Var concat_cols(Var a, Var b) {
    const Matrix& x = value(a);
    const Matrix& y = value(b);
    require(x.rows() == y.rows(), "concat_cols: row counts disagree");
    Matrix out(x.rows(), x.cols() + y.cols());
    out.leftCols(x.cols()) = x;
    out.rightCols(y.cols()) = y;
    return push(std::move(out), needs(a) || needs(b), [this, a, b](const Matrix& g) {
      Index ca = value(a).cols();
      if (needs(a)) accum_expr(a, g.leftCols(ca));
      if (needs(b)) accum_expr(b, g.rightCols(value(b).cols()));
    });
  }

  Var row_sum(Var a) {  // n x m -> n x 1
    return push(value(a).rowwise().sum(), needs(a), [this, a](const Matrix& g) {
      accum_expr(a, g * Matrix::Ones(1, value(a).cols()));
    });
  }

  Var sum(Var a) {  // -> 1 x 1
    Matrix out(1, 1);
    out(0, 0) = value(a).sum();
    return push(std::move(out), needs(a), [this, a](const Matrix& g) {
      accum_expr(a, Matrix::Constant(value(a).rows(), value(a).cols(), g(0, 0)));
    });
  }

  // (s*b) x m, stacked sample-major, -> b x m average over the s blocks.
  Var sample_average(Var a, int s) {
    const Matrix& x = value(a);
    require(x.rows() % s == 0, "sample_average: row count not divisible by sample count");
    Index b = x.rows() / s;
    Matrix out = Matrix::Zero(b, x.cols());
    for (int k = 0; k < s; ++k) out += x.middleRows(k * b, b);
    out /= static_cast<double>(s);
    return push(std::move(out), needs(a), [this, a, s](const Matrix& g) {
      Index b = value(a).rows() / s;
      Matrix acc(value(a).rows(), value(a).cols());
      for (int k = 0; k < s; ++k) acc.middleRows(k * b, b) = g / static_cast<double>(s);
      accum(a, acc);
    });
  }

  void backward(Var root) {
    Node& r = nodes_[root.id];
    require(r.value.rows() == 1 && r.value.cols() == 1, "backward: root must be 1x1");
    r.grad = Matrix::Constant(1, 1, 1.0);
    r.grad_live = true;
    for (int id = root.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.grad_live && n.pull) n.pull(n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    bool grad_live = false;
    std::function<void(const Matrix&)> pull;
  };

  int next_id() const { return static_cast<int>(nodes_.size()); }

  Var push(Matrix value, bool needs_grad, std::function<void(const Matrix&)> pull) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.pull = std::move(pull);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  bool needs(Var v) const { return nodes_[v.id].needs_grad; }

  void shape_match(Var a, Var b, const char* op) {
    require(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(),
            std::string(op) + ": shape mismatch");
  }

  void accum(Var v, const Matrix& g) {
    if (!needs(v)) return;
    Node& n = nodes_[v.id];
    if (!n.grad_live) {
      n.grad = g;
      n.grad_live = true;
    } else {
      n.grad += g;
    }
  }

  template <typename Expr>
  void accum_expr(Var v, const Expr& g) {
    if (!needs(v)) return;
    Node& n = nodes_[v.id];
    if (!n.grad_live) {
      n.grad = g;
      n.grad_live = true;
    } else {
      n.grad += g;
    }
  }

  std::vector<Node> nodes_;
};

using Var = Tape::Var;

// Tape-side mirror of MlpParams: parameters registered as leaves so grads can
// be read back in pack order.
struct MlpVars {
  std::vector<Var> weights;
  std::vector<Var> biases;
};

inline MlpVars register_mlp(Tape& t, const MlpParams& p) {
  MlpVars v;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    v.weights.push_back(t.param(p.weights[l]));
    v.biases.push_back(t.param(p.biases[l]));
  }
  return v;
}

inline Var mlp_forward(Tape& t, const MlpVars& v, Var input) {
  Var h = input;
  for (std::size_t l = 0; l < v.weights.size(); ++l) {
    h = t.add_rowvec(t.matmul(h, v.weights[l]), v.biases[l]);
    if (l + 1 < v.weights.size()) h = t.elu(h);
  }
  return h;
}

// Grad of every registered parameter, flattened in pack order.
inline void read_grads(Tape& t, const MlpVars& v, double* dst) {
  for (std::size_t l = 0; l < v.weights.size(); ++l) {
    const Matrix& gw = t.grad(v.weights[l]);
    dst = std::copy(gw.data(), gw.data() + gw.size(), dst);
    const Matrix& gb = t.grad(v.biases[l]);
    dst = std::copy(gb.data(), gb.data() + gb.size(), dst);
  }
}

}  // namespace fcvae
