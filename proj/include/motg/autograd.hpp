#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "motg/aggregate.hpp"
#include "motg/error.hpp"
#include "motg/tensor.hpp"

namespace motg {

struct Var {
  std::size_t id = 0;
};

/// How one input row of an embedding sequence is produced from the table.
struct RowMixture {
  std::vector<TokenId> ids;
  std::vector<double> weights;
};
struct RowMax {
  std::vector<TokenId> ids;
};
struct RowConstant {
  RowVector value;
};
using RowSource = std::variant<RowMixture, RowMax, RowConstant>;

/// Reverse-mode tape over dense row-major matrices.
///
/// Nodes are appended in evaluation order, so reverse creation order is a valid
/// topological order for backpropagation. With `record == false` the graph only
/// evaluates values; no backward closures are kept.
class Graph {
 public:
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var input(Matrix value) { return push(std::move(value), "input", false); }
  Var parameter(const Matrix& value) { return push(value, "parameter", record_); }

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  const Matrix& grad(Var v) const { return nodes_[v.id].grad; }
  double scalar(Var v) const { return nodes_[v.id].value(0, 0); }
  std::size_t size() const { return nodes_.size(); }

  // Name and index of the first node holding a non-finite value, or empty.
  std::string first_nonfinite() const {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (!nodes_[i].value.allFinite()) return std::string(nodes_[i].op) + "#" + std::to_string(i);
    return {};
  }

  void backward(Var loss) {
    if (!record_) throw InvalidInput("backward on a non-recording graph");
    if (value(loss).size() != 1) throw InvalidInput("backward requires a scalar loss");
    for (auto& n : nodes_)
      if (n.needs_grad) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    if (!nodes_[loss.id].needs_grad) return;
    nodes_[loss.id].grad(0, 0) = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;)
      if (nodes_[i].needs_grad && nodes_[i].back) nodes_[i].back();
  }

  // ---- elementwise / shape ops ----

  Var add(Var a, Var b) {
    check_same(a, b, "add");
    Var out = push(value(a) + value(b), "add", any_grad({a, b}));
    on_back(out, [this, a, b, out] {
      accumulate(a, grad(out));
      accumulate(b, grad(out));
    });
    return out;
  }

  Var sub(Var a, Var b) {
    check_same(a, b, "sub");
    Var out = push(value(a) - value(b), "sub", any_grad({a, b}));
    on_back(out, [this, a, b, out] {
      accumulate(a, grad(out));
      if (needs(b)) nodes_[b.id].grad -= grad(out);
    });
    return out;
  }

  Var mul(Var a, Var b) {
    check_same(a, b, "mul");
    Var out = push(value(a).cwiseProduct(value(b)), "mul", any_grad({a, b}));
    on_back(out, [this, a, b, out] {
      if (needs(a)) nodes_[a.id].grad += grad(out).cwiseProduct(value(b));
      if (needs(b)) nodes_[b.id].grad += grad(out).cwiseProduct(value(a));
    });
    return out;
  }

  Var scale(Var a, double s) {
    Var out = push(value(a) * s, "scale", any_grad({a}));
    on_back(out, [this, a, s, out] {
      if (needs(a)) nodes_[a.id].grad += grad(out) * s;
    });
    return out;
  }

  // a (t x n) + bias (1 x n) broadcast over rows.
  Var add_row(Var a, Var bias) {
    if (value(bias).rows() != 1 || value(bias).cols() != value(a).cols())
      throw InvalidInput("add_row: bias shape mismatch");
    Matrix v = value(a);
    v.rowwise() += value(bias).row(0);
    Var out = push(std::move(v), "add_row", any_grad({a, bias}));
    on_back(out, [this, a, bias, out] {
      accumulate(a, grad(out));
      if (needs(bias)) nodes_[bias.id].grad += grad(out).colwise().sum();
    });
    return out;
  }

  Var exp(Var a) {
    Var out = push(value(a).array().exp().matrix(), "exp", any_grad({a}));
    on_back(out, [this, a, out] {
      if (needs(a)) nodes_[a.id].grad += grad(out).cwiseProduct(value(out));
    });
    return out;
  }

  Var log(Var a) {
    Var out = push(value(a).array().log().matrix(), "log", any_grad({a}));
    on_back(out, [this, a, out] {
      if (needs(a)) nodes_[a.id].grad += grad(out).cwiseQuotient(value(a));
    });
    return out;
  }

  Var sum(Var a) {
    Matrix v(1, 1);
    v(0, 0) = value(a).sum();
    Var out = push(std::move(v), "sum", any_grad({a}));
    on_back(out, [this, a, out] {
      if (needs(a)) nodes_[a.id].grad.array() += grad(out)(0, 0);
    });
    return out;
  }

  // Sum of 1x1 nodes.
  Var add_scalars(std::span<const Var> xs) {
    Matrix v = Matrix::Zero(1, 1);
    bool g = false;
    for (Var x : xs) {
      if (value(x).size() != 1) throw InvalidInput("add_scalars: operand is not a scalar");
      v(0, 0) += scalar(x);
      g = g || needs(x);
    }
    std::vector<Var> copy(xs.begin(), xs.end());
    Var out = push(std::move(v), "add_scalars", g);
    on_back(out, [this, copy, out] {
      for (Var x : copy)
        if (needs(x)) nodes_[x.id].grad(0, 0) += grad(out)(0, 0);
    });
    return out;
  }

  Var pick(Var a, Eigen::Index r, Eigen::Index c) {
    Matrix v(1, 1);
    v(0, 0) = value(a)(r, c);
    Var out = push(std::move(v), "pick", any_grad({a}));
    on_back(out, [this, a, r, c, out] {
      if (needs(a)) nodes_[a.id].grad(r, c) += grad(out)(0, 0);
    });
    return out;
  }

  Var slice_rows(Var a, Eigen::Index start, Eigen::Index n) {
    Var out = push(value(a).middleRows(start, n), "slice_rows", any_grad({a}));
    on_back(out, [this, a, start, n, out] {
      if (needs(a)) nodes_[a.id].grad.middleRows(start, n) += grad(out);
    });
    return out;
  }

  // Gathers the listed rows (may repeat) into a new matrix.
  Var select_rows(Var a, std::vector<Eigen::Index> rows) {
    Matrix v(static_cast<Eigen::Index>(rows.size()), value(a).cols());
    for (std::size_t i = 0; i < rows.size(); ++i) v.row(static_cast<Eigen::Index>(i)) = value(a).row(rows[i]);
    Var out = push(std::move(v), "select_rows", any_grad({a}));
    on_back(out, [this, a, rows = std::move(rows), out] {
      if (!needs(a)) return;
      for (std::size_t i = 0; i < rows.size(); ++i)
        nodes_[a.id].grad.row(rows[i]) += grad(out).row(static_cast<Eigen::Index>(i));
    });
    return out;
  }

  Var slice_cols(Var a, Eigen::Index start, Eigen::Index n) {
    Var out = push(value(a).middleCols(start, n), "slice_cols", any_grad({a}));
    on_back(out, [this, a, start, n, out] {
      if (needs(a)) nodes_[a.id].grad.middleCols(start, n) += grad(out);
    });
    return out;
  }

  Var concat_cols(std::span<const Var> parts) {
    Eigen::Index rows = value(parts[0]).rows(), cols = 0;
    bool g = false;
    for (Var p : parts) {
      if (value(p).rows() != rows) throw InvalidInput("concat_cols: row mismatch");
      cols += value(p).cols();
      g = g || needs(p);
    }
    Matrix v(rows, cols);
    Eigen::Index at = 0;
    for (Var p : parts) {
      v.middleCols(at, value(p).cols()) = value(p);
      at += value(p).cols();
    }
    std::vector<Var> copy(parts.begin(), parts.end());
    Var out = push(std::move(v), "concat_cols", g);
    on_back(out, [this, copy, out] {
      Eigen::Index at2 = 0;
      for (Var p : copy) {
        const auto w = value(p).cols();
        if (needs(p)) nodes_[p.id].grad += grad(out).middleCols(at2, w);
        at2 += w;
      }
    });
    return out;
  }

  // ---- linear algebra ----

  Var matmul(Var a, Var b) {
    if (value(a).cols() != value(b).rows()) throw InvalidInput("matmul: inner dimension mismatch");
    Matrix v = value(a) * value(b);
    Var out = push(std::move(v), "matmul", any_grad({a, b}));
    on_back(out, [this, a, b, out] {
      if (needs(a)) nodes_[a.id].grad.noalias() += grad(out) * value(b).transpose();
      if (needs(b)) nodes_[b.id].grad.noalias() += value(a).transpose() * grad(out);
    });
    return out;
  }

  // a * b^T
  Var matmul_nt(Var a, Var b) {
    if (value(a).cols() != value(b).cols()) throw InvalidInput("matmul_nt: inner dimension mismatch");
    Matrix v = value(a) * value(b).transpose();
    Var out = push(std::move(v), "matmul_nt", any_grad({a, b}));
    on_back(out, [this, a, b, out] {
      if (needs(a)) nodes_[a.id].grad.noalias() += grad(out) * value(b);
      if (needs(b)) nodes_[b.id].grad.noalias() += grad(out).transpose() * value(a);
    });
    return out;
  }

  // ---- neural network ops ----

  Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5) {
    const Matrix& xv = value(x);
    const Eigen::Index t = xv.rows(), n = xv.cols();
    Matrix xhat(t, n);
    std::vector<double> rstd(static_cast<std::size_t>(t));
    for (Eigen::Index i = 0; i < t; ++i) {
      const double mu = xv.row(i).mean();
      const double var = (xv.row(i).array() - mu).square().mean();
      rstd[static_cast<std::size_t>(i)] = 1.0 / std::sqrt(var + eps);
      xhat.row(i) = (xv.row(i).array() - mu) * rstd[static_cast<std::size_t>(i)];
    }
    Matrix y = xhat;
    y.array().rowwise() *= value(gain).row(0).array();
    y.rowwise() += value(bias).row(0);
    Var out = push(std::move(y), "layer_norm", any_grad({x, gain, bias}));
    on_back(out, [this, x, gain, bias, out, xhat = std::move(xhat), rstd = std::move(rstd)] {
      const Matrix& gy = grad(out);
      if (needs(gain)) nodes_[gain.id].grad += gy.cwiseProduct(xhat).colwise().sum();
      if (needs(bias)) nodes_[bias.id].grad += gy.colwise().sum();
      if (!needs(x)) return;
      Matrix dxhat = gy;
      dxhat.array().rowwise() *= value(gain).row(0).array();
      for (Eigen::Index i = 0; i < dxhat.rows(); ++i) {
        const double m1 = dxhat.row(i).mean();
        const double m2 = dxhat.row(i).cwiseProduct(xhat.row(i)).mean();
        nodes_[x.id].grad.row(i).array() +=
            rstd[static_cast<std::size_t>(i)] * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
      }
    });
    return out;
  }

  // tanh approximation of GELU
  Var gelu(Var x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double a = 0.044715;
    const Matrix& xv = value(x);
    Matrix y(xv.rows(), xv.cols());
    for (Eigen::Index i = 0; i < xv.size(); ++i) {
      const double v = xv.data()[i];
      y.data()[i] = 0.5 * v * (1.0 + std::tanh(c * (v + a * v * v * v)));
    }
    Var out = push(std::move(y), "gelu", any_grad({x}));
    on_back(out, [this, x, out] {
      if (!needs(x)) return;
      const Matrix& xv2 = value(x);
      const Matrix& gy = grad(out);
      Matrix& gx = nodes_[x.id].grad;
      for (Eigen::Index i = 0; i < xv2.size(); ++i) {
        const double v = xv2.data()[i];
        const double th = std::tanh(c * (v + a * v * v * v));
        const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * c * (1.0 + 3.0 * a * v * v);
        gx.data()[i] += gy.data()[i] * d;
      }
    });
    return out;
  }

  // Row-wise softmax where row i only sees columns j <= i; masked entries are 0.
  Var causal_softmax(Var s) {
    const Matrix& sv = value(s);
    Matrix y = Matrix::Zero(sv.rows(), sv.cols());
    for (Eigen::Index i = 0; i < sv.rows(); ++i) {
      const Eigen::Index n = std::min<Eigen::Index>(i + 1, sv.cols());
      const double mx = sv.row(i).head(n).maxCoeff();
      double total = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        y(i, j) = std::exp(sv(i, j) - mx);
        total += y(i, j);
      }
      y.row(i).head(n) /= total;
    }
    Var out = push(std::move(y), "causal_softmax", any_grad({s}));
    on_back(out, [this, s, out] {
      if (!needs(s)) return;
      const Matrix& yv = value(out);
      const Matrix& gy = grad(out);
      for (Eigen::Index i = 0; i < yv.rows(); ++i) {
        const double dot = gy.row(i).dot(yv.row(i));
        nodes_[s.id].grad.row(i).array() += yv.row(i).array() * (gy.row(i).array() - dot);
      }
    });
    return out;
  }

  Var log_softmax(Var x) {
    const Matrix& xv = value(x);
    Matrix y(xv.rows(), xv.cols());
    for (Eigen::Index i = 0; i < xv.rows(); ++i) {
      const double mx = xv.row(i).maxCoeff();
      const double lse = mx + std::log((xv.row(i).array() - mx).exp().sum());
      y.row(i) = xv.row(i).array() - lse;
    }
    Var out = push(std::move(y), "log_softmax", any_grad({x}));
    on_back(out, [this, x, out] {
      if (!needs(x)) return;
      const Matrix& yv = value(out);
      const Matrix& gy = grad(out);
      for (Eigen::Index i = 0; i < yv.rows(); ++i) {
        const double total = gy.row(i).sum();
        nodes_[x.id].grad.row(i).array() += gy.row(i).array() - yv.row(i).array().exp() * total;
      }
    });
    return out;
  }

  // Builds a t x d sequence from an embedding table; each row is a weighted
  // mixture of table rows, an element-wise max over table rows, or a constant.
  Var embed_rows(Var table, std::vector<RowSource> sources) {
    const Matrix& tv = value(table);
    const auto d = static_cast<std::size_t>(tv.cols());
    Matrix v(static_cast<Eigen::Index>(sources.size()), tv.cols());
    std::vector<std::vector<std::size_t>> argmax(sources.size());
    for (std::size_t r = 0; r < sources.size(); ++r) {
      std::span<double> row(v.data() + r * d, d);
      if (auto* m = std::get_if<RowMixture>(&sources[r])) {
        for (TokenId id : m->ids)
          if (id >= static_cast<std::size_t>(tv.rows())) throw InvalidInput("embed_rows: token id out of range");
        accumulate_mixture(row, tv, m->ids, m->weights);
      } else if (auto* mx = std::get_if<RowMax>(&sources[r])) {
        for (TokenId id : mx->ids)
          if (id >= static_cast<std::size_t>(tv.rows())) throw InvalidInput("embed_rows: token id out of range");
        accumulate_max(row, tv, mx->ids, &argmax[r]);
      } else {
        const auto& c = std::get<RowConstant>(sources[r]).value;
        if (static_cast<std::size_t>(c.size()) != d) throw InvalidInput("embed_rows: constant row has wrong width");
        for (std::size_t j = 0; j < d; ++j) row[j] = c[static_cast<Eigen::Index>(j)];
      }
    }
    Var out = push(std::move(v), "embed_rows", any_grad({table}));
    on_back(out, [this, table, out, sources = std::move(sources), argmax = std::move(argmax)] {
      if (!needs(table)) return;
      Matrix& gt = nodes_[table.id].grad;
      const Matrix& gy = grad(out);
      for (std::size_t r = 0; r < sources.size(); ++r) {
        const auto ri = static_cast<Eigen::Index>(r);
        if (auto* m = std::get_if<RowMixture>(&sources[r])) {
          for (std::size_t i = 0; i < m->ids.size(); ++i)
            gt.row(static_cast<Eigen::Index>(m->ids[i])) += m->weights[i] * gy.row(ri);
        } else if (auto* mx = std::get_if<RowMax>(&sources[r])) {
          for (Eigen::Index j = 0; j < gy.cols(); ++j)
            gt(static_cast<Eigen::Index>(mx->ids[argmax[r][static_cast<std::size_t>(j)]]), j) += gy(ri, j);
        }
      }
    });
    return out;
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void()> back;
    const char* op = "";
    bool needs_grad = false;
  };

  Var push(Matrix value, const char* op, bool needs_grad) {
    nodes_.push_back(Node{std::move(value), Matrix(), {}, op, record_ && needs_grad});
    return Var{nodes_.size() - 1};
  }

  void on_back(Var out, std::function<void()> fn) {
    if (nodes_[out.id].needs_grad) nodes_[out.id].back = std::move(fn);
  }

  bool needs(Var v) const { return nodes_[v.id].needs_grad; }

  bool any_grad(std::initializer_list<Var> vs) const {
    if (!record_) return false;
    for (Var v : vs)
      if (needs(v)) return true;
    return false;
  }

  void accumulate(Var v, const Matrix& g) {
    if (needs(v)) nodes_[v.id].grad += g;
  }

  void check_same(Var a, Var b, const char* op) const {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
      throw InvalidInput(std::string(op) + ": shape mismatch");
  }

  bool record_;
  std::vector<Node> nodes_;
};

}  // namespace motg
