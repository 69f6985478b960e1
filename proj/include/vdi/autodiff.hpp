#pragma once

// Minimal tape-free reverse-mode automatic differentiation over dense
// double-precision matrices. Every value is a 2D Eigen matrix; row vectors
// (1 x C) stand in for vectors. Graph nodes own shared pointers to their
// parents, so a graph lives exactly as long as its root Var.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vdi/error.hpp"

namespace vdi::ad {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

namespace detail {

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Matrix& g) {
    if (!requires_grad) return;
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }

  Node& parent(std::size_t i) { return *parents[i]; }
};

inline bool& grad_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph construction for its lifetime (inference paths).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled()) { detail::grad_enabled() = false; }
  ~NoGradGuard() { detail::grad_enabled() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Var {
 public:
  Var() = default;

  explicit Var(Matrix value, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Var scalar(double v) { return Var(Matrix::Constant(1, 1, v)); }

  static Var from_node(std::shared_ptr<detail::Node> node) {
    Var v;
    v.node_ = std::move(node);
    return v;
  }

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  /// Direct access for optimizers and checkpoint loading.
  Matrix& mutable_value() { return node_->value; }

  Matrix grad() const {
    if (node_->grad.size() == 0) return Matrix::Zero(rows(), cols());
    return node_->grad;
  }
  bool has_grad() const { return node_->grad.size() != 0; }
  void zero_grad() { node_->grad.resize(0, 0); }

  bool requires_grad() const { return node_->requires_grad; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  double item() const { return node_->value(0, 0); }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

  /// Back-propagates from this node. Non-scalar roots are seeded with ones.
  void backward() const {
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        detail::Node* p = n->parents[next++].get();
        if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->accumulate(Matrix::Ones(rows(), cols()));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::Node* n = *it;
      if (n->backward && n->grad.size() != 0) n->backward(*n);
    }
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline Var make(Matrix value, std::initializer_list<Var> parents,
                std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
  }
  return Var::from_node(std::move(node));
}

inline Var make(Matrix value, const std::vector<Var>& parents,
                std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
  }
  return Var::from_node(std::move(node));
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionMismatch(std::string(op) + ": shapes " + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + " and " + std::to_string(b.rows()) +
                            "x" + std::to_string(b.cols()));
  }
}

}  // namespace detail

inline Var constant(Matrix value) { return Var(std::move(value), false); }

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "add");
  return detail::make(a.value() + b.value(), {a, b}, [](detail::Node& n) {
    n.parent(0).accumulate(n.grad);
    n.parent(1).accumulate(n.grad);
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "sub");
  return detail::make(a.value() - b.value(), {a, b}, [](detail::Node& n) {
    n.parent(0).accumulate(n.grad);
    n.parent(1).accumulate(-n.grad);
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "mul");
  return detail::make(a.value().cwiseProduct(b.value()), {a, b}, [](detail::Node& n) {
    n.parent(0).accumulate(n.grad.cwiseProduct(n.parent(1).value));
    n.parent(1).accumulate(n.grad.cwiseProduct(n.parent(0).value));
  });
}

inline Var scale(const Var& a, double s) {
  return detail::make(a.value() * s, {a},
                      [s](detail::Node& n) { n.parent(0).accumulate(n.grad * s); });
}

inline Var add_scalar(const Var& a, double s) {
  return detail::make(a.value().array() + s, {a},
                      [](detail::Node& n) { n.parent(0).accumulate(n.grad); });
}

/// Elementwise product with a constant matrix of the same shape.
inline Var mul_const(const Var& a, const Matrix& c) {
  if (a.rows() != c.rows() || a.cols() != c.cols()) throw DimensionMismatch("mul_const");
  return detail::make(a.value().cwiseProduct(c), {a}, [c](detail::Node& n) {
    n.parent(0).accumulate(n.grad.cwiseProduct(c));
  });
}

/// Adds a 1 x C row to every row of an N x C matrix.
inline Var add_bias(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw DimensionMismatch("add_bias");
  Matrix out = a.value().rowwise() + row.value().row(0);
  return detail::make(std::move(out), {a, row}, [](detail::Node& n) {
    n.parent(0).accumulate(n.grad);
    n.parent(1).accumulate(n.grad.colwise().sum());
  });
}

inline Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw DimensionMismatch("matmul: " + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + " * " + std::to_string(b.rows()) + "x" +
                            std::to_string(b.cols()));
  }
  Matrix out = a.value() * b.value();
  return detail::make(std::move(out), {a, b}, [](detail::Node& n) {
    if (n.parent(0).requires_grad) n.parent(0).accumulate(n.grad * n.parent(1).value.transpose());
    if (n.parent(1).requires_grad) n.parent(1).accumulate(n.parent(0).value.transpose() * n.grad);
  });
}

inline Var transpose(const Var& a) {
  return detail::make(a.value().transpose(), {a}, [](detail::Node& n) {
    n.parent(0).accumulate(n.grad.transpose());
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(const Var& a) {
  return detail::make(Matrix::Constant(1, 1, a.value().sum()), {a}, [](detail::Node& n) {
    const auto& p = n.parent(0).value;
    n.parent(0).accumulate(Matrix::Constant(p.rows(), p.cols(), n.grad(0, 0)));
  });
}

inline Var mean(const Var& a) {
  const double count = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / count);
}

/// Column-wise mean: N x C -> 1 x C.
inline Var mean_rows(const Var& a) {
  const double rows = static_cast<double>(a.rows());
  return detail::make(a.value().colwise().mean(), {a}, [rows](detail::Node& n) {
    const auto& p = n.parent(0).value;
    n.parent(0).accumulate(n.grad.replicate(p.rows(), 1) / rows);
  });
}

/// Row-wise sum: N x C -> N x 1.
inline Var row_sums(const Var& a) {
  return detail::make(a.value().rowwise().sum(), {a}, [](detail::Node& n) {
    const auto& p = n.parent(0).value;
    n.parent(0).accumulate(n.grad.replicate(1, p.cols()));
  });
}

inline Var squared_norm(const Var& a) {
  return detail::make(Matrix::Constant(1, 1, a.value().squaredNorm()), {a},
                      [](detail::Node& n) {
                        n.parent(0).accumulate(2.0 * n.grad(0, 0) * n.parent(0).value);
                      });
}

/// log(sum(exp(a))) over all entries, computed stably.
inline Var logsumexp(const Var& a) {
  const double m = a.value().maxCoeff();
  const double s = (a.value().array() - m).exp().sum();
  return detail::make(Matrix::Constant(1, 1, m + std::log(s)), {a}, [](detail::Node& n) {
    const auto& p = n.parent(0).value;
    const double out = n.value(0, 0);
    n.parent(0).accumulate(((p.array() - out).exp() * n.grad(0, 0)).matrix());
  });
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities

inline Var relu(const Var& a) {
  return detail::make(a.value().cwiseMax(0.0), {a}, [](detail::Node& n) {
    const auto& p = n.parent(0).value;
    n.parent(0).accumulate((n.grad.array() * (p.array() > 0.0).cast<double>()).matrix());
  });
}

inline Var sigmoid(const Var& a) {
  Matrix y = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return detail::make(std::move(y), {a}, [](detail::Node& n) {
    const auto& y = n.value;
    n.parent(0).accumulate((n.grad.array() * y.array() * (1.0 - y.array())).matrix());
  });
}

inline Var log(const Var& a) {
  return detail::make(a.value().array().log().matrix(), {a}, [](detail::Node& n) {
    n.parent(0).accumulate((n.grad.array() / n.parent(0).value.array()).matrix());
  });
}

inline Var exp(const Var& a) {
  return detail::make(a.value().array().exp().matrix(), {a}, [](detail::Node& n) {
    n.parent(0).accumulate(n.grad.cwiseProduct(n.value));
  });
}

inline Var square(const Var& a) {
  return detail::make(a.value().array().square().matrix(), {a}, [](detail::Node& n) {
    n.parent(0).accumulate(2.0 * n.grad.cwiseProduct(n.parent(0).value));
  });
}

/// Row-wise softmax.
inline Var softmax_rows(const Var& a) {
  Matrix y = a.value();
  for (Index r = 0; r < y.rows(); ++r) {
    const double m = y.row(r).maxCoeff();
    y.row(r) = (y.row(r).array() - m).exp();
    y.row(r) /= y.row(r).sum();
  }
  return detail::make(std::move(y), {a}, [](detail::Node& n) {
    const auto& y = n.value;
    Eigen::VectorXd dot = n.grad.cwiseProduct(y).rowwise().sum();
    Matrix g = y.cwiseProduct(n.grad - dot.replicate(1, y.cols()));
    n.parent(0).accumulate(g);
  });
}

/// Row-wise layer normalization with affine 1 x C gain and bias.
inline Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5) {
  const Index cols = x.cols();
  if (gain.cols() != cols || bias.cols() != cols) throw DimensionMismatch("layer_norm_rows");
  const Matrix& xv = x.value();
  Eigen::VectorXd mu = xv.rowwise().mean();
  Matrix centered = xv.colwise() - mu;
  Eigen::VectorXd inv_std =
      ((centered.array().square().rowwise().sum() / static_cast<double>(cols)) + eps)
          .rsqrt()
          .matrix();
  Matrix xhat = centered.array().colwise() * inv_std.array();
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  return detail::make(std::move(out), {x, gain, bias},
                      [xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& n) {
                        const Matrix& g = n.grad;
                        const auto& gain_row = n.parent(1).value.row(0);
                        const double c = static_cast<double>(g.cols());
                        if (n.parent(0).requires_grad) {
                          Matrix dxhat = (g.array().rowwise() * gain_row.array()).matrix();
                          Eigen::VectorXd s1 = dxhat.rowwise().sum();
                          Eigen::VectorXd s2 = dxhat.cwiseProduct(xhat).rowwise().sum();
                          Matrix dx = (c * dxhat.array() - s1.replicate(1, g.cols()).array() -
                                       xhat.array() * s2.replicate(1, g.cols()).array())
                                          .matrix();
                          dx = (dx.array().colwise() * (inv_std.array() / c)).matrix();
                          n.parent(0).accumulate(dx);
                        }
                        n.parent(1).accumulate(g.cwiseProduct(xhat).colwise().sum());
                        n.parent(2).accumulate(g.colwise().sum());
                      });
}

// ---------------------------------------------------------------------------
// Similarities and losses

/// Cosine similarity between each row of `a` (N x C) and the matching row of
/// `b`, where `b` is either N x C or a single 1 x C row broadcast to all rows.
/// Result is N x 1. Throws ZeroVector on any zero-norm row.
inline Var cosine_rows(const Var& a, const Var& b) {
  if (a.cols() != b.cols() || (b.rows() != 1 && b.rows() != a.rows())) {
    throw DimensionMismatch("cosine_rows");
  }
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const bool broadcast = b.rows() == 1 && a.rows() != 1;
  const Index n_rows = av.rows();
  Eigen::VectorXd na = av.rowwise().norm();
  Eigen::VectorXd nb = bv.rowwise().norm();
  if ((na.array() == 0.0).any() || (nb.array() == 0.0).any()) {
    throw ZeroVector("cosine similarity of a zero-norm vector");
  }
  Matrix out(n_rows, 1);
  for (Index r = 0; r < n_rows; ++r) {
    const Index rb = broadcast ? 0 : r;
    out(r, 0) = av.row(r).dot(bv.row(rb)) / (na(r) * nb(rb));
  }
  return detail::make(std::move(out), {a, b},
                      [na = std::move(na), nb = std::move(nb), broadcast](detail::Node& n) {
                        const Matrix& av = n.parent(0).value;
                        const Matrix& bv = n.parent(1).value;
                        Matrix ga = Matrix::Zero(av.rows(), av.cols());
                        Matrix gb = Matrix::Zero(bv.rows(), bv.cols());
                        for (Index r = 0; r < av.rows(); ++r) {
                          const Index rb = broadcast ? 0 : r;
                          const double c = n.value(r, 0);
                          const double g = n.grad(r, 0);
                          ga.row(r) = g * (bv.row(rb) / (na(r) * nb(rb)) -
                                           c * av.row(r) / (na(r) * na(r)));
                          gb.row(rb) += g * (av.row(r) / (na(r) * nb(rb)) -
                                             c * bv.row(rb) / (nb(rb) * nb(rb)));
                        }
                        n.parent(0).accumulate(ga);
                        n.parent(1).accumulate(gb);
                      });
}

/// Scales every row to unit L2 norm. Throws ZeroVector on a zero row.
inline Var normalize_rows(const Var& a) {
  Eigen::VectorXd norms = a.value().rowwise().norm();
  if ((norms.array() == 0.0).any()) throw ZeroVector("normalize_rows: zero-norm row");
  Matrix y = a.value().array().colwise() / norms.array();
  return detail::make(std::move(y), {a}, [norms = std::move(norms)](detail::Node& n) {
    const Matrix& y = n.value;
    Eigen::VectorXd dot = n.grad.cwiseProduct(y).rowwise().sum();
    Matrix g = (n.grad - y.cwiseProduct(dot.replicate(1, y.cols()))).array().colwise() /
               norms.array();
    n.parent(0).accumulate(g);
  });
}

/// Mean binary cross-entropy of sigmoid(logits) against soft targets in [0,1].
/// Evaluated in the log-sigmoid form, which equals BCE(sigmoid(z), y).
inline Var bce_with_logits_mean(const Var& logits, const Matrix& targets) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols()) {
    throw DimensionMismatch("bce_with_logits_mean");
  }
  const auto z = logits.value().array();
  // softplus(z) - y z, with softplus evaluated stably.
  const auto softplus = z.cwiseMax(0.0) + (-z.abs()).exp().log1p();
  const double count = static_cast<double>(targets.size());
  const double loss = (softplus - targets.array() * z).sum() / count;
  return detail::make(Matrix::Constant(1, 1, loss), {logits}, [targets, count](detail::Node& n) {
    const auto z = n.parent(0).value.array();
    Matrix g = ((1.0 / (1.0 + (-z).exp())) - targets.array()).matrix();
    n.parent(0).accumulate(g * (n.grad(0, 0) / count));
  });
}

// ---------------------------------------------------------------------------
// Structural ops

/// Gathers rows of `x` into a new matrix. `index` holds `blocks` source rows
/// per output row (row-major); output row k is the column-concatenation of
/// x.row(index[k*blocks + t]) for t in [0, blocks). A negative index yields a
/// zero block. With blocks > 1 this is an im2col for 2D convolution.
inline Var gather_rows(const Var& x, std::vector<Index> index, Index blocks = 1) {
  const Index c = x.cols();
  const Index out_rows = static_cast<Index>(index.size()) / blocks;
  if (out_rows * blocks != static_cast<Index>(index.size())) throw DimensionMismatch("gather_rows");
  Matrix out = Matrix::Zero(out_rows, blocks * c);
  const Matrix& xv = x.value();
  for (Index k = 0; k < out_rows; ++k) {
    for (Index t = 0; t < blocks; ++t) {
      const Index src = index[static_cast<std::size_t>(k * blocks + t)];
      if (src >= xv.rows()) throw DimensionMismatch("gather_rows: index out of range");
      if (src >= 0) out.block(k, t * c, 1, c) = xv.row(src);
    }
  }
  return detail::make(std::move(out), {x},
                      [index = std::move(index), blocks, c](detail::Node& n) {
                        const auto& p = n.parent(0).value;
                        Matrix g = Matrix::Zero(p.rows(), p.cols());
                        const Index out_rows = n.grad.rows();
                        for (Index k = 0; k < out_rows; ++k) {
                          for (Index t = 0; t < blocks; ++t) {
                            const Index src = index[static_cast<std::size_t>(k * blocks + t)];
                            if (src >= 0) g.row(src) += n.grad.block(k, t * c, 1, c);
                          }
                        }
                        n.parent(0).accumulate(g);
                      });
}

inline Var slice_rows(const Var& a, Index start, Index count) {
  if (start < 0 || start + count > a.rows()) throw DimensionMismatch("slice_rows");
  return detail::make(a.value().middleRows(start, count), {a}, [start, count](detail::Node& n) {
    const auto& p = n.parent(0).value;
    Matrix g = Matrix::Zero(p.rows(), p.cols());
    g.middleRows(start, count) = n.grad;
    n.parent(0).accumulate(g);
  });
}

inline Var slice_cols(const Var& a, Index start, Index count) {
  if (start < 0 || start + count > a.cols()) throw DimensionMismatch("slice_cols");
  return detail::make(a.value().middleCols(start, count), {a}, [start, count](detail::Node& n) {
    const auto& p = n.parent(0).value;
    Matrix g = Matrix::Zero(p.rows(), p.cols());
    g.middleCols(start, count) = n.grad;
    n.parent(0).accumulate(g);
  });
}

inline Var element(const Var& a, Index r, Index c) {
  return detail::make(Matrix::Constant(1, 1, a.value()(r, c)), {a}, [r, c](detail::Node& n) {
    const auto& p = n.parent(0).value;
    Matrix g = Matrix::Zero(p.rows(), p.cols());
    g(r, c) = n.grad(0, 0);
    n.parent(0).accumulate(g);
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionMismatch("concat_cols: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw DimensionMismatch("concat_cols");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return detail::make(std::move(out), parts, [](detail::Node& n) {
    Index at = 0;
    for (auto& p : n.parents) {
      const Index w = p->value.cols();
      p->accumulate(n.grad.middleCols(at, w));
      at += w;
    }
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionMismatch("concat_rows: no inputs");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw DimensionMismatch("concat_rows");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return detail::make(std::move(out), parts, [](detail::Node& n) {
    Index at = 0;
    for (auto& p : n.parents) {
      const Index h = p->value.rows();
      p->accumulate(n.grad.middleRows(at, h));
      at += h;
    }
  });
}

/// Reshape with row-major element order.
inline Var reshape(const Var& a, Index rows, Index cols) {
  if (rows * cols != a.value().size()) throw DimensionMismatch("reshape");
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const RowMajor src = a.value();
  Matrix out = Eigen::Map<const RowMajor>(src.data(), rows, cols);
  return detail::make(std::move(out), {a}, [](detail::Node& n) {
    const auto& p = n.parent(0).value;
    const RowMajor g = n.grad;
    n.parent(0).accumulate(Eigen::Map<const RowMajor>(g.data(), p.rows(), p.cols()));
  });
}

}  // namespace vdi::ad
