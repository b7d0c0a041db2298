#pragma once

// Tape-based reverse-mode differentiation over dense Eigen matrices.
//
// Every value is a 2-D matrix; scalars are 1x1 and row vectors carry biases.
// Nodes are appended in evaluation order, so a node's inputs always precede
// it and a single reverse sweep over the tape is a valid topological order.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace oodlab {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Op {
  leaf,
  matmul,
  add_bias,
  add,
  sub,
  hadamard,
  scale,
  shift,
  relu,
  sigmoid,
  softplus,
  log,
  exp,
  square,
  logsumexp_rows,
  log_softmax_rows,
  sum,
  mean,
};

constexpr std::string_view op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::matmul: return "matmul";
    case Op::add_bias: return "add_bias";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::hadamard: return "hadamard";
    case Op::scale: return "scale";
    case Op::shift: return "shift";
    case Op::relu: return "relu";
    case Op::sigmoid: return "sigmoid";
    case Op::softplus: return "softplus";
    case Op::log: return "log";
    case Op::exp: return "exp";
    case Op::square: return "square";
    case Op::logsumexp_rows: return "logsumexp_rows";
    case Op::log_softmax_rows: return "log_softmax_rows";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
  }
  return "?";
}

template <typename Scalar>
class BasicGraph;

/// Handle to a node on a graph. Cheap to copy; valid while the graph lives.
template <typename Scalar>
struct BasicVar {
  BasicGraph<Scalar>* graph = nullptr;
  std::size_t id = 0;

  const auto& value() const { return graph->value(*this); }
  const auto& grad() const { return graph->grad(*this); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Scalar scalar() const { return value()(0, 0); }
};

namespace detail {

template <typename Derived>
std::string shape_str(const Eigen::DenseBase<Derived>& m) {
  std::ostringstream os;
  os << '(' << m.rows() << 'x' << m.cols() << ')';
  return os.str();
}

// Row-wise log-sum-exp with max subtraction; finite for |x| well beyond 1e4.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> logsumexp_rows(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& x) {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar m = x.row(i).maxCoeff();
    out(i) = m + std::log((x.row(i).array() - m).exp().sum());
  }
  return out;
}

template <typename Scalar>
Scalar softplus(Scalar x) {
  // log(1 + e^x) without overflow for large |x|.
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  if (x >= 0) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

}  // namespace detail

template <typename Scalar>
class BasicGraph {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Var = BasicVar<Scalar>;

  static constexpr std::size_t kNoInput = std::numeric_limits<std::size_t>::max();

  struct Node {
    Op op = Op::leaf;
    std::array<std::size_t, 2> inputs{kNoInput, kNoInput};
    Scalar attr = 0;
    bool needs_grad = false;
    Matrix value;
    Matrix grad;
  };

  BasicGraph() = default;
  BasicGraph(const BasicGraph&) = delete;
  BasicGraph& operator=(const BasicGraph&) = delete;

  Var constant(Matrix value) { return push_leaf(std::move(value), false); }
  Var parameter(Matrix value) { return push_leaf(std::move(value), true); }
  Var scalar(Scalar v) { return constant(Matrix::Constant(1, 1, v)); }

  /// Appends `op` applied to `inputs`. `attr` carries the scalar operand of
  /// scale/shift. Shape violations throw ShapeError naming both shapes.
  Var apply(Op op, std::initializer_list<Var> inputs, Scalar attr = 0);

  /// Reverse sweep from a 1x1 loss. Gradients of all nodes are reset first,
  /// so calling backward twice on the same loss gives the same result.
  void backward(Var loss);

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  const Matrix& grad(Var v) const { return nodes_.at(v.id).grad; }
  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }

  /// Smallest |pre-activation| seen by any relu on the tape. Finite
  /// difference checks use this to reject points that sit on a hinge kink.
  Scalar min_kink_distance() const {
    Scalar best = std::numeric_limits<Scalar>::infinity();
    for (const auto& n : nodes_) {
      if (n.op != Op::relu) continue;
      const auto& x = nodes_[n.inputs[0]].value;
      if (x.size() > 0) best = std::min(best, x.cwiseAbs().minCoeff());
    }
    return best;
  }

 private:
  Var push_leaf(Matrix value, bool needs_grad) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  void check_owner(Var v) const {
    if (v.graph != this || v.id >= nodes_.size())
      throw std::invalid_argument("diffcore: variable does not belong to this graph");
  }

  static void require_same(Op op, const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
      throw ShapeError(std::string(op_name(op)) + ": shape mismatch " +
                       detail::shape_str(a) + " vs " + detail::shape_str(b));
  }

  Matrix forward(Op op, const Matrix* a, const Matrix* b, Scalar attr) const;
  void accumulate(const Node& n);

  std::vector<Node> nodes_;
};

template <typename Scalar>
typename BasicGraph<Scalar>::Var BasicGraph<Scalar>::apply(
    Op op, std::initializer_list<Var> inputs, Scalar attr) {
  const bool binary = op == Op::matmul || op == Op::add_bias || op == Op::add ||
                      op == Op::sub || op == Op::hadamard;
  const std::size_t arity = binary ? 2 : 1;
  if (op == Op::leaf) throw std::invalid_argument("diffcore: use constant()/parameter() for leaves");
  if (inputs.size() != arity)
    throw std::invalid_argument(std::string(op_name(op)) + ": expected " +
                                std::to_string(arity) + " input(s)");

  Node n;
  n.op = op;
  n.attr = attr;
  std::size_t k = 0;
  for (const Var& v : inputs) {
    check_owner(v);
    n.inputs[k++] = v.id;
    n.needs_grad = n.needs_grad || nodes_[v.id].needs_grad;
  }
  const Matrix* a = &nodes_[n.inputs[0]].value;
  const Matrix* b = arity == 2 ? &nodes_[n.inputs[1]].value : nullptr;
  n.value = forward(op, a, b, attr);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

template <typename Scalar>
typename BasicGraph<Scalar>::Matrix BasicGraph<Scalar>::forward(
    Op op, const Matrix* a, const Matrix* b, Scalar attr) const {
  switch (op) {
    case Op::matmul:
      if (a->cols() != b->rows())
        throw ShapeError("matmul: shape mismatch " + detail::shape_str(*a) + " vs " +
                         detail::shape_str(*b));
      return (*a) * (*b);
    case Op::add_bias:
      if (b->rows() != 1 || b->cols() != a->cols())
        throw ShapeError("add_bias: shape mismatch " + detail::shape_str(*a) + " vs " +
                         detail::shape_str(*b));
      return a->rowwise() + b->row(0);
    case Op::add:
      require_same(op, *a, *b);
      return *a + *b;
    case Op::sub:
      require_same(op, *a, *b);
      return *a - *b;
    case Op::hadamard:
      require_same(op, *a, *b);
      return a->cwiseProduct(*b);
    case Op::scale:
      return attr * (*a);
    case Op::shift:
      return (a->array() + attr).matrix();
    case Op::relu:
      return a->cwiseMax(Scalar(0));
    case Op::sigmoid:
      return a->unaryExpr([](Scalar x) { return detail::sigmoid(x); });
    case Op::softplus:
      return a->unaryExpr([](Scalar x) { return detail::softplus(x); });
    case Op::log:
      return a->array().log().matrix();
    case Op::exp:
      return a->array().exp().matrix();
    case Op::square:
      return a->array().square().matrix();
    case Op::logsumexp_rows:
      if (a->cols() == 0) throw ShapeError("logsumexp_rows: empty row " + detail::shape_str(*a));
      return detail::logsumexp_rows<Scalar>(*a);
    case Op::log_softmax_rows: {
      if (a->cols() == 0) throw ShapeError("log_softmax_rows: empty row " + detail::shape_str(*a));
      const auto lse = detail::logsumexp_rows<Scalar>(*a);
      return a->colwise() - lse;
    }
    case Op::sum:
      return Matrix::Constant(1, 1, a->sum());
    case Op::mean:
      if (a->size() == 0) throw ShapeError("mean: empty input " + detail::shape_str(*a));
      return Matrix::Constant(1, 1, a->mean());
    case Op::leaf:
      break;
  }
  throw std::logic_error("diffcore: unhandled op");
}

template <typename Scalar>
void BasicGraph<Scalar>::backward(Var loss) {
  check_owner(loss);
  const Node& root = nodes_[loss.id];
  if (root.value.rows() != 1 || root.value.cols() != 1)
    throw ShapeError("backward: loss must be scalar, got " + detail::shape_str(root.value));

  for (auto& n : nodes_) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  nodes_[loss.id].grad(0, 0) = Scalar(1);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    if (nodes_[i].needs_grad && nodes_[i].op != Op::leaf) accumulate(nodes_[i]);
  }
}

template <typename Scalar>
void BasicGraph<Scalar>::accumulate(const Node& n) {
  const Matrix& g = n.grad;
  Node& na = nodes_[n.inputs[0]];
  Node* nb = n.inputs[1] == kNoInput ? nullptr : &nodes_[n.inputs[1]];
  const Matrix& x = na.value;

  switch (n.op) {
    case Op::matmul:
      if (na.needs_grad) na.grad.noalias() += g * nb->value.transpose();
      if (nb->needs_grad) nb->grad.noalias() += x.transpose() * g;
      break;
    case Op::add_bias:
      if (na.needs_grad) na.grad += g;
      if (nb->needs_grad) nb->grad += g.colwise().sum();
      break;
    case Op::add:
      if (na.needs_grad) na.grad += g;
      if (nb->needs_grad) nb->grad += g;
      break;
    case Op::sub:
      if (na.needs_grad) na.grad += g;
      if (nb->needs_grad) nb->grad -= g;
      break;
    case Op::hadamard:
      if (na.needs_grad) na.grad += g.cwiseProduct(nb->value);
      if (nb->needs_grad) nb->grad += g.cwiseProduct(x);
      break;
    case Op::scale:
      na.grad += n.attr * g;
      break;
    case Op::shift:
      na.grad += g;
      break;
    case Op::relu:
      // Subgradient 0 at the kink.
      na.grad += g.cwiseProduct(
          x.unaryExpr([](Scalar v) { return v > 0 ? Scalar(1) : Scalar(0); }));
      break;
    case Op::sigmoid:
      na.grad += g.cwiseProduct(
          n.value.unaryExpr([](Scalar s) { return s * (Scalar(1) - s); }));
      break;
    case Op::softplus:
      na.grad += g.cwiseProduct(x.unaryExpr([](Scalar v) { return detail::sigmoid(v); }));
      break;
    case Op::log:
      na.grad += g.cwiseQuotient(x);
      break;
    case Op::exp:
      na.grad += g.cwiseProduct(n.value);
      break;
    case Op::square:
      na.grad += Scalar(2) * g.cwiseProduct(x);
      break;
    case Op::logsumexp_rows: {
      // d lse_i / d x_ij = softmax_ij
      const Matrix soft = (x.colwise() - n.value.col(0)).array().exp().matrix();
      na.grad.array() += soft.array().colwise() * g.col(0).array();
      break;
    }
    case Op::log_softmax_rows: {
      const Matrix soft = n.value.array().exp().matrix();
      const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> row_sum = g.rowwise().sum();
      na.grad += g - Matrix(soft.array().colwise() * row_sum.array());
      break;
    }
    case Op::sum:
      na.grad.array() += g(0, 0);
      break;
    case Op::mean:
      na.grad.array() += g(0, 0) / static_cast<Scalar>(x.size());
      break;
    case Op::leaf:
      break;
  }
}

// Expression-friendly free functions. Each records exactly one node.

template <typename S> BasicVar<S> matmul(BasicVar<S> a, BasicVar<S> b) { return a.graph->apply(Op::matmul, {a, b}); }
template <typename S> BasicVar<S> add_bias(BasicVar<S> x, BasicVar<S> b) { return x.graph->apply(Op::add_bias, {x, b}); }
template <typename S> BasicVar<S> hadamard(BasicVar<S> a, BasicVar<S> b) { return a.graph->apply(Op::hadamard, {a, b}); }
template <typename S> BasicVar<S> relu(BasicVar<S> a) { return a.graph->apply(Op::relu, {a}); }
/// max(0, x); same node as relu, named for hinge terms.
template <typename S> BasicVar<S> rectify(BasicVar<S> a) { return relu(a); }
template <typename S> BasicVar<S> sigmoid(BasicVar<S> a) { return a.graph->apply(Op::sigmoid, {a}); }
template <typename S> BasicVar<S> softplus(BasicVar<S> a) { return a.graph->apply(Op::softplus, {a}); }
template <typename S> BasicVar<S> log(BasicVar<S> a) { return a.graph->apply(Op::log, {a}); }
template <typename S> BasicVar<S> exp(BasicVar<S> a) { return a.graph->apply(Op::exp, {a}); }
template <typename S> BasicVar<S> square(BasicVar<S> a) { return a.graph->apply(Op::square, {a}); }
template <typename S> BasicVar<S> logsumexp_rows(BasicVar<S> a) { return a.graph->apply(Op::logsumexp_rows, {a}); }
template <typename S> BasicVar<S> log_softmax_rows(BasicVar<S> a) { return a.graph->apply(Op::log_softmax_rows, {a}); }
template <typename S> BasicVar<S> sum(BasicVar<S> a) { return a.graph->apply(Op::sum, {a}); }
template <typename S> BasicVar<S> mean(BasicVar<S> a) { return a.graph->apply(Op::mean, {a}); }

template <typename S> BasicVar<S> operator+(BasicVar<S> a, BasicVar<S> b) { return a.graph->apply(Op::add, {a, b}); }
template <typename S> BasicVar<S> operator-(BasicVar<S> a, BasicVar<S> b) { return a.graph->apply(Op::sub, {a, b}); }
template <typename S> BasicVar<S> operator*(S s, BasicVar<S> a) { return a.graph->apply(Op::scale, {a}, s); }
template <typename S> BasicVar<S> operator*(BasicVar<S> a, S s) { return s * a; }
template <typename S> BasicVar<S> operator-(BasicVar<S> a) { return S(-1) * a; }
template <typename S> BasicVar<S> operator+(BasicVar<S> a, S s) { return a.graph->apply(Op::shift, {a}, s); }
template <typename S> BasicVar<S> operator+(S s, BasicVar<S> a) { return a + s; }
template <typename S> BasicVar<S> operator-(BasicVar<S> a, S s) { return a + (-s); }
template <typename S> BasicVar<S> operator-(S s, BasicVar<S> a) { return (-a) + s; }

/// log sigmoid(x) = -softplus(-x), stable for large |x|.
template <typename S> BasicVar<S> log_sigmoid(BasicVar<S> a) { return -softplus(-a); }

using Graph = BasicGraph<double>;
using Var = BasicVar<double>;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

}  // namespace oodlab
