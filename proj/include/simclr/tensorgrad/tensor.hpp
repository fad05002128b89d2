#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace simclr {

using Index = Eigen::Index;

/// Violated precondition on an operation's inputs.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Shape mismatch between operands. The message names the offending axis.
class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// NaN/Inf where a finite value is required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operation requested in a state that cannot serve it.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed file contents.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace tg {

using Shape = std::vector<Index>;

inline Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatrixMap = Eigen::Map<Matrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const Matrix<Scalar>>;

template <typename Scalar>
struct TensorNode {
  Shape shape;
  Vector<Scalar> value;
  Vector<Scalar> grad;  // empty until a gradient reaches the node
  bool requires_grad = false;
  bool is_leaf = true;
};

/// Dense row-major n-d array. Copies share storage; use clone() for a deep copy.
template <typename Scalar>
class Tensor {
 public:
  using Node = TensorNode<Scalar>;

  Tensor() = default;

  Tensor(Shape shape, Vector<Scalar> values, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (shape[i] <= 0) {
        throw DimensionError("tensor axis " + std::to_string(i) + " has non-positive extent " +
                             std::to_string(shape[i]));
      }
    }
    if (values.size() != tg::numel(shape)) {
      throw DimensionError("element count " + std::to_string(values.size()) +
                           " does not match shape " + tg::to_string(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const Index n = tg::numel(shape);
    return Tensor(std::move(shape), Vector<Scalar>::Zero(n), requires_grad);
  }

  static Tensor constant(Shape shape, Scalar v, bool requires_grad = false) {
    const Index n = tg::numel(shape);
    return Tensor(std::move(shape), Vector<Scalar>::Constant(n, v), requires_grad);
  }

  static Tensor scalar(Scalar v, bool requires_grad = false) {
    return Tensor(Shape{1}, Vector<Scalar>::Constant(1, v), requires_grad);
  }

  static Tensor from_matrix(const Matrix<Scalar>& m, bool requires_grad = false) {
    return Tensor(Shape{m.rows(), m.cols()},
                  Eigen::Map<const Vector<Scalar>>(m.data(), m.size()), requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index dim(std::size_t axis) const { return node_->shape.at(axis); }
  Index numel() const { return node_->value.size(); }

  Vector<Scalar>& value() { return node_->value; }
  const Vector<Scalar>& value() const { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool is_leaf() const { return node_->is_leaf; }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  Vector<Scalar>& grad() {
    ensure_grad();
    return node_->grad;
  }
  const Vector<Scalar>& grad() const {
    if (!has_grad()) throw StateError("tensor has no gradient");
    return node_->grad;
  }
  void ensure_grad() {
    if (!has_grad()) node_->grad = Vector<Scalar>::Zero(node_->value.size());
  }
  void zero_grad() {
    if (has_grad()) node_->grad.setZero();
  }

  Scalar item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + tg::to_string(shape()));
    return node_->value[0];
  }

  /// View as a rows x cols row-major matrix; rows*cols must equal numel().
  MatrixMap<Scalar> matrix(Index rows, Index cols) {
    check_view(rows, cols);
    return MatrixMap<Scalar>(node_->value.data(), rows, cols);
  }
  ConstMatrixMap<Scalar> matrix(Index rows, Index cols) const {
    check_view(rows, cols);
    return ConstMatrixMap<Scalar>(node_->value.data(), rows, cols);
  }
  /// Leading axis as rows, remaining axes flattened.
  ConstMatrixMap<Scalar> rows_view() const { return matrix(dim(0), numel() / dim(0)); }
  MatrixMap<Scalar> rows_view() { return matrix(dim(0), numel() / dim(0)); }

  Tensor clone() const {
    Tensor out(shape(), value(), requires_grad());
    return out;
  }

  const std::shared_ptr<Node>& node() const { return node_; }
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  void check_view(Index rows, Index cols) const {
    if (rows * cols != numel()) {
      throw DimensionError("cannot view " + tg::to_string(shape()) + " as " +
                           std::to_string(rows) + "x" + std::to_string(cols));
    }
  }

  std::shared_ptr<Node> node_;
};

template <typename Scalar>
bool all_finite(const Vector<Scalar>& v) {
  return v.allFinite();
}

}  // namespace tg
}  // namespace simclr
