#pragma once

#include "simclr/tensorgrad/tensor.hpp"

#include <functional>
#include <string>
#include <unordered_set>
#include <vector>

namespace simclr::tg {

/// Records differentiable operations in execution order and replays their
/// gradient rules in reverse. Single owner; not shared across threads.
template <typename Scalar>
class Tape {
 public:
  using NodePtr = std::shared_ptr<TensorNode<Scalar>>;
  /// Receives dL/d(output) and accumulates into the inputs' grad buffers.
  using BackwardFn = std::function<void(const Vector<Scalar>& out_grad)>;

  struct Record {
    std::string op;
    std::vector<NodePtr> inputs;
    NodePtr output;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  /// Wraps `value` into a new tensor. The op is recorded only when some input
  /// requires a gradient; otherwise the result is a constant.
  Tensor<Scalar> record(std::string op, Shape shape, Vector<Scalar> value,
                        std::vector<Tensor<Scalar>> inputs, BackwardFn backward) {
    bool needs_grad = false;
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
    Tensor<Scalar> out(std::move(shape), std::move(value), needs_grad);
    if (!needs_grad || !enabled_) {
      out.set_requires_grad(false);
      return out;
    }
    out.node()->is_leaf = false;
    Record rec{std::move(op), {}, out.node(), std::move(backward)};
    rec.inputs.reserve(inputs.size());
    for (const auto& in : inputs) rec.inputs.push_back(in.node());
    records_.push_back(std::move(rec));
    return out;
  }

  /// Reverse pass from a scalar loss. Leaf gradients accumulate across calls;
  /// intermediate gradients are reset at the start of each call.
  void backward(const Tensor<Scalar>& loss) {
    if (loss.numel() != 1) {
      throw ContractError("backward requires a scalar loss, got shape " +
                          tg::to_string(loss.shape()));
    }
    if (!loss.requires_grad()) throw ContractError("loss does not depend on any parameter");
    for (auto& rec : records_) rec.output->grad.resize(0);
    auto& seed = loss.node()->grad;
    if (loss.is_leaf() && seed.size() == 1) {
      seed[0] += Scalar(1);
    } else {
      seed = Vector<Scalar>::Ones(1);
    }
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      const auto& out = it->output;
      if (out->grad.size() != out->value.size()) continue;
      for (auto& in : it->inputs) {
        if (in->requires_grad && in->grad.size() != in->value.size()) {
          in->grad = Vector<Scalar>::Zero(in->value.size());
        }
      }
      it->backward(out->grad);
    }
  }

  void clear() { records_.clear(); }
  std::size_t size() const { return records_.size(); }
  const std::vector<Record>& records() const { return records_; }

  /// Disables recording; ops still compute values.
  void set_enabled(bool on) { enabled_ = on; }
  bool enabled() const { return enabled_; }

 private:
  std::vector<Record> records_;
  bool enabled_ = true;
};

/// Accumulate `g` into the gradient of `node` if it takes one.
template <typename Scalar, typename Derived>
void accumulate(const std::shared_ptr<TensorNode<Scalar>>& node,
                const Eigen::MatrixBase<Derived>& g) {
  if (!node->requires_grad) return;
  if (node->grad.size() != node->value.size()) node->grad = Vector<Scalar>::Zero(node->value.size());
  node->grad += g;
}

}  // namespace simclr::tg
