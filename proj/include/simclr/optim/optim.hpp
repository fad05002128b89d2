#pragma once

#include "simclr/tensorgrad/parameter.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace simclr::optim {

using tg::ParameterList;
using tg::ParamKind;
using tg::Vector;

enum class LrScaling { linear, sqrt };

std::string to_string(LrScaling rule);
LrScaling parse_lr_scaling(const std::string& name);

inline constexpr double kPretrainLinearCoef = 0.3;  // lr = 0.3 * BS / 256
inline constexpr double kPretrainSqrtCoef = 0.075;  // lr = 0.075 * sqrt(BS)
inline constexpr double kFineTuneCoef = 0.05;       // lr = 0.05 * BS / 256
inline constexpr double kLinearEvalCoef = 0.1;      // lr = 0.1 * BS / 256

/// Pretraining learning rate for a batch size under the given rule.
double scaled_base_lr(std::int64_t batch_size, LrScaling rule);
/// coefficient * BS / 256.
double linear_scaled_lr(std::int64_t batch_size, double coefficient);

struct ScheduleConfig {
  double base_lr = 0.3;
  double warmup_epochs = 10;
  std::int64_t total_epochs = 100;
  std::int64_t steps_per_epoch = 1;

  std::int64_t total_steps() const { return total_epochs * steps_per_epoch; }
  std::int64_t warmup_steps() const;
  void validate() const;
};

/// Linear warmup from 0 to base_lr, then cosine decay to 0 at total_steps.
double lr_at(std::int64_t step, const ScheduleConfig& cfg);

struct LarsConfig {
  double momentum = 0.9;
  double weight_decay = 1e-6;
  double trust_coefficient = 1.0;
  /// Batch-norm parameters and biases get plain momentum: no weight decay
  /// and no trust ratio.
  bool exclude_bn_and_bias = true;
};

struct NesterovConfig {
  double momentum = 0.9;
  double weight_decay = 0.0;
};

/// Momentum buffers, one per parameter in list order.
template <typename Scalar>
struct OptimizerState {
  std::vector<Vector<Scalar>> buffers;
  std::int64_t step = 0;

  void init(const ParameterList<Scalar>& params) {
    if (!buffers.empty()) {
      if (buffers.size() != params.size()) throw DimensionError("optimizer state: parameter count changed");
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (buffers[i].size() != params[i].tensor.numel()) {
          throw DimensionError("optimizer state: buffer for '" + params[i].name + "' has the wrong size");
        }
      }
      return;
    }
    for (const auto& p : params) buffers.push_back(Vector<Scalar>::Zero(p.tensor.numel()));
  }
};

/// Trust ratio ||w|| / ||g||, or 1 when either norm is zero.
template <typename Scalar>
Scalar trust_ratio(Scalar w_norm, Scalar g_norm, Scalar coefficient = Scalar(1)) {
  if (w_norm == Scalar(0) || g_norm == Scalar(0)) return Scalar(1);
  return coefficient * w_norm / g_norm;
}

/// One LARS update of a single layer in place. With adapt false the layer is
/// treated as excluded: no weight decay, trust ratio 1.
template <typename Scalar>
void lars_update(Eigen::Ref<Vector<Scalar>> w, const Vector<Scalar>& g, Vector<Scalar>& v, double lr,
                 const LarsConfig& cfg, bool adapt) {
  Vector<Scalar> gt = g;
  Scalar eta = 1;
  if (adapt) {
    gt += static_cast<Scalar>(cfg.weight_decay) * w;
    eta = trust_ratio<Scalar>(w.norm(), gt.norm(), static_cast<Scalar>(cfg.trust_coefficient));
  }
  v = static_cast<Scalar>(cfg.momentum) * v + (eta * static_cast<Scalar>(lr)) * gt;
  w -= v;
}

namespace detail {

template <typename Scalar>
void require_finite_grads(ParameterList<Scalar>& params, const char* who) {
  for (auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    if (!p.tensor.grad().allFinite()) {
      throw NumericError(std::string(who) + ": non-finite gradient in '" + p.name + "'");
    }
  }
}

}  // namespace detail

/// LARS step over all parameters using their accumulated gradients. A
/// non-finite gradient anywhere aborts before any parameter changes.
template <typename Scalar>
void lars_step(ParameterList<Scalar>& params, OptimizerState<Scalar>& state, double lr, const LarsConfig& cfg) {
  state.init(params);
  detail::require_finite_grads(params, "lars_step");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const bool adapt = !cfg.exclude_bn_and_bias || p.kind == ParamKind::weight;
    lars_update<Scalar>(p.tensor.value(), p.tensor.grad(), state.buffers[i], lr, cfg, adapt);
  }
  ++state.step;
}

/// v = mu v + g; w -= lr (g + mu v). Weight decay, when set, is folded into g.
template <typename Scalar>
void nesterov_step(ParameterList<Scalar>& params, OptimizerState<Scalar>& state, double lr,
                   const NesterovConfig& cfg = {}) {
  state.init(params);
  detail::require_finite_grads(params, "nesterov_step");
  const auto mu = static_cast<Scalar>(cfg.momentum);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].tensor.value();
    Vector<Scalar> g = params[i].tensor.grad();
    if (cfg.weight_decay != 0) g += static_cast<Scalar>(cfg.weight_decay) * w;
    auto& v = state.buffers[i];
    v = mu * v + g;
    w -= static_cast<Scalar>(lr) * (g + mu * v);
  }
  ++state.step;
}

}  // namespace simclr::optim
