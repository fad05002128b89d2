#include "simclr/optim/optim.hpp"

#include <numbers>

namespace simclr::optim {

std::string to_string(LrScaling rule) { return rule == LrScaling::linear ? "linear" : "sqrt"; }

LrScaling parse_lr_scaling(const std::string& name) {
  if (name == "linear") return LrScaling::linear;
  if (name == "sqrt") return LrScaling::sqrt;
  throw ContractError("unknown lr scaling '" + name + "' (linear, sqrt)");
}

double linear_scaled_lr(std::int64_t batch_size, double coefficient) {
  if (batch_size < 1) throw ContractError("batch size must be >= 1, got " + std::to_string(batch_size));
  return coefficient * static_cast<double>(batch_size) / 256.0;
}

double scaled_base_lr(std::int64_t batch_size, LrScaling rule) {
  if (batch_size < 1) throw ContractError("batch size must be >= 1, got " + std::to_string(batch_size));
  if (rule == LrScaling::linear) return linear_scaled_lr(batch_size, kPretrainLinearCoef);
  return kPretrainSqrtCoef * std::sqrt(static_cast<double>(batch_size));
}

std::int64_t ScheduleConfig::warmup_steps() const {
  return std::llround(warmup_epochs * static_cast<double>(steps_per_epoch));
}

void ScheduleConfig::validate() const {
  if (!(base_lr >= 0)) throw ContractError("schedule: base_lr must be >= 0");
  if (total_epochs < 1) throw ContractError("schedule: total_epochs must be >= 1");
  if (steps_per_epoch < 1) throw ContractError("schedule: steps_per_epoch must be >= 1");
  if (warmup_epochs < 0 || warmup_epochs > static_cast<double>(total_epochs)) {
    throw ContractError("schedule: warmup_epochs must lie in [0, total_epochs]");
  }
}

double lr_at(std::int64_t step, const ScheduleConfig& cfg) {
  cfg.validate();
  const std::int64_t total = cfg.total_steps();
  if (step < 0 || step > total) {
    throw ContractError("lr_at: step " + std::to_string(step) + " outside schedule [0, " + std::to_string(total) +
                        "]");
  }
  const std::int64_t warmup = cfg.warmup_steps();
  if (step < warmup) return cfg.base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  if (total == warmup) return cfg.base_lr;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return cfg.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace simclr::optim
