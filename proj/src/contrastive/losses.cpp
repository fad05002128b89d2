#include "simclr/contrastive/losses.hpp"

namespace simclr::contrastive {

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::nt_xent: return "nt_xent";
    case LossKind::nt_logistic: return "nt_logistic";
    case LossKind::margin_triplet: return "margin_triplet";
  }
  return "unknown";
}

std::string to_string(NegativesMode mode) {
  return mode == NegativesMode::both_views ? "both_views" : "one_view";
}

std::string to_string(Mining mining) { return mining == Mining::none ? "none" : "semi_hard"; }

LossKind parse_loss_kind(const std::string& name) {
  for (auto k : {LossKind::nt_xent, LossKind::nt_logistic, LossKind::margin_triplet})
    if (to_string(k) == name) return k;
  throw ContractError("unknown loss kind '" + name + "' (nt_xent, nt_logistic, margin_triplet)");
}

NegativesMode parse_negatives_mode(const std::string& name) {
  if (name == "both_views") return NegativesMode::both_views;
  if (name == "one_view") return NegativesMode::one_view;
  throw ContractError("unknown negatives mode '" + name + "' (both_views, one_view)");
}

Mining parse_mining(const std::string& name) {
  if (name == "none") return Mining::none;
  if (name == "semi_hard") return Mining::semi_hard;
  throw ContractError("unknown mining '" + name + "' (none, semi_hard)");
}

void LossConfig::validate() const {
  if (kind != LossKind::margin_triplet && !(temperature > 0)) {
    throw ContractError("loss: temperature must be > 0, got " + std::to_string(temperature));
  }
  if (!(margin >= 0)) throw ContractError("loss: margin must be >= 0, got " + std::to_string(margin));
}

}  // namespace simclr::contrastive
