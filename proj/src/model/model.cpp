#include "simclr/model/model.hpp"

#include <cmath>

namespace simclr::model {

std::string to_string(Stem stem) { return stem == Stem::cifar ? "cifar" : "imagenet"; }

std::string to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::none: return "none";
    case HeadKind::linear: return "linear";
    case HeadKind::mlp: return "mlp";
  }
  return "unknown";
}

Stem parse_stem(const std::string& name) {
  if (name == "cifar") return Stem::cifar;
  if (name == "imagenet") return Stem::imagenet;
  throw ContractError("unknown stem '" + name + "' (cifar, imagenet)");
}

HeadKind parse_head_kind(const std::string& name) {
  for (auto k : {HeadKind::none, HeadKind::linear, HeadKind::mlp})
    if (to_string(k) == name) return k;
  throw ContractError("unknown head kind '" + name + "' (none, linear, mlp)");
}

std::vector<Index> EncoderConfig::scaled_widths() const {
  std::vector<Index> out;
  for (Index w : widths) {
    out.push_back(std::max<Index>(1, std::lround(static_cast<double>(w) * width_multiplier)));
  }
  return out;
}

void EncoderConfig::validate() const {
  if (widths.empty() || blocks.empty()) throw ContractError("encoder: zero-depth configuration");
  if (widths.size() != blocks.size()) {
    throw ContractError("encoder: " + std::to_string(widths.size()) + " stage widths but " +
                        std::to_string(blocks.size()) + " block counts");
  }
  for (Index w : widths)
    if (w < 1) throw ContractError("encoder: stage widths must be positive");
  for (Index b : blocks)
    if (b < 0) throw ContractError("encoder: block counts must be >= 0");
  if (!(width_multiplier > 0)) throw ContractError("encoder: width multiplier must be positive");
  if (in_channels < 1) throw ContractError("encoder: input channels must be >= 1");
}

}  // namespace simclr::model
