#pragma once

#include "simclr/tensorgrad/tensor.hpp"

#include <string>
#include <vector>

namespace simclr::tg {

/// bn covers batch-norm gamma and beta.
enum class ParamKind { weight, bias, bn };

template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> tensor;
  ParamKind kind = ParamKind::weight;
};

template <typename Scalar>
using ParameterList = std::vector<Parameter<Scalar>>;

template <typename Scalar>
void zero_grads(ParameterList<Scalar>& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

template <typename Scalar>
Index parameter_count(const ParameterList<Scalar>& params) {
  Index n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

}  // namespace simclr::tg
