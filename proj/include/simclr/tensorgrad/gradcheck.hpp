#pragma once

#include "simclr/tensorgrad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace simclr::tg {

template <typename Scalar>
using ScalarFn = std::function<Tensor<Scalar>(Tape<Scalar>&, const Tensor<Scalar>&)>;

struct GradCheckResult {
  double max_relative_error = 0;
  Index worst_index = -1;
};

/// Compares the tape gradient of `fn` at `point` with central differences.
/// Error per coordinate is |ga - gfd| / max(|ga|, |gfd|, 1e-12).
template <typename Scalar>
GradCheckResult finite_diff_check(const ScalarFn<Scalar>& fn, const Tensor<Scalar>& point, Scalar step) {
  if (!(step > Scalar(0))) throw ContractError("finite_diff_check: step must be positive");

  auto evaluate = [&](const Tensor<Scalar>& x) {
    Tape<Scalar> tape;
    const Scalar v = fn(tape, x).item();
    if (!std::isfinite(static_cast<double>(v))) {
      throw NumericError("finite_diff_check: function is not finite near the point");
    }
    return v;
  };

  Tensor<Scalar> x(point.shape(), point.value(), true);
  Tape<Scalar> tape;
  Tensor<Scalar> loss = fn(tape, x);
  if (!std::isfinite(static_cast<double>(loss.item()))) {
    throw NumericError("finite_diff_check: function is not finite at the point");
  }
  tape.backward(loss);
  const Vector<Scalar> analytic = x.grad();

  GradCheckResult result;
  Tensor<Scalar> probe(point.shape(), point.value(), false);
  for (Index i = 0; i < point.numel(); ++i) {
    const Scalar saved = probe.value()[i];
    probe.value()[i] = saved + step;
    const Scalar up = evaluate(probe);
    probe.value()[i] = saved - step;
    const Scalar down = evaluate(probe);
    probe.value()[i] = saved;
    const double fd = (static_cast<double>(up) - static_cast<double>(down)) / (2.0 * static_cast<double>(step));
    const double ga = static_cast<double>(analytic[i]);
    const double denom = std::max({std::abs(ga), std::abs(fd), 1e-12});
    const double err = std::abs(ga - fd) / denom;
    if (err > result.max_relative_error || result.worst_index < 0) {
      result.max_relative_error = std::max(result.max_relative_error, err);
      if (err >= result.max_relative_error) result.worst_index = i;
    }
  }
  return result;
}

}  // namespace simclr::tg
