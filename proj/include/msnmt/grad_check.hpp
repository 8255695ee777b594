#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "msnmt/autodiff.hpp"

namespace msnmt {

/// Builds a scalar loss on the tape, binding each checked tensor with tape.param().
template <typename T>
using LossBuilder = std::function<Var<T>(Tape<T>&)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compares reverse-mode gradients against central differences for every
/// coordinate of every tensor in `params`. The relative error per coordinate is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
template <typename T>
GradCheckResult grad_check(const LossBuilder<T>& build, std::span<Tensor<T>* const> params,
                           T epsilon) {
  if (!(epsilon > T{0})) throw DomainError("grad_check: epsilon must be positive");
  auto evaluate = [&build]() {
    Tape<T> tape;
    tape.set_grad_enabled(false);
    return build(tape).value().data.at(0);
  };

  for (Tensor<T>* p : params) p->clear_grad();
  {
    Tape<T> tape;
    Var<T> loss = build(tape);
    tape.backward(loss);
  }
  const T first = evaluate();
  const T second = evaluate();
  if (first != second) {
    throw ContractError("grad_check: loss function is not deterministic");
  }

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<T>& p = *params[pi];
    std::vector<T> analytic = p.grad;
    if (analytic.empty()) analytic.assign(p.size(), T{0});
    for (std::size_t i = 0; i < p.size(); ++i) {
      const T saved = p.data[i];
      p.data[i] = saved + epsilon;
      const T up = evaluate();
      p.data[i] = saved - epsilon;
      const T down = evaluate();
      p.data[i] = saved;
      const double numeric = (static_cast<double>(up) - static_cast<double>(down)) /
                             (2.0 * static_cast<double>(epsilon));
      const double a = static_cast<double>(analytic[i]);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double err = std::abs(a - numeric) / denom;
      ++result.coordinates;
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_param = pi;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace msnmt
