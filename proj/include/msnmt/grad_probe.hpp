#pragma once

#include <cstdint>
#include <string>

#include "msnmt/grad_check.hpp"

namespace msnmt {

/// A whole MSNMT forward pass plus prefix loss at tiny dimensions, checked
/// coordinate by coordinate in double precision.
struct GradProbeSpec {
  std::size_t vocab_size = 11;
  std::size_t embedding_dim = 4;
  std::size_t hidden_dim = 6;
  std::size_t image_dim = 8;
  std::size_t sentences = 3;
  std::size_t k = 2;
  std::uint64_t seed = 1;
  double epsilon = 1e-3;
  double tolerance = 1e-4;
  double weight_scale = 0.5;  // weights drawn from U(-s, s)
  // Negative control: routes the loss through a tanh whose backward rule is wrong.
  bool corrupt_backward = false;
};

struct GradProbeResult {
  GradCheckResult check;
  std::string worst_param;
  bool passed = false;
};

GradProbeResult run_grad_probe(const GradProbeSpec& spec);

}  // namespace msnmt
