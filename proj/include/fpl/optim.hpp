#pragma once

#include <optional>
#include <span>

#include "fpl/tensor.hpp"

namespace fpl {

struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

/// One bias-corrected ADAM update. Consumes (clears) the gradient.
/// Throws UsageError if the parameter has no gradient.
void adam_step(Parameter& param, const AdamConfig& config = {});

/// Elementwise mean of equally shaped tensors, uniform 1/n unless weights
/// are given (nonnegative, summing to one). Accumulates in double.
Tensor average_parameters(std::span<const Tensor* const> values,
                          std::optional<std::span<const double>> weights = std::nullopt);

}  // namespace fpl
