#include "fpl/optim.hpp"

#include <cmath>
#include <vector>

#include "fpl/errors.hpp"

namespace fpl {

void adam_step(Parameter& param, const AdamConfig& config) {
  Tensor& value = *param.value;
  if (!value.has_grad()) throw UsageError("adam_step: parameter has no gradient");
  ++param.step_count;
  const auto t = static_cast<double>(param.step_count);
  const float c1 = static_cast<float>(1.0 - std::pow(static_cast<double>(config.beta1), t));
  const float c2 = static_cast<float>(1.0 - std::pow(static_cast<double>(config.beta2), t));
  auto w = value.data();
  auto g = value.grad();
  auto m = param.adam_m.data();
  auto v = param.adam_v.data();
  for (std::size_t i = 0; i < w.size(); ++i) {
    m[i] = config.beta1 * m[i] + (1.0f - config.beta1) * g[i];
    v[i] = config.beta2 * v[i] + (1.0f - config.beta2) * g[i] * g[i];
    const float m_hat = m[i] / c1;
    const float v_hat = v[i] / c2;
    w[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
  }
  value.clear_grad();
}

Tensor average_parameters(std::span<const Tensor* const> values,
                          std::optional<std::span<const double>> weights) {
  if (values.empty()) throw ConfigError("average_parameters: empty parameter set");
  const Shape& shape = values[0]->shape();
  for (const Tensor* t : values)
    if (t->shape() != shape)
      throw ConfigError("average_parameters: shape " + shape_str(t->shape()) + " differs from " +
                        shape_str(shape));
  if (weights) {
    if (weights->size() != values.size())
      throw ConfigError("average_parameters: " + std::to_string(weights->size()) + " weights for " +
                        std::to_string(values.size()) + " tensors");
    double total = 0.0;
    for (double wi : *weights) {
      if (wi < 0.0) throw ConfigError("average_parameters: negative weight");
      total += wi;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("average_parameters: weights must sum to 1");
  }

  const std::size_t n = values[0]->size();
  std::vector<double> acc(n, 0.0);
  for (std::size_t k = 0; k < values.size(); ++k) {
    auto src = values[k]->data();
    const double wk = weights ? (*weights)[k] : 1.0;
    for (std::size_t i = 0; i < n; ++i) acc[i] += wk * static_cast<double>(src[i]);
  }
  Tensor out(shape);
  const auto count = static_cast<double>(values.size());
  for (std::size_t i = 0; i < n; ++i)
    out[i] = static_cast<float>(weights ? acc[i] : acc[i] / count);
  return out;
}

}  // namespace fpl
