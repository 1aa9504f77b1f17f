#include "fpl/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "fpl/errors.hpp"

namespace fpl {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
  for (auto d : shape_)
    if (d == 0) throw ConfigError("tensor dimensions must be positive: " + shape_str(shape_));
}

Tensor::Tensor(Shape shape, FloatBuffer data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size())
    throw ConfigError("shape " + shape_str(shape_) + " does not match " +
                      std::to_string(data_.size()) + " elements");
}

Tensor::Tensor(Shape shape, const std::vector<float>& data)
    : Tensor(std::move(shape), FloatBuffer(data.begin(), data.end())) {}

std::span<float> Tensor::ensure_grad() {
  if (grad_.empty()) grad_.assign(data_.size(), 0.0f);
  return grad_;
}

void Tensor::reshape(Shape shape) {
  if (shape_numel(shape) != data_.size())
    throw ConfigError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  shape_ = std::move(shape);
}

Parameter::Parameter(Tensor init)
    : value(std::make_shared<Tensor>(std::move(init))),
      adam_m(value->shape()),
      adam_v(value->shape()) {
  value->set_requires_grad(true);
}

Parameter::Parameter(const Parameter& other)
    : value(std::make_shared<Tensor>(*other.value)),
      adam_m(other.adam_m),
      adam_v(other.adam_v),
      step_count(other.step_count) {}

Parameter& Parameter::operator=(const Parameter& other) {
  if (this != &other) {
    value = std::make_shared<Tensor>(*other.value);
    adam_m = other.adam_m;
    adam_v = other.adam_v;
    step_count = other.step_count;
  }
  return *this;
}

void Tape::record(std::function<void()> backward_rule) {
  if (enabled_) rules_.push_back(std::move(backward_rule));
}

void Tape::backward(const TensorPtr& loss) {
  if (!enabled_) throw UsageError("backward() on a disabled tape");
  if (loss->size() != 1) throw UsageError("backward() needs a scalar loss, got " + shape_str(loss->shape()));
  loss->ensure_grad()[0] = 1.0f;
  for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) (*it)();
  rules_.clear();
}

}  // namespace fpl
