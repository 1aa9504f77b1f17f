#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <boost/align/aligned_allocator.hpp>

namespace fpl {

using Shape = std::vector<std::size_t>;
/// 64-byte aligned float storage.
using FloatBuffer = std::vector<float, boost::alignment::aligned_allocator<float, 64>>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major float tensor with an optional gradient buffer.
///
/// The gradient is absent until a backward rule deposits into it (or
/// ensure_grad() is called); has_grad() distinguishes the two states.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, FloatBuffer data);
  Tensor(Shape shape, const std::vector<float>& data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  FloatBuffer& storage() noexcept { return data_; }
  const FloatBuffer& storage() const noexcept { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  bool has_grad() const noexcept { return !grad_.empty(); }
  /// Allocates a zero gradient if absent and returns it.
  std::span<float> ensure_grad();
  std::span<float> grad() noexcept { return grad_; }
  std::span<const float> grad() const noexcept { return grad_; }
  void clear_grad() noexcept { grad_.clear(); grad_.shrink_to_fit(); }

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool v) noexcept { requires_grad_ = v; }

  /// Same data, new shape with equal element count.
  void reshape(Shape shape);

 private:
  Shape shape_;
  FloatBuffer data_;
  FloatBuffer grad_;
  bool requires_grad_ = false;
};

using TensorPtr = std::shared_ptr<Tensor>;

inline TensorPtr make_tensor(Shape shape, float fill = 0.0f) {
  return std::make_shared<Tensor>(std::move(shape), fill);
}
inline TensorPtr make_tensor(Shape shape, FloatBuffer data) {
  return std::make_shared<Tensor>(std::move(shape), std::move(data));
}

/// Trainable tensor plus the ADAM moment estimates that travel with it.
struct Parameter {
  explicit Parameter(Tensor init);

  Parameter(const Parameter& other);
  Parameter& operator=(const Parameter& other);
  Parameter(Parameter&&) noexcept = default;
  Parameter& operator=(Parameter&&) noexcept = default;

  const Shape& shape() const { return value->shape(); }
  std::size_t size() const { return value->size(); }

  TensorPtr value;
  Tensor adam_m;
  Tensor adam_v;
  std::uint64_t step_count = 0;
};

/// Records backward rules in execution order and replays them in reverse.
///
/// A disabled tape records nothing; ops run forward-only (evaluation).
class Tape {
 public:
  explicit Tape(bool enabled = true) : enabled_(enabled) {}

  bool enabled() const noexcept { return enabled_; }
  std::size_t size() const noexcept { return rules_.size(); }

  void record(std::function<void()> backward_rule);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded rule in reverse.
  /// The tape is cleared afterwards.
  void backward(const TensorPtr& loss);

  void clear() { rules_.clear(); }

 private:
  bool enabled_;
  std::vector<std::function<void()>> rules_;
};

}  // namespace fpl
