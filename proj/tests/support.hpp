#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "fpl/data.hpp"
#include "fpl/model_graph.hpp"
#include "fpl/ops.hpp"
#include "fpl/random.hpp"
#include "fpl/tensor.hpp"

namespace fpl::test {

inline TensorPtr random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  auto t = make_tensor(std::move(shape));
  for (auto& v : t->data()) v = static_cast<float>(uniform(rng, lo, hi));
  return t;
}

inline Parameter random_parameter(Shape shape, Rng& rng) { return Parameter(*random_tensor(std::move(shape), rng)); }

/// sum(out * weights) as a scalar, with its own backward rule. Lets a test
/// drive any op with an arbitrary upstream gradient.
inline TensorPtr probe(Tape& tape, const TensorPtr& out, const std::vector<float>& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < out->size(); ++i) s += static_cast<double>((*out)[i]) * weights[i];
  auto loss = make_tensor({1}, static_cast<float>(s));
  loss->set_requires_grad(true);
  tape.record([out, loss, weights]() {
    auto g = out->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += weights[i] * loss->grad()[0];
  });
  return loss;
}

inline std::vector<float> random_weights(std::size_t n, Rng& rng) {
  std::vector<float> w(n);
  for (auto& v : w) v = static_cast<float>(uniform(rng, -1.0, 1.0));
  return w;
}

/// Norm-wise relative error between the analytic gradient of `loss_fn` and
/// central finite differences, over every element of every tensor in `wrt`.
/// `loss_fn` must build a fresh graph on the tape it is given.
inline double gradient_error(const std::function<TensorPtr(Tape&)>& loss_fn, const std::vector<TensorPtr>& wrt,
                             double step = 1e-3) {
  for (const auto& t : wrt) t->clear_grad();
  {
    Tape tape;
    auto loss = loss_fn(tape);
    tape.backward(loss);
  }
  double diff2 = 0.0, ref2 = 0.0, ana2 = 0.0;
  for (const auto& t : wrt) {
    std::vector<float> analytic(t->size(), 0.0f);
    if (t->has_grad()) std::copy(t->grad().begin(), t->grad().end(), analytic.begin());
    t->clear_grad();
    for (std::size_t i = 0; i < t->size(); ++i) {
      const float x = (*t)[i];
      Tape off(false);
      (*t)[i] = static_cast<float>(x + step);
      const double fp = loss_fn(off)->storage()[0];
      (*t)[i] = static_cast<float>(x - step);
      const double fm = loss_fn(off)->storage()[0];
      (*t)[i] = x;
      const double numeric = (fp - fm) / (2.0 * step);
      diff2 += (numeric - analytic[i]) * (numeric - analytic[i]);
      ref2 += numeric * numeric;
      ana2 += static_cast<double>(analytic[i]) * analytic[i];
    }
  }
  const double scale = std::sqrt(std::max(ref2, ana2));
  return scale == 0.0 ? 0.0 : std::sqrt(diff2) / scale;
}

/// Small CNN with the LEAF layer naming (C1, C2, F1, F2) for fast tests.
inline LayerGraph tiny_cnn(std::size_t num_classes, std::size_t side = 8) {
  LayerGraph g;
  g.input_shape = {1, side, side};
  g.num_classes = num_classes;
  const std::size_t pooled = ((side + 1) / 2 + 1) / 2;
  const std::size_t flat = 6 * pooled * pooled;
  g.layers = {
      {.id = "C1", .kind = LayerKind::kConv, .channels = 4, .kernel = 3},
      {.id = "C1.relu", .kind = LayerKind::kRelu, .inputs = {"C1"}},
      {.id = "C1.pool", .kind = LayerKind::kMaxPool, .inputs = {"C1.relu"}},
      {.id = "C2", .kind = LayerKind::kConv, .channels = 6, .kernel = 3, .inputs = {"C1.pool"}},
      {.id = "C2.relu", .kind = LayerKind::kRelu, .inputs = {"C2"}},
      {.id = "C2.pool", .kind = LayerKind::kMaxPool, .inputs = {"C2.relu"}},
      {.id = "flatten", .kind = LayerKind::kFlatten, .inputs = {"C2.pool"}},
      {.id = "F1", .kind = LayerKind::kDense, .in_features = flat, .units = 16, .inputs = {"flatten"}},
      {.id = "F1.relu", .kind = LayerKind::kRelu, .inputs = {"F1"}},
      {.id = "F2", .kind = LayerKind::kDense, .in_features = 16, .units = num_classes, .inputs = {"F1.relu"}},
  };
  return g;
}

/// Learnable toy images: each class is a fixed random pattern plus noise.
inline ImageSet toy_images(std::size_t per_class, std::size_t num_classes, std::size_t side, std::uint64_t seed) {
  Rng proto_rng(derive_seed(7, "toy-prototypes"));
  std::vector<std::vector<float>> protos(num_classes, std::vector<float>(side * side));
  for (auto& p : protos)
    for (auto& v : p) v = uniform01(proto_rng) < 0.3 ? 1.0f : 0.0f;
  Rng rng(derive_seed(seed, "toy-noise"));
  const std::size_t n = per_class * num_classes;
  ImageSet set{Tensor({n, 1, side, side}), std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % num_classes;
    set.labels[i] = static_cast<int>(c);
    auto img = set.image(i);
    for (std::size_t p = 0; p < img.size(); ++p)
      img[p] = static_cast<float>(std::clamp(protos[c][p] + uniform(rng, -0.3, 0.3), 0.0, 1.0));
  }
  return set;
}

}  // namespace fpl::test
