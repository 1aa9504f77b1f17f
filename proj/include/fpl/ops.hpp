#pragma once

#include <span>

#include "fpl/tensor.hpp"

namespace fpl {

enum class Padding { kSame, kValid };

/// Cross-correlation of input [N,C,H,W] with kernel [O,C,K,K] plus bias [O].
/// Same padding keeps H and W; even kernels pad one extra row/column at the
/// bottom/right.
TensorPtr conv2d(Tape& tape, const TensorPtr& input, Parameter& kernel, Parameter& bias,
                 Padding padding);

/// 2x2 window, stride 2. Odd H or W is padded bottom/right with -inf, so the
/// output is ceil(H/2) x ceil(W/2). The backward pass routes each output
/// gradient to the first maximum in row-major window order.
TensorPtr maxpool2(Tape& tape, const TensorPtr& input);

/// input [N,F_in] * weight [F_in,F_out] + bias [F_out].
TensorPtr dense(Tape& tape, const TensorPtr& input, Parameter& weight, Parameter& bias);
/// Same, with the bias optional (nullptr = no bias term).
TensorPtr dense(Tape& tape, const TensorPtr& input, Parameter& weight, Parameter* bias);

TensorPtr relu(Tape& tape, const TensorPtr& input);

/// [N, ...] -> [N, prod(...)].
TensorPtr flatten(Tape& tape, const TensorPtr& input);

/// Concatenates [N,F_i] tensors along the feature axis, in argument order.
TensorPtr concat_features(Tape& tape, std::span<const TensorPtr> inputs);

/// Mean over the batch of -log softmax(logits)[label]. Max-subtracted.
/// Throws DataError for labels outside [0, C).
TensorPtr softmax_cross_entropy(Tape& tape, const TensorPtr& logits, std::span<const int> labels);

/// (mu / 2) * ||param - anchor||^2, the FedProx proximal term.
TensorPtr proximal_penalty(Tape& tape, Parameter& param, const Tensor& anchor, float mu);

/// Sum of scalar tensors.
TensorPtr add_scalars(Tape& tape, std::span<const TensorPtr> terms);

}  // namespace fpl
