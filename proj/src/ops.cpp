#include "fpl/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "fpl/errors.hpp"

namespace fpl {
namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXf>;

TensorPtr make_output(Shape shape, bool requires_grad) {
  auto out = make_tensor(std::move(shape));
  out->set_requires_grad(requires_grad);
  return out;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank)
    throw ConfigError(std::string(op) + ": expected rank " + std::to_string(rank) +
                      " input, got " + shape_str(t.shape()));
}

void accumulate(std::span<float> dst, std::span<const float> src) {
  VecMap(dst.data(), static_cast<Eigen::Index>(dst.size())) +=
      Eigen::Map<const Eigen::VectorXf>(src.data(), static_cast<Eigen::Index>(src.size()));
}

struct ConvGeometry {
  std::size_t n, c, h, w, o, k, pad_top, pad_left, out_h, out_w;
  std::size_t patch() const { return c * k * k; }
  std::size_t pixels() const { return out_h * out_w; }
};

// cols is [C*K*K, N*out_h*out_w], row-major.
void im2col(const ConvGeometry& g, const float* in, float* cols) {
  const std::size_t np = g.n * g.pixels();
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        float* row = cols + ((ci * g.k + ky) * g.k + kx) * np;
        for (std::size_t ni = 0; ni < g.n; ++ni) {
          const float* plane = in + (ni * g.c + ci) * g.h * g.w;
          float* dst = row + ni * g.pixels();
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(g.pad_top);
            float* drow = dst + oy * g.out_w;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
              std::fill(drow, drow + g.out_w, 0.0f);
              continue;
            }
            const float* srow = plane + static_cast<std::size_t>(iy) * g.w;
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(g.pad_left);
              drow[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? 0.0f : srow[ix];
            }
          }
        }
      }
}

void col2im(const ConvGeometry& g, const float* cols, float* in_grad) {
  const std::size_t np = g.n * g.pixels();
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const float* row = cols + ((ci * g.k + ky) * g.k + kx) * np;
        for (std::size_t ni = 0; ni < g.n; ++ni) {
          float* plane = in_grad + (ni * g.c + ci) * g.h * g.w;
          const float* src = row + ni * g.pixels();
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(g.pad_top);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
            float* drow = plane + static_cast<std::size_t>(iy) * g.w;
            const float* srow = src + oy * g.out_w;
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(g.pad_left);
              if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) drow[ix] += srow[ox];
            }
          }
        }
      }
}

}  // namespace

TensorPtr conv2d(Tape& tape, const TensorPtr& input, Parameter& kernel, Parameter& bias,
                 Padding padding) {
  require_rank(*input, 4, "conv2d");
  const Tensor& kv = *kernel.value;
  if (kv.rank() != 4 || kv.dim(2) != kv.dim(3))
    throw ConfigError("conv2d: kernel must be [O,C,K,K], got " + shape_str(kv.shape()));
  ConvGeometry g{};
  g.n = input->dim(0);
  g.c = input->dim(1);
  g.h = input->dim(2);
  g.w = input->dim(3);
  g.o = kv.dim(0);
  g.k = kv.dim(2);
  if (kv.dim(1) != g.c)
    throw ConfigError("conv2d: input has " + std::to_string(g.c) + " channels but kernel " +
                      shape_str(kv.shape()) + " expects " + std::to_string(kv.dim(1)));
  if (bias.value->size() != g.o)
    throw ConfigError("conv2d: bias " + shape_str(bias.shape()) + " does not match " +
                      std::to_string(g.o) + " output channels");
  std::size_t pad_h = 0, pad_w = 0;
  if (padding == Padding::kSame) pad_h = pad_w = g.k - 1;
  g.pad_top = pad_h / 2;
  g.pad_left = pad_w / 2;
  if (g.k > g.h + pad_h || g.k > g.w + pad_w)
    throw ConfigError("conv2d: kernel " + std::to_string(g.k) + "x" + std::to_string(g.k) +
                      " exceeds padded input " + std::to_string(g.h + pad_h) + "x" +
                      std::to_string(g.w + pad_w));
  g.out_h = g.h + pad_h - g.k + 1;
  g.out_w = g.w + pad_w - g.k + 1;

  const auto patch = static_cast<Eigen::Index>(g.patch());
  const auto np = static_cast<Eigen::Index>(g.n * g.pixels());
  auto cols = std::make_shared<FloatBuffer>(g.patch() * g.n * g.pixels());
  im2col(g, input->data().data(), cols->data());

  RowMat result(static_cast<Eigen::Index>(g.o), np);
  ConstMatMap wmat(kv.data().data(), static_cast<Eigen::Index>(g.o), patch);
  result.noalias() = wmat * ConstMatMap(cols->data(), patch, np);

  auto out = make_output({g.n, g.o, g.out_h, g.out_w}, true);
  float* od = out->data().data();
  const float* bd = bias.value->data().data();
  for (std::size_t ni = 0; ni < g.n; ++ni)
    for (std::size_t oi = 0; oi < g.o; ++oi) {
      const float* src = result.data() + oi * np + ni * g.pixels();
      float* dst = od + (ni * g.o + oi) * g.pixels();
      for (std::size_t p = 0; p < g.pixels(); ++p) dst[p] = src[p] + bd[oi];
    }

  if (tape.enabled()) {
    TensorPtr kt = kernel.value, bt = bias.value;
    tape.record([g, input, kt, bt, out, cols, patch, np]() {
      if (!out->has_grad()) return;
      RowMat dout(static_cast<Eigen::Index>(g.o), np);
      const float* gd = out->grad().data();
      for (std::size_t ni = 0; ni < g.n; ++ni)
        for (std::size_t oi = 0; oi < g.o; ++oi)
          std::copy_n(gd + (ni * g.o + oi) * g.pixels(), g.pixels(),
                      dout.data() + oi * np + ni * g.pixels());
      ConstMatMap cmat(cols->data(), patch, np);
      MatMap(kt->ensure_grad().data(), static_cast<Eigen::Index>(g.o), patch).noalias() +=
          dout * cmat.transpose();
      VecMap(bt->ensure_grad().data(), static_cast<Eigen::Index>(g.o)) += dout.rowwise().sum();
      if (input->requires_grad()) {
        RowMat dcols(patch, np);
        dcols.noalias() =
            ConstMatMap(kt->data().data(), static_cast<Eigen::Index>(g.o), patch).transpose() * dout;
        col2im(g, dcols.data(), input->ensure_grad().data());
      }
    });
  }
  return out;
}

TensorPtr maxpool2(Tape& tape, const TensorPtr& input) {
  require_rank(*input, 4, "maxpool2");
  const std::size_t n = input->dim(0), c = input->dim(1), h = input->dim(2), w = input->dim(3);
  const std::size_t oh = (h + 1) / 2, ow = (w + 1) / 2;
  auto out = make_output({n, c, oh, ow}, input->requires_grad());
  auto argmax = std::make_shared<std::vector<std::size_t>>(out->size());
  const float* in = input->data().data();
  float* od = out->data().data();
  std::size_t q = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x, ++q) {
        float best = -std::numeric_limits<float>::infinity();
        std::size_t best_idx = base + 2 * y * w + 2 * x;
        bool found = false;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t iy = 2 * y + dy, ix = 2 * x + dx;
            if (iy >= h || ix >= w) continue;
            const std::size_t idx = base + iy * w + ix;
            if (!found || in[idx] > best) {
              best = in[idx];
              best_idx = idx;
              found = true;
            }
          }
        od[q] = best;
        (*argmax)[q] = best_idx;
      }
  }
  if (tape.enabled() && input->requires_grad()) {
    tape.record([input, out, argmax]() {
      if (!out->has_grad()) return;
      auto gin = input->ensure_grad();
      auto gout = out->grad();
      for (std::size_t i = 0; i < gout.size(); ++i) gin[(*argmax)[i]] += gout[i];
    });
  }
  return out;
}

TensorPtr dense(Tape& tape, const TensorPtr& input, Parameter& weight, Parameter& bias) {
  return dense(tape, input, weight, &bias);
}

TensorPtr dense(Tape& tape, const TensorPtr& input, Parameter& weight, Parameter* bias_ptr) {
  require_rank(*input, 2, "dense");
  const Tensor& wv = *weight.value;
  if (wv.rank() != 2 || wv.dim(0) != input->dim(1))
    throw ConfigError("dense: input " + shape_str(input->shape()) + " incompatible with weight " +
                      shape_str(wv.shape()));
  if (bias_ptr && bias_ptr->value->size() != wv.dim(1))
    throw ConfigError("dense: bias " + shape_str(bias_ptr->shape()) + " does not match " +
                      std::to_string(wv.dim(1)) + " outputs");
  const auto n = static_cast<Eigen::Index>(input->dim(0));
  const auto fin = static_cast<Eigen::Index>(wv.dim(0));
  const auto fout = static_cast<Eigen::Index>(wv.dim(1));
  auto out = make_output({input->dim(0), wv.dim(1)}, true);
  MatMap om(out->data().data(), n, fout);
  om.noalias() = ConstMatMap(input->data().data(), n, fin) * ConstMatMap(wv.data().data(), fin, fout);
  if (bias_ptr) om.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(bias_ptr->value->data().data(), fout);

  if (tape.enabled()) {
    TensorPtr wt = weight.value, bt = bias_ptr ? bias_ptr->value : nullptr;
    tape.record([input, wt, bt, out, n, fin, fout]() {
      if (!out->has_grad()) return;
      ConstMatMap dout(out->grad().data(), n, fout);
      MatMap(wt->ensure_grad().data(), fin, fout).noalias() +=
          ConstMatMap(input->data().data(), n, fin).transpose() * dout;
      if (bt) Eigen::Map<Eigen::RowVectorXf>(bt->ensure_grad().data(), fout) += dout.colwise().sum();
      if (input->requires_grad())
        MatMap(input->ensure_grad().data(), n, fin).noalias() +=
            dout * ConstMatMap(wt->data().data(), fin, fout).transpose();
    });
  }
  return out;
}

TensorPtr relu(Tape& tape, const TensorPtr& input) {
  auto out = make_output(input->shape(), input->requires_grad());
  auto in = input->data();
  auto od = out->data();
  for (std::size_t i = 0; i < in.size(); ++i) od[i] = in[i] > 0.0f ? in[i] : 0.0f;
  if (tape.enabled() && input->requires_grad()) {
    tape.record([input, out]() {
      if (!out->has_grad()) return;
      auto gin = input->ensure_grad();
      auto gout = out->grad();
      auto x = input->data();
      for (std::size_t i = 0; i < gin.size(); ++i)
        if (x[i] > 0.0f) gin[i] += gout[i];
    });
  }
  return out;
}

TensorPtr flatten(Tape& tape, const TensorPtr& input) {
  if (input->rank() < 2) throw ConfigError("flatten: needs a batch axis, got " + shape_str(input->shape()));
  const std::size_t n = input->dim(0);
  auto out = make_output({n, input->size() / n}, input->requires_grad());
  std::copy(input->data().begin(), input->data().end(), out->data().begin());
  if (tape.enabled() && input->requires_grad()) {
    tape.record([input, out]() {
      if (out->has_grad()) accumulate(input->ensure_grad(), out->grad());
    });
  }
  return out;
}

TensorPtr concat_features(Tape& tape, std::span<const TensorPtr> inputs) {
  if (inputs.empty()) throw ConfigError("concat_features: no inputs");
  const std::size_t n = inputs[0]->dim(0);
  std::size_t total = 0;
  bool any_grad = false;
  for (const auto& t : inputs) {
    require_rank(*t, 2, "concat_features");
    if (t->dim(0) != n)
      throw ConfigError("concat_features: batch " + std::to_string(t->dim(0)) + " vs " + std::to_string(n));
    total += t->dim(1);
    any_grad = any_grad || t->requires_grad();
  }
  auto out = make_output({n, total}, any_grad);
  float* od = out->data().data();
  std::size_t offset = 0;
  for (const auto& t : inputs) {
    const std::size_t f = t->dim(1);
    for (std::size_t r = 0; r < n; ++r)
      std::copy_n(t->data().data() + r * f, f, od + r * total + offset);
    offset += f;
  }
  if (tape.enabled() && any_grad) {
    std::vector<TensorPtr> parts(inputs.begin(), inputs.end());
    tape.record([parts, out, n, total]() {
      if (!out->has_grad()) return;
      const float* gd = out->grad().data();
      std::size_t offset = 0;
      for (const auto& t : parts) {
        const std::size_t f = t->dim(1);
        if (t->requires_grad()) {
          float* gi = t->ensure_grad().data();
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < f; ++j) gi[r * f + j] += gd[r * total + offset + j];
        }
        offset += f;
      }
    });
  }
  return out;
}

TensorPtr softmax_cross_entropy(Tape& tape, const TensorPtr& logits, std::span<const int> labels) {
  require_rank(*logits, 2, "softmax_cross_entropy");
  const std::size_t n = logits->dim(0), c = logits->dim(1);
  if (labels.size() != n)
    throw ConfigError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                      std::to_string(n));
  auto probs = std::make_shared<FloatBuffer>(n * c);
  const float* x = logits->data().data();
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const int label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= c)
      throw DataError("label " + std::to_string(label) + " at batch index " + std::to_string(r) +
                      " outside [0, " + std::to_string(c) + ")");
    const float* row = x + r * c;
    const float mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j)
      (*probs)[r * c + j] = static_cast<float>(std::exp(static_cast<double>(row[j] - mx)) / z);
    total += std::log(z) - static_cast<double>(row[label] - mx);
  }
  auto out = make_output({1}, logits->requires_grad());
  (*out)[0] = static_cast<float>(total / static_cast<double>(n));
  if (tape.enabled() && logits->requires_grad()) {
    std::vector<int> lab(labels.begin(), labels.end());
    tape.record([logits, out, probs, lab, n, c]() {
      if (!out->has_grad()) return;
      const float scale = out->grad()[0] / static_cast<float>(n);
      float* g = logits->ensure_grad().data();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < c; ++j) {
          const float onehot = static_cast<int>(j) == lab[r] ? 1.0f : 0.0f;
          g[r * c + j] += ((*probs)[r * c + j] - onehot) * scale;
        }
    });
  }
  return out;
}

TensorPtr proximal_penalty(Tape& tape, Parameter& param, const Tensor& anchor, float mu) {
  if (anchor.shape() != param.shape())
    throw ConfigError("proximal_penalty: anchor " + shape_str(anchor.shape()) + " vs parameter " +
                      shape_str(param.shape()));
  auto w = param.value->data();
  auto a = anchor.data();
  double sq = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double d = static_cast<double>(w[i]) - a[i];
    sq += d * d;
  }
  auto out = make_output({1}, true);
  (*out)[0] = static_cast<float>(0.5 * mu * sq);
  if (tape.enabled()) {
    TensorPtr wt = param.value;
    auto anchor_copy = std::make_shared<Tensor>(anchor);
    tape.record([wt, anchor_copy, out, mu]() {
      if (!out->has_grad()) return;
      const float up = out->grad()[0];
      auto g = wt->ensure_grad();
      auto w = wt->data();
      auto a = anchor_copy->data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += up * mu * (w[i] - a[i]);
    });
  }
  return out;
}

TensorPtr add_scalars(Tape& tape, std::span<const TensorPtr> terms) {
  if (terms.empty()) throw ConfigError("add_scalars: no terms");
  bool any_grad = false;
  float sum = 0.0f;
  for (const auto& t : terms) {
    if (t->size() != 1) throw ConfigError("add_scalars: non-scalar term " + shape_str(t->shape()));
    sum += (*t)[0];
    any_grad = any_grad || t->requires_grad();
  }
  auto out = make_output({1}, any_grad);
  (*out)[0] = sum;
  if (tape.enabled() && any_grad) {
    std::vector<TensorPtr> parts(terms.begin(), terms.end());
    tape.record([parts, out]() {
      if (!out->has_grad()) return;
      for (const auto& t : parts)
        if (t->requires_grad()) t->ensure_grad()[0] += out->grad()[0];
    });
  }
  return out;
}

}  // namespace fpl
