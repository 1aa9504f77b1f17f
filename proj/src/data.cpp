#include <algorithm>
#include <cmath>
#include <numbers>
#include <json.hpp>
#include <numeric>
#include <ostream>

#include "fpl/data.hpp"
#include "fpl/errors.hpp"
#include "fpl/random.hpp"

namespace fpl {
namespace {

std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  // reflect-101: -1 -> 1, n -> n-2
  const auto last = static_cast<std::ptrdiff_t>(n) - 1;
  if (last == 0) return 0;
  while (i < 0 || i > last) i = i < 0 ? -i : 2 * last - i;
  return static_cast<std::size_t>(i);
}

std::vector<float> gaussian_kernel(std::size_t size, double sigma) {
  std::vector<double> k(size);
  const double c = static_cast<double>(size / 2);
  for (std::size_t i = 0; i < size; ++i) {
    const double x = static_cast<double>(i) - c;
    k[i] = std::exp(-x * x / (2.0 * sigma * sigma));
  }
  const double s = std::accumulate(k.begin(), k.end(), 0.0);
  std::vector<float> out(size);
  for (std::size_t i = 0; i < size; ++i) out[i] = static_cast<float>(k[i] / s);
  return out;
}

void blur(std::span<float> img, std::size_t h, std::size_t w, const std::vector<float>& k) {
  const auto r = static_cast<std::ptrdiff_t>(k.size() / 2);
  std::vector<float> tmp(img.size());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (std::ptrdiff_t d = -r; d <= r; ++d)
        acc += k[static_cast<std::size_t>(d + r)] * img[y * w + reflect(static_cast<std::ptrdiff_t>(x) + d, w)];
      tmp[y * w + x] = acc;
    }
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (std::ptrdiff_t d = -r; d <= r; ++d)
        acc += k[static_cast<std::size_t>(d + r)] * tmp[reflect(static_cast<std::ptrdiff_t>(y) + d, h) * w + x];
      img[y * w + x] = std::clamp(acc, 0.0f, 1.0f);
    }
}

void crop_resize(std::span<float> img, std::size_t h, std::size_t w, std::size_t side, Rng& rng) {
  const auto top = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(h - side)));
  const auto left = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(w - side)));
  std::vector<float> src(img.begin(), img.end());
  const double sy = static_cast<double>(side) / static_cast<double>(h);
  const double sx = static_cast<double>(side) / static_cast<double>(w);
  const double max_c = static_cast<double>(side - 1);
  for (std::size_t y = 0; y < h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, max_c);
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, side - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, max_c);
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, side - 1);
      const double tx = fx - static_cast<double>(x0);
      auto at = [&](std::size_t yy, std::size_t xx) { return static_cast<double>(src[(top + yy) * w + left + xx]); };
      const double v = (1 - ty) * ((1 - tx) * at(y0, x0) + tx * at(y0, x1)) + ty * ((1 - tx) * at(y1, x0) + tx * at(y1, x1));
      img[y * w + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
}

}  // namespace

ImageSet select(const ImageSet& set, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ConfigError("select: empty index list");
  ImageSet out{Tensor({indices.size(), 1, set.height(), set.width()}), std::vector<int>(indices.size())};
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= set.size()) throw ConfigError("select: index out of range");
    auto src = set.image(indices[i]);
    std::copy(src.begin(), src.end(), out.image(i).begin());
    out.labels[i] = set.labels[indices[i]];
  }
  return out;
}

ImageSet concatenate(const ImageSet& a, const ImageSet& b) {
  if (a.height() != b.height() || a.width() != b.width()) throw ConfigError("concatenate: image sizes differ");
  FloatBuffer px(a.images.storage());
  px.insert(px.end(), b.images.storage().begin(), b.images.storage().end());
  std::vector<int> labels(a.labels);
  labels.insert(labels.end(), b.labels.begin(), b.labels.end());
  return {Tensor({labels.size(), 1, a.height(), a.width()}, std::move(px)), std::move(labels)};
}

std::vector<std::size_t> label_histogram(std::span<const int> labels, std::size_t num_classes) {
  std::vector<std::size_t> h(num_classes, 0);
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes)
      throw DataError("label " + std::to_string(l) + " outside [0, " + std::to_string(num_classes) + ")");
    ++h[static_cast<std::size_t>(l)];
  }
  return h;
}

std::string to_string(TransformKind kind) {
  switch (kind) {
    case TransformKind::kBlur: return "blur";
    case TransformKind::kErase: return "erase";
    case TransformKind::kHFlip: return "hflip";
    case TransformKind::kVFlip: return "vflip";
    case TransformKind::kCrop: return "crop";
  }
  return "unknown";
}

TransformKind parse_transform_kind(const std::string& text) {
  for (auto k : {TransformKind::kBlur, TransformKind::kErase, TransformKind::kHFlip, TransformKind::kVFlip,
                 TransformKind::kCrop})
    if (to_string(k) == text) return k;
  throw ConfigError("unknown transform '" + text + "'");
}

void validate(const TransformSpec& spec, std::size_t height, std::size_t width) {
  const std::size_t side = std::min(height, width);
  switch (spec.kind) {
    case TransformKind::kBlur:
      if (!(spec.sigma > 0.0) || spec.blur_size % 2 == 0 || spec.blur_size > side)
        throw ConfigError("blur needs sigma > 0 and an odd kernel size <= image side");
      break;
    case TransformKind::kErase:
      if (spec.erase_min == 0 || spec.erase_min > spec.erase_max || spec.erase_max > side)
        throw ConfigError("erase needs 1 <= erase_min <= erase_max <= image side");
      break;
    case TransformKind::kCrop:
      if (spec.crop_size < 2 || spec.crop_size > side) throw ConfigError("crop size must be in [2, image side]");
      break;
    default:
      break;
  }
}

ImageSet transform(const ImageSet& set, const TransformSpec& spec) {
  validate(spec, set.height(), set.width());
  ImageSet out = set;
  const std::size_t h = set.height(), w = set.width();
  Rng rng(spec.seed);
  const auto kernel = spec.kind == TransformKind::kBlur ? gaussian_kernel(spec.blur_size, spec.sigma)
                                                        : std::vector<float>{};
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto img = out.image(i);
    switch (spec.kind) {
      case TransformKind::kBlur:
        blur(img, h, w, kernel);
        break;
      case TransformKind::kErase: {
        const auto bh = static_cast<std::size_t>(uniform_int(rng, spec.erase_min, spec.erase_max));
        const auto bw = static_cast<std::size_t>(uniform_int(rng, spec.erase_min, spec.erase_max));
        const auto top = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(h - bh)));
        const auto left = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(w - bw)));
        for (std::size_t y = top; y < top + bh; ++y)
          std::fill_n(img.begin() + static_cast<std::ptrdiff_t>(y * w + left), bw, 0.0f);
        break;
      }
      case TransformKind::kHFlip:
        for (std::size_t y = 0; y < h; ++y) std::reverse(img.begin() + static_cast<std::ptrdiff_t>(y * w),
                                                         img.begin() + static_cast<std::ptrdiff_t>((y + 1) * w));
        break;
      case TransformKind::kVFlip:
        for (std::size_t y = 0; y < h / 2; ++y)
          std::swap_ranges(img.begin() + static_cast<std::ptrdiff_t>(y * w),
                           img.begin() + static_cast<std::ptrdiff_t>((y + 1) * w),
                           img.begin() + static_cast<std::ptrdiff_t>((h - 1 - y) * w));
        break;
      case TransformKind::kCrop:
        crop_resize(img, h, w, spec.crop_size, rng);
        break;
    }
  }
  return out;
}

std::vector<TransformSpec> default_transforms(std::size_t num_sources, std::uint64_t seed) {
  constexpr TransformKind order[] = {TransformKind::kBlur, TransformKind::kErase, TransformKind::kHFlip,
                                     TransformKind::kVFlip, TransformKind::kCrop};
  std::vector<TransformSpec> out;
  for (std::size_t k = 0; k < num_sources; ++k) {
    TransformSpec t;
    t.kind = order[k % 5];
    t.seed = derive_seed(seed, "transform", k);
    out.push_back(t);
  }
  return out;
}

std::string to_string(ShardMode mode) { return mode == ShardMode::kDisjoint ? "disjoint" : "overlapping"; }

ShardMode parse_shard_mode(const std::string& text) {
  if (text == "disjoint") return ShardMode::kDisjoint;
  if (text == "overlapping") return ShardMode::kOverlapping;
  throw ConfigError("shard mode must be disjoint|overlapping, got '" + text + "'");
}

std::vector<Shard> shard(const ImageSet& set, std::size_t num_sources, std::uint64_t seed, ShardMode mode,
                         std::span<const TransformSpec> transforms) {
  if (num_sources == 0) throw ConfigError("shard: num_sources must be at least 1");
  std::vector<TransformSpec> specs(transforms.begin(), transforms.end());
  if (specs.empty()) specs = default_transforms(num_sources, seed);
  if (specs.size() != num_sources)
    throw ConfigError("shard: " + std::to_string(specs.size()) + " transforms for " + std::to_string(num_sources) +
                      " sources");

  std::vector<std::vector<std::size_t>> origins(num_sources);
  if (mode == ShardMode::kOverlapping) {
    std::vector<std::size_t> all(set.size());
    std::iota(all.begin(), all.end(), 0);
    origins.assign(num_sources, all);
  } else {
    Rng rng(derive_seed(seed, "shard"));
    int max_label = 0;
    for (int l : set.labels) max_label = std::max(max_label, l);
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label) + 1);
    for (std::size_t i = 0; i < set.size(); ++i) by_class[static_cast<std::size_t>(set.labels[i])].push_back(i);
    // positions: (class, slot within each source's group)
    std::vector<std::pair<std::size_t, std::size_t>> positions;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
      auto& idx = by_class[c];
      shuffle(idx.begin(), idx.end(), rng);
      const std::size_t per_source = idx.size() / num_sources;
      for (std::size_t j = 0; j < per_source; ++j) positions.emplace_back(c, j);
    }
    shuffle(positions.begin(), positions.end(), rng);
    for (std::size_t k = 0; k < num_sources; ++k) {
      origins[k].reserve(positions.size());
      for (const auto& [c, j] : positions) {
        const std::size_t per_source = by_class[c].size() / num_sources;
        origins[k].push_back(by_class[c][k * per_source + j]);
      }
    }
  }
  if (origins[0].empty()) throw ConfigError("shard: too few images for " + std::to_string(num_sources) + " sources");

  std::vector<Shard> out;
  for (std::size_t k = 0; k < num_sources; ++k)
    out.push_back({transform(select(set, origins[k]), specs[k]), std::move(origins[k]), specs[k]});
  return out;
}

void write_shard_manifest(std::ostream& os, std::span<const Shard> shards, std::uint64_t seed, ShardMode mode) {
  nlohmann::json j;
  j["seed"] = seed;
  j["mode"] = to_string(mode);
  j["num_sources"] = shards.size();
  for (std::size_t k = 0; k < shards.size(); ++k) {
    const auto& s = shards[k];
    nlohmann::json t = {{"kind", to_string(s.transform.kind)}, {"seed", s.transform.seed}};
    if (s.transform.kind == TransformKind::kBlur) {
      t["sigma"] = s.transform.sigma;
      t["kernel"] = s.transform.blur_size;
    } else if (s.transform.kind == TransformKind::kErase) {
      t["side_min"] = s.transform.erase_min;
      t["side_max"] = s.transform.erase_max;
    } else if (s.transform.kind == TransformKind::kCrop) {
      t["window"] = s.transform.crop_size;
    }
    j["shards"].push_back({{"source", k}, {"size", s.origin.size()}, {"transform", t}, {"origin", s.origin}});
  }
  os << j.dump(1) << '\n';
}

std::vector<std::size_t> stratified_indices(std::span<const int> labels, std::size_t n, std::uint64_t seed) {
  if (n > labels.size()) throw ConfigError("stratified_indices: asked for " + std::to_string(n) + " of " +
                                           std::to_string(labels.size()));
  int max_label = 0;
  for (int l : labels) max_label = std::max(max_label, l);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label) + 1);
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);

  const double total = static_cast<double>(labels.size());
  std::vector<std::size_t> quota(by_class.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    const double exact = static_cast<double>(n) * static_cast<double>(by_class[c].size()) / total;
    quota[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[c];
    remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](auto& a, auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++quota[remainders[i].second];

  Rng rng(derive_seed(seed, "subset"));
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    shuffle(idx.begin(), idx.end(), rng);
    out.insert(out.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(quota[c]));
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(std::span<const int> labels,
                                                                               double fraction,
                                                                               std::uint64_t seed) {
  if (fraction < 0.0 || fraction >= 1.0) throw ConfigError("split fraction must be in [0, 1)");
  int max_label = 0;
  for (int l : labels) max_label = std::max(max_label, l);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label) + 1);
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  Rng rng(derive_seed(seed, "split"));
  std::vector<std::size_t> first, second;
  for (auto& idx : by_class) {
    shuffle(idx.begin(), idx.end(), rng);
    const auto take = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(idx.size())));
    second.insert(second.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
    first.insert(first.end(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end());
  }
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  return {std::move(first), std::move(second)};
}

ImageSet make_synthetic_glyphs(std::size_t per_class, std::size_t num_classes, std::uint64_t seed) {
  if (per_class == 0 || num_classes < 2) throw ConfigError("synthetic glyphs need per_class >= 1 and >= 2 classes");
  constexpr std::size_t kSide = 28;
  constexpr std::size_t kSegments = 16;
  struct Stroke {
    double p[3][2];
  };
  // Class shapes are fixed; only instance jitter depends on `seed`.
  std::vector<std::vector<Stroke>> protos(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    Rng rng(derive_seed(0x67c9'1e05, "glyph-prototype", c));
    const auto strokes = static_cast<std::size_t>(uniform_int(rng, 2, 4));
    for (std::size_t s = 0; s < strokes; ++s) {
      Stroke st{};
      for (auto& pt : st.p) {
        pt[0] = uniform(rng, -1.0, 1.0);
        pt[1] = uniform(rng, -1.0, 1.0);
      }
      protos[c].push_back(st);
    }
  }

  const std::size_t n = per_class * num_classes;
  ImageSet set{Tensor({n, 1, kSide, kSide}), std::vector<int>(n)};
  Rng rng(derive_seed(seed, "glyph-instance"));
  std::vector<std::array<double, 2>> poly;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % num_classes;
    set.labels[i] = static_cast<int>(c);
    const double angle = uniform(rng, -0.2, 0.2);
    const double scale = 8.5 * uniform(rng, 0.85, 1.1);
    const double cx = 13.5 + uniform(rng, -2.0, 2.0), cy = 13.5 + uniform(rng, -2.0, 2.0);
    const double thick = uniform(rng, 0.6, 1.1);
    const double ca = std::cos(angle), sa = std::sin(angle);
    auto img = set.image(i);
    std::fill(img.begin(), img.end(), 0.0f);
    for (const Stroke& st : protos[c]) {
      double p[3][2];
      for (int k = 0; k < 3; ++k)
        for (int d = 0; d < 2; ++d) p[k][d] = st.p[k][d] + uniform(rng, -0.08, 0.08);
      poly.clear();
      for (std::size_t s = 0; s <= kSegments; ++s) {
        const double t = static_cast<double>(s) / kSegments;
        const double u = 1 - t;
        const double x = u * u * p[0][0] + 2 * u * t * p[1][0] + t * t * p[2][0];
        const double y = u * u * p[0][1] + 2 * u * t * p[1][1] + t * t * p[2][1];
        poly.push_back({cx + scale * (ca * x - sa * y), cy + scale * (sa * x + ca * y)});
      }
      for (std::size_t py = 0; py < kSide; ++py)
        for (std::size_t px = 0; px < kSide; ++px) {
          const double qx = static_cast<double>(px), qy = static_cast<double>(py);
          double best = 1e9;
          for (std::size_t s = 0; s + 1 < poly.size(); ++s) {
            const double ax = poly[s][0], ay = poly[s][1];
            const double dx = poly[s + 1][0] - ax, dy = poly[s + 1][1] - ay;
            const double len2 = dx * dx + dy * dy;
            double t = len2 > 0 ? ((qx - ax) * dx + (qy - ay) * dy) / len2 : 0.0;
            t = std::clamp(t, 0.0, 1.0);
            const double ex = ax + t * dx - qx, ey = ay + t * dy - qy;
            best = std::min(best, ex * ex + ey * ey);
          }
          const double v = std::clamp(1.0 + thick - std::sqrt(best), 0.0, 1.0);
          float& dst = img[py * kSide + px];
          dst = std::max(dst, static_cast<float>(v));
        }
    }
    for (auto& v : img) v = std::clamp(v + static_cast<float>(uniform(rng, -0.05, 0.05)), 0.0f, 1.0f);
  }
  return set;
}

}  // namespace fpl
