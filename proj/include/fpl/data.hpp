#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fpl/tensor.hpp"

namespace fpl {

/// Grayscale images [N,1,H,W] in [0,1] with integer labels.
struct ImageSet {
  Tensor images;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
  std::size_t pixels() const { return height() * width(); }
  std::span<const float> image(std::size_t i) const { return images.data().subspan(i * pixels(), pixels()); }
  std::span<float> image(std::size_t i) { return images.data().subspan(i * pixels(), pixels()); }
};

/// Copies the listed images (in order) into a new set.
ImageSet select(const ImageSet& set, std::span<const std::size_t> indices);
/// Appends b to a; image sizes must agree.
ImageSet concatenate(const ImageSet& a, const ImageSet& b);
/// Per-class counts, indexed by label.
std::vector<std::size_t> label_histogram(std::span<const int> labels, std::size_t num_classes);

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Big-endian IDX reader (gzip or raw; detected from content). Pixels are
/// scaled by 1/255. Throws IngestionError with the failing byte offset.
ImageSet load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Loads only the images at `indices` (ascending or not) from an IDX pair.
ImageSet load_idx_subset(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                         std::span<const std::size_t> indices);

std::vector<int> load_idx_labels(const std::filesystem::path& labels_path);

/// Writes the pair back as IDX. Gzip-compressed when the path ends in ".gz".
/// Pixels are rounded to the nearest byte.
void write_idx(const ImageSet& set, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

enum class TransformKind { kBlur, kErase, kHFlip, kVFlip, kCrop };

std::string to_string(TransformKind kind);
TransformKind parse_transform_kind(const std::string& text);

struct TransformSpec {
  TransformKind kind = TransformKind::kHFlip;
  double sigma = 1.0;              // blur
  std::size_t blur_size = 5;       // blur kernel side, odd
  std::size_t erase_min = 6;       // erase box side range, pixels
  std::size_t erase_max = 12;
  std::size_t crop_size = 20;      // crop window side, pixels
  std::uint64_t seed = 0;
};

/// Throws ConfigError when parameters fall outside their valid ranges for
/// images of the given size.
void validate(const TransformSpec& spec, std::size_t height, std::size_t width);

/// Applies the transform to every image. Randomness (erase, crop) draws from
/// spec.seed only.
ImageSet transform(const ImageSet& set, const TransformSpec& spec);

/// The five views in fixed order (blur, erase, hflip, vflip, crop), cycled
/// when there are more sources, each with its own derived seed.
std::vector<TransformSpec> default_transforms(std::size_t num_sources, std::uint64_t seed);

enum class ShardMode {
  kDisjoint,     // each image goes to at most one source
  kOverlapping,  // every source sees every image through its own transform
};

std::string to_string(ShardMode mode);
ShardMode parse_shard_mode(const std::string& text);

struct Shard {
  ImageSet set;                     // transformed
  std::vector<std::size_t> origin;  // index into the input set, per image
  TransformSpec transform;
};

/// Splits `set` across sources and applies transform k to shard k.
///
/// Disjoint mode is class-aligned: every class is split into equal groups,
/// one per source, and all shards share one shuffled position order, so
/// position p carries the same label in every shard. Per-class remainders
/// are discarded. Shards therefore have identical sizes.
std::vector<Shard> shard(const ImageSet& set, std::size_t num_sources, std::uint64_t seed,
                         ShardMode mode = ShardMode::kDisjoint, std::span<const TransformSpec> transforms = {});

/// JSON manifest of shard assignments (origins, transforms, seed, mode).
void write_shard_manifest(std::ostream& os, std::span<const Shard> shards, std::uint64_t seed, ShardMode mode);

/// Proportionally stratified random subset of `n` images (largest-remainder
/// allocation per class).
std::vector<std::size_t> stratified_indices(std::span<const int> labels, std::size_t n, std::uint64_t seed);

/// Class-balanced seeded split; returns (first, second) index lists with
/// round(fraction * count_c) of each class in `second`.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(std::span<const int> labels,
                                                                               double fraction,
                                                                               std::uint64_t seed);

/// Procedural 62-class handwriting stand-in: each class is a fixed set of
/// strokes; instances get random affine jitter, stroke width and noise.
ImageSet make_synthetic_glyphs(std::size_t per_class, std::size_t num_classes, std::uint64_t seed);

struct EmnistFiles {
  std::filesystem::path train_images, train_labels, test_images, test_labels;
};

/// Locates emnist-<split>-{train,test}-{images-idx3,labels-idx1}-ubyte[.gz]
/// under `root`. Throws IngestionError(kOpen) if any is missing.
EmnistFiles find_emnist(const std::filesystem::path& root, const std::string& split = "byclass");

/// EMNIST stores images transposed; flips them into reading orientation.
void transpose_images(ImageSet& set);

}  // namespace fpl
