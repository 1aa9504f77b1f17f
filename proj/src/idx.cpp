#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>

#include "fpl/data.hpp"
#include "fpl/errors.hpp"

namespace fpl {
namespace {

using Kind = IngestionError::Kind;

// Sequential reader over a gzip or raw file with byte-offset tracking.
class IdxReader {
 public:
  explicit IdxReader(const std::filesystem::path& path) : path_(path.string()) {
    file_ = gzopen(path_.c_str(), "rb");
    if (!file_) throw IngestionError(Kind::kOpen, 0, "cannot open '" + path_ + "'");
    gzbuffer(file_, 1 << 20);
  }
  ~IdxReader() {
    if (file_) gzclose(file_);
  }
  IdxReader(const IdxReader&) = delete;
  IdxReader& operator=(const IdxReader&) = delete;

  std::uint64_t offset() const { return offset_; }

  std::uint32_t u32(const char* what) {
    std::array<unsigned char, 4> b{};
    read(b.data(), 4, what);
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
  }

  void read(unsigned char* dst, std::size_t n, const char* what) {
    std::size_t done = 0;
    while (done < n) {
      const auto chunk = static_cast<unsigned>(std::min<std::size_t>(n - done, 1u << 30));
      const int got = gzread(file_, dst + done, chunk);
      if (got <= 0) break;
      done += static_cast<std::size_t>(got);
    }
    if (done < n)
      throw IngestionError(Kind::kTruncated, offset_ + done,
                           "'" + path_ + "' truncated while reading " + what + ": expected " + std::to_string(n) +
                               " bytes, got " + std::to_string(done));
    offset_ += n;
  }

  void expect_magic(std::uint32_t magic) {
    const std::uint32_t got = u32("magic number");
    if (got != magic) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "wrong magic 0x%08x, expected 0x%08x", got, magic);
      throw IngestionError(Kind::kWrongMagic, 0, "'" + path_ + "': " + buf);
    }
  }

  const std::string& path() const { return path_; }

 private:
  std::string path_;
  gzFile file_ = nullptr;
  std::uint64_t offset_ = 0;
};

struct ImageHeader {
  std::uint32_t count, rows, cols;
};

ImageHeader read_image_header(IdxReader& r) {
  r.expect_magic(kIdxImageMagic);
  ImageHeader h{};
  h.count = r.u32("image count");
  h.rows = r.u32("row count");
  h.cols = r.u32("column count");
  if (h.rows == 0 || h.cols == 0)
    throw IngestionError(Kind::kDimensionMismatch, 8, "'" + r.path() + "': zero image dimension");
  return h;
}

std::uint32_t read_label_header(IdxReader& r) {
  r.expect_magic(kIdxLabelMagic);
  return r.u32("label count");
}

void check_counts(const ImageHeader& h, std::uint32_t labels, const std::filesystem::path& labels_path) {
  if (h.count != labels)
    throw IngestionError(Kind::kDimensionMismatch, 4,
                         "'" + labels_path.string() + "' holds " + std::to_string(labels) + " labels for " +
                             std::to_string(h.count) + " images");
}

void write_u32(gzFile f, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  gzwrite(f, b, 4);
}

gzFile open_for_write(const std::filesystem::path& path) {
  const bool gz = path.extension() == ".gz";
  gzFile f = gzopen(path.string().c_str(), gz ? "wb9" : "wbT");
  if (!f) throw IngestionError(Kind::kOpen, 0, "cannot create '" + path.string() + "'");
  return f;
}

}  // namespace

std::vector<int> load_idx_labels(const std::filesystem::path& labels_path) {
  IdxReader r(labels_path);
  const std::uint32_t n = read_label_header(r);
  std::vector<unsigned char> raw(n);
  r.read(raw.data(), n, "labels");
  return {raw.begin(), raw.end()};
}

ImageSet load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  IdxReader ir(images_path);
  const ImageHeader h = read_image_header(ir);
  IdxReader lr(labels_path);
  check_counts(h, read_label_header(lr), labels_path);
  if (h.count == 0) throw IngestionError(Kind::kDimensionMismatch, 4, "'" + images_path.string() + "' is empty");

  const std::size_t total = std::size_t{h.count} * h.rows * h.cols;
  std::vector<unsigned char> raw(total);
  ir.read(raw.data(), total, "pixels");
  std::vector<unsigned char> lab(h.count);
  lr.read(lab.data(), h.count, "labels");

  ImageSet set{Tensor({h.count, 1, h.rows, h.cols}), {lab.begin(), lab.end()}};
  auto px = set.images.data();
  for (std::size_t i = 0; i < total; ++i) px[i] = static_cast<float>(raw[i]) / 255.0f;
  return set;
}

ImageSet load_idx_subset(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                         std::span<const std::size_t> indices) {
  if (indices.empty()) throw ConfigError("load_idx_subset: empty index list");
  const auto labels = load_idx_labels(labels_path);
  IdxReader ir(images_path);
  const ImageHeader h = read_image_header(ir);
  check_counts(h, static_cast<std::uint32_t>(labels.size()), labels_path);

  std::multimap<std::size_t, std::size_t> wanted;  // file index -> output slot
  for (std::size_t slot = 0; slot < indices.size(); ++slot) {
    if (indices[slot] >= h.count)
      throw ConfigError("load_idx_subset: index " + std::to_string(indices[slot]) + " >= " + std::to_string(h.count));
    wanted.emplace(indices[slot], slot);
  }
  const std::size_t px = std::size_t{h.rows} * h.cols;
  ImageSet set{Tensor({indices.size(), 1, h.rows, h.cols}), std::vector<int>(indices.size())};
  std::vector<unsigned char> buf(px);
  auto it = wanted.begin();
  for (std::size_t i = 0; it != wanted.end(); ++i) {
    ir.read(buf.data(), px, "pixels");
    for (; it != wanted.end() && it->first == i; ++it) {
      auto dst = set.image(it->second);
      for (std::size_t p = 0; p < px; ++p) dst[p] = static_cast<float>(buf[p]) / 255.0f;
      set.labels[it->second] = labels[i];
    }
  }
  return set;
}

void write_idx(const ImageSet& set, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  gzFile f = open_for_write(images_path);
  write_u32(f, kIdxImageMagic);
  write_u32(f, static_cast<std::uint32_t>(set.size()));
  write_u32(f, static_cast<std::uint32_t>(set.height()));
  write_u32(f, static_cast<std::uint32_t>(set.width()));
  std::vector<unsigned char> raw(set.images.size());
  auto px = set.images.data();
  for (std::size_t i = 0; i < raw.size(); ++i)
    raw[i] = static_cast<unsigned char>(std::lround(std::clamp(px[i], 0.0f, 1.0f) * 255.0f));
  gzwrite(f, raw.data(), static_cast<unsigned>(raw.size()));
  gzclose(f);

  gzFile l = open_for_write(labels_path);
  write_u32(l, kIdxLabelMagic);
  write_u32(l, static_cast<std::uint32_t>(set.size()));
  std::vector<unsigned char> lab(set.labels.begin(), set.labels.end());
  gzwrite(l, lab.data(), static_cast<unsigned>(lab.size()));
  gzclose(l);
}

EmnistFiles find_emnist(const std::filesystem::path& root, const std::string& split) {
  auto locate = [&](const std::string& stem) {
    for (const auto& candidate : {root / stem, root / (stem + ".gz"), root / "gzip" / (stem + ".gz"),
                                  root / "gzip" / stem})
      if (std::filesystem::exists(candidate)) return candidate;
    throw IngestionError(Kind::kOpen, 0, "EMNIST file '" + stem + "' not found under '" + root.string() + "'");
  };
  const std::string prefix = "emnist-" + split + "-";
  return {locate(prefix + "train-images-idx3-ubyte"), locate(prefix + "train-labels-idx1-ubyte"),
          locate(prefix + "test-images-idx3-ubyte"), locate(prefix + "test-labels-idx1-ubyte")};
}

void transpose_images(ImageSet& set) {
  const std::size_t h = set.height(), w = set.width();
  if (h != w) throw ConfigError("transpose_images: images must be square");
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto img = set.image(i);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = y + 1; x < w; ++x) std::swap(img[y * w + x], img[x * w + y]);
  }
}

}  // namespace fpl
