#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>

#include "fpl/data.hpp"
#include "fpl/errors.hpp"
#include <json.hpp>
#include "support.hpp"

using namespace fpl;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = FPL_FIXTURE_DIR;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("fpl-test-" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

IngestionError::Kind ingestion_kind(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const IngestionError& e) {
    return e.kind();
  }
  FAIL("expected IngestionError");
  return IngestionError::Kind::kOpen;
}

ImageSet random_set(std::size_t n, std::size_t side, std::uint64_t seed) {
  Rng rng(seed);
  ImageSet s{Tensor({n, 1, side, side}), std::vector<int>(n)};
  for (auto& v : s.images.data()) v = static_cast<float>(uniform01(rng));
  for (std::size_t i = 0; i < n; ++i) s.labels[i] = static_cast<int>(i % 7);
  return s;
}

}  // namespace

TEST_CASE("IDX fixture from the independent writer") {
  for (const char* suffix : {"", ".gz"}) {
    const auto set = load_idx(kFixtures / (std::string("two-images-idx3-ubyte") + suffix),
                              kFixtures / (std::string("two-labels-idx1-ubyte") + suffix));
    REQUIRE(set.size() == 2);
    CHECK(set.images.shape() == Shape{2, 1, 3, 4});
    CHECK(set.labels == std::vector<int>{7, 61});
    for (std::size_t i = 0; i < 12; ++i) {
      CHECK(set.image(0)[i] == static_cast<float>(20 * i) / 255.0f);
      CHECK(set.image(1)[i] == static_cast<float>(255 - 20 * i) / 255.0f);
    }
  }
}

TEST_CASE("IDX errors carry their kind and offset") {
  const auto images = kFixtures / "two-images-idx3-ubyte";
  const auto labels = kFixtures / "two-labels-idx1-ubyte";
  CHECK(ingestion_kind([&] { load_idx(images, images); }) == IngestionError::Kind::kWrongMagic);
  CHECK(ingestion_kind([&] { load_idx(labels, labels); }) == IngestionError::Kind::kWrongMagic);
  CHECK(ingestion_kind([&] { load_idx(images, scratch("missing")); }) == IngestionError::Kind::kOpen);

  const auto bytes = slurp(images);
  const auto truncated = scratch("truncated-idx3");
  spit(truncated, bytes.substr(0, bytes.size() - 5));
  try {
    load_idx(truncated, labels);
    FAIL("expected truncation error");
  } catch (const IngestionError& e) {
    CHECK(e.kind() == IngestionError::Kind::kTruncated);
    CHECK(e.offset() == bytes.size() - 5);
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }

  auto lab = slurp(labels);
  lab[7] = 3;  // declared count 3, two labels present
  const auto miscounted = scratch("miscounted-idx1");
  spit(miscounted, lab + std::string(1, '\0'));
  CHECK(ingestion_kind([&] { load_idx(images, miscounted); }) == IngestionError::Kind::kDimensionMismatch);
}

TEST_CASE("IDX round trip is byte-identical") {
  const auto set = load_idx(kFixtures / "two-images-idx3-ubyte", kFixtures / "two-labels-idx1-ubyte");
  const auto img = scratch("rt-images-idx3-ubyte"), lab = scratch("rt-labels-idx1-ubyte");
  write_idx(set, img, lab);
  CHECK(slurp(img) == slurp(kFixtures / "two-images-idx3-ubyte"));
  CHECK(slurp(lab) == slurp(kFixtures / "two-labels-idx1-ubyte"));

  const auto glyphs = make_synthetic_glyphs(2, 62, 4);
  const auto gi = scratch("g-images.gz"), gl = scratch("g-labels.gz");
  write_idx(glyphs, gi, gl);
  const auto back = load_idx(gi, gl);
  const auto gi2 = scratch("g2-images"), gl2 = scratch("g2-labels");
  write_idx(back, gi2, gl2);
  const auto again = load_idx(gi2, gl2);
  CHECK(again.images.storage() == back.images.storage());
  CHECK(again.labels == glyphs.labels);

  const std::size_t want[] = {3, 0, 3};
  const auto sub = load_idx_subset(gi, gl, want);
  CHECK(sub.images.storage() == select(back, want).images.storage());
  CHECK(sub.labels == select(back, want).labels);
  CHECK(load_idx_labels(gl) == glyphs.labels);
}

TEST_CASE("EMNIST discovery reports missing files") {
  CHECK(ingestion_kind([&] { find_emnist(scratch("no-emnist-here")); }) == IngestionError::Kind::kOpen);
}

TEST_CASE("flips are involutions") {
  const auto s = random_set(4, 28, 1);
  for (auto kind : {TransformKind::kHFlip, TransformKind::kVFlip}) {
    TransformSpec spec{.kind = kind};
    const auto once = transform(s, spec);
    CHECK(once.images.storage() != s.images.storage());
    CHECK(transform(once, spec).images.storage() == s.images.storage());
  }
  ImageSet tiny{Tensor({1, 1, 2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6}), {0}};
  CHECK(transform(tiny, {.kind = TransformKind::kHFlip}).images.storage() == FloatBuffer{3, 2, 1, 6, 5, 4});
  CHECK(transform(tiny, {.kind = TransformKind::kVFlip}).images.storage() == FloatBuffer{4, 5, 6, 1, 2, 3});
}

TEST_CASE("blur keeps the mass of an interior image") {
  ImageSet s{Tensor({1, 1, 28, 28}), {0}};
  Rng rng(3);
  for (std::size_t y = 10; y < 18; ++y)
    for (std::size_t x = 9; x < 19; ++x) s.image(0)[y * 28 + x] = static_cast<float>(uniform01(rng));
  const auto b = transform(s, {.kind = TransformKind::kBlur});
  double before = 0, after = 0;
  for (float v : s.image(0)) before += v;
  for (float v : b.image(0)) after += v;
  CHECK(std::abs(before - after) < 1e-4);
  CHECK(b.images.storage() != s.images.storage());
}

TEST_CASE("erase with a full box zeroes the image") {
  const auto s = random_set(3, 28, 2);
  const auto e = transform(s, {.kind = TransformKind::kErase, .erase_min = 28, .erase_max = 28});
  for (float v : e.images.data()) CHECK(v == 0.0f);
  const auto partial = transform(s, {.kind = TransformKind::kErase, .seed = 5});
  for (std::size_t i = 0; i < 3; ++i) {
    const auto zeros = std::count(partial.image(i).begin(), partial.image(i).end(), 0.0f);
    CHECK(zeros >= 36);
    CHECK(zeros <= 144);
  }
}

TEST_CASE("transforms map [0,1] to [0,1], are seeded, and validate parameters") {
  const auto s = random_set(6, 28, 4);
  for (const auto& spec : default_transforms(5, 11)) {
    const auto t = transform(s, spec);
    CHECK(t.images.shape() == s.images.shape());
    CHECK(t.labels == s.labels);
    for (float v : t.images.data()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
    CHECK(transform(s, spec).images.storage() == t.images.storage());
  }
  const auto c1 = transform(s, {.kind = TransformKind::kCrop, .seed = 1});
  const auto c2 = transform(s, {.kind = TransformKind::kCrop, .seed = 2});
  CHECK(c1.images.storage() != c2.images.storage());
  CHECK(transform(s, {.kind = TransformKind::kCrop, .crop_size = 28}).images.storage() == s.images.storage());

  CHECK_THROWS_AS(transform(s, {.kind = TransformKind::kBlur, .blur_size = 4}), ConfigError);
  CHECK_THROWS_AS(transform(s, {.kind = TransformKind::kBlur, .sigma = 0.0}), ConfigError);
  CHECK_THROWS_AS(transform(s, {.kind = TransformKind::kErase, .erase_min = 9, .erase_max = 8}), ConfigError);
  CHECK_THROWS_AS(transform(s, {.kind = TransformKind::kCrop, .crop_size = 29}), ConfigError);
  CHECK_THROWS_AS(parse_transform_kind("rotate"), ConfigError);
}

TEST_CASE("sharding") {
  auto s = random_set(70, 28, 8);  // 10 images per class, 7 classes
  SUBCASE("one source covers the input") {
    const auto sh = shard(s, 1, 3);
    REQUIRE(sh.size() == 1);
    auto o = sh[0].origin;
    std::sort(o.begin(), o.end());
    std::vector<std::size_t> all(70);
    std::iota(all.begin(), all.end(), 0);
    CHECK(o == all);
    CHECK(sh[0].set.images.storage() == transform(select(s, sh[0].origin), sh[0].transform).images.storage());
  }
  SUBCASE("disjoint, equal sizes, label aligned, histogram preserved") {
    const auto sh = shard(s, 5, 3);
    REQUIRE(sh.size() == 5);
    std::set<std::size_t> seen;
    std::vector<int> union_labels;
    for (const auto& x : sh) {
      CHECK(x.set.size() == sh[0].set.size());
      CHECK(x.set.labels == sh[0].set.labels);
      for (auto i : x.origin) CHECK(seen.insert(i).second);
      union_labels.insert(union_labels.end(), x.set.labels.begin(), x.set.labels.end());
    }
    CHECK(label_histogram(union_labels, 7) == label_histogram(s.labels, 7));
    CHECK(sh[0].transform.kind == TransformKind::kBlur);
    CHECK(sh[4].transform.kind == TransformKind::kCrop);
  }
  SUBCASE("remainders are discarded") {
    const auto sh = shard(s, 3, 3);
    CHECK(sh[0].set.size() == 7 * 3);
  }
  SUBCASE("same seed, same assignment") {
    const auto a = shard(s, 4, 21), b = shard(s, 4, 21), c = shard(s, 4, 22);
    for (std::size_t k = 0; k < 4; ++k) CHECK(a[k].origin == b[k].origin);
    CHECK(a[0].origin != c[0].origin);
  }
  SUBCASE("overlapping views") {
    const auto sh = shard(s, 3, 3, ShardMode::kOverlapping);
    for (const auto& x : sh) CHECK(x.set.size() == 70);
    CHECK(sh[0].set.images.storage() != sh[1].set.images.storage());
  }
  SUBCASE("manifest") {
    const auto sh = shard(s, 2, 3);
    std::stringstream ss;
    write_shard_manifest(ss, sh, 3, ShardMode::kDisjoint);
    const auto j = nlohmann::json::parse(ss.str());
    CHECK(j["mode"] == "disjoint");
    CHECK(j["num_sources"] == 2);
  }
  CHECK_THROWS_AS(shard(s, 0, 1), ConfigError);
  CHECK_THROWS_AS(shard(s, 11, 1), ConfigError);
}

TEST_CASE("stratified selection") {
  std::vector<int> labels;
  for (int c = 0; c < 4; ++c) labels.insert(labels.end(), 25 * (c + 1), c);
  const auto idx = stratified_indices(labels, 50, 3);
  CHECK(idx.size() == 50);
  std::vector<int> picked;
  for (auto i : idx) picked.push_back(labels[i]);
  CHECK(label_histogram(picked, 4) == std::vector<std::size_t>{5, 10, 15, 20});
  CHECK(std::set<std::size_t>(idx.begin(), idx.end()).size() == 50);

  const auto [first, second] = stratified_split(labels, 0.1, 5);
  CHECK(first.size() + second.size() == labels.size());
  std::vector<int> val;
  for (auto i : second) val.push_back(labels[i]);
  CHECK(label_histogram(val, 4) == std::vector<std::size_t>{3, 5, 8, 10});
  CHECK_THROWS_AS(stratified_split(labels, 1.0, 5), ConfigError);
}

TEST_CASE("synthetic glyphs") {
  const auto g = make_synthetic_glyphs(3, 62, 1);
  CHECK(g.size() == 186);
  CHECK(g.images.shape() == Shape{186, 1, 28, 28});
  CHECK(label_histogram(g.labels, 62) == std::vector<std::size_t>(62, 3));
  for (float v : g.images.data()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  CHECK(make_synthetic_glyphs(3, 62, 1).images.storage() == g.images.storage());
  CHECK(make_synthetic_glyphs(3, 62, 2).images.storage() != g.images.storage());
}
