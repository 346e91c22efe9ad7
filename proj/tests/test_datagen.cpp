#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "semalign/datagen.hpp"
#include "semalign/errors.hpp"
#include "semalign/image.hpp"

using namespace semalign;
namespace fs = std::filesystem;

namespace {

DataConfig small_config() {
  DataConfig c;
  c.image_size = 24;
  c.pair.occlusion.probability = 0.5;
  return c;
}

bool same_tensor(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("pair stream is a pure function of seed and index") {
  const PairGenerator g1(small_config(), 42), g2(small_config(), 42), g3(small_config(), 43);
  for (std::uint64_t i : {0u, 5u, 17u}) {
    const SamplePair a = g1.at(i), b = g2.at(i), c = g3.at(i);
    CHECK(same_tensor(a.source, b.source));
    CHECK(same_tensor(a.target, b.target));
    CHECK(same_tensor(a.gt.flow.coords().value(), b.gt.flow.coords().value()));
    CHECK_FALSE(same_tensor(a.source, c.source));
  }
  // Reading index 5 first must not change index 0.
  const SamplePair late = g1.at(5);
  CHECK(same_tensor(g1.at(0).target, g2.at(0).target));
}

TEST_CASE("target landmarks are the source landmarks under the warp") {
  const PairGenerator gen(small_config(), 7);
  for (int i = 0; i < 20; ++i) {
    const SamplePair p = gen.at(i);
    REQUIRE(p.landmarks_s.size() == p.landmarks_t.size());
    CHECK(p.landmarks_s.size() >= 5u);
    for (std::size_t k = 0; k < p.landmarks_s.size(); ++k) {
      CHECK((p.gt.warp.apply(p.landmarks_s[k]) - p.landmarks_t[k]).norm() < 1e-12);
    }
    CHECK(p.gt.valid_fraction() >= small_config().pair.validity_floor);
    for (double v : p.source.values()) CHECK((v >= 0.0 && v <= 1.0));
  }
}

TEST_CASE("target image is the source resampled through the inverse warp") {
  DataConfig c = small_config();
  c.pair.photometric = {0.0, 0.0, 0.0};
  c.pair.occlusion.probability = 0.0;
  const PairGenerator gen(c, 8);
  for (int i = 0; i < 5; ++i) {
    const SamplePair p = gen.at(i);
    const int n = c.image_size;
    double worst = 0.0;
    for (int y = 2; y < n - 2; y += 3) {
      for (int x = 2; x < n - 2; x += 3) {
        const Vec2 q(to_normalized(x, n), to_normalized(y, n));
        const Vec2 src = p.gt.warp.inverse(q);
        if (!in_unit_box(src)) continue;
        for (int ch = 0; ch < 3; ++ch) {
          worst = std::max(worst, std::abs(p.target.at(ch, y, x) - sample_channel(p.source, ch, src)));
        }
      }
    }
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("semantic pairs share geometry but not appearance") {
  DataConfig c = small_config();
  c.semantic = true;
  c.pair.occlusion.probability = 0.0;
  const PairGenerator sem(c, 9);
  c.semantic = false;
  const PairGenerator plain(c, 9);
  const SamplePair a = sem.at(0), b = plain.at(0);
  CHECK(same_tensor(a.source, b.source));
  CHECK(a.landmarks_t == b.landmarks_t);
  CHECK_FALSE(same_tensor(a.target, b.target));
}

TEST_CASE("occluded pairs carry a box and a matching pixel mask") {
  DataConfig c = small_config();
  c.pair.occlusion.probability = 1.0;
  const PairGenerator gen(c, 10);
  for (int i = 0; i < 5; ++i) {
    const SamplePair p = gen.at(i);
    REQUIRE(p.occlusion.has_value());
    const OcclusionBox& b = *p.occlusion;
    CHECK(b.x1 > b.x0);
    CHECK(b.y1 > b.y0);
    const int n = c.image_size;
    REQUIRE(p.occlusion_mask.size() == static_cast<std::size_t>(n * n));
    int on = 0;
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        const bool inside = x >= b.x0 && x < b.x1 && y >= b.y0 && y < b.y1;
        CHECK(static_cast<bool>(p.occlusion_mask[y * n + x]) == inside);
        on += inside;
      }
    }
    const double frac = static_cast<double>(on) / (n * n);
    CHECK(frac >= c.pair.occlusion.min_fraction * 0.5);
    CHECK(frac <= c.pair.occlusion.max_fraction * 2.0);
  }
}

TEST_CASE("split of 100 ids is 70/20/10, disjoint and complete") {
  std::vector<std::uint64_t> ids(100);
  for (std::uint64_t i = 0; i < 100; ++i) ids[i] = i;
  const Manifest m = split_dataset(ids, {0.7, 0.2, 0.1}, 5);
  CHECK(m.train.size() == 70u);
  CHECK(m.val.size() == 20u);
  CHECK(m.test.size() == 10u);
  std::set<std::uint64_t> all(m.train.begin(), m.train.end());
  all.insert(m.val.begin(), m.val.end());
  all.insert(m.test.begin(), m.test.end());
  CHECK(all.size() == 100u);
  const Manifest again = split_dataset(ids, {0.7, 0.2, 0.1}, 5);
  CHECK(again.test == m.test);
  CHECK_THROWS_AS(split_dataset(ids, {0.7, 0.2, 0.2}, 5), ConfigError);
  CHECK_THROWS_AS(split_dataset({}, {0.7, 0.2, 0.1}, 5), DataError);
}

TEST_CASE("shape spec validation") {
  for (int cat = 0; cat < kNumCategories; ++cat) CHECK_NOTHROW(default_shape_spec(cat, 32, 1).validate());
  ShapeSpec s = default_shape_spec(0, 32, 1);
  s.vertex_count = 7;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = default_shape_spec(1, 32, 1);
  s.landmark_count = 4;
  s.vertex_count = 8;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = default_shape_spec(2, 4, 1);
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.image_size = 32;
  s.category = 5;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("generated shapes keep their landmarks inside the image") {
  for (int cat = 0; cat < kNumCategories; ++cat) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const ShapeInstance s = generate_shape(default_shape_spec(cat, 32, seed), seed);
      CHECK(s.image.channels() == 3);
      CHECK(s.image.height() == 32);
      for (const Vec2& p : s.landmarks) CHECK(in_unit_box(p));
    }
  }
}

TEST_CASE("flow files round trip at float32 precision") {
  Rng rng(11);
  Tensor f = Tensor::chw(2, 5, 7);
  for (double& v : f.values()) v = uniform(rng, -1.5, 1.5);
  const fs::path path = fs::temp_directory_path() / "semalign_test_flow.flo";
  write_flow(path, f);
  CHECK(fs::file_size(path) == 16u + 2 * 5 * 7 * 4);
  const Tensor g = read_flow(path);
  REQUIRE(g.same_shape(f));
  for (std::size_t i = 0; i < f.size(); ++i) CHECK(g[i] == static_cast<double>(static_cast<float>(f[i])));
  fs::resize_file(path, 20);
  CHECK_THROWS_AS(read_flow(path), DataError);
  fs::remove(path);
}

TEST_CASE("dataset directory round trip") {
  const auto pairs = generate_dataset(small_config(), 12, 10, {0.7, 0.2, 0.1});
  const fs::path dir = fs::temp_directory_path() / "semalign_test_dataset";
  fs::remove_all(dir);
  write_dataset(dir, pairs);
  CHECK(fs::exists(dir / "manifest.jsonl"));
  const auto back = read_dataset(dir);
  REQUIRE(back.size() == pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const SamplePair &a = pairs[i], &b = back[i];
    CHECK(a.id == b.id);
    CHECK(a.split == b.split);
    CHECK(a.category == b.category);
    CHECK(a.occlusion.has_value() == b.occlusion.has_value());
    double img = 0.0, flow = 0.0, lm = 0.0;
    for (std::size_t j = 0; j < a.target.size(); ++j) img = std::max(img, std::abs(a.target[j] - b.target[j]));
    const Tensor &fa = a.gt.flow.coords().value(), &fb = b.gt.flow.coords().value();
    for (std::size_t j = 0; j < fa.size(); ++j) flow = std::max(flow, std::abs(fa[j] - fb[j]));
    for (std::size_t k = 0; k < a.landmarks_t.size(); ++k) lm = std::max(lm, (a.landmarks_t[k] - b.landmarks_t[k]).norm());
    CHECK(img <= 0.5 / 255.0 + 1e-9);
    CHECK(flow < 1e-6);
    CHECK(lm < 1e-9);
    CHECK((a.gt.warp.apply({0.3, 0.2}) - b.gt.warp.apply({0.3, 0.2})).norm() < 1e-9);
  }
  int train = 0;
  for (const SamplePair& p : back) train += p.split == Split::kTrain;
  CHECK(train == 7);
  fs::remove_all(dir);
  CHECK_THROWS_AS(read_dataset(dir), DataError);
}
