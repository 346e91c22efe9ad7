#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "semalign/errors.hpp"
#include "semalign/similarity.hpp"

using namespace semalign;
using semalign::testing::naive_similarity;
using semalign::testing::random_tensor;

TEST_CASE("similarity volume matches the brute-force oracle on 50 small grids") {
  double worst = 0.0;
  for (int s = 0; s < 50; ++s) {
    Rng rng(2000 + s);
    const int h = uniform_int(rng, 1, 12), w = uniform_int(rng, 1, 12), c = uniform_int(rng, 1, 8);
    const int r = uniform_int(rng, 1, 4);
    const Tensor a = random_tensor({c, h, w}, rng), b = random_tensor({c, h, w}, rng);
    const Tensor got = similarity_volume(normalize_features(Var(a)), normalize_features(Var(b)), r).scores.value();
    const Tensor want = naive_similarity(a, b, r);
    REQUIRE(got.same_shape(want));
    for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("every score vector has unit norm and the self match is the largest") {
  Rng rng(11);
  const FeatureMap f = normalize_features(Var(random_tensor({6, 7, 8}, rng)));
  const SimilarityVolume v = self_similarity(f, 2);
  CHECK(v.kind == VolumeKind::kSelf);
  CHECK(v.candidates() == 25);
  const Tensor& s = v.scores.value();
  for (std::size_t i = 0; i < s.plane(); ++i) {
    double n2 = 0.0, best = -2.0;
    for (int o = 0; o < 25; ++o) {
      n2 += s[o * s.plane() + i] * s[o * s.plane() + i];
      best = std::max(best, s[o * s.plane() + i]);
    }
    CHECK(n2 == doctest::Approx(1.0));
    CHECK(s[12 * s.plane() + i] == doctest::Approx(best));
  }
}

TEST_CASE("zero features give an all-zero score vector") {
  Tensor a = Tensor::chw(3, 4, 4);
  Rng rng(12);
  const FeatureMap fa = normalize_features(Var(a)), fb = normalize_features(Var(random_tensor({3, 4, 4}, rng)));
  const SimilarityVolume v = similarity_volume(fa, fb, 1);
  for (double s : v.scores.value().values()) CHECK(s == 0.0);
}

TEST_CASE("similarity volume argument errors") {
  Rng rng(13);
  const FeatureMap a = normalize_features(Var(random_tensor({3, 4, 4}, rng)));
  const FeatureMap b = normalize_features(Var(random_tensor({3, 4, 5}, rng)));
  CHECK_THROWS_AS(similarity_volume(a, b, 1), ShapeError);
  CHECK_THROWS_AS(similarity_volume(a, a, 0), WindowError);
}

TEST_CASE("encoder output size follows its strides") {
  Rng rng(14);
  EncoderSpec spec;
  spec.widths = {4, 6, 8};
  spec.strides = {1, 2, 2};
  const Encoder enc(spec, rng);
  CHECK(spec.downsampling() == 4);
  const FeatureMap f = extract_features(Var(random_tensor({3, 16, 12}, rng, 0, 1)), enc);
  CHECK(f.channels() == 8);
  CHECK(f.height() == 4);
  CHECK(f.width() == 3);
}
