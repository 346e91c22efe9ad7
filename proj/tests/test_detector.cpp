#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "semalign/detector.hpp"
#include "semalign/errors.hpp"
#include "semalign/ops.hpp"

using namespace semalign;
using semalign::testing::random_tensor;

namespace {

LandmarkMaps maps_from_prob(const Tensor& prob) {
  LandmarkMaps m;
  m.prob = Var(prob);
  m.coords = soft_argmax(m.prob);
  return m;
}

}  // namespace

TEST_CASE("separation loss of coincident landmarks is K(K-1)c") {
  for (int k : {2, 3, 10}) {
    for (double c : {0.05, 0.03}) {
      const Var coords(Tensor({k, 2}, 0.25));
      CHECK(separation_loss(coords, c).item() == doctest::Approx(k * (k - 1) * c));
    }
  }
  // Pairs beyond the margin contribute nothing.
  const Var far(Tensor({2, 2}, std::vector<double>{-0.5, 0.0, 0.5, 0.0}));
  CHECK(separation_loss(far, 0.05).item() == 0.0);
}

TEST_CASE("uniform maps put every landmark at the centre") {
  const LandmarkMaps m = maps_from_prob(Tensor::chw(4, 5, 7, 0.25));
  for (int k = 0; k < 3; ++k) {
    CHECK(m.coord(k).x() == doctest::Approx(0.0));
    CHECK(m.coord(k).y() == doctest::Approx(0.0));
  }
}

TEST_CASE("concentration loss closed forms") {
  Tensor p = Tensor::chw(3, 3, 3);
  // Channel 1: equal mass on one row at x = -1, 0, 1 -> variance 2/3.
  for (int x = 0; x < 3; ++x) p.at(1, 1, x) = 0.2;
  // Channel 2: a single cell -> variance 0.
  p.at(2, 0, 2) = 0.5;
  const LandmarkMaps m = maps_from_prob(p);
  CHECK(m.coord(0).x() == doctest::Approx(0.0));
  CHECK(m.coord(1).x() == doctest::Approx(1.0));
  CHECK(m.coord(1).y() == doctest::Approx(-1.0));
  CHECK(concentration_loss(m).item() == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("a landmark channel without mass is rejected") {
  Tensor p = Tensor::chw(3, 2, 2, 0.25);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) p.at(2, y, x) = 0.0;
  CHECK_THROWS_AS(soft_argmax(Var(p)), DegenerateChannel);
}

TEST_CASE("softmax maps sum to one per cell and coordinates stay in the box") {
  Rng rng(21);
  const LandmarkMaps m = maps_from_scores(Var(random_tensor({6, 8, 8}, rng, -4, 4)));
  CHECK(m.num_landmarks() == 5);
  const Tensor& p = m.prob.value();
  for (std::size_t i = 0; i < p.plane(); ++i) {
    double s = 0;
    for (int c = 0; c < 6; ++c) s += p[c * p.plane() + i];
    CHECK(s == doctest::Approx(1.0));
  }
  for (int k = 0; k < 5; ++k) CHECK(in_unit_box(m.coord(k)));
  CHECK_THROWS_AS(maps_from_scores(Var(Tensor::chw(2, 4, 4))), ShapeError);
}

TEST_CASE("equivariance loss vanishes for exactly transported landmarks") {
  Affine2 a;
  a << 0.9, -0.1, 0.05, 0.1, 0.95, -0.02;
  const ParametricWarp w = ParametricWarp::affine(a);
  Tensor cs({3, 2}, std::vector<double>{-0.3, 0.2, 0.1, 0.1, 0.4, -0.5});
  Tensor ct({3, 2});
  for (int k = 0; k < 3; ++k) {
    const Vec2 q = w.apply({cs.at(k, 0), cs.at(k, 1)});
    ct.at(k, 0) = q.x();
    ct.at(k, 1) = q.y();
  }
  CHECK(equivariance_loss(Var(cs), Var(ct), w).item() == doctest::Approx(0.0).epsilon(1e-14));
  ct.at(1, 0) += 0.1;
  CHECK(equivariance_loss(Var(cs), Var(ct), w).item() == doctest::Approx(0.01));

  Affine2 away;
  away << 1, 0, 5, 0, 1, 0;
  CHECK_THROWS_AS(equivariance_loss(Var(cs), Var(ct), ParametricWarp::affine(away)), UndefinedLoss);
}

TEST_CASE("default margins by landmark count") {
  CHECK(default_margin(10) == 0.05);
  CHECK(default_margin(15) == 0.03);
  CHECK(default_margin(30) == 0.02);
}

TEST_CASE("detector head produces K+1 maps on the feature grid") {
  Rng rng(22);
  DetectorSpec spec;
  spec.num_landmarks = 4;
  spec.widths = {8, 8, 8};
  const Detector d(spec, 5, 9, rng);
  const FeatureMap f(l2_normalize_channels(Var(random_tensor({5, 6, 6}, rng))));
  const LandmarkMaps m = detect(f, self_similarity(f, 1), d);
  CHECK(m.prob.value().channels() == 5);
  CHECK(m.height() == 6);
  CHECK(detection_loss(m, spec).item() >= 0.0);
}
