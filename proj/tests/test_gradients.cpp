#include "doctest.h"
#include "gradcheck.hpp"
#include "semalign/aligner.hpp"
#include "semalign/detector.hpp"
#include "semalign/geometry.hpp"
#include "semalign/ops.hpp"
#include "semalign/similarity.hpp"
#include "semalign/trainer.hpp"

using namespace semalign;
using semalign::testing::gradient_error;
using semalign::testing::project;
using semalign::testing::random_tensor;

namespace {

constexpr int kInstances = 20;
constexpr double kTol = 1e-4;

Var param(Tensor t) { return Var(std::move(t), true); }

// Flow coordinates well inside the grid so border clamping never engages.
Tensor random_flow(int h, int w, Rng& rng, double jitter = 0.3) {
  Tensor f = make_grid(h, w).coords;
  for (double& v : f.values()) v = std::clamp(v + uniform(rng, -jitter, jitter), -0.93, 0.93);
  return f;
}

}  // namespace

TEST_CASE("conv2d gradients match finite differences") {
  for (int s = 0; s < kInstances; ++s) {
    Rng rng(100 + s);
    const int stride = 1 + s % 2;
    const Tensor proj = random_tensor({3, (7 + 2 - 3) / stride + 1, (6 + 2 - 3) / stride + 1}, rng);
    auto f = [&](const std::vector<Var>& in) { return project(conv2d(in[0], in[1], in[2], stride, 1), proj); };
    const double err = gradient_error(
        f, {param(random_tensor({2, 7, 6}, rng)), param(random_tensor({3, 2, 3, 3}, rng)), param(random_tensor({3}, rng))});
    CHECK(err < kTol);
  }
}

TEST_CASE("elementwise and channel op gradients match finite differences") {
  for (int s = 0; s < kInstances; ++s) {
    Rng rng(200 + s);
    const Tensor p1 = random_tensor({3, 4, 5}, rng);
    const Tensor p2 = random_tensor({5, 4, 5}, rng);
    const Tensor p3 = random_tensor({3, 7, 9}, rng);
    CHECK(gradient_error([&](const std::vector<Var>& in) { return project(relu(in[0]), p1); },
                         {param(random_tensor({3, 4, 5}, rng))}) < kTol);
    CHECK(gradient_error([&](const std::vector<Var>& in) { return project(clamp(in[0], -0.5, 0.5), p1); },
                         {param(random_tensor({3, 4, 5}, rng))}) < kTol);
    CHECK(gradient_error([&](const std::vector<Var>& in) { return project(l2_normalize_channels(in[0]), p1); },
                         {param(random_tensor({3, 4, 5}, rng))}) < kTol);
    CHECK(gradient_error([&](const std::vector<Var>& in) { return project(normalize_planes(in[0]), p1); },
                         {param(random_tensor({3, 4, 5}, rng, 0.1, 1.0))}) < kTol);
    CHECK(gradient_error([&](const std::vector<Var>& in) { return project(channel_softmax(in[0]), p1); },
                         {param(random_tensor({3, 4, 5}, rng, -3, 3))}) < kTol);
    CHECK(gradient_error(
              [&](const std::vector<Var>& in) {
                return project(concat_channels(in[0], slice_channels(in[1], 1, 3)), p2);
              },
              {param(random_tensor({3, 4, 5}, rng)), param(random_tensor({4, 4, 5}, rng))}) < kTol);
    CHECK(gradient_error([&](const std::vector<Var>& in) { return project(upsample_nearest(in[0], 7, 9), p3); },
                         {param(random_tensor({3, 4, 5}, rng))}) < kTol);
    CHECK(gradient_error(
              [&](const std::vector<Var>& in) {
                return mean(weighted_sum({{0.3, sub(in[0], in[1])}, {-1.7, add(in[0], scale(in[1], 2.0))}}));
              },
              {param(random_tensor({3, 4, 5}, rng)), param(random_tensor({3, 4, 5}, rng))}) < kTol);
  }
}

TEST_CASE("backward_warp gradients w.r.t. field and flow match finite differences") {
  for (int s = 0; s < kInstances; ++s) {
    Rng rng(300 + s);
    const int h = 5 + s % 4, w = 6 + s % 3;
    const Tensor proj = random_tensor({3, h, w}, rng);
    auto f = [&](const std::vector<Var>& in) { return project(backward_warp(in[0], FlowField(in[1])), proj); };
    CHECK(gradient_error(f, {param(random_tensor({3, h, w}, rng)), param(random_flow(h, w, rng))}) < kTol);
  }
}

TEST_CASE("point sampling gradients match finite differences") {
  for (int s = 0; s < kInstances; ++s) {
    Rng rng(350 + s);
    const Tensor proj = random_tensor({4, 2}, rng);
    auto f = [&](const std::vector<Var>& in) { return project(sample_points(in[0], in[1]), proj); };
    CHECK(gradient_error(f, {param(random_tensor({2, 6, 5}, rng)), param(random_tensor({4, 2}, rng, -0.9, 0.9))}) <
          kTol);
  }
}

TEST_CASE("similarity volume gradients match finite differences") {
  for (int s = 0; s < kInstances; ++s) {
    Rng rng(400 + s);
    const int r = 1 + s % 2;
    const Tensor proj = random_tensor({(2 * r + 1) * (2 * r + 1), 5, 6}, rng);
    auto f = [&](const std::vector<Var>& in) {
      return project(similarity_volume(normalize_features(in[0]), normalize_features(in[1]), r).scores, proj);
    };
    CHECK(gradient_error(f, {param(random_tensor({4, 5, 6}, rng)), param(random_tensor({4, 5, 6}, rng))}) < kTol);
  }
}

TEST_CASE("soft-argmax gradients match finite differences") {
  for (int s = 0; s < kInstances; ++s) {
    Rng rng(500 + s);
    const Tensor proj = random_tensor({4, 2}, rng);
    auto f = [&](const std::vector<Var>& in) { return project(maps_from_scores(in[0]).coords, proj); };
    CHECK(gradient_error(f, {param(random_tensor({5, 6, 7}, rng, -2, 2))}) < kTol);
  }
}

TEST_CASE("concentration loss gradients match finite differences") {
  for (int s = 0; s < kInstances; ++s) {
    Rng rng(600 + s);
    auto f = [](const std::vector<Var>& in) { return concentration_loss(maps_from_scores(in[0])); };
    CHECK(gradient_error(f, {param(random_tensor({5, 6, 7}, rng, -3, 3))}) < kTol);
  }
}

TEST_CASE("separation loss gradients match finite differences") {
  for (int s = 0; s < kInstances; ++s) {
    Rng rng(700 + s);
    auto on_coords = [](const std::vector<Var>& in) { return separation_loss(in[0], 0.3); };
    CHECK(gradient_error(on_coords, {param(random_tensor({6, 2}, rng, -0.4, 0.4))}) < kTol);
    auto on_scores = [](const std::vector<Var>& in) { return separation_loss(maps_from_scores(in[0]), 0.05); };
    CHECK(gradient_error(on_scores, {param(random_tensor({5, 6, 7}, rng, -3, 3))}) < kTol);
  }
}

TEST_CASE("probabilistic alignment loss gradients match finite differences") {
  for (int s = 0; s < kInstances; ++s) {
    Rng rng(800 + s);
    const int h = 5, w = 6, r = 1 + s % 2;
    auto f = [&](const std::vector<Var>& in) {
      const AlignmentOutput out{FlowField(in[2]), UncertaintyMap{in[3]}};
      return alignment_prob_loss(normalize_features(in[0]), normalize_features(in[1]), out, r, 5.0);
    };
    CHECK(gradient_error(f, {param(random_tensor({4, h, w}, rng)), param(random_tensor({4, h, w}, rng)),
                             param(random_flow(h, w, rng)), param(random_tensor({1, h, w}, rng))}) < kTol);
  }
}

TEST_CASE("joint loss gradients match finite differences") {
  for (int s = 0; s < kInstances; ++s) {
    Rng rng(900 + s);
    const int h = 6, w = 5;
    auto f = [&](const std::vector<Var>& in) {
      const AlignmentOutput out{FlowField(in[2]), UncertaintyMap{in[3]}};
      return joint_loss(maps_from_scores(in[0]), maps_from_scores(in[1]), out);
    };
    CHECK(gradient_error(f, {param(random_tensor({4, h, w}, rng, -2, 2)), param(random_tensor({4, h, w}, rng, -2, 2)),
                             param(random_flow(h, w, rng)), param(random_tensor({1, h, w}, rng))}) < kTol);
  }
}

TEST_CASE("equivariance and anchor loss gradients match finite differences") {
  for (int s = 0; s < kInstances; ++s) {
    Rng rng(1000 + s);
    Affine2 a;
    a << 1.0 + uniform(rng, -0.2, 0.2), uniform(rng, -0.2, 0.2), uniform(rng, -0.1, 0.1), uniform(rng, -0.2, 0.2),
        1.0 + uniform(rng, -0.2, 0.2), uniform(rng, -0.1, 0.1);
    const ParametricWarp warp = ParametricWarp::affine(a);
    auto eq = [&](const std::vector<Var>& in) {
      return equivariance_loss(maps_from_scores(in[0]).coords, maps_from_scores(in[1]).coords, warp);
    };
    CHECK(gradient_error(eq, {param(random_tensor({4, 5, 6}, rng, -2, 2)), param(random_tensor({4, 5, 6}, rng, -2, 2))}) <
          kTol);

    AnchorSet anchors;
    for (int n = 0; n < 5; ++n) {
      const Vec2 p(uniform(rng, -0.8, 0.8), uniform(rng, -0.8, 0.8));
      anchors.pairs.emplace_back(p, warp.apply(p));
    }
    auto an = [&](const std::vector<Var>& in) {
      return anchor_loss({FlowField(in[0]), UncertaintyMap{Var(Tensor::chw(1, 6, 7))}}, anchors);
    };
    CHECK(gradient_error(an, {param(random_flow(6, 7, rng))}) < kTol);
  }
}
