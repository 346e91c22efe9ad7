#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "semalign/errors.hpp"
#include "semalign/geometry.hpp"
#include "semalign/ops.hpp"

using namespace semalign;
using semalign::testing::random_tensor;

TEST_CASE("tensor indexing is row-major over (C,H,W)") {
  Tensor t = Tensor::chw(2, 3, 4);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
  CHECK(t.at(1, 2, 3) == 23.0);
  CHECK(t.at(0, 1, 0) == 4.0);
  CHECK(t.plane() == 12u);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  t[5] = std::nan("");
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("leaf gradients accumulate across backward calls") {
  Var x(Tensor({3}, std::vector<double>{1, 2, 3}), true);
  backward(sum(scale(x, 2.0)));
  backward(sum(x));
  for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(3.0));
  x.zero_grad();
  backward(mean(x));
  CHECK(x.grad()[0] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("detach cuts the gradient path") {
  Var x(Tensor({2}, std::vector<double>{1, -1}), true);
  Var y = add(x, detach(scale(x, 5.0)));
  backward(sum(y));
  CHECK(x.grad()[0] == doctest::Approx(1.0));
  CHECK(x.grad()[1] == doctest::Approx(1.0));
}

TEST_CASE("conv2d matches a direct convolution") {
  Rng rng(5);
  const Tensor x = random_tensor({2, 6, 5}, rng);
  const Tensor w = random_tensor({3, 2, 3, 3}, rng);
  const Tensor b = random_tensor({3}, rng);
  for (int stride : {1, 2}) {
    const Tensor out = conv2d(Var(x), Var(w), Var(b), stride, 1).value();
    const int ho = (6 + 2 - 3) / stride + 1, wo = (5 + 2 - 3) / stride + 1;
    REQUIRE(out.height() == ho);
    REQUIRE(out.width() == wo);
    for (int o = 0; o < 3; ++o) {
      for (int y = 0; y < ho; ++y) {
        for (int xx = 0; xx < wo; ++xx) {
          double s = b[o];
          for (int c = 0; c < 2; ++c) {
            for (int ky = 0; ky < 3; ++ky) {
              for (int kx = 0; kx < 3; ++kx) {
                const int iy = y * stride - 1 + ky, ix = xx * stride - 1 + kx;
                if (iy < 0 || iy >= 6 || ix < 0 || ix >= 5) continue;
                s += w[((o * 2 + c) * 3 + ky) * 3 + kx] * x.at(c, iy, ix);
              }
            }
          }
          CHECK(out.at(o, y, xx) == doctest::Approx(s).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("channel softmax and l2 normalization") {
  Rng rng(6);
  const Tensor x = random_tensor({4, 3, 3}, rng, -5, 5);
  const Tensor p = channel_softmax(Var(x)).value();
  const Tensor n = l2_normalize_channels(Var(x)).value();
  for (std::size_t i = 0; i < p.plane(); ++i) {
    double sp = 0, sn = 0;
    for (int c = 0; c < 4; ++c) {
      sp += p[c * p.plane() + i];
      sn += n[c * n.plane() + i] * n[c * n.plane() + i];
    }
    CHECK(sp == doctest::Approx(1.0));
    CHECK(sn == doctest::Approx(1.0));
  }
  const Tensor z = l2_normalize_channels(Var(Tensor::chw(2, 2, 2))).value();
  for (double v : z.values()) CHECK(v == 0.0);
}

TEST_CASE("plane normalization gives per-channel distributions") {
  Rng rng(15);
  const Tensor x = random_tensor({3, 4, 5}, rng, 0.0, 2.0);
  const Tensor y = normalize_planes(Var(x)).value();
  for (int c = 0; c < 3; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.plane(); ++i) s += y[c * y.plane() + i];
    CHECK(s == doctest::Approx(1.0));
  }
  CHECK_THROWS_AS(normalize_planes(Var(Tensor::chw(1, 2, 2))), DegenerateChannel);
}

TEST_CASE("concat, slice and upsample shapes") {
  Rng rng(7);
  const Var a(random_tensor({2, 3, 3}, rng)), b(random_tensor({1, 3, 3}, rng));
  const Tensor cat = concat_channels(a, b).value();
  CHECK(cat.channels() == 3);
  CHECK(cat.at(2, 1, 1) == b.value().at(0, 1, 1));
  const Tensor sl = slice_channels(Var(cat), 1, 3).value();
  CHECK(sl.at(0, 2, 0) == a.value().at(1, 2, 0));
  const Tensor up = upsample_nearest(a, 6, 6).value();
  CHECK(up.at(1, 5, 4) == a.value().at(1, 2, 2));
  CHECK_THROWS_AS(concat_channels(a, Var(Tensor::chw(1, 2, 3))), ShapeError);
}

TEST_CASE("grid sampling at cell centres reproduces the field") {
  Rng rng(8);
  const Tensor f = random_tensor({3, 5, 7}, rng);
  const Tensor out = grid_sample(Var(f), Var(make_grid(5, 7).coords)).value();
  for (std::size_t i = 0; i < f.size(); ++i) CHECK(out[i] == doctest::Approx(f[i]).epsilon(1e-12));
  // Halfway between two columns gives their mean; outside the box clamps.
  const Tensor pts({2, 2}, std::vector<double>{to_normalized(0.5, 7), -1.0, 3.0, 1.0});
  const Tensor s = sample_points(Var(f), Var(pts)).value();
  CHECK(s.at(0, 1) == doctest::Approx(0.5 * (f.at(1, 0, 0) + f.at(1, 0, 1))));
  CHECK(s.at(1, 2) == doctest::Approx(f.at(2, 4, 6)));
}

TEST_CASE("coordinate grid corners and pixel conversion") {
  const CoordGrid g = make_grid(4, 6);
  CHECK(g.at(0, 0).x() == -1.0);
  CHECK(g.at(0, 0).y() == -1.0);
  CHECK(g.at(3, 5).x() == 1.0);
  CHECK(g.at(3, 5).y() == 1.0);
  for (double p : {0.0, 1.5, 5.0}) CHECK(to_pixel(to_normalized(p, 6), 6) == doctest::Approx(p));
  CHECK(in_unit_box({1.0, -1.0}));
  CHECK_FALSE(in_unit_box({1.0001, 0.0}));
}

TEST_CASE("affine warp inverse round trip") {
  Affine2 m;
  m << 1.1, 0.2, 0.05, -0.15, 0.9, -0.1;
  const ParametricWarp w = ParametricWarp::affine(m);
  const Vec2 p(0.3, -0.4);
  CHECK((w.inverse(w.apply(p)) - p).norm() < 1e-12);
  CHECK((w.jacobian(p) - m.leftCols<2>()).norm() < 1e-12);
  Affine2 singular = Affine2::Zero();
  CHECK_THROWS_AS(ParametricWarp::affine(singular).inverse(p), DegenerateWarp);
}

TEST_CASE("thin-plate spline interpolates its control points and inverts") {
  std::vector<Vec2> anchors, targets;
  Rng rng(9);
  for (double y : {-0.5, 0.0, 0.5}) {
    for (double x : {-0.5, 0.0, 0.5}) {
      anchors.emplace_back(x, y);
      targets.emplace_back(x + uniform(rng, -0.08, 0.08), y + uniform(rng, -0.08, 0.08));
    }
  }
  const ParametricWarp w = ParametricWarp::tps(anchors, targets);
  CHECK(w.kind() == WarpKind::kTps);
  for (std::size_t i = 0; i < anchors.size(); ++i) CHECK((w.apply(anchors[i]) - targets[i]).norm() < 1e-9);
  const Vec2 q(0.21, -0.37);
  CHECK((w.apply(w.inverse(q)) - q).norm() < 1e-8);
  // Jacobian against central differences.
  const Vec2 p(0.1, 0.2);
  const double h = 1e-6;
  Eigen::Matrix2d num;
  num.col(0) = (w.apply(p + Vec2(h, 0)) - w.apply(p - Vec2(h, 0))) / (2 * h);
  num.col(1) = (w.apply(p + Vec2(0, h)) - w.apply(p - Vec2(0, h))) / (2 * h);
  CHECK((num - w.jacobian(p)).norm() < 1e-6);

  std::vector<Vec2> dup = anchors, dup_t = targets;
  dup.push_back(anchors[0]);
  dup_t.push_back(targets[0] + Vec2(0.1, 0));
  CHECK_THROWS_AS(ParametricWarp::tps(dup, dup_t), DegenerateWarp);
}

TEST_CASE("dense ground truth and backward warping") {
  const DenseGT id = warp_to_flow(ParametricWarp::identity(), 5, 6);
  const Tensor grid = make_grid(5, 6).coords;
  for (std::size_t i = 0; i < grid.size(); ++i) CHECK(id.flow.coords().value()[i] == doctest::Approx(grid[i]));
  CHECK(id.valid_fraction() == 1.0);

  Affine2 shift;
  shift << 1, 0, 0.5, 0, 1, 0;
  const DenseGT gt = warp_to_flow(ParametricWarp::affine(shift), 5, 5);
  CHECK(gt.valid_fraction() == doctest::Approx(4.0 / 5.0));

  Rng rng(10);
  const Tensor field = random_tensor({2, 5, 6}, rng);
  const Tensor same = backward_warp(Var(field), id.flow).value();
  for (std::size_t i = 0; i < field.size(); ++i) CHECK(same[i] == doctest::Approx(field[i]));

  const FlowField f(Var(random_tensor({2, 5, 6}, rng, -0.9, 0.9)));
  const FlowField c = compose_flows(f, FlowField::identity(5, 6));
  for (std::size_t i = 0; i < c.coords().value().size(); ++i) {
    CHECK(c.coords().value()[i] == doctest::Approx(f.coords().value()[i]));
  }
}
