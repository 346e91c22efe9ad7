#include "semalign/geometry.hpp"

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "semalign/errors.hpp"
#include "semalign/ops.hpp"

namespace semalign {

namespace {

constexpr double kTpsRegularization = 1e-9;

double tps_kernel(double r2) { return r2 > 0.0 ? r2 * std::log(r2) : 0.0; }

bool finite(const Vec2& p) { return std::isfinite(p.x()) && std::isfinite(p.y()); }

}  // namespace

CoordGrid make_grid(int height, int width) {
  if (height < 2 || width < 2) {
    throw InvalidDimension("grid dimensions must be >= 2, got " + std::to_string(height) + "x" +
                           std::to_string(width));
  }
  CoordGrid g{height, width, Tensor::chw(2, height, width)};
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      g.coords.at(0, y, x) = to_normalized(x, width);
      g.coords.at(1, y, x) = to_normalized(y, height);
    }
  }
  return g;
}

FlowField::FlowField(Var target_coords) : coords_(std::move(target_coords)) {
  const Tensor& t = coords_.value();
  if (t.rank() != 3 || t.channels() != 2) throw ShapeError("flow field must be (2,H,W), got " + t.shape_string());
  if (!t.all_finite()) throw NumericalError("flow field contains non-finite coordinates");
}

FlowField FlowField::identity(int height, int width) {
  return FlowField(Var(make_grid(height, width).coords));
}

ParametricWarp ParametricWarp::identity() {
  Affine2 m;
  m << 1, 0, 0, 0, 1, 0;
  return affine(m);
}

ParametricWarp ParametricWarp::affine(const Affine2& matrix) {
  if (!matrix.allFinite()) throw DegenerateWarp("affine warp has non-finite parameters");
  ParametricWarp w;
  w.kind_ = WarpKind::kAffine;
  w.affine_ = matrix;
  return w;
}

ParametricWarp ParametricWarp::tps(std::vector<Vec2> anchors, std::vector<Vec2> targets) {
  const std::size_t n = anchors.size();
  if (n != targets.size()) throw DegenerateWarp("TPS anchor/target count mismatch");
  if (n < 3) throw DegenerateWarp("TPS needs at least 3 control points");
  for (std::size_t i = 0; i < n; ++i) {
    if (!finite(anchors[i]) || !finite(targets[i])) throw DegenerateWarp("TPS has non-finite control points");
    for (std::size_t j = 0; j < i; ++j) {
      if ((anchors[i] - anchors[j]).squaredNorm() < 1e-24) {
        throw DegenerateWarp("TPS control points " + std::to_string(j) + " and " + std::to_string(i) +
                             " coincide");
      }
    }
  }

  const Eigen::Index m = static_cast<Eigen::Index>(n) + 3;
  Eigen::MatrixXd system = Eigen::MatrixXd::Zero(m, m);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(m, 2);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (std::size_t j = 0; j < n; ++j) {
      system(r, static_cast<Eigen::Index>(j)) = tps_kernel((anchors[i] - anchors[j]).squaredNorm());
    }
    system(r, r) += kTpsRegularization;
    system(r, m - 3) = system(m - 3, r) = 1.0;
    system(r, m - 2) = system(m - 2, r) = anchors[i].x();
    system(r, m - 1) = system(m - 1, r) = anchors[i].y();
    rhs(r, 0) = targets[i].x();
    rhs(r, 1) = targets[i].y();
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(system);
  if (lu.rank() < m) throw DegenerateWarp("TPS system is singular (collinear control points)");
  Eigen::MatrixXd sol = lu.solve(rhs);
  if (!sol.allFinite()) throw DegenerateWarp("TPS solve produced non-finite coefficients");

  ParametricWarp w;
  w.kind_ = WarpKind::kTps;
  w.anchors_ = std::move(anchors);
  w.targets_ = std::move(targets);
  w.rbf_weights_.resize(n);
  for (std::size_t i = 0; i < n; ++i) w.rbf_weights_[i] = sol.row(static_cast<Eigen::Index>(i)).transpose();
  for (int d = 0; d < 2; ++d) {
    w.affine_(d, 2) = sol(m - 3, d);
    w.affine_(d, 0) = sol(m - 2, d);
    w.affine_(d, 1) = sol(m - 1, d);
  }
  return w;
}

Vec2 ParametricWarp::apply(const Vec2& p) const {
  Vec2 out = affine_.leftCols<2>() * p + affine_.col(2);
  for (std::size_t i = 0; i < rbf_weights_.size(); ++i) {
    out += rbf_weights_[i] * tps_kernel((p - anchors_[i]).squaredNorm());
  }
  return out;
}

Eigen::Matrix2d ParametricWarp::jacobian(const Vec2& p) const {
  Eigen::Matrix2d j = affine_.leftCols<2>();
  for (std::size_t i = 0; i < rbf_weights_.size(); ++i) {
    const Vec2 d = p - anchors_[i];
    const double r2 = d.squaredNorm();
    if (r2 <= 0.0) continue;
    // d/dp [r^2 log r^2] = 2 (p - a) (log r^2 + 1)
    j += rbf_weights_[i] * (2.0 * (std::log(r2) + 1.0) * d).transpose();
  }
  return j;
}

Vec2 ParametricWarp::inverse(const Vec2& q) const {
  const Eigen::Matrix2d a = affine_.leftCols<2>();
  if (kind_ == WarpKind::kAffine) {
    if (std::abs(a.determinant()) < 1e-12) throw DegenerateWarp("affine warp is not invertible");
    return a.inverse() * (q - affine_.col(2));
  }
  Vec2 p = q - (apply(q) - q);
  for (int it = 0; it < 50; ++it) {
    const Vec2 r = apply(p) - q;
    if (r.squaredNorm() < 1e-24) break;
    const Eigen::Matrix2d j = jacobian(p);
    if (std::abs(j.determinant()) < 1e-12) throw DegenerateWarp("TPS warp folds over");
    p -= j.inverse() * r;
  }
  return p;
}

std::vector<Vec2> eval_warp(const ParametricWarp& warp, std::span<const Vec2> points) {
  std::vector<Vec2> out;
  out.reserve(points.size());
  for (const Vec2& p : points) out.push_back(warp.apply(p));
  return out;
}

double DenseGT::valid_fraction() const {
  if (validity.empty()) return 0.0;
  std::size_t n = 0;
  for (auto v : validity) n += v;
  return static_cast<double>(n) / static_cast<double>(validity.size());
}

DenseGT warp_to_flow(const ParametricWarp& warp, int height, int width) {
  const CoordGrid grid = make_grid(height, width);
  Tensor coords = Tensor::chw(2, height, width);
  std::vector<std::uint8_t> validity(static_cast<std::size_t>(height) * width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const Vec2 t = warp.apply(grid.at(y, x));
      coords.at(0, y, x) = t.x();
      coords.at(1, y, x) = t.y();
      validity[static_cast<std::size_t>(y) * width + x] = in_unit_box(t) ? 1 : 0;
    }
  }
  return {warp, FlowField(Var(std::move(coords))), std::move(validity)};
}

Var backward_warp(const Var& field, const FlowField& flow) {
  const Tensor& f = field.value();
  if (f.rank() != 3 || f.height() != flow.height() || f.width() != flow.width()) {
    throw ShapeError("backward_warp: field " + f.shape_string() + " does not match flow " +
                     flow.coords().value().shape_string());
  }
  return grid_sample(field, flow.coords());
}

FlowField compose_flows(const FlowField& f1, const FlowField& f2) {
  if (f1.height() != f2.height() || f1.width() != f2.width()) {
    throw ShapeError("compose_flows: flow dimensions differ");
  }
  return FlowField(grid_sample(f2.coords(), f1.coords()));
}

}  // namespace semalign
