#ifndef SEMALIGN_GEOMETRY_HPP_
#define SEMALIGN_GEOMETRY_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "semalign/autograd.hpp"

namespace semalign {

using Vec2 = Eigen::Vector2d;
using Affine2 = Eigen::Matrix<double, 2, 3>;

// Normalized coordinates of every cell of an H x W grid. Corner cells sit
// exactly at (-1,-1) and (1,1); channel 0 holds x (column), channel 1 y (row).
struct CoordGrid {
  int height = 0;
  int width = 0;
  Tensor coords;  // (2, H, W)

  Vec2 at(int y, int x) const { return {coords.at(0, y, x), coords.at(1, y, x)}; }
};

CoordGrid make_grid(int height, int width);

// Absolute target coordinates per source cell: cell i matches the point
// target_coords[i] of the other image, in normalized units.
class FlowField {
 public:
  FlowField() = default;
  explicit FlowField(Var target_coords);
  static FlowField identity(int height, int width);

  int height() const { return coords_.value().height(); }
  int width() const { return coords_.value().width(); }
  const Var& coords() const { return coords_; }
  Vec2 at(int y, int x) const {
    return {coords_.value().at(0, y, x), coords_.value().at(1, y, x)};
  }

 private:
  Var coords_;
};

enum class WarpKind { kAffine, kTps };

// Global parametric warp mapping source coordinates to target coordinates.
class ParametricWarp {
 public:
  static ParametricWarp identity();
  static ParametricWarp affine(const Affine2& matrix);
  // Thin-plate spline interpolating anchors[n] -> targets[n].
  static ParametricWarp tps(std::vector<Vec2> anchors, std::vector<Vec2> targets);

  WarpKind kind() const { return kind_; }
  Vec2 apply(const Vec2& p) const;
  Eigen::Matrix2d jacobian(const Vec2& p) const;
  // Source point mapped onto q. Closed form for affine, Newton iterations for TPS.
  Vec2 inverse(const Vec2& q) const;

  const Affine2& affine_matrix() const { return affine_; }
  const std::vector<Vec2>& anchors() const { return anchors_; }
  const std::vector<Vec2>& targets() const { return targets_; }

 private:
  ParametricWarp() = default;

  WarpKind kind_ = WarpKind::kAffine;
  Affine2 affine_ = Affine2::Zero();
  std::vector<Vec2> anchors_;
  std::vector<Vec2> targets_;
  std::vector<Vec2> rbf_weights_;  // TPS radial-basis coefficients
};

std::vector<Vec2> eval_warp(const ParametricWarp& warp, std::span<const Vec2> points);

struct DenseGT {
  ParametricWarp warp = ParametricWarp::identity();
  FlowField flow;
  std::vector<std::uint8_t> validity;  // flow[i] inside [-1,1]^2

  double valid_fraction() const;
};

DenseGT warp_to_flow(const ParametricWarp& warp, int height, int width);

// output[i] = bilinear sample of field at flow[i]; field and flow share grid dims.
Var backward_warp(const Var& field, const FlowField& flow);

// result[i] = f2 sampled at f1[i].
FlowField compose_flows(const FlowField& f1, const FlowField& f2);

inline bool in_unit_box(const Vec2& p) {
  return p.x() >= -1.0 && p.x() <= 1.0 && p.y() >= -1.0 && p.y() <= 1.0;
}

// Normalized coordinate <-> pixel position (cell centres, corner aligned).
inline double to_pixel(double u, int n) { return (u + 1.0) * 0.5 * (n - 1); }
inline double to_normalized(double p, int n) { return 2.0 * p / (n - 1) - 1.0; }

}  // namespace semalign

#endif  // SEMALIGN_GEOMETRY_HPP_
