#ifndef SEMALIGN_OPS_HPP_
#define SEMALIGN_OPS_HPP_

#include <utility>
#include <vector>

#include "semalign/autograd.hpp"

namespace semalign {

// 2-D convolution of a (Cin,H,W) input with (Cout,Cin,k,k) weights and a
// (Cout) bias. Output size is (H + 2*pad - k) / stride + 1 per axis.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);

Var relu(const Var& x);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
// sum_i w_i * v_i over same-shaped operands.
Var weighted_sum(const std::vector<std::pair<double, Var>>& terms);
Var sum(const Var& x);
Var mean(const Var& x);

Var concat_channels(const Var& a, const Var& b);
Var slice_channels(const Var& x, int begin, int end);
Var upsample_nearest(const Var& x, int height, int width);

// Values are clamped to [lo, hi]; the gradient is zero where clamping is active.
Var clamp(const Var& x, double lo, double hi);

// Per-cell L2 normalization over channels. Cells whose norm is below eps
// become the zero vector and pass no gradient.
Var l2_normalize_channels(const Var& x, double eps = 1e-8);

// Per-cell softmax over channels.
Var channel_softmax(const Var& x);

// Divides every channel by its spatial sum, turning non-negative maps into
// distributions over cells. Throws DegenerateChannel when a sum is below 1e-8.
Var normalize_planes(const Var& x);

// Bilinear sampling of a (D,H,W) field at normalized coordinates given as a
// (2,Ho,Wo) map (channel 0 = x, channel 1 = y, each axis spanning [-1,1]
// corner to corner). Coordinates outside [-1,1] are clamped to the border.
// Differentiable in both the field and the coordinates.
Var grid_sample(const Var& field, const Var& coords);

// Bilinear sampling at a list of (N,2) points; returns (N,D).
Var sample_points(const Var& field, const Var& points);

}  // namespace semalign

#endif  // SEMALIGN_OPS_HPP_
