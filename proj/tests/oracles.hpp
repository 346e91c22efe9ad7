#ifndef SEMALIGN_TESTS_ORACLES_HPP_
#define SEMALIGN_TESTS_ORACLES_HPP_

// Straightforward reimplementations used as references. They work on plain
// nested loops and never call the library code they are compared with.

#include <algorithm>
#include <cmath>
#include <vector>

#include "semalign/tensor.hpp"

namespace semalign::testing {

// Cosine similarity of every cell of a with the clamped (2r+1)^2 window in b,
// divided by the L2 norm of that score vector.
inline Tensor naive_similarity(const Tensor& a, const Tensor& b, int r) {
  const int c = a.channels(), h = a.height(), w = a.width();
  const int side = 2 * r + 1;
  Tensor out = Tensor::chw(side * side, h, w);
  auto norm_at = [c](const Tensor& t, int y, int x) {
    double s = 0.0;
    for (int ch = 0; ch < c; ++ch) s += t.at(ch, y, x) * t.at(ch, y, x);
    return std::sqrt(s);
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::vector<double> s(side * side, 0.0);
      const double na = norm_at(a, y, x);
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          const int ty = std::clamp(y + dy, 0, h - 1), tx = std::clamp(x + dx, 0, w - 1);
          double dot = 0.0;
          for (int ch = 0; ch < c; ++ch) dot += a.at(ch, y, x) * b.at(ch, ty, tx);
          s[(dy + r) * side + (dx + r)] = dot / (na * norm_at(b, ty, tx));
        }
      }
      double n2 = 0.0;
      for (double v : s) n2 += v * v;
      for (int o = 0; o < side * side; ++o) out.at(o, y, x) = s[o] / std::sqrt(n2);
    }
  }
  return out;
}

// Bilinear lookup of a (2,H,W) coordinate field at a point given in pixels.
inline void naive_bilinear(const Tensor& field, double px, double py, double& ox, double& oy) {
  const int h = field.height(), w = field.width();
  px = std::clamp(px, 0.0, w - 1.0);
  py = std::clamp(py, 0.0, h - 1.0);
  const int x0 = std::min(static_cast<int>(px), w - 1), y0 = std::min(static_cast<int>(py), h - 1);
  const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double fx = px - x0, fy = py - y0;
  double v[2];
  for (int c = 0; c < 2; ++c) {
    v[c] = (1 - fy) * ((1 - fx) * field.at(c, y0, x0) + fx * field.at(c, y0, x1)) +
           fy * ((1 - fx) * field.at(c, y1, x0) + fx * field.at(c, y1, x1));
  }
  ox = v[0];
  oy = v[1];
}

struct NaiveKeypoint {
  double sx, sy, tx, ty;  // normalized units
};

// Fraction of keypoints transferred to within alpha * max(H, W) pixels.
inline double naive_pck(const Tensor& flow, const std::vector<NaiveKeypoint>& kps, double alpha, int img_h,
                        int img_w) {
  int correct = 0;
  for (const NaiveKeypoint& k : kps) {
    const double px = (k.sx + 1) / 2 * (flow.width() - 1), py = (k.sy + 1) / 2 * (flow.height() - 1);
    double fx, fy;
    naive_bilinear(flow, px, py, fx, fy);
    const double ex = (fx - k.tx) / 2 * (img_w - 1), ey = (fy - k.ty) / 2 * (img_h - 1);
    if (std::sqrt(ex * ex + ey * ey) <= alpha * std::max(img_h, img_w)) ++correct;
  }
  return static_cast<double>(correct) / kps.size();
}

}  // namespace semalign::testing

#endif  // SEMALIGN_TESTS_ORACLES_HPP_
