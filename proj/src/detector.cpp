#include "semalign/detector.hpp"

#include <algorithm>
#include <string>

#include "semalign/errors.hpp"
#include "semalign/ops.hpp"

namespace semalign {

namespace {

constexpr double kChannelMassFloor = 1e-8;

struct ChannelMoments {
  double mass;
  Vec2 mean;
};

ChannelMoments moments(const Tensor& prob, int channel, const CoordGrid& grid) {
  const std::size_t plane = prob.plane();
  const double* p = prob.data() + channel * plane;
  double mass = 0.0, mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < plane; ++i) {
    mass += p[i];
    mx += p[i] * grid.coords[i];
    my += p[i] * grid.coords[plane + i];
  }
  if (mass < kChannelMassFloor) {
    throw DegenerateChannel("landmark channel " + std::to_string(channel) + " has no probability mass");
  }
  return {mass, {mx / mass, my / mass}};
}

}  // namespace

void DetectorSpec::validate() const {
  if (num_landmarks < 2) throw ConfigError("detector needs K >= 2 landmarks");
  if (!(margin > 0.0)) throw ConfigError("separation margin must be positive");
  if (widths.empty()) throw ConfigError("detector needs at least one hidden layer");
}

double default_margin(int num_landmarks) {
  if (num_landmarks >= 30) return 0.02;
  if (num_landmarks >= 15) return 0.03;
  return 0.05;
}

Detector::Detector(const DetectorSpec& spec, int feature_channels, int similarity_channels, Rng& rng)
    : spec_(spec) {
  spec.validate();
  int in = feature_channels + similarity_channels;
  for (std::size_t i = 0; i < spec.widths.size(); ++i) {
    layers_.emplace_back("detector.conv" + std::to_string(i), in, spec.widths[i], 3, 1, rng);
    in = spec.widths[i];
  }
  head_ = Conv2d("detector.head", in, spec.num_landmarks + 1, 1, 1, rng);
}

Var Detector::scores(const FeatureMap& features, const SimilarityVolume& self_volume) const {
  if (layers_.empty()) throw ConfigError("detector is not initialized");
  if (features.height() != self_volume.height() || features.width() != self_volume.width()) {
    throw ShapeError("detect: features and self-similarity grids differ");
  }
  Var x = concat_channels(features.values(), self_volume.scores);
  for (const Conv2d& layer : layers_) x = relu(layer.forward(x));
  return head_.forward(x);
}

std::vector<NamedParam> Detector::parameters() const {
  std::vector<NamedParam> out;
  for (const Conv2d& c : layers_) c.collect(out);
  head_.collect(out);
  return out;
}

LandmarkMaps detect(const FeatureMap& features, const SimilarityVolume& self_volume, const Detector& detector) {
  return maps_from_scores(detector.scores(features, self_volume));
}

LandmarkMaps maps_from_scores(const Var& raw) {
  if (raw.value().rank() != 3 || raw.value().channels() < 3) {
    throw ShapeError("landmark scores must be (K+1,H,W) with K >= 2");
  }
  Var prob = channel_softmax(raw);
  Var coords = soft_argmax(prob);
  return {raw, prob, coords};
}

Var soft_argmax(const Var& prob) {
  const Tensor& pv = prob.value();
  const int k_count = pv.channels() - 1;
  const CoordGrid grid = make_grid(pv.height(), pv.width());
  Tensor out({k_count, 2}, 0.0);
  std::vector<double> mass(k_count);
  for (int k = 0; k < k_count; ++k) {
    const ChannelMoments m = moments(pv, k + 1, grid);
    mass[k] = m.mass;
    out.at(k, 0) = m.mean.x();
    out.at(k, 1) = m.mean.y();
  }
  return make_op(std::move(out), {prob}, [grid, mass = std::move(mass), k_count](Node& n) {
    Tensor* g = input_grad(n, 0);
    if (!g) return;
    const std::size_t plane = g->plane();
    for (int k = 0; k < k_count; ++k) {
      const double gx = n.grad.at(k, 0), gy = n.grad.at(k, 1);
      const double mx = n.value.at(k, 0), my = n.value.at(k, 1);
      double* gp = g->data() + (k + 1) * plane;
      // d mean / d p_i = (coord_i - mean) / mass
      for (std::size_t i = 0; i < plane; ++i) {
        gp[i] += (gx * (grid.coords[i] - mx) + gy * (grid.coords[plane + i] - my)) / mass[k];
      }
    }
  });
}

Var concentration_loss(const LandmarkMaps& maps) {
  const Tensor& pv = maps.prob.value();
  const int k_count = pv.channels() - 1;
  const std::size_t plane = pv.plane();
  const CoordGrid grid = make_grid(pv.height(), pv.width());
  std::vector<ChannelMoments> mom;
  std::vector<double> variance(k_count);
  double total = 0.0;
  for (int k = 0; k < k_count; ++k) {
    mom.push_back(moments(pv, k + 1, grid));
    const double* p = pv.data() + (k + 1) * plane;
    double v = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      const double dx = grid.coords[i] - mom[k].mean.x();
      const double dy = grid.coords[plane + i] - mom[k].mean.y();
      v += (dx * dx + dy * dy) * p[i];
    }
    variance[k] = v / mom[k].mass;
    total += variance[k];
  }
  return make_op(Tensor::scalar(total), {maps.prob},
                 [grid, mom = std::move(mom), variance = std::move(variance), k_count, plane](Node& n) {
                   Tensor* g = input_grad(n, 0);
                   if (!g) return;
                   const double gout = n.grad[0];
                   // d V / d p_i = (|coord_i - mean|^2 - V) / mass; the mean's own
                   // derivative cancels because sum_i (coord_i - mean) p_i = 0.
                   for (int k = 0; k < k_count; ++k) {
                     double* gp = g->data() + (k + 1) * plane;
                     for (std::size_t i = 0; i < plane; ++i) {
                       const double dx = grid.coords[i] - mom[k].mean.x();
                       const double dy = grid.coords[plane + i] - mom[k].mean.y();
                       gp[i] += gout * (dx * dx + dy * dy - variance[k]) / mom[k].mass;
                     }
                   }
                 });
}

Var separation_loss(const Var& coords, double margin) {
  const Tensor& cv = coords.value();
  if (cv.rank() != 2 || cv.dim(1) != 2 || cv.dim(0) < 2) throw ShapeError("separation_loss needs (K,2), K >= 2");
  const int k_count = cv.dim(0);
  double total = 0.0;
  for (int a = 0; a < k_count; ++a) {
    for (int b = 0; b < k_count; ++b) {
      if (a == b) continue;
      const double dx = cv.at(a, 0) - cv.at(b, 0), dy = cv.at(a, 1) - cv.at(b, 1);
      total += std::max(0.0, margin - (dx * dx + dy * dy));
    }
  }
  return make_op(Tensor::scalar(total), {coords}, [margin, k_count](Node& n) {
    Tensor* g = input_grad(n, 0);
    if (!g) return;
    const Tensor& cv = n.inputs[0]->value;
    const double gout = n.grad[0];
    for (int a = 0; a < k_count; ++a) {
      for (int b = 0; b < k_count; ++b) {
        if (a == b) continue;
        const double dx = cv.at(a, 0) - cv.at(b, 0), dy = cv.at(a, 1) - cv.at(b, 1);
        if (margin - (dx * dx + dy * dy) <= 0.0) continue;
        // Ordered pair (a,b): -|pa - pb|^2 contributes -2(pa - pb) to a and +2(pa - pb) to b.
        g->at(a, 0) -= 2.0 * gout * dx;
        g->at(a, 1) -= 2.0 * gout * dy;
        g->at(b, 0) += 2.0 * gout * dx;
        g->at(b, 1) += 2.0 * gout * dy;
      }
    }
  });
}

Var detection_loss(const LandmarkMaps& maps, const DetectorSpec& spec) {
  return weighted_sum({{spec.lambda_con, concentration_loss(maps)},
                       {spec.lambda_sep, separation_loss(maps.coords, spec.margin)}});
}

Var equivariance_loss(const LandmarkMaps& maps_s, const LandmarkMaps& maps_t, const DenseGT& gt) {
  return equivariance_loss(maps_s.coords, maps_t.coords, gt.warp);
}

Var equivariance_loss(const Var& coords_s, const Var& coords_t, const ParametricWarp& warp) {
  const Tensor& sv = coords_s.value();
  const Tensor& tv = coords_t.value();
  if (!sv.same_shape(tv) || sv.rank() != 2 || sv.dim(1) != 2) {
    throw ShapeError("equivariance_loss: landmark sets differ " + sv.shape_string() + " vs " + tv.shape_string());
  }
  const int k_count = sv.dim(0);
  std::vector<Vec2> residual(k_count, Vec2::Zero());
  std::vector<Eigen::Matrix2d> jac(k_count);
  std::vector<bool> valid(k_count, false);
  double total = 0.0;
  int n_valid = 0;
  for (int k = 0; k < k_count; ++k) {
    const Vec2 p(sv.at(k, 0), sv.at(k, 1));
    const Vec2 q = warp.apply(p);
    if (!in_unit_box(q)) continue;
    valid[k] = true;
    ++n_valid;
    jac[k] = warp.jacobian(p);
    residual[k] = Vec2(tv.at(k, 0), tv.at(k, 1)) - q;
    total += residual[k].squaredNorm();
  }
  if (n_valid == 0) throw UndefinedLoss("equivariance_loss: no landmark stays inside the target image");
  return make_op(Tensor::scalar(total), {coords_s, coords_t},
                 [residual = std::move(residual), jac = std::move(jac), valid = std::move(valid), k_count](Node& n) {
                   Tensor* gs = input_grad(n, 0);
                   Tensor* gt = input_grad(n, 1);
                   const double gout = n.grad[0];
                   for (int k = 0; k < k_count; ++k) {
                     if (!valid[k]) continue;
                     const Vec2 d = 2.0 * gout * residual[k];
                     if (gt) {
                       gt->at(k, 0) += d.x();
                       gt->at(k, 1) += d.y();
                     }
                     if (gs) {
                       const Vec2 back = -jac[k].transpose() * d;
                       gs->at(k, 0) += back.x();
                       gs->at(k, 1) += back.y();
                     }
                   }
                 });
}

}  // namespace semalign
