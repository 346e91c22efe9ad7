#ifndef SEMALIGN_DETECTOR_HPP_
#define SEMALIGN_DETECTOR_HPP_

#include <vector>

#include "semalign/autograd.hpp"
#include "semalign/geometry.hpp"
#include "semalign/nn.hpp"
#include "semalign/similarity.hpp"

namespace semalign {

struct DetectorSpec {
  int num_landmarks = 10;
  std::vector<int> widths{64, 64, 64};
  double margin = 0.05;  // squared normalized distance
  double lambda_con = 1.0;
  double lambda_sep = 1.0;

  void validate() const;
};

// Margin for K landmarks: 0.05 / 0.03 / 0.02 for K = 10 / 15 / 30.
double default_margin(int num_landmarks);

// Channel 0 of prob is the background; channels 1..K are landmarks.
struct LandmarkMaps {
  Var raw;     // (K+1,H,W) detection scores
  Var prob;    // (K+1,H,W) channel softmax of raw
  Var coords;  // (K,2) soft-argmax positions, normalized units

  int num_landmarks() const { return prob.value().channels() - 1; }
  int height() const { return prob.value().height(); }
  int width() const { return prob.value().width(); }
  Vec2 coord(int k) const { return {coords.value().at(k, 0), coords.value().at(k, 1)}; }
};

// Landmark head (W_D): three 3x3 conv layers over [features, self-similarity]
// followed by a 1x1 projection to K+1 score maps.
class Detector {
 public:
  Detector() = default;
  Detector(const DetectorSpec& spec, int feature_channels, int similarity_channels, Rng& rng);

  const DetectorSpec& spec() const { return spec_; }
  Var scores(const FeatureMap& features, const SimilarityVolume& self_volume) const;
  std::vector<NamedParam> parameters() const;

 private:
  DetectorSpec spec_;
  std::vector<Conv2d> layers_;
  Conv2d head_;
};

LandmarkMaps detect(const FeatureMap& features, const SimilarityVolume& self_volume, const Detector& detector);

// Probability maps and soft-argmax coordinates from raw (K+1,H,W) scores.
LandmarkMaps maps_from_scores(const Var& raw);

// Expected grid coordinate of every landmark channel (1..K) of a (K+1,H,W)
// probability map.
Var soft_argmax(const Var& prob);

// Sum over landmarks of the probability-weighted spatial variance around the
// soft-argmax position (both axes).
Var concentration_loss(const LandmarkMaps& maps);

// sum_k sum_{k' != k} max(0, c - |p_k - p_k'|^2) over a (K,2) coordinate list.
Var separation_loss(const Var& coords, double margin);
inline Var separation_loss(const LandmarkMaps& maps, double margin) {
  return separation_loss(maps.coords, margin);
}

Var detection_loss(const LandmarkMaps& maps, const DetectorSpec& spec);

// sum_k |p_t^k - T(p_s^k)|^2 over landmarks whose warped source position lies
// inside the target image.
Var equivariance_loss(const LandmarkMaps& maps_s, const LandmarkMaps& maps_t, const DenseGT& gt);
Var equivariance_loss(const Var& coords_s, const Var& coords_t, const ParametricWarp& warp);

}  // namespace semalign

#endif  // SEMALIGN_DETECTOR_HPP_
