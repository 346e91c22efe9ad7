#ifndef SEMALIGN_ALIGNER_HPP_
#define SEMALIGN_ALIGNER_HPP_

#include <utility>
#include <vector>

#include "semalign/autograd.hpp"
#include "semalign/geometry.hpp"
#include "semalign/nn.hpp"
#include "semalign/similarity.hpp"

namespace semalign {

constexpr double kLogVarClamp = 10.0;

// Per-cell u = log(sigma), (1,H,W), clamped to [-10, 10].
struct UncertaintyMap {
  Var logvar;

  int height() const { return logvar.value().height(); }
  int width() const { return logvar.value().width(); }
  double sigma(int y, int x) const;
};

struct AlignmentOutput {
  FlowField flow;
  UncertaintyMap uncertainty;
};

struct AnchorSet {
  std::vector<std::pair<Vec2, Vec2>> pairs;  // (source, target), normalized units
};

struct AlignerSpec {
  // Encoder-decoder widths: full-resolution stem, then three stride-2 levels.
  std::vector<int> widths{32, 48, 64, 64};
  std::vector<int> uncertainty_widths{32, 32};
};

// Alignment head (W_A, flow offsets) and uncertainty head (W_C), both fed by
// the cross-similarity volume.
class Aligner {
 public:
  Aligner() = default;
  Aligner(const AlignerSpec& spec, int similarity_channels, Rng& rng);

  AlignmentOutput forward(const SimilarityVolume& cross) const;
  std::vector<NamedParam> alignment_parameters() const;
  std::vector<NamedParam> uncertainty_parameters() const;

 private:
  AlignerSpec spec_;
  Conv2d stem_, down1_, down2_, down3_, up2_, up1_, up0_, offset_;
  std::vector<Conv2d> uncertainty_layers_;
  Conv2d logvar_;
};

AlignmentOutput align(const SimilarityVolume& cross, const Aligner& aligner);

// Per-cell cross-entropy of the positive (centre) candidate among the
// (2r+1)^2 window of the warped target features, logits temp * <Fs_i, W_j>.
// Returns (1,H,W).
Var alignment_cross_entropy(const FeatureMap& source, const Var& warped_target, int radius, double temperature);

// mean_i exp(-u_i) * ce_i + u_i
Var uncertainty_weighted_mean(const Var& per_cell, const Var& logvar);

// Probabilistic alignment loss: warp Ft by the flow, per-cell cross entropy
// against the window centre, weighted by 1/sigma plus log(sigma), averaged.
Var alignment_prob_loss(const FeatureMap& source, const FeatureMap& target, const AlignmentOutput& out, int radius,
                        double temperature);

// Mean squared distance between target anchors and the flow sampled at the
// source anchors.
Var anchor_loss(const AlignmentOutput& out, const AnchorSet& anchors);

}  // namespace semalign

#endif  // SEMALIGN_ALIGNER_HPP_
