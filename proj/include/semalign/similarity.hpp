#ifndef SEMALIGN_SIMILARITY_HPP_
#define SEMALIGN_SIMILARITY_HPP_

#include <functional>
#include <vector>

#include "semalign/autograd.hpp"
#include "semalign/nn.hpp"

namespace semalign {

// Per-cell descriptors, (C,H,W), unit L2 norm along channels (or zero).
class FeatureMap {
 public:
  FeatureMap() = default;
  explicit FeatureMap(Var values) : values_(std::move(values)) {}

  const Var& values() const { return values_; }
  int channels() const { return values_.value().channels(); }
  int height() const { return values_.value().height(); }
  int width() const { return values_.value().width(); }

 private:
  Var values_;
};

enum class VolumeKind { kSelf, kCross };

// Windowed match scores: channel o = (dy + r) * (2r + 1) + (dx + r) holds the
// renormalized score of offset (dy, dx). Shape ((2r+1)^2, H, W).
struct SimilarityVolume {
  Var scores;
  int radius = 0;
  VolumeKind kind = VolumeKind::kCross;

  int height() const { return scores.value().height(); }
  int width() const { return scores.value().width(); }
  int candidates() const { return (2 * radius + 1) * (2 * radius + 1); }
};

struct EncoderSpec {
  std::vector<int> widths{16, 32, 64, 64};
  std::vector<int> strides{1, 2, 2, 1};
  int in_channels = 3;

  int downsampling() const;
  int out_channels() const { return widths.empty() ? 0 : widths.back(); }
};

// Fully convolutional feature extractor (W_F): 3x3 conv stages with ReLU
// between stages and a linear last stage.
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderSpec& spec, Rng& rng);

  bool initialized() const { return !stages_.empty(); }
  const EncoderSpec& spec() const { return spec_; }
  Var forward(const Var& image) const;
  std::vector<NamedParam> parameters() const;

 private:
  EncoderSpec spec_;
  std::vector<Conv2d> stages_;
};

// Any callable returning raw (unnormalized) features for an image.
using FeatureProvider = std::function<Var(const Var& image)>;

constexpr double kNormGuard = 1e-8;

FeatureMap normalize_features(const Var& raw);
FeatureMap extract_features(const Var& image, const Encoder& encoder);
FeatureMap extract_features(const Var& image, const FeatureProvider& provider);

// Cosine scores between a_i and b_j for j in the clamped window around i,
// renormalized by the L2 norm of the cell's score vector.
SimilarityVolume similarity_volume(const FeatureMap& a, const FeatureMap& b, int radius);
SimilarityVolume self_similarity(const FeatureMap& f, int radius);

}  // namespace semalign

#endif  // SEMALIGN_SIMILARITY_HPP_
