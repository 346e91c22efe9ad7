#include "semalign/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "semalign/errors.hpp"
#include "semalign/ops.hpp"

namespace semalign {

namespace {

// (C,H,W) -> (H*W, C) so that descriptors are contiguous.
std::vector<double> to_cell_major(const Tensor& t) {
  const int c = t.channels();
  const std::size_t plane = t.plane();
  std::vector<double> out(plane * c);
  for (int ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < plane; ++i) out[i * c + ch] = t[ch * plane + i];
  }
  return out;
}

// Flat index of the clamped window neighbour of (y, x) at offset (dy, dx).
std::vector<int> window_indices(int h, int w, int r) {
  const int side = 2 * r + 1;
  std::vector<int> idx(static_cast<std::size_t>(h) * w * side * side);
  std::size_t k = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int dy = -r; dy <= r; ++dy) {
        const int yy = std::clamp(y + dy, 0, h - 1);
        for (int dx = -r; dx <= r; ++dx) {
          idx[k++] = yy * w + std::clamp(x + dx, 0, w - 1);
        }
      }
    }
  }
  return idx;
}

}  // namespace

int EncoderSpec::downsampling() const {
  int s = 1;
  for (int v : strides) s *= v;
  return s;
}

Encoder::Encoder(const EncoderSpec& spec, Rng& rng) : spec_(spec) {
  if (spec.widths.empty() || spec.widths.size() != spec.strides.size()) {
    throw ConfigError("encoder widths and strides must be non-empty and of equal length");
  }
  int in = spec.in_channels;
  for (std::size_t i = 0; i < spec.widths.size(); ++i) {
    stages_.emplace_back("encoder.conv" + std::to_string(i), in, spec.widths[i], 3, spec.strides[i], rng);
    in = spec.widths[i];
  }
}

Var Encoder::forward(const Var& image) const {
  if (!initialized()) throw ConfigError("feature encoder is not initialized");
  Var x = image;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    x = stages_[i].forward(x);
    if (i + 1 < stages_.size()) x = relu(x);
  }
  return x;
}

std::vector<NamedParam> Encoder::parameters() const {
  std::vector<NamedParam> out;
  for (const Conv2d& c : stages_) c.collect(out);
  return out;
}

FeatureMap normalize_features(const Var& raw) { return FeatureMap(l2_normalize_channels(raw, kNormGuard)); }

FeatureMap extract_features(const Var& image, const Encoder& encoder) {
  return normalize_features(encoder.forward(image));
}

FeatureMap extract_features(const Var& image, const FeatureProvider& provider) {
  if (!provider) throw ConfigError("feature provider is empty");
  return normalize_features(provider(image));
}

SimilarityVolume similarity_volume(const FeatureMap& a, const FeatureMap& b, int radius) {
  const Tensor& av = a.values().value();
  const Tensor& bv = b.values().value();
  if (!av.same_shape(bv)) {
    throw ShapeError("similarity_volume: feature maps differ " + av.shape_string() + " vs " + bv.shape_string());
  }
  if (radius < 1) throw WindowError("similarity window radius must be >= 1");
  const int c = av.channels(), h = av.height(), w = av.width();
  const int n = (2 * radius + 1) * (2 * radius + 1);
  const std::size_t plane = av.plane();

  auto fa = std::make_shared<std::vector<double>>(to_cell_major(av));
  auto fb = std::make_shared<std::vector<double>>(to_cell_major(bv));
  auto idx = std::make_shared<std::vector<int>>(window_indices(h, w, radius));
  auto norms = std::make_shared<std::vector<double>>(plane, 0.0);

  Tensor out = Tensor::chw(n, h, w);
  std::vector<double> raw(n);
  for (std::size_t i = 0; i < plane; ++i) {
    const double* ai = fa->data() + i * c;
    double ss = 0.0;
    for (int o = 0; o < n; ++o) {
      const double* bj = fb->data() + static_cast<std::size_t>((*idx)[i * n + o]) * c;
      double dot = 0.0;
      for (int ch = 0; ch < c; ++ch) dot += ai[ch] * bj[ch];
      raw[o] = dot;
      ss += dot * dot;
    }
    const double norm = std::sqrt(ss);
    (*norms)[i] = norm;
    if (norm < kNormGuard) continue;
    for (int o = 0; o < n; ++o) out[o * plane + i] = raw[o] / norm;
  }

  Var scores = make_op(std::move(out), {a.values(), b.values()}, [fa, fb, idx, norms, c, n, plane](Node& node) {
    Tensor* ga = input_grad(node, 0);
    Tensor* gb = input_grad(node, 1);
    std::vector<double> graw(n);
    for (std::size_t i = 0; i < plane; ++i) {
      const double norm = (*norms)[i];
      if (norm < kNormGuard) continue;
      // score = raw / |raw|  =>  d raw = (g - s <s,g>) / |raw|
      double dot = 0.0;
      for (int o = 0; o < n; ++o) dot += node.value[o * plane + i] * node.grad[o * plane + i];
      for (int o = 0; o < n; ++o) {
        graw[o] = (node.grad[o * plane + i] - node.value[o * plane + i] * dot) / norm;
      }
      const double* ai = fa->data() + i * c;
      for (int o = 0; o < n; ++o) {
        if (graw[o] == 0.0) continue;
        const std::size_t j = static_cast<std::size_t>((*idx)[i * n + o]);
        const double* bj = fb->data() + j * c;
        if (ga) {
          for (int ch = 0; ch < c; ++ch) (*ga)[ch * plane + i] += graw[o] * bj[ch];
        }
        if (gb) {
          for (int ch = 0; ch < c; ++ch) (*gb)[ch * plane + j] += graw[o] * ai[ch];
        }
      }
    }
  });
  return {std::move(scores), radius, VolumeKind::kCross};
}

SimilarityVolume self_similarity(const FeatureMap& f, int radius) {
  SimilarityVolume v = similarity_volume(f, f, radius);
  v.kind = VolumeKind::kSelf;
  return v;
}

}  // namespace semalign
