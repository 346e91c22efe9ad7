#include "semalign/aligner.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "semalign/errors.hpp"
#include "semalign/ops.hpp"

namespace semalign {

double UncertaintyMap::sigma(int y, int x) const { return std::exp(logvar.value().at(0, y, x)); }

Aligner::Aligner(const AlignerSpec& spec, int similarity_channels, Rng& rng) : spec_(spec) {
  if (spec.widths.size() != 4) throw ConfigError("aligner needs exactly 4 encoder-decoder widths");
  if (spec.uncertainty_widths.empty()) throw ConfigError("uncertainty head needs at least one layer");
  const auto& w = spec.widths;
  stem_ = Conv2d("aligner.stem", similarity_channels, w[0], 3, 1, rng);
  down1_ = Conv2d("aligner.down1", w[0], w[1], 3, 2, rng);
  down2_ = Conv2d("aligner.down2", w[1], w[2], 3, 2, rng);
  down3_ = Conv2d("aligner.down3", w[2], w[3], 3, 2, rng);
  up2_ = Conv2d("aligner.up2", w[3] + w[2], w[2], 3, 1, rng);
  up1_ = Conv2d("aligner.up1", w[2] + w[1], w[1], 3, 1, rng);
  up0_ = Conv2d("aligner.up0", w[1] + w[0], w[0], 3, 1, rng);
  offset_ = Conv2d("aligner.offset", w[0], 2, 3, 1, rng, /*zero_init=*/true);

  int in = similarity_channels;
  for (std::size_t i = 0; i < spec.uncertainty_widths.size(); ++i) {
    uncertainty_layers_.emplace_back("uncertainty.conv" + std::to_string(i), in, spec.uncertainty_widths[i], 3, 1,
                                     rng);
    in = spec.uncertainty_widths[i];
  }
  logvar_ = Conv2d("uncertainty.logvar", in, 1, 1, 1, rng, /*zero_init=*/true);
}

AlignmentOutput Aligner::forward(const SimilarityVolume& cross) const {
  if (cross.kind != VolumeKind::kCross) throw KindError("align() needs a cross-similarity volume");
  const Var& c = cross.scores;
  const int h = cross.height(), w = cross.width();

  Var s0 = relu(stem_.forward(c));
  Var s1 = relu(down1_.forward(s0));
  Var s2 = relu(down2_.forward(s1));
  Var s3 = relu(down3_.forward(s2));
  auto up = [](const Var& coarse, const Var& skip) {
    return concat_channels(upsample_nearest(coarse, skip.value().height(), skip.value().width()), skip);
  };
  Var u2 = relu(up2_.forward(up(s3, s2)));
  Var u1 = relu(up1_.forward(up(u2, s1)));
  Var u0 = relu(up0_.forward(up(u1, s0)));
  Var offset = offset_.forward(u0);
  Var flow = add(Var(make_grid(h, w).coords), offset);

  Var x = c;
  for (const Conv2d& layer : uncertainty_layers_) x = relu(layer.forward(x));
  Var logvar = clamp(logvar_.forward(x), -kLogVarClamp, kLogVarClamp);
  return {FlowField(flow), UncertaintyMap{logvar}};
}

std::vector<NamedParam> Aligner::alignment_parameters() const {
  std::vector<NamedParam> out;
  for (const Conv2d* c : {&stem_, &down1_, &down2_, &down3_, &up2_, &up1_, &up0_, &offset_}) c->collect(out);
  return out;
}

std::vector<NamedParam> Aligner::uncertainty_parameters() const {
  std::vector<NamedParam> out;
  for (const Conv2d& c : uncertainty_layers_) c.collect(out);
  logvar_.collect(out);
  return out;
}

AlignmentOutput align(const SimilarityVolume& cross, const Aligner& aligner) { return aligner.forward(cross); }

Var alignment_cross_entropy(const FeatureMap& source, const Var& warped_target, int radius, double temperature) {
  const Tensor& sv = source.values().value();
  const Tensor& tv = warped_target.value();
  if (!sv.same_shape(tv)) {
    throw ShapeError("alignment loss: feature maps differ " + sv.shape_string() + " vs " + tv.shape_string());
  }
  const int c = sv.channels(), h = sv.height(), w = sv.width();
  if (radius < 1 || radius >= std::min(h, w)) {
    throw WindowError("alignment window radius " + std::to_string(radius) + " does not fit a " + std::to_string(h) +
                      "x" + std::to_string(w) + " grid");
  }
  const int side = 2 * radius + 1, n = side * side, centre = n / 2;
  const std::size_t plane = sv.plane();

  // Softmax probabilities and neighbour indices are kept for the backward pass.
  auto probs = std::make_shared<std::vector<double>>(plane * n);
  auto nbr = std::make_shared<std::vector<int>>(plane * n);
  Tensor out = Tensor::chw(1, h, w);
  std::vector<double> logits(n);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      int o = 0;
      for (int dy = -radius; dy <= radius; ++dy) {
        const int yy = std::clamp(y + dy, 0, h - 1);
        for (int dx = -radius; dx <= radius; ++dx, ++o) {
          const std::size_t j = static_cast<std::size_t>(yy) * w + std::clamp(x + dx, 0, w - 1);
          (*nbr)[i * n + o] = static_cast<int>(j);
          double dot = 0.0;
          for (int ch = 0; ch < c; ++ch) dot += sv[ch * plane + i] * tv[ch * plane + j];
          logits[o] = temperature * dot;
        }
      }
      const double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (int k = 0; k < n; ++k) z += std::exp(logits[k] - mx);
      const double lse = mx + std::log(z);
      for (int k = 0; k < n; ++k) (*probs)[i * n + k] = std::exp(logits[k] - lse);
      out[i] = lse - logits[centre];
    }
  }

  return make_op(std::move(out), {source.values(), warped_target},
                 [probs, nbr, c, n, centre, plane, temperature](Node& node) {
                   Tensor* gs = input_grad(node, 0);
                   Tensor* gt = input_grad(node, 1);
                   const Tensor& sv = node.inputs[0]->value;
                   const Tensor& tv = node.inputs[1]->value;
                   for (std::size_t i = 0; i < plane; ++i) {
                     const double g = node.grad[i];
                     if (g == 0.0) continue;
                     for (int k = 0; k < n; ++k) {
                       // d CE / d logit_k = p_k - [k == centre]
                       const double dl = g * temperature * ((*probs)[i * n + k] - (k == centre ? 1.0 : 0.0));
                       if (dl == 0.0) continue;
                       const std::size_t j = static_cast<std::size_t>((*nbr)[i * n + k]);
                       for (int ch = 0; ch < c; ++ch) {
                         if (gs) (*gs)[ch * plane + i] += dl * tv[ch * plane + j];
                         if (gt) (*gt)[ch * plane + j] += dl * sv[ch * plane + i];
                       }
                     }
                   }
                 });
}

Var uncertainty_weighted_mean(const Var& per_cell, const Var& logvar) {
  const Tensor& cv = per_cell.value();
  const Tensor& uv = logvar.value();
  if (!cv.same_shape(uv)) throw ShapeError("uncertainty weighting: map and log-variance shapes differ");
  const double count = static_cast<double>(cv.size());
  double total = 0.0;
  for (std::size_t i = 0; i < cv.size(); ++i) total += std::exp(-uv[i]) * cv[i] + uv[i];
  return make_op(Tensor::scalar(total / count), {per_cell, logvar}, [count](Node& n) {
    Tensor* gc = input_grad(n, 0);
    Tensor* gu = input_grad(n, 1);
    const Tensor& cv = n.inputs[0]->value;
    const Tensor& uv = n.inputs[1]->value;
    const double g = n.grad[0] / count;
    for (std::size_t i = 0; i < cv.size(); ++i) {
      const double inv_sigma = std::exp(-uv[i]);
      if (gc) (*gc)[i] += g * inv_sigma;
      if (gu) (*gu)[i] += g * (1.0 - inv_sigma * cv[i]);
    }
  });
}

Var alignment_prob_loss(const FeatureMap& source, const FeatureMap& target, const AlignmentOutput& out, int radius,
                        double temperature) {
  if (out.flow.height() != source.height() || out.flow.width() != source.width() ||
      out.uncertainty.height() != source.height() || out.uncertainty.width() != source.width()) {
    throw ShapeError("alignment loss: alignment output does not match the feature grid");
  }
  Var warped = backward_warp(target.values(), out.flow);
  Var ce = alignment_cross_entropy(source, warped, radius, temperature);
  return uncertainty_weighted_mean(ce, out.uncertainty.logvar);
}

Var anchor_loss(const AlignmentOutput& out, const AnchorSet& anchors) {
  if (anchors.pairs.empty()) throw UndefinedLoss("anchor_loss: empty anchor set");
  const int count = static_cast<int>(anchors.pairs.size());
  Tensor src({count, 2}, 0.0), dst({count, 2}, 0.0);
  for (int i = 0; i < count; ++i) {
    src.at(i, 0) = anchors.pairs[i].first.x();
    src.at(i, 1) = anchors.pairs[i].first.y();
    dst.at(i, 0) = anchors.pairs[i].second.x();
    dst.at(i, 1) = anchors.pairs[i].second.y();
  }
  Var mapped = sample_points(out.flow.coords(), Var(std::move(src)));
  Var diff = sub(mapped, Var(std::move(dst)));
  // |d|^2 summed per anchor, averaged over anchors.
  const Tensor& dv = diff.value();
  double total = 0.0;
  for (double v : dv.values()) total += v * v;
  return make_op(Tensor::scalar(total / count), {diff}, [count](Node& n) {
    if (Tensor* g = input_grad(n, 0)) {
      const Tensor& dv = n.inputs[0]->value;
      for (std::size_t i = 0; i < dv.size(); ++i) (*g)[i] += 2.0 * n.grad[0] * dv[i] / count;
    }
  });
}

}  // namespace semalign
