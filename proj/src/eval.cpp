#include "semalign/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>

#include <Eigen/Dense>

#include "json.hpp"
#include "semalign/errors.hpp"
#include "semalign/ops.hpp"

namespace semalign {

namespace {

Vec2 sample_flow(const FlowField& flow, const Vec2& p) {
  const Tensor& c = flow.coords().value();
  const Tensor pt({1, 2}, {p.x(), p.y()});
  // Bilinear lookup through the same sampler the training path uses.
  const Tensor out = sample_points(Var(c), Var(pt)).value();
  return {out.at(0, 0), out.at(0, 1)};
}

}  // namespace

double transfer_error_px(const FlowField& flow, const KeypointPair& kp, ImageSize image) {
  const Vec2 d = sample_flow(flow, kp.source) - kp.target;
  const double dx = d.x() * 0.5 * (image.width - 1);
  const double dy = d.y() * 0.5 * (image.height - 1);
  return std::sqrt(dx * dx + dy * dy);
}

int count_correct(const FlowField& flow, std::span<const KeypointPair> pairs, double alpha, ImageSize image) {
  if (alpha <= 0) throw ConfigError("PCK threshold must be positive");
  const double threshold = alpha * std::max(image.height, image.width);
  int correct = 0;
  for (const KeypointPair& kp : pairs) {
    if (transfer_error_px(flow, kp, image) <= threshold) ++correct;
  }
  return correct;
}

double pck(const FlowField& flow, std::span<const KeypointPair> pairs, double alpha, ImageSize image) {
  if (pairs.empty()) throw DataError("PCK needs at least one keypoint pair");
  return static_cast<double>(count_correct(flow, pairs, alpha, image)) / static_cast<double>(pairs.size());
}

std::vector<KeypointPair> keypoint_pairs(const SamplePair& pair) {
  std::vector<KeypointPair> out;
  for (std::size_t k = 0; k < pair.landmarks_s.size() && k < pair.landmarks_t.size(); ++k) {
    if (in_unit_box(pair.landmarks_t[k])) out.push_back({pair.landmarks_s[k], pair.landmarks_t[k]});
  }
  return out;
}

double PCKReport::at(double alpha) const {
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (std::abs(alphas[i] - alpha) < 1e-12) return fractions[i];
  }
  throw ConfigError("PCK report has no alpha " + std::to_string(alpha));
}

PCKReport pck_report(std::span<const FlowField> flows, std::span<const SamplePair* const> pairs,
                     const std::vector<double>& alphas) {
  if (flows.size() != pairs.size()) throw ShapeError("one flow per pair required");
  if (alphas.empty()) throw ConfigError("no PCK thresholds given");
  PCKReport report;
  report.alphas = alphas;
  std::vector<long> correct(alphas.size(), 0);
  std::map<int, std::vector<long>> cat_correct;
  std::map<int, long> cat_total;
  long total = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const SamplePair& p = *pairs[i];
    const auto kps = keypoint_pairs(p);
    const ImageSize size{p.source.height(), p.source.width()};
    auto& cc = cat_correct[p.category];
    cc.resize(alphas.size(), 0);
    for (std::size_t a = 0; a < alphas.size(); ++a) {
      const int c = count_correct(flows[i], kps, alphas[a], size);
      correct[a] += c;
      cc[a] += c;
    }
    total += static_cast<long>(kps.size());
    cat_total[p.category] += static_cast<long>(kps.size());
  }
  if (total == 0) throw DataError("no keypoints to evaluate");
  for (long c : correct) report.fractions.push_back(static_cast<double>(c) / total);
  for (const auto& [cat, cc] : cat_correct) {
    auto& f = report.per_category[cat];
    for (long c : cc) f.push_back(cat_total[cat] ? static_cast<double>(c) / cat_total[cat] : 0.0);
    report.category_keypoints[cat] = static_cast<int>(cat_total[cat]);
  }
  report.samples = static_cast<int>(pairs.size());
  report.keypoints = static_cast<int>(total);
  return report;
}

std::vector<FlowField> predict_flows(const Model& model, std::span<const SamplePair* const> pairs) {
  std::vector<FlowField> flows;
  const int r = model.config().radius;
  for (const SamplePair* p : pairs) {
    const FeatureMap fs = extract_features(Var(p->source), model.encoder());
    const FeatureMap ft = extract_features(Var(p->target), model.encoder());
    flows.push_back(align(similarity_volume(fs, ft, r), model.aligner()).flow);
  }
  return flows;
}

PCKReport evaluate_pck(const Model& model, std::span<const SamplePair* const> pairs,
                       const std::vector<double>& alphas) {
  const auto flows = predict_flows(model, pairs);
  return pck_report(flows, pairs, alphas);
}

RegressionReport regress_landmarks(std::span<const LandmarkSet> train_pred, std::span<const LandmarkSet> train_gt,
                                   std::span<const LandmarkSet> test_pred, std::span<const LandmarkSet> test_gt,
                                   int ref_a, int ref_b) {
  if (train_pred.size() != train_gt.size() || test_pred.size() != test_gt.size()) {
    throw ShapeError("regression: predictions and ground truth differ in image count");
  }
  if (train_pred.empty() || test_pred.empty()) throw DataError("regression needs training and test images");
  const int k = static_cast<int>(train_pred.front().size());
  const int k_gt = static_cast<int>(train_gt.front().size());
  if (k == 0 || k_gt == 0) throw DataError("regression needs landmarks");
  if (ref_a < 0 || ref_b < 0 || ref_a >= k_gt || ref_b >= k_gt || ref_a == ref_b) {
    throw ConfigError("invalid reference landmarks for error normalization");
  }
  const auto n_train = static_cast<int>(train_pred.size());
  if (n_train < 2 * k) {
    throw DataError("regression needs at least " + std::to_string(2 * k) + " training images, got " +
                    std::to_string(n_train));
  }
  auto flatten = [](const LandmarkSet& s, int expected) {
    if (static_cast<int>(s.size()) != expected) throw ShapeError("inconsistent landmark count");
    Eigen::RowVectorXd row(2 * expected);
    for (int i = 0; i < expected; ++i) {
      row(2 * i) = s[i].x();
      row(2 * i + 1) = s[i].y();
    }
    return row;
  };
  Eigen::MatrixXd x(n_train, 2 * k), y(n_train, 2 * k_gt);
  for (int i = 0; i < n_train; ++i) {
    x.row(i) = flatten(train_pred[i], k);
    y.row(i) = flatten(train_gt[i], k_gt);
  }

  RegressionReport report;
  report.k = k;
  report.k_gt = k_gt;
  report.train_images = n_train;
  report.test_images = static_cast<int>(test_pred.size());
  Eigen::MatrixXd w;
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() < 2 * k) {
    std::cerr << "warning: landmark regression design matrix is rank deficient (rank " << qr.rank() << " < "
              << 2 * k << "); using ridge 1e-6\n";
    report.regularized = true;
    const Eigen::MatrixXd gram = x.transpose() * x + 1e-6 * Eigen::MatrixXd::Identity(2 * k, 2 * k);
    w = gram.ldlt().solve(x.transpose() * y);
  } else {
    w = qr.solve(y);
  }

  report.per_landmark.assign(k_gt, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < test_pred.size(); ++i) {
    const Eigen::RowVectorXd row = flatten(test_pred[i], k);
    const Eigen::RowVectorXd gt_row = flatten(test_gt[i], k_gt);
    const Eigen::RowVectorXd pred = row * w;
    const double ref = (test_gt[i][ref_a] - test_gt[i][ref_b]).norm();
    if (ref < 1e-12) throw DataError("reference landmarks coincide; cannot normalize the error");
    double image_err = 0.0;
    for (int l = 0; l < k_gt; ++l) {
      const double e = std::hypot(pred(2 * l) - gt_row(2 * l), pred(2 * l + 1) - gt_row(2 * l + 1)) / ref;
      report.per_landmark[l] += e;
      image_err += e;
    }
    total += image_err / k_gt;
  }
  for (double& e : report.per_landmark) e /= static_cast<double>(test_pred.size());
  report.mean_error = total / static_cast<double>(test_pred.size());
  return report;
}

LandmarkEval evaluate_landmarks(const Model& model, std::span<const SamplePair* const> train,
                                std::span<const SamplePair* const> test) {
  struct Sets {
    std::vector<LandmarkSet> train_pred, train_gt, test_pred, test_gt;
  };
  std::map<int, Sets> by_cat;
  auto predict = [&model](const SamplePair& p) {
    const LandmarkMaps maps = detect_landmarks(model, p.source);
    LandmarkSet out;
    for (int k = 0; k < maps.num_landmarks(); ++k) out.push_back(maps.coord(k));
    return out;
  };
  for (const SamplePair* p : train) {
    by_cat[p->category].train_pred.push_back(predict(*p));
    by_cat[p->category].train_gt.push_back(p->landmarks_s);
  }
  for (const SamplePair* p : test) {
    by_cat[p->category].test_pred.push_back(predict(*p));
    by_cat[p->category].test_gt.push_back(p->landmarks_s);
  }
  LandmarkEval eval;
  double weighted = 0.0;
  int n = 0;
  for (auto& [cat, s] : by_cat) {
    if (s.test_pred.empty()) continue;
    if (s.train_pred.empty()) throw DataError("category " + category_name(cat) + " has no training images");
    const int k_gt = static_cast<int>(s.train_gt.front().size());
    RegressionReport r = regress_landmarks(s.train_pred, s.train_gt, s.test_pred, s.test_gt, 0, k_gt / 2);
    weighted += r.mean_error * r.test_images;
    n += r.test_images;
    eval.per_category[cat] = std::move(r);
  }
  if (n == 0) throw DataError("no test images for landmark regression");
  eval.mean_error = weighted / n;
  return eval;
}

double equivariance_residual(const Model& model, std::span<const SamplePair> pairs) {
  double total = 0.0;
  int counted = 0;
  for (const SamplePair& p : pairs) {
    const LandmarkMaps ms = detect_landmarks(model, p.source);
    const LandmarkMaps mt = detect_landmarks(model, p.target);
    double sum = 0.0;
    int valid = 0;
    for (int k = 0; k < ms.num_landmarks(); ++k) {
      const Vec2 q = p.gt.warp.apply(ms.coord(k));
      if (!in_unit_box(q)) continue;
      sum += (mt.coord(k) - q).norm();
      ++valid;
    }
    if (valid == 0) continue;
    total += sum / valid;
    ++counted;
  }
  if (counted == 0) throw DataError("no pair has a valid landmark for the equivariance residual");
  return total / counted;
}

OcclusionSigma occlusion_sigma(const Model& model, const SamplePair& pair) {
  const int r = model.config().radius;
  const FeatureMap fs = extract_features(Var(pair.source), model.encoder());
  const FeatureMap ft = extract_features(Var(pair.target), model.encoder());
  const AlignmentOutput out = align(similarity_volume(fs, ft, r), model.aligner());
  const int h = out.uncertainty.height(), w = out.uncertainty.width();
  const auto mask = occluded_source_cells(pair, h, w);
  OcclusionSigma s;
  int visible = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double sigma = out.uncertainty.sigma(y, x);
      if (mask[static_cast<std::size_t>(y) * w + x]) {
        s.occluded += sigma;
        ++s.occluded_cells;
      } else {
        s.visible += sigma;
        ++visible;
      }
    }
  }
  if (s.occluded_cells > 0) s.occluded /= s.occluded_cells;
  if (visible > 0) s.visible /= visible;
  return s;
}

void write_report(const std::filesystem::path& path, std::span<const ReportLine> lines) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write report " + path.string());
  for (const ReportLine& l : lines) {
    const nlohmann::json j = {{"metric", l.metric}, {"alpha", l.alpha}, {"value", l.value},
                              {"category", l.category}, {"n", l.n}};
    out << j.dump() << '\n';
  }
}

std::vector<ReportLine> pck_report_lines(const PCKReport& report) {
  std::vector<ReportLine> lines;
  for (std::size_t a = 0; a < report.alphas.size(); ++a) {
    lines.push_back({"pck", report.alphas[a], report.fractions[a], "all", report.keypoints});
    for (const auto& [cat, f] : report.per_category) {
      lines.push_back({"pck", report.alphas[a], f[a], category_name(cat), report.category_keypoints.at(cat)});
    }
  }
  return lines;
}

std::vector<ReportLine> landmark_report_lines(const LandmarkEval& eval) {
  std::vector<ReportLine> lines;
  int n = 0;
  for (const auto& [cat, r] : eval.per_category) {
    lines.push_back({"landmark_error", 0.0, r.mean_error, category_name(cat), r.test_images});
    n += r.test_images;
  }
  lines.push_back({"landmark_error", 0.0, eval.mean_error, "all", n});
  return lines;
}

}  // namespace semalign
