#ifndef SEMALIGN_EVAL_HPP_
#define SEMALIGN_EVAL_HPP_

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "semalign/datagen.hpp"
#include "semalign/geometry.hpp"
#include "semalign/trainer.hpp"

namespace semalign {

struct KeypointPair {
  Vec2 source, target;  // normalized units
};

struct ImageSize {
  int height = 0;
  int width = 0;
};

// Transfer error of one keypoint in pixels: the flow is sampled bilinearly
// at the source keypoint and compared with the target keypoint.
double transfer_error_px(const FlowField& flow, const KeypointPair& kp, ImageSize image);

// Keypoints whose transfer error is <= alpha * max(H, W).
int count_correct(const FlowField& flow, std::span<const KeypointPair> pairs, double alpha, ImageSize image);

double pck(const FlowField& flow, std::span<const KeypointPair> pairs, double alpha, ImageSize image);

std::vector<KeypointPair> keypoint_pairs(const SamplePair& pair);

struct PCKReport {
  std::vector<double> alphas;
  std::vector<double> fractions;                    // parallel to alphas
  std::map<int, std::vector<double>> per_category;  // category -> fractions
  std::map<int, int> category_keypoints;
  int samples = 0;
  int keypoints = 0;

  double at(double alpha) const;
};

// Accumulates keypoint counts over all pairs (micro average).
PCKReport pck_report(std::span<const FlowField> flows, std::span<const SamplePair* const> pairs,
                     const std::vector<double>& alphas);

// Runs the aligner over every pair.
std::vector<FlowField> predict_flows(const Model& model, std::span<const SamplePair* const> pairs);
PCKReport evaluate_pck(const Model& model, std::span<const SamplePair* const> pairs,
                       const std::vector<double>& alphas);

// Landmarks as one list of points per image.
using LandmarkSet = std::vector<Vec2>;

struct RegressionReport {
  int k = 0;     // predicted landmarks per image
  int k_gt = 0;  // ground-truth landmarks per image
  double mean_error = 0;
  std::vector<double> per_landmark;  // mean normalized error per GT landmark
  int train_images = 0;
  int test_images = 0;
  bool regularized = false;  // design matrix was rank deficient
};

// Least-squares linear map (no intercept) from flattened predicted coordinates
// to flattened ground truth, fitted on the training images. Errors on the test
// images are Euclidean distances divided by |gt[ref_a] - gt[ref_b]| of the
// same image.
RegressionReport regress_landmarks(std::span<const LandmarkSet> train_pred, std::span<const LandmarkSet> train_gt,
                                   std::span<const LandmarkSet> test_pred, std::span<const LandmarkSet> test_gt,
                                   int ref_a, int ref_b);

struct LandmarkEval {
  double mean_error = 0;                      // averaged over test images
  std::map<int, RegressionReport> per_category;
};

// Fits a regressor per category from detector landmarks on the source images
// of `train` to their GT landmarks and scores it on `test`.
LandmarkEval evaluate_landmarks(const Model& model, std::span<const SamplePair* const> train,
                                std::span<const SamplePair* const> test);

// Mean over pairs of the mean landmark transfer residual |p_t - T(p_s)|
// (normalized units), valid landmarks only.
double equivariance_residual(const Model& model, std::span<const SamplePair> pairs);

// Mean sigma over occluded and non-occluded source cells of one pair.
struct OcclusionSigma {
  double occluded = 0;
  double visible = 0;
  int occluded_cells = 0;
};
OcclusionSigma occlusion_sigma(const Model& model, const SamplePair& pair);

// Line-delimited JSON reports: {"metric","alpha","value","category","n"}.
struct ReportLine {
  std::string metric;
  double alpha = 0;  // 0 when not applicable
  double value = 0;
  std::string category = "all";
  int n = 0;
};
void write_report(const std::filesystem::path& path, std::span<const ReportLine> lines);
std::vector<ReportLine> pck_report_lines(const PCKReport& report);
std::vector<ReportLine> landmark_report_lines(const LandmarkEval& eval);

}  // namespace semalign

#endif  // SEMALIGN_EVAL_HPP_
