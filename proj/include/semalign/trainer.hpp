#ifndef SEMALIGN_TRAINER_HPP_
#define SEMALIGN_TRAINER_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "semalign/aligner.hpp"
#include "semalign/datagen.hpp"
#include "semalign/detector.hpp"
#include "semalign/similarity.hpp"

namespace semalign {

enum class ParamGroup { kFeature, kDetector, kAlignment, kUncertainty };
std::string group_name(ParamGroup g);

enum class Phase { kAlign, kDetect };
std::string phase_name(Phase p);

struct PhaseConfig {
  Phase phase = Phase::kAlign;
  double lambda_d = 1.0;
  double lambda_a = 10.0;
  double lambda_j = 10.0;
  std::vector<ParamGroup> groups;

  static PhaseConfig align();   // W_F, W_A, W_C with (1, 10, 10)
  static PhaseConfig detect();  // W_F, W_D with (10, 1, 100)
  bool trains(ParamGroup g) const;
};

struct ModelConfig {
  EncoderSpec encoder;
  DetectorSpec detector;
  AlignerSpec aligner;
  int radius = 5;  // search window on the feature grid, self and cross
  double temperature = 10.0;
};

// W_F, W_D, W_A and W_C. Copies share parameter storage; use clone() for an
// independent model.
class Model {
 public:
  Model() = default;
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::uint64_t init_seed() const { return seed_; }
  const Encoder& encoder() const { return encoder_; }
  const Detector& detector() const { return detector_; }
  const Aligner& aligner() const { return aligner_; }

  std::vector<NamedParam> group(ParamGroup g) const;
  std::vector<NamedParam> parameters() const;  // all groups, fixed order
  Model clone() const;

 private:
  ModelConfig config_;
  std::uint64_t seed_ = 0;
  Encoder encoder_;
  Detector detector_;
  Aligner aligner_;
};

// FNV-1a over the raw bytes of the parameter values.
std::uint64_t checksum(std::span<const NamedParam> params);

struct PairForward {
  FeatureMap fs, ft;
  SimilarityVolume self_s, self_t, cross;
  LandmarkMaps maps_s, maps_t;
  AlignmentOutput out;
};

PairForward forward_pair(const Model& model, const Tensor& source, const Tensor& target);
LandmarkMaps detect_landmarks(const Model& model, const Tensor& image);

// mean_i exp(-u_i) * sum_k |psi_s^k(i) - [tau o psi_t^k](i)|^2 over the
// landmark channels, with psi_t warped into the source frame by the flow.
// Every landmark map is first normalized to sum to one over the grid.
// detach_sigma stops the gradient into the uncertainty map.
Var joint_loss(const LandmarkMaps& maps_s, const LandmarkMaps& maps_t, const AlignmentOutput& out,
               bool detach_sigma = false);

struct LossParts {
  Var l_d, l_a, l_j;
};

Var total_loss(const LossParts& parts, const PhaseConfig& phase);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moments and step count per named parameter (bias correction uses each
// parameter's own count, since groups are updated in alternation).
struct AdamSlot {
  Tensor m, v;
  std::int64_t steps = 0;
};

struct AdamState {
  AdamConfig config;
  std::vector<AdamSlot> slots;  // parallel to Model::parameters()
};

AdamState make_adam(const Model& model, const AdamConfig& config = {});

// Applies one update to every parameter in `active` using its accumulated
// gradient. Throws NumericalError on non-finite gradients.
void optimizer_step(const Model& model, AdamState& adam, std::span<const ParamGroup> active, double lr);

struct TrainConfig {
  int batch_size = 16;
  int pretrain_epoch_steps = 100;  // batches per pretraining epoch
  int epochs_per_phase = 2;
  double pretrain_lr = 1e-3;
  // Learning rate for alternations 1, 2-3 and 4.
  std::vector<double> learning_rates{1e-3, 1e-4, 1e-5};
  double lambda_eq = 1.0;
  double lambda_anchor = 1.0;
  int anchor_grid = 6;  // anchors per axis for pretraining
};

double learning_rate(const TrainConfig& config, int alternation);

struct LossRecord {
  std::string phase;  // "pretrain", "align" or "detect"
  int alternation = 0;
  std::int64_t step = 0;
  double total = 0, l_d = 0, l_a = 0, l_j = 0, l_eq = 0, l_anchor = 0;
};

struct EvalRecord {
  int alternation = 0;  // 0 = after pretraining
  double pck = 0;
  double landmark_error = 0;
};

struct TrainState {
  Model model;
  AdamState adam;
  int alternation = 0;
  int epoch = 0;
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  std::uint64_t stream_position = 0;  // next pretraining sample index
  std::vector<LossRecord> history;
  std::vector<EvalRecord> evals;
};

TrainState init_state(const ModelConfig& config, std::uint64_t seed);

// Uniform grid of source anchors mapped through the warp; pairs whose target
// leaves the image are dropped.
AnchorSet grid_anchors(const ParametricWarp& warp, int per_axis);

// One pretraining batch: detector on L_D + lambda_eq * equivariance, aligner on
// the anchor loss, gradients into W_F, W_D and W_A.
LossRecord pretrain_step(TrainState& state, std::span<const SamplePair> batch, const TrainConfig& config);

// One batch of the total objective under `phase`; only that phase's groups move.
LossRecord joint_step(TrainState& state, std::span<const SamplePair* const> batch, const PhaseConfig& phase,
                      double lr);

struct TrainHooks {
  std::function<void(const TrainState&, const std::string& label)> checkpoint;
  std::function<void(TrainState&)> after_alternation;
  std::function<void(const LossRecord&)> on_step;
};

void pretrain(TrainState& state, const PairGenerator& stream, int epochs, const TrainConfig& config,
              const TrainHooks& hooks = {});

// Runs `alternations` rounds of (align phase, detect phase) continuing from
// state.alternation. Throws ConfigError past the fourth alternation.
void train_joint(TrainState& state, std::span<const SamplePair> data, int alternations, const TrainConfig& config,
                 const TrainHooks& hooks = {});

constexpr int kMaxAlternations = 4;
constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace semalign

#endif  // SEMALIGN_TRAINER_HPP_
