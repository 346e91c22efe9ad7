#ifndef SEMALIGN_DATAGEN_HPP_
#define SEMALIGN_DATAGEN_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "semalign/geometry.hpp"
#include "semalign/rng.hpp"
#include "semalign/tensor.hpp"

namespace semalign {

enum class Split { kTrain, kVal, kTest };
std::string split_name(Split s);
Split parse_split(const std::string& s);

enum class ShapeCategory { kPolygon = 0, kStar = 1, kEllipse = 2 };
constexpr int kNumCategories = 3;
std::string category_name(int category);

struct ShapeSpec {
  int category = 0;
  int vertex_count = 6;  // polygon outline vertices; 0 for ellipses
  std::uint64_t texture_seed = 0;
  int landmark_count = 6;
  int image_size = 64;

  void validate() const;
};

ShapeSpec default_shape_spec(int category, int image_size, std::uint64_t texture_seed);

struct ShapeInstance {
  Tensor image;                 // (3,H,W) in [0,1]
  std::vector<Vec2> landmarks;  // canonical feature points, normalized units
};

// Textured shape on a cluttered background. Geometry follows `seed`,
// colours, texture and background follow spec.texture_seed.
ShapeInstance generate_shape(const ShapeSpec& spec, std::uint64_t seed);

struct WarpRanges {
  double max_rotation_deg = 25.0;
  double scale_min = 0.8;
  double scale_max = 1.25;
  double max_translation = 0.2;
  int tps_grid = 3;
  double tps_std = 0.08;
  double tps_probability = 0.5;
};

struct PhotometricParams {
  double brightness = 0.15;  // additive, +-
  double contrast = 0.15;    // multiplicative around 0.5, +-
  double noise_std = 0.02;
};

struct OcclusionParams {
  double probability = 0.0;
  double min_fraction = 0.05;
  double max_fraction = 0.15;
};

struct PairOptions {
  WarpRanges warp;
  PhotometricParams photometric;
  OcclusionParams occlusion;
  double validity_floor = 0.6;
  int max_retries = 5;
};

ParametricWarp random_warp(const WarpRanges& ranges, Rng& rng);

// Pixel box [x0, x1) x [y0, y1) of the target image.
struct OcclusionBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

struct SamplePair {
  std::uint64_t id = 0;
  int category = 0;
  Tensor source;  // (3,H,W)
  Tensor target;  // (3,H,W)
  DenseGT gt;     // at image resolution, source -> target
  std::vector<Vec2> landmarks_s;
  std::vector<Vec2> landmarks_t;
  std::optional<OcclusionBox> occlusion;
  std::vector<std::uint8_t> occlusion_mask;  // target pixels, row-major; empty without occlusion
  Split split = Split::kTrain;
};

// Target = photometric jitter of the source (or of `target_appearance`, a
// re-rendering of the same geometry) backward-warped by `warp`.
SamplePair make_pair(const ShapeInstance& source, const ParametricWarp& warp, const PhotometricParams& photometric,
                     const OcclusionParams& occlusion, std::uint64_t seed,
                     const Tensor* target_appearance = nullptr);

// Random warp drawn from options.warp. Degenerate warps and warps whose
// validity coverage is below the floor are redrawn with the next seed, up to
// options.max_retries times.
SamplePair make_pair(const ShapeInstance& source, const PairOptions& options, std::uint64_t seed,
                     const Tensor* target_appearance = nullptr);

struct DataConfig {
  int image_size = 64;
  std::vector<int> categories{0, 1, 2};
  PairOptions pair;
  // Semantic pairs render the target from a differently textured instance of
  // the same geometry; otherwise the target is the warped source itself.
  bool semantic = false;
};

// Deterministic pair stream: pair #n depends only on (seed, n).
class PairGenerator {
 public:
  PairGenerator(DataConfig config, std::uint64_t seed) : config_(std::move(config)), seed_(seed) {}
  SamplePair at(std::uint64_t index) const;
  const DataConfig& config() const { return config_; }

 private:
  DataConfig config_;
  std::uint64_t seed_;
};

struct Manifest {
  std::vector<std::uint64_t> train, val, test;
};

// Seeded shuffle, then consecutive blocks of round(ratio * n) ids.
Manifest split_dataset(std::span<const std::uint64_t> ids, const std::array<double, 3>& ratios, std::uint64_t seed);

// Generates `count` pairs from the stream and tags each with its split.
std::vector<SamplePair> generate_dataset(const DataConfig& config, std::uint64_t seed, int count,
                                         const std::array<double, 3>& ratios);

std::vector<const SamplePair*> select_split(std::span<const SamplePair> pairs, Split split);

// Source feature-grid cells whose ground-truth match lands in the occluder.
std::vector<std::uint8_t> occluded_source_cells(const SamplePair& pair, int height, int width);

// Flow files: 16-byte header (magic "SFLW", uint32 LE height, width,
// channels) followed by float32 LE values in (row, column, channel) order.
void write_flow(const std::filesystem::path& path, const Tensor& flow_chw);
Tensor read_flow(const std::filesystem::path& path);

// Dataset directory: images/, flows/, manifest.jsonl.
void write_dataset(const std::filesystem::path& dir, std::span<const SamplePair> pairs);
std::vector<SamplePair> read_dataset(const std::filesystem::path& dir);

}  // namespace semalign

#endif  // SEMALIGN_DATAGEN_HPP_
