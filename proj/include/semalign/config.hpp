#ifndef SEMALIGN_CONFIG_HPP_
#define SEMALIGN_CONFIG_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "semalign/datagen.hpp"
#include "semalign/trainer.hpp"

namespace semalign {

// Everything a command-line run needs. The joint-training dataset uses
// `data`; pretraining draws from the same generator with semantic pairs and
// occlusion switched off.
struct RunConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  int dataset_size = 300;
  std::array<double, 3> split{0.7, 0.2, 0.1};
  ModelConfig model;
  TrainConfig train;
  AdamConfig adam;
  int pretrain_epochs = 2;
  int alternations = 2;
  std::vector<double> pck_alphas{0.05, 0.1, 0.15};
  double report_alpha = 0.1;

  RunConfig();
};

DataConfig pretrain_stream_config(const RunConfig& config);

// Flat "key = value" text; '#' starts a comment; lists are comma separated.
// Unknown keys and malformed values throw ConfigError naming the key.
RunConfig parse_config(std::istream& in, const std::string& origin = "<config>");
RunConfig load_config(const std::filesystem::path& path);
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

// Every key with its current value, one per line, in a form parse_config reads back.
std::string format_config(const RunConfig& config);
std::vector<std::string> config_keys();

}  // namespace semalign

#endif  // SEMALIGN_CONFIG_HPP_
