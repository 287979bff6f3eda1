#pragma once

#include "ser/dataset.hpp"
#include "ser/features.hpp"
#include "ser/model.hpp"
#include "ser/train.hpp"

#include <filesystem>
#include <string>
#include <string_view>

namespace ser {

struct PathsConfig {
  std::string manifest = "manifest.csv";
  std::string cache_dir = "cache";
  std::string run_dir = "runs";
  std::string report_dir = "reports";

  bool operator==(const PathsConfig&) const = default;
};

/// Everything a subcommand needs. Feature geometry (n_mels, target_frames,
/// n_mfcc) lives only in `features`; arch() copies it into the model config.
struct RunConfig {
  FeatureConfig features;
  ArchConfig model;
  TrainConfig train;
  SplitRatios splits;
  PathsConfig paths;
  int workers = 0;  // featurize threads; 0 = hardware concurrency

  ArchConfig arch() const;
  /// Throws ConfigError when any component invariant fails.
  void validate() const;

  bool operator==(const RunConfig&) const = default;
};

/// INI text with sections [audio] [features] [model] [train] [paths]. Missing
/// keys keep their defaults; unknown keys are errors.
RunConfig parse_config(std::string_view ini_text);
RunConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const RunConfig& cfg);

/// Applies one `section.key=value` override.
void apply_override(RunConfig& cfg, std::string_view assignment);

/// Name of the environment variable holding the default config path.
inline constexpr const char* kConfigEnvVar = "SER_CONFIG";

}  // namespace ser
