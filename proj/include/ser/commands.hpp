#pragma once

#include "ser/config.hpp"
#include "ser/gradcheck.hpp"

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace ser {

/// Cache file stem for a manifest path: sanitized path plus a short content
/// hash of the path itself, so distinct paths never collide.
std::string cache_stem(const std::string& manifest_path);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);

struct FeaturizeSummary {
  int written = 0;
  int skipped = 0;
  std::vector<std::string> failures;  // "path: error"
};

/// Each subcommand returns a process exit code and throws ser::Error for
/// failures that stop it outright.
int cmd_synth(const std::filesystem::path& out_dir, int n_per_class, std::uint64_t seed, std::ostream& out);
FeaturizeSummary featurize(const RunConfig& cfg);
int cmd_featurize(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_train(const RunConfig& cfg, std::ostream& out);
int cmd_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint, Split split, std::ostream& out);
int cmd_predict(const RunConfig& cfg, const std::filesystem::path& checkpoint, const std::filesystem::path& wav,
                std::ostream& out);
int cmd_gradcheck(const GradcheckOptions& opt, std::ostream& out);

/// Loads one split of the feature cache in the model's input layout.
Dataset load_cached_split(const RunConfig& cfg, Split split);

/// Parses argv-style arguments (without the program name) and dispatches.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ser
