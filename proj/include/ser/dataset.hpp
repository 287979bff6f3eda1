#pragma once

#include "ser/model.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ser {

enum class Split { Train, Val, Test };

std::string_view split_name(Split s);
std::optional<Split> parse_split(std::string_view name);

struct ManifestRow {
  std::string path;
  int label = 0;
  std::optional<Split> split;
};

/// CSV with header `path,label[,split]`; labels are the lowercase emotion
/// names. Relative paths stay relative (resolved by the caller).
std::vector<ManifestRow> read_manifest(const std::filesystem::path& csv);
void write_manifest(const std::filesystem::path& csv, const std::vector<ManifestRow>& rows);

struct SplitRatios {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;

  bool operator==(const SplitRatios&) const = default;
};

/// Stratified per-label shuffle (seeded). Each label contributes
/// max(1, round(n * ratio)) items to val and test when their ratio is
/// positive, the rest to train. Throws InsufficientClassSamples when any
/// label would be missing from any split.
std::vector<ManifestRow> make_splits(const std::vector<ManifestRow>& rows, const SplitRatios& ratios,
                                     std::uint64_t seed);

std::vector<ManifestRow> rows_in_split(const std::vector<ManifestRow>& rows, Split split);

/// One model input: F x T log-Mel (CNN) or a (2*n_mfcc) x 1 column (MLP).
struct Example {
  std::string id;
  Eigen::MatrixXf input;
  int label = 0;
};

using Dataset = std::vector<Example>;

/// Stacks examples[indices] into the model's batch layout
/// ([N,1,F,T] or [N,d]).
template <typename Scalar>
Tensor<Scalar> make_batch(const Dataset& data, std::span<const std::size_t> indices, const ArchConfig& cfg);

std::vector<int> batch_labels(const Dataset& data, std::span<const std::size_t> indices);

}  // namespace ser
