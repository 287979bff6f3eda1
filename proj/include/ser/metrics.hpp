#pragma once

#include "ser/dataset.hpp"
#include "ser/model.hpp"

#include <json.hpp>

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ser {

/// counts(i, j): utterances of true class i predicted as j.
struct ConfusionMatrix {
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> counts;

  int n_classes() const { return static_cast<int>(counts.rows()); }
  std::int64_t total() const { return counts.sum(); }
  std::int64_t correct() const { return counts.trace(); }
};

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted, int n_classes = kNumEmotions);

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct MetricsReport {
  double accuracy = 0.0;
  std::int64_t n_samples = 0;
  std::vector<ClassScores> per_class;
  ClassScores macro;
  ConfusionMatrix confusion;
};

/// Precision, recall and F1 per class (0 for empty denominators), their
/// unweighted means, and trace/total accuracy.
MetricsReport report(const ConfusionMatrix& cm);

/// Name of class i in serialized outputs: the emotion names for 4 classes,
/// "class<i>" otherwise.
std::string class_name(int index, int n_classes);

/// Display fields rounded to 4 decimals; full precision under "raw".
nlohmann::json to_json(const MetricsReport& r);

void write_report_json(const std::filesystem::path& path, const MetricsReport& r);
void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix& cm);

struct Prediction {
  std::string id;
  int truth = 0;
  int predicted = 0;
  std::vector<double> probabilities;
};

/// `path,true,pred,p_anger,p_happiness,p_sadness,p_neutral`.
void write_predictions_csv(const std::filesystem::path& path, const std::vector<Prediction>& predictions);

/// Row-wise argmax of [N,C] logits; ties go to the lowest index.
template <typename Scalar>
std::vector<int> argmax_rows(const Tensor<Scalar>& logits);

/// Row-wise softmax in double precision.
template <typename Scalar>
std::vector<std::vector<double>> probabilities(const Tensor<Scalar>& logits);

struct Evaluation {
  MetricsReport report;
  std::vector<Prediction> predictions;
  double mean_loss = 0.0;
};

/// Eval-mode inference over `data` in input order.
template <typename Scalar>
Evaluation evaluate(ModelParams<Scalar>& params, const Dataset& data, const ArchConfig& cfg, int batch_size = 32);

}  // namespace ser
