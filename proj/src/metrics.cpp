#include "ser/metrics.hpp"

#include "csv.hpp"
#include "ser/ops.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace ser {
namespace {

double ratio(std::int64_t num, std::int64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

double round4(double x) { return std::round(x * 1e4) / 1e4; }

nlohmann::json scores_json(const ClassScores& s, bool rounded) {
  auto f = [rounded](double x) { return rounded ? round4(x) : x; };
  return {{"precision", f(s.precision)}, {"recall", f(s.recall)}, {"f1", f(s.f1)}};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

}  // namespace

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted, int n_classes) {
  if (truth.size() != predicted.size() || truth.empty())
    throw Error(ErrorCode::LengthMismatch, std::to_string(truth.size()) + " true labels vs " +
                                               std::to_string(predicted.size()) + " predictions");
  ConfusionMatrix cm;
  cm.counts.setZero(n_classes, n_classes);
  for (std::size_t k = 0; k < truth.size(); ++k) {
    const int t = truth[k], p = predicted[k];
    if (t < 0 || t >= n_classes || p < 0 || p >= n_classes)
      throw Error(ErrorCode::LabelOutOfRange, "label pair (" + std::to_string(t) + ", " + std::to_string(p) + ")");
    ++cm.counts(t, p);
  }
  return cm;
}

MetricsReport report(const ConfusionMatrix& cm) {
  if (cm.counts.size() == 0 || cm.total() <= 0) throw Error(ErrorCode::EmptyMatrix, "confusion matrix is empty");
  MetricsReport r;
  r.confusion = cm;
  r.n_samples = cm.total();
  r.accuracy = ratio(cm.correct(), cm.total());
  const int c = cm.n_classes();
  for (int k = 0; k < c; ++k) {
    const std::int64_t tp = cm.counts(k, k);
    ClassScores s;
    s.precision = ratio(tp, cm.counts.col(k).sum());
    s.recall = ratio(tp, cm.counts.row(k).sum());
    s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    r.per_class.push_back(s);
    r.macro.precision += s.precision;
    r.macro.recall += s.recall;
    r.macro.f1 += s.f1;
  }
  r.macro.precision /= c;
  r.macro.recall /= c;
  r.macro.f1 /= c;
  return r;
}

std::string class_name(int index, int n_classes) {
  if (n_classes == kNumEmotions) return std::string(label_name(index));
  return "class" + std::to_string(index);
}

nlohmann::json to_json(const MetricsReport& r) {
  const int c = r.confusion.n_classes();
  nlohmann::json per_class = nlohmann::json::object();
  nlohmann::json raw_per_class = nlohmann::json::object();
  for (int k = 0; k < c; ++k) {
    per_class[class_name(k, c)] = scores_json(r.per_class[static_cast<std::size_t>(k)], true);
    raw_per_class[class_name(k, c)] = scores_json(r.per_class[static_cast<std::size_t>(k)], false);
  }
  nlohmann::json matrix = nlohmann::json::array();
  for (int i = 0; i < c; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < c; ++j) row.push_back(r.confusion.counts(i, j));
    matrix.push_back(row);
  }
  nlohmann::json out;
  out["accuracy"] = round4(r.accuracy);
  out["n_samples"] = r.n_samples;
  out["per_class"] = per_class;
  out["macro"] = scores_json(r.macro, true);
  out["confusion"] = matrix;
  out["raw"] = {{"accuracy", r.accuracy}, {"per_class", raw_per_class}, {"macro", scores_json(r.macro, false)}};
  return out;
}

void write_report_json(const std::filesystem::path& path, const MetricsReport& r) {
  write_text(path, to_json(r).dump(2) + "\n");
}

void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix& cm) {
  const int c = cm.n_classes();
  std::string text = "true\\pred";
  for (int j = 0; j < c; ++j) text += "," + class_name(j, c);
  text += "\n";
  for (int i = 0; i < c; ++i) {
    text += class_name(i, c);
    for (int j = 0; j < c; ++j) text += "," + std::to_string(cm.counts(i, j));
    text += "\n";
  }
  write_text(path, text);
}

void write_predictions_csv(const std::filesystem::path& path, const std::vector<Prediction>& predictions) {
  std::string text = "path,true,pred";
  for (auto name : kEmotionNames) text += ",p_" + std::string(name);
  text += "\n";
  char buf[32];
  for (const auto& p : predictions) {
    text += detail::csv_field(p.id) + "," + std::string(label_name(p.truth)) + "," + std::string(label_name(p.predicted));
    for (double prob : p.probabilities) {
      std::snprintf(buf, sizeof buf, ",%.6f", prob);
      text += buf;
    }
    text += "\n";
  }
  write_text(path, text);
}

template <typename S>
std::vector<int> argmax_rows(const Tensor<S>& logits) {
  if (logits.rank() != 2) throw Error(ErrorCode::ShapeMismatch, "argmax_rows needs [N,C] logits");
  const Index n = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Index best = 0;
    for (Index j = 1; j < c; ++j)
      if (logits.values()[i * c + j] > logits.values()[i * c + best]) best = j;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

template <typename S>
std::vector<std::vector<double>> probabilities(const Tensor<S>& logits) {
  if (logits.rank() != 2) throw Error(ErrorCode::ShapeMismatch, "probabilities needs [N,C] logits");
  const Index n = logits.dim(0), c = logits.dim(1);
  std::vector<std::vector<double>> out(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(c)));
  for (Index i = 0; i < n; ++i) {
    double peak = -INFINITY;
    for (Index j = 0; j < c; ++j) peak = std::max(peak, static_cast<double>(logits.values()[i * c + j]));
    double total = 0.0;
    auto& row = out[static_cast<std::size_t>(i)];
    for (Index j = 0; j < c; ++j) {
      row[static_cast<std::size_t>(j)] = std::exp(static_cast<double>(logits.values()[i * c + j]) - peak);
      total += row[static_cast<std::size_t>(j)];
    }
    for (double& p : row) p /= total;
  }
  return out;
}

template <typename S>
Evaluation evaluate(ModelParams<S>& params, const Dataset& data, const ArchConfig& cfg, int batch_size) {
  if (data.empty()) throw Error(ErrorCode::EmptySplit, "nothing to evaluate");
  if (batch_size < 1) batch_size = 1;
  Evaluation result;
  std::vector<int> truth, predicted;
  double loss_sum = 0.0;
  const ForwardContext ctx{Mode::Eval};
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(data.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor<S> logits = model_forward(make_batch<S>(data, idx, cfg), params, cfg, ctx);
    const auto labels = batch_labels(data, idx);
    loss_sum += static_cast<double>(cross_entropy(logits, std::span<const int>(labels)).item()) * static_cast<double>(idx.size());
    const auto preds = argmax_rows(logits);
    auto probs = probabilities(logits);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      result.predictions.push_back({data[idx[k]].id, labels[k], preds[k], std::move(probs[k])});
      truth.push_back(labels[k]);
      predicted.push_back(preds[k]);
    }
  }
  result.mean_loss = loss_sum / static_cast<double>(data.size());
  result.report = report(confusion(truth, predicted, cfg.n_classes));
  return result;
}

template std::vector<int> argmax_rows(const Tensor<float>&);
template std::vector<int> argmax_rows(const Tensor<double>&);
template std::vector<std::vector<double>> probabilities(const Tensor<float>&);
template std::vector<std::vector<double>> probabilities(const Tensor<double>&);
template Evaluation evaluate(ModelParams<float>&, const Dataset&, const ArchConfig&, int);
template Evaluation evaluate(ModelParams<double>&, const Dataset&, const ArchConfig&, int);

}  // namespace ser
