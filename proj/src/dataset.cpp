#include "ser/dataset.hpp"

#include "csv.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>

namespace ser {

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

std::optional<Split> parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  return std::nullopt;
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& csv) {
  std::ifstream in(csv);
  if (!in) throw Error(ErrorCode::FileNotFound, "manifest " + csv.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::ConfigError, "manifest " + csv.string() + " is empty");
  const auto header = detail::split_csv_line(line);
  if (header.size() < 2 || header[0] != "path" || header[1] != "label" ||
      (header.size() == 3 && header[2] != "split") || header.size() > 3)
    throw Error(ErrorCode::ConfigError, "manifest header must be path,label[,split]");
  const bool has_split = header.size() == 3;

  std::vector<ManifestRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = detail::split_csv_line(line);
    const std::string where = csv.string() + ":" + std::to_string(line_no);
    if (fields.size() != header.size()) throw Error(ErrorCode::ConfigError, where + ": expected " + std::to_string(header.size()) + " fields");
    ManifestRow row;
    row.path = fields[0];
    auto label = parse_label(fields[1]);
    if (!label) throw Error(ErrorCode::LabelOutOfRange, where + ": unknown label '" + fields[1] + "'");
    row.label = *label;
    if (has_split) {
      auto split = parse_split(fields[2]);
      if (!split) throw Error(ErrorCode::ConfigError, where + ": unknown split '" + fields[2] + "'");
      row.split = split;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_manifest(const std::filesystem::path& csv, const std::vector<ManifestRow>& rows) {
  const bool has_split = std::any_of(rows.begin(), rows.end(), [](const auto& r) { return r.split.has_value(); });
  std::ofstream out(csv, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + csv.string());
  out << (has_split ? "path,label,split\n" : "path,label\n");
  for (const auto& r : rows) {
    out << detail::csv_field(r.path) << ',' << label_name(r.label);
    if (has_split) out << ',' << (r.split ? split_name(*r.split) : std::string_view("train"));
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::IoError, "short write to " + csv.string());
}

std::vector<ManifestRow> make_splits(const std::vector<ManifestRow>& rows, const SplitRatios& ratios,
                                     std::uint64_t seed) {
  const double total = ratios.train + ratios.val + ratios.test;
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 || std::abs(total - 1.0) > 1e-9)
    throw Error(ErrorCode::ConfigError, "split ratios must be non-negative and sum to 1");

  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < rows.size(); ++i) by_label[rows[i].label].push_back(i);

  std::vector<ManifestRow> out = rows;
  std::mt19937_64 gen(seed);
  for (auto& [label, members] : by_label) {
    const auto n = static_cast<double>(members.size());
    auto take = [n](double ratio) -> std::size_t {
      if (ratio <= 0.0) return 0;
      return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n * ratio)));
    };
    const std::size_t n_val = take(ratios.val);
    const std::size_t n_test = take(ratios.test);
    if (members.size() < 3 || n_val == 0 || n_test == 0 || n_val + n_test >= members.size())
      throw Error(ErrorCode::InsufficientClassSamples,
                  "label '" + std::string(label_name(label)) + "' has " + std::to_string(members.size()) +
                      " utterances; every split needs at least one");
    std::shuffle(members.begin(), members.end(), gen);
    for (std::size_t k = 0; k < members.size(); ++k) {
      Split s = k < n_val ? Split::Val : (k < n_val + n_test ? Split::Test : Split::Train);
      out[members[k]].split = s;
    }
  }
  return out;
}

std::vector<ManifestRow> rows_in_split(const std::vector<ManifestRow>& rows, Split split) {
  std::vector<ManifestRow> out;
  for (const auto& r : rows)
    if (r.split == split) out.push_back(r);
  return out;
}

template <typename S>
Tensor<S> make_batch(const Dataset& data, std::span<const std::size_t> indices, const ArchConfig& cfg) {
  const Shape item = example_shape(cfg);
  const Index per_item = numel(item);
  Shape shape{static_cast<Index>(indices.size())};
  shape.insert(shape.end(), item.begin(), item.end());
  typename Tensor<S>::Array values(numel(shape));
  Index offset = 0;
  for (std::size_t idx : indices) {
    const Eigen::MatrixXf& m = data.at(idx).input;
    if (m.size() != per_item)
      throw Error(ErrorCode::ShapeMismatch, data[idx].id + ": input is " + std::to_string(m.rows()) + "x" +
                                                std::to_string(m.cols()) + ", model expects " + shape_string(item));
    // Row-major F x T.
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) values[offset++] = static_cast<S>(m(r, c));
  }
  return Tensor<S>(std::move(shape), std::move(values));
}

std::vector<int> batch_labels(const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<int> labels;
  labels.reserve(indices.size());
  for (std::size_t idx : indices) labels.push_back(data.at(idx).label);
  return labels;
}

template Tensor<float> make_batch<float>(const Dataset&, std::span<const std::size_t>, const ArchConfig&);
template Tensor<double> make_batch<double>(const Dataset&, std::span<const std::size_t>, const ArchConfig&);

}  // namespace ser
