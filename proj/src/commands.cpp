#include "ser/commands.hpp"

#include "ser/checkpoint.hpp"
#include "ser/metrics.hpp"
#include "ser/synth.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <thread>

namespace ser {
namespace fs = std::filesystem;

namespace {

std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::FileNotFound, p.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + p.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "short write to " + p.string());
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + p.string() + ": " + ec.message());
}

fs::path resolve_row(const fs::path& manifest, const std::string& row_path) {
  const fs::path p(row_path);
  return p.is_absolute() ? p : manifest.parent_path() / p;
}

fs::path splits_path(const RunConfig& cfg) { return fs::path(cfg.paths.cache_dir) / "splits.csv"; }
fs::path logmel_path(const RunConfig& cfg, const std::string& stem) { return fs::path(cfg.paths.cache_dir) / (stem + ".feat"); }
fs::path mfcc_path(const RunConfig& cfg, const std::string& stem) { return fs::path(cfg.paths.cache_dir) / (stem + ".mfcc.feat"); }
fs::path hash_path(const RunConfig& cfg, const std::string& stem) { return fs::path(cfg.paths.cache_dir) / (stem + ".hash"); }

// Only the feature settings influence cache contents.
std::string feature_fingerprint(const RunConfig& cfg) {
  RunConfig only;
  only.features = cfg.features;
  return serialize_config(only);
}

Eigen::MatrixXd mfcc_column(const UtteranceFeatures& f) { return f.mfcc_stats; }

[[noreturn]] void missing_cache(const std::string& what) {
  throw Error(ErrorCode::MissingFeatureCache, what + "; run `ser featurize` first");
}

}  // namespace

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string cache_stem(const std::string& manifest_path) {
  std::string s;
  for (char c : manifest_path) s += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  if (s.size() > 80) s = s.substr(s.size() - 80);
  return s + "-" + hex64(fnv1a(manifest_path)).substr(0, 8);
}

int cmd_synth(const fs::path& out_dir, int n_per_class, std::uint64_t seed, std::ostream& out) {
  const auto rows = synth_corpus(out_dir, n_per_class, seed);
  out << "wrote " << rows.size() << " utterances and " << (out_dir / "manifest.csv").string() << "\n";
  return 0;
}

FeaturizeSummary featurize(const RunConfig& cfg) {
  const fs::path manifest(cfg.paths.manifest);
  std::vector<ManifestRow> rows = read_manifest(manifest);
  if (rows.empty()) throw Error(ErrorCode::EmptySplit, "manifest " + manifest.string() + " has no rows");
  const bool has_split = std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.split.has_value(); });
  if (!has_split) rows = make_splits(rows, cfg.splits, cfg.train.seed);
  ensure_dir(cfg.paths.cache_dir);

  const std::uint64_t config_hash = fnv1a(feature_fingerprint(cfg));
  enum class Outcome { Written, Skipped, Failed };
  std::vector<Outcome> outcome(rows.size(), Outcome::Failed);
  std::vector<std::string> message(rows.size());

  auto work = [&](std::size_t i) {
    const ManifestRow& row = rows[i];
    const std::string stem = cache_stem(row.path);
    try {
      const std::string bytes = slurp(resolve_row(manifest, row.path));
      const std::string digest = hex64(fnv1a(bytes, config_hash));
      std::error_code ec;
      if (fs::exists(logmel_path(cfg, stem), ec) && fs::exists(mfcc_path(cfg, stem), ec) &&
          fs::exists(hash_path(cfg, stem), ec) && slurp(hash_path(cfg, stem)) == digest) {
        outcome[i] = Outcome::Skipped;
        return;
      }
      const Waveform w = decode_wav({reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()});
      const UtteranceFeatures f = extract_features(w, cfg.features);
      write_feature_file(logmel_path(cfg, stem), f.log_mel.values);
      write_feature_file(mfcc_path(cfg, stem), mfcc_column(f));
      write_text(hash_path(cfg, stem), digest);
      outcome[i] = Outcome::Written;
    } catch (const std::exception& e) {
      message[i] = row.path + ": " + e.what();
    }
  };

  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t n_workers = std::min<std::size_t>(rows.size(), cfg.workers > 0 ? cfg.workers : hw);
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_workers; ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < rows.size();) work(i);
    });
  for (std::size_t i; (i = next++) < rows.size();) work(i);
  for (auto& th : pool) th.join();

  FeaturizeSummary s;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (outcome[i] == Outcome::Written) ++s.written;
    if (outcome[i] == Outcome::Skipped) ++s.skipped;
    if (outcome[i] == Outcome::Failed) s.failures.push_back(message[i]);
  }
  write_manifest(splits_path(cfg), rows);
  return s;
}

int cmd_featurize(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const FeaturizeSummary s = featurize(cfg);
  out << "featurized " << s.written << ", up to date " << s.skipped << ", failed " << s.failures.size() << "\n";
  for (const auto& f : s.failures) err << "  " << f << "\n";
  return s.failures.empty() ? 0 : 2;
}

Dataset load_cached_split(const RunConfig& cfg, Split split) {
  const fs::path sp = splits_path(cfg);
  std::error_code ec;
  if (!fs::exists(sp, ec)) missing_cache("no feature cache at " + cfg.paths.cache_dir);
  const ArchConfig arch = cfg.arch();
  const bool mlp = arch.kind == ModelKind::MlpBaseline;
  const Eigen::Index rows_expected = mlp ? arch.mlp_input_dim() : arch.n_mels;
  const Eigen::Index cols_expected = mlp ? 1 : arch.input_frames;

  Dataset data;
  for (const auto& row : rows_in_split(read_manifest(sp), split)) {
    const std::string stem = cache_stem(row.path);
    const fs::path p = mlp ? mfcc_path(cfg, stem) : logmel_path(cfg, stem);
    if (!fs::exists(p, ec)) missing_cache("feature file for " + row.path + " is missing");
    Example ex{row.path, read_feature_file(p), row.label};
    if (ex.input.rows() != rows_expected || ex.input.cols() != cols_expected)
      missing_cache("cached features for " + row.path + " are " + std::to_string(ex.input.rows()) + "x" +
                    std::to_string(ex.input.cols()) + " but the config expects " + std::to_string(rows_expected) +
                    "x" + std::to_string(cols_expected));
    data.push_back(std::move(ex));
  }
  return data;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  const Dataset train_set = load_cached_split(cfg, Split::Train);
  const Dataset val_set = load_cached_split(cfg, Split::Val);
  const ArchConfig arch = cfg.arch();
  const fs::path run_dir(cfg.paths.run_dir);
  ensure_dir(run_dir);
  write_text(run_dir / "config.ini", serialize_config(cfg));

  TrainHooks<float> hooks;
  hooks.on_epoch = [&out](const EpochRecord& r) {
    char line[160];
    std::snprintf(line, sizeof line, "epoch %3d  lr %.3e  train_loss %.4f  train_acc %.4f  val_loss %.4f  val_acc %.4f\n",
                  r.epoch, r.lr, r.train_loss, r.train_acc, r.val_loss, r.val_acc);
    out << line << std::flush;
  };
  TrainResult<float> result = train<float>(train_set, val_set, arch, cfg.train, hooks);
  write_train_log(run_dir / "train_log.csv", result.log);
  save_checkpoint(result.best, run_dir / "best.ckpt");
  save_checkpoint(result.last, run_dir / "last.ckpt");
  out << "best epoch " << result.best_epoch << (result.early_stopped ? " (early stop)" : "") << "; wrote "
      << (run_dir / "best.ckpt").string() << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const fs::path& checkpoint, Split split, std::ostream& out) {
  const ArchConfig arch = cfg.arch();
  ModelParams<float> params = load_checkpoint<float>(checkpoint, arch);
  const Dataset data = load_cached_split(cfg, split);
  if (data.empty()) throw Error(ErrorCode::EmptySplit, std::string(split_name(split)) + " split is empty");
  const Evaluation e = evaluate(params, data, arch, cfg.train.batch_size);

  const fs::path dir(cfg.paths.report_dir);
  ensure_dir(dir);
  const std::string tag(split_name(split));
  write_report_json(dir / ("report_" + tag + ".json"), e.report);
  write_confusion_csv(dir / ("confusion_" + tag + ".csv"), e.report.confusion);
  write_predictions_csv(dir / ("predictions_" + tag + ".csv"), e.predictions);
  char line[128];
  std::snprintf(line, sizeof line, "%s: n=%lld accuracy %.4f macro_f1 %.4f\n", tag.c_str(),
                static_cast<long long>(e.report.n_samples), e.report.accuracy, e.report.macro.f1);
  out << line;
  return 0;
}

int cmd_predict(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& wav, std::ostream& out) {
  const ArchConfig arch = cfg.arch();
  ModelParams<float> params = load_checkpoint<float>(checkpoint, arch);
  const UtteranceFeatures f = extract_features(load_wav(wav), cfg.features);
  Eigen::MatrixXf input = arch.kind == ModelKind::MlpBaseline ? Eigen::MatrixXf(f.mfcc_stats.cast<float>())
                                                                : Eigen::MatrixXf(f.log_mel.values.cast<float>());
  Dataset one{{wav.string(), std::move(input), 0}};
  const std::vector<std::size_t> idx{0};
  const Tensor<float> logits = model_forward(make_batch<float>(one, idx, arch), params, arch, ForwardContext{Mode::Eval});
  const auto probs = probabilities(logits)[0];
  const int best = argmax_rows(logits)[0];

  nlohmann::ordered_json j;
  j["label"] = class_name(best, arch.n_classes);
  nlohmann::ordered_json p;
  for (int k = 0; k < arch.n_classes; ++k) p[class_name(k, arch.n_classes)] = probs[static_cast<std::size_t>(k)];
  j["probabilities"] = p;
  out << j.dump() << "\n";
  return 0;
}

int cmd_gradcheck(const GradcheckOptions& opt, std::ostream& out) {
  const GradcheckReport r = run_gradcheck(opt);
  out << format_report(r);
  return r.passed() ? 0 : exit_code_for(ErrorCode::GradcheckFailed);
}

}  // namespace ser
