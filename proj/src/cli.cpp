#include "ser/commands.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <optional>

namespace ser {

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Speech emotion recognition toolkit", "ser"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("-c,--config", config_path, "INI config file (default: $SER_CONFIG)");
  app.add_option("--set", overrides, "Override one config key, e.g. --set train.lr0=1e-3")->type_name("SECTION.KEY=VALUE");

  std::string synth_out;
  int n_per_class = 4;
  std::uint64_t synth_seed = 7;
  auto* synth = app.add_subcommand("synth", "Generate the synthetic corpus and its manifest");
  synth->add_option("-o,--out", synth_out, "Output directory")->required();
  synth->add_option("-n,--n-per-class", n_per_class, "Utterances per emotion")->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed, "Random seed");

  std::optional<std::string> manifest, cache_dir, run_dir, report_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  auto* feat = app.add_subcommand("featurize", "Compute the log-Mel and MFCC feature cache");
  feat->add_option("-m,--manifest", manifest, "Manifest CSV (path,label[,split])");
  feat->add_option("--cache-dir", cache_dir, "Feature cache directory");
  feat->add_option("-j,--workers", workers, "Worker threads (0 = all cores)");
  feat->add_option("--seed", seed, "Split seed when the manifest has no split column");

  auto* trn = app.add_subcommand("train", "Train from the feature cache");
  trn->add_option("--cache-dir", cache_dir, "Feature cache directory");
  trn->add_option("--run-dir", run_dir, "Output directory for checkpoints and the training log");
  trn->add_option("--seed", seed, "Training seed");

  std::string checkpoint, split_text = "test";
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint (default: <run_dir>/best.ckpt)");
  ev->add_option("--split", split_text, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--cache-dir", cache_dir, "Feature cache directory");
  ev->add_option("--run-dir", run_dir, "Run directory");
  ev->add_option("--report-dir", report_dir, "Where report files go");

  std::string wav;
  auto* pred = app.add_subcommand("predict", "Classify one WAV file");
  pred->add_option("wav", wav, "Input WAV")->required();
  pred->add_option("--checkpoint", checkpoint, "Checkpoint (default: <run_dir>/best.ckpt)");
  pred->add_option("--run-dir", run_dir, "Run directory");

  GradcheckOptions gc;
  bool no_model = false;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  grad->add_option("--trials", gc.trials, "Randomized trials per op")->check(CLI::PositiveNumber);
  grad->add_option("--seed", gc.seed, "Random seed");
  grad->add_flag("--no-model", no_model, "Skip the tiny end-to-end model check");
  grad->add_flag("--inject-fault", gc.inject_fault, "Add an op with a wrong backward (harness self-test)");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_out, n_per_class, synth_seed, out);
    if (grad->parsed()) {
      gc.include_model = !no_model;
      return cmd_gradcheck(gc, out);
    }

    RunConfig cfg;
    if (config_path.empty())
      if (const char* env = std::getenv(kConfigEnvVar)) config_path = env;
    if (!config_path.empty()) cfg = load_config(config_path);
    for (const auto& o : overrides) apply_override(cfg, o);
    if (manifest) cfg.paths.manifest = *manifest;
    if (cache_dir) cfg.paths.cache_dir = *cache_dir;
    if (run_dir) cfg.paths.run_dir = *run_dir;
    if (report_dir) cfg.paths.report_dir = *report_dir;
    if (seed) cfg.train.seed = *seed;
    if (workers) cfg.workers = *workers;
    cfg.validate();
    if (checkpoint.empty()) checkpoint = (std::filesystem::path(cfg.paths.run_dir) / "best.ckpt").string();

    if (feat->parsed()) return cmd_featurize(cfg, out, err);
    if (trn->parsed()) return cmd_train(cfg, out);
    if (ev->parsed()) return cmd_eval(cfg, checkpoint, *parse_split(split_text), out);
    if (pred->parsed()) return cmd_predict(cfg, checkpoint, wav, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace ser
