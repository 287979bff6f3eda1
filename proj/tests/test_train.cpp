#include "support.hpp"

#include "ser/dataset.hpp"
#include "ser/gradcheck.hpp"
#include "ser/metrics.hpp"
#include "ser/optim.hpp"
#include "ser/train.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

using namespace ser;

namespace {

ArchConfig tiny() {
  ArchConfig a = tiny_arch();
  a.dropout = 0.1;
  return a;
}

// Class k carries a bump in mel band 2k; separable by construction.
Dataset toy_data(int per_class, std::uint64_t seed, const ArchConfig& a) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<float> nd(0.0f, 0.3f);
  Dataset d;
  for (int k = 0; k < 4; ++k)
    for (int i = 0; i < per_class; ++i) {
      Example ex{"c" + std::to_string(k) + "_" + std::to_string(i), Eigen::MatrixXf(a.n_mels, a.input_frames), k};
      for (Index r = 0; r < ex.input.rows(); ++r)
        for (Index c = 0; c < ex.input.cols(); ++c) ex.input(r, c) = nd(gen) + (r / 2 == k ? 2.0f : 0.0f);
      d.push_back(std::move(ex));
    }
  return d;
}

std::vector<Tensor<double>> one_param(double value, double grad) {
  Tensor<double> p = Tensor<double>::constant({3}, value, true);
  if (grad != 0.0) {
    Tensor<double> g = Tensor<double>::constant({3}, grad);
    backward(sum(mul(p, g)));
  }
  return {p};
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("first Adam step moves by lr against the gradient sign") {
  for (double g : {0.5, -3.0, 1e-3}) {
    auto params = one_param(1.0, g);
    auto state = make_optimizer_state<double>(params);
    adam_step<double>(params, state, 1e-3, 0.0);
    const double sign = g > 0 ? 1.0 : -1.0;
    CHECK(std::abs((params[0].values()[0] - 1.0) + 1e-3 * sign) < 1e-3 * 1e-3);
    CHECK(state.t == 1);
  }
}

TEST_CASE("zero gradient leaves params alone; decay shrinks exactly") {
  auto params = one_param(0.75, 0.0);
  auto state = make_optimizer_state<double>(params);
  adam_step<double>(params, state, 1e-2, 0.0);
  CHECK((params[0].values() == 0.75).all());
  adam_step<double>(params, state, 1e-2, 0.1);
  CHECK((params[0].values() == 0.75 * (1.0 - 1e-2 * 0.1)).all());
}

TEST_CASE("optimizer preconditions") {
  auto params = one_param(1.0, 1.0);
  auto state = make_optimizer_state<double>(params);
  auto other = one_param(1.0, 1.0);
  other.push_back(Tensor<double>::zeros({2}, true));
  CHECK(test::error_code_of([&] { adam_step<double>(other, state, 1e-3, 0.0); }) == ErrorCode::ShapeMismatch);
  CHECK(test::error_code_of([&] { adam_step<double>(params, state, 0.0, 0.0); }) == ErrorCode::ConfigError);
}

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(0, 100, 1e-4) == 1e-4);
  CHECK(std::abs(cosine_lr(100, 100, 1e-4)) < 1e-20);
  CHECK(cosine_lr(50, 100, 1e-4) == doctest::Approx(5e-5).epsilon(1e-12));
  for (double eta : {0.0, 1e-6, 5e-5})
    for (int t = 1; t <= 100; ++t) CHECK(cosine_lr(t, 100, 1e-4, eta) <= cosine_lr(t - 1, 100, 1e-4, eta));
}

TEST_CASE("stratified splits") {
  std::vector<ManifestRow> rows;
  for (int i = 0; i < 100; ++i) rows.push_back({"f" + std::to_string(i) + ".wav", i % 4, std::nullopt});
  const auto a = make_splits(rows, SplitRatios{}, 5);
  const auto b = make_splits(rows, SplitRatios{}, 5);
  int n[3] = {0, 0, 0};
  std::set<std::pair<int, int>> present;
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].split.has_value());
    CHECK(a[i].split == b[i].split);
    ++n[static_cast<int>(*a[i].split)];
    present.insert({a[i].label, static_cast<int>(*a[i].split)});
  }
  CHECK(std::abs(n[0] - 70) <= 4);
  CHECK(std::abs(n[1] - 15) <= 4);
  CHECK(std::abs(n[2] - 15) <= 4);
  CHECK(n[0] + n[1] + n[2] == 100);
  CHECK(present.size() == 12);
  CHECK(make_splits(rows, SplitRatios{}, 6).front().split.has_value());
  CHECK(test::error_code_of([&] { make_splits(rows, SplitRatios{1, 0, 0}, 5); }) == ErrorCode::InsufficientClassSamples);
  CHECK(test::error_code_of([&] { make_splits(rows, SplitRatios{0.5, 0.1, 0.1}, 5); }) == ErrorCode::ConfigError);
}

TEST_CASE("manifest round trip") {
  test::TempDir dir;
  std::vector<ManifestRow> rows{{"a,b.wav", 0, Split::Train}, {"c.wav", 3, Split::Test}};
  write_manifest(dir / "m.csv", rows);
  const auto back = read_manifest(dir / "m.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[0].path == "a,b.wav");
  CHECK(back[1].label == 3);
  CHECK(back[1].split == Split::Test);
  std::ofstream(dir / "bad.csv") << "file,label\nx.wav,anger\n";
  CHECK(test::error_code_of([&] { read_manifest(dir / "bad.csv"); }) == ErrorCode::ConfigError);
  std::ofstream(dir / "lbl.csv") << "path,label\nx.wav,joy\n";
  CHECK(test::error_code_of([&] { read_manifest(dir / "lbl.csv"); }) == ErrorCode::LabelOutOfRange);
}

TEST_CASE("batches cover every item once; a trailing single joins the previous batch") {
  const auto b = epoch_batches(65, 32, 1, 1);
  REQUIRE(b.size() == 2);
  CHECK(b[0].size() == 32);
  CHECK(b[1].size() == 33);
  std::set<std::size_t> seen;
  for (const auto& batch : b) seen.insert(batch.begin(), batch.end());
  CHECK(seen.size() == 65);
  CHECK(epoch_batches(65, 32, 1, 1) == b);
  CHECK(epoch_batches(65, 32, 1, 2) != b);
}

TEST_CASE("early stopping") {
  EarlyStopping s(1);
  CHECK(s.update(1, 0.5));
  CHECK_FALSE(s.should_stop());
  CHECK_FALSE(s.update(2, 0.5));  // a tie is not an improvement
  CHECK(s.should_stop());
  CHECK(s.best_epoch() == 1);

  EarlyStopping p(3);
  p.update(1, 0.2);
  p.update(2, 0.4);
  p.update(3, 0.3);
  p.update(4, 0.4);
  CHECK_FALSE(p.should_stop());
  p.update(5, 0.1);
  CHECK(p.should_stop());
  CHECK(p.best_epoch() == 2);
}

TEST_CASE("patience 1 with a flat validation metric stops at epoch 2") {
  ArchConfig a = tiny();
  a.bn_momentum = 0.0;  // frozen running stats keep eval outputs fixed
  const Dataset train_set = toy_data(2, 1, a);
  Dataset val = toy_data(1, 2, a);
  TrainConfig cfg;
  cfg.patience = 1;
  cfg.lr0 = 1e-12;  // nothing moves, so val accuracy cannot improve
  cfg.batch_size = 4;
  const auto r = train<double>(train_set, val, a, cfg);
  CHECK(r.log.size() == 2);
  CHECK(r.early_stopped);
  CHECK(r.best_epoch == 1);
}

TEST_CASE("tiny lr keeps parameters at their initial values") {
  const ArchConfig a = tiny();
  TrainConfig cfg;
  cfg.lr0 = 1e-12;
  cfg.weight_decay = 0.0;
  cfg.max_epochs = 1;
  cfg.batch_size = 4;
  cfg.seed = 3;
  const auto init = init_params<double>(a, cfg.seed);
  const auto r = train<double>(toy_data(2, 3, a), toy_data(1, 4, a), a, cfg);
  double worst = 0.0;
  for (std::size_t i = 0; i < init.entries().size(); ++i) {
    if (!init.entries()[i].trainable) continue;
    worst = std::max(worst, (r.last.entries()[i].tensor.values() - init.entries()[i].tensor.values()).abs().maxCoeff());
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("loss on a frozen batch decreases over the first steps") {
  const ArchConfig a = tiny();
  const Dataset d = toy_data(2, 5, a);
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto x = make_batch<double>(d, idx, a);
  const auto labels = batch_labels(d, idx);
  auto params = init_params<double>(a, 6);
  auto trainable = params.trainable();
  auto state = make_optimizer_state<double>(trainable);
  double prev = INFINITY;
  for (int step = 0; step < 5; ++step) {
    // fixed dropout key so every step sees the same function
    Tensor<double> loss = cross_entropy(model_forward(x, params, a, ForwardContext{Mode::Train, 1, 1, 0}),
                                        std::span<const int>(labels));
    CHECK(loss.item() < prev);
    prev = loss.item();
    params.zero_grad();
    backward(loss);
    adam_step<double>(trainable, state, 1e-3, 0.0);
  }
}

TEST_CASE("training is deterministic and keeps the best validation epoch") {
  const ArchConfig a = tiny();
  const Dataset tr = toy_data(3, 7, a), val = toy_data(2, 8, a);
  TrainConfig cfg;
  cfg.lr0 = 3e-3;
  cfg.max_epochs = 8;
  cfg.patience = 8;
  cfg.batch_size = 5;
  cfg.seed = 11;
  int augment_calls = 0;
  TrainHooks<double> hooks;
  hooks.augment = [&](Tensor<double>&, int, std::uint64_t) { ++augment_calls; };
  const auto r1 = train<double>(tr, val, a, cfg, hooks);
  const auto r2 = train<double>(tr, val, a, cfg);
  CHECK(augment_calls > 0);
  REQUIRE(r1.log.size() == r2.log.size());
  for (std::size_t i = 0; i < r1.log.size(); ++i) {
    CHECK(r1.log[i].train_loss == r2.log[i].train_loss);
    CHECK(r1.log[i].val_acc == r2.log[i].val_acc);
  }

  double best = -1.0;
  int best_epoch = 0;
  for (const auto& rec : r1.log)
    if (rec.val_acc > best) {
      best = rec.val_acc;
      best_epoch = rec.epoch;
    }
  CHECK(r1.best_epoch == best_epoch);
  auto best_params = r1.best.clone();
  CHECK(evaluate(best_params, val, a, 32).report.accuracy == best);
}

TEST_CASE("training errors") {
  const ArchConfig a = tiny();
  TrainConfig cfg;
  cfg.batch_size = 4;
  CHECK(test::error_code_of([&] { train<double>({}, toy_data(1, 1, a), a, cfg); }) == ErrorCode::EmptySplit);
  CHECK(test::error_code_of([&] { train<double>(toy_data(1, 1, a), {}, a, cfg); }) == ErrorCode::EmptySplit);
  Dataset bad = toy_data(1, 1, a);
  bad[0].input(0, 0) = std::numeric_limits<float>::quiet_NaN();
  CHECK(test::error_code_of([&] { train<double>(bad, toy_data(1, 2, a), a, cfg); }) == ErrorCode::NonFiniteLoss);
  cfg.batch_size = 1;
  CHECK(test::error_code_of([&] { cfg.validate(); }) == ErrorCode::ConfigError);
}

TEST_CASE("training log format") {
  test::TempDir dir;
  write_train_log(dir / "log.csv", {{1, 1e-4, 1.5, 0.25, 1.25, 0.5}});
  CHECK(test::read_file(dir / "log.csv") == "epoch,lr,train_loss,train_acc,val_loss,val_acc\n1,1e-04,1.5,0.25,1.25,0.5\n");
}

}
