#include "support.hpp"

#include "ser/checkpoint.hpp"
#include "ser/gradcheck.hpp"
#include "ser/model.hpp"
#include "ser/ops.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>

using namespace ser;
using T = Tensor<double>;

namespace {

T random(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  T::Array a(numel(s));
  for (auto& x : a) x = u(gen);
  return T(std::move(s), std::move(a));
}

ArchConfig small_arch() {
  ArchConfig a;
  a.n_mels = 16;
  a.input_frames = 24;
  a.conv_channels = {4, 6, 8};
  a.n_encoder_layers = 2;
  a.n_heads = 4;
  a.d_model = 16;
  a.d_ff = 24;
  return a;
}

// Gives every bias/beta a nonzero value so tests don't pass by accident.
void jitter_biases(ModelParams<double>& p, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  for (const auto& e : p.entries()) {
    if (!e.trainable || e.tensor.rank() != 1) continue;
    T t = e.tensor;
    for (auto& x : t.mutable_values()) x += u(gen);
  }
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("positional encoding closed form") {
  const T pe = positional_encoding<double>(20, 16);
  CHECK(pe.shape() == Shape{20, 16});
  for (Index i = 0; i < 16; ++i) CHECK(pe.at({0, i}) == (i % 2 == 0 ? 0.0 : 1.0));
  CHECK(pe.at({1, 0}) == doctest::Approx(0.841471).epsilon(1e-6));
  CHECK(pe.values().abs().maxCoeff() <= 1.0);
}

TEST_CASE("frontend shape trace at full size") {
  const ArchConfig a;
  CHECK(a.pooled_mels() == 16);
  CHECK(a.seq_len() == 37);
  CHECK(a.d_feat() == 2048);
  ModelParams<float> p = init_params<float>(a, 1);
  const Tensor<float> x = Tensor<float>::zeros({1, 1, 128, 300});
  const Tensor<float> h = cnn_frontend(x, p, a, ForwardContext{Mode::Eval});
  CHECK(h.shape() == Shape{1, 37, 2048});
  // zero input, zero biases and betas, running stats (0, 1)
  CHECK(h.values().abs().maxCoeff() == 0.0f);
}

TEST_CASE("identical batch items give identical outputs in eval mode") {
  const ArchConfig a = small_arch();
  ModelParams<double> p = init_params<double>(a, 3);
  jitter_biases(p, 3);
  const T one = random({1, 1, 16, 24}, 4);
  const T two = concat<double>({one, one}, 0);
  const T h = cnn_frontend(two, p, a, ForwardContext{Mode::Eval});
  const Index half = h.size() / 2;
  CHECK(h.values().head(half).isApprox(h.values().tail(half), 0.0));
}

TEST_CASE("single-token attention is the value projection") {
  const ArchConfig a = small_arch();
  ModelParams<double> p = init_params<double>(a, 5);
  jitter_biases(p, 5);
  const T x = random({1, 1, 16}, 6);
  const T out = multi_head_attention(x, p, 0, a);
  const T want = linear(linear(x, p["enc0.attn.wv"], p["enc0.attn.bv"]), p["enc0.attn.wo"], p["enc0.attn.bo"]);
  CHECK((out.values() - want.values()).abs().maxCoeff() < 1e-12);
}

TEST_CASE("identical positions attend uniformly") {
  const ArchConfig a = small_arch();
  ModelParams<double> p = init_params<double>(a, 7);
  jitter_biases(p, 7);
  const T row = random({1, 1, 16}, 8);
  const T x = concat<double>({row, row}, 1);
  AttentionProbe<double> probe;
  const T out = multi_head_attention(x, p, 0, a, &probe);
  REQUIRE(probe.size() == 4);
  for (const auto& w : probe) CHECK((w.values() - 0.5).abs().maxCoeff() < 1e-12);
  const T v = linear(linear(row, p["enc0.attn.wv"], p["enc0.attn.bv"]), p["enc0.attn.wo"], p["enc0.attn.bo"]);
  CHECK((out.values().head(16) - v.values()).abs().maxCoeff() < 1e-12);
  CHECK((out.values().tail(16) - v.values()).abs().maxCoeff() < 1e-12);
}

TEST_CASE("attention rows sum to one") {
  const ArchConfig a = small_arch();
  ModelParams<double> p = init_params<double>(a, 9);
  const T x = random({2, 5, 16}, 10, -3, 3);
  AttentionProbe<double> probe;
  encoder_layer(x, p, 1, a, ForwardContext{Mode::Eval}, &probe);
  for (const auto& w : probe) {
    REQUIRE(w.shape() == Shape{2, 5, 5});
    for (Index r = 0; r < 10; ++r) CHECK(std::abs(w.values().segment(r * 5, 5).sum() - 1.0) < 1e-6);
  }
}

TEST_CASE("forward shape, distributions and batch permutation") {
  const ArchConfig a = small_arch();
  ModelParams<double> p = init_params<double>(a, 11);
  jitter_biases(p, 11);
  const T x = random({3, 1, 16, 24}, 12);
  const T logits = forward(x, p, a, ForwardContext{Mode::Eval});
  CHECK(logits.shape() == Shape{3, 4});
  const T sm = softmax(logits);
  for (Index i = 0; i < 3; ++i) CHECK(std::abs(sm.values().segment(i * 4, 4).sum() - 1.0) < 1e-6);

  const Index item = 16 * 24;
  T::Array swapped(x.size());
  swapped.segment(0, item) = x.values().segment(2 * item, item);
  swapped.segment(item, item) = x.values().segment(item, item);
  swapped.segment(2 * item, item) = x.values().segment(0, item);
  const T l2 = forward(T(x.shape(), swapped), p, a, ForwardContext{Mode::Eval});
  CHECK((l2.values().segment(0, 4) - logits.values().segment(8, 4)).abs().maxCoeff() < 1e-12);
  CHECK((l2.values().segment(8, 4) - logits.values().segment(0, 4)).abs().maxCoeff() < 1e-12);

  // eval mode is a pure function
  CHECK((forward(x, p, a, ForwardContext{Mode::Eval}).values() == logits.values()).all());
}

TEST_CASE("GAP over identical positions equals the per-position classifier") {
  const ArchConfig a = small_arch();
  ModelParams<double> p = init_params<double>(a, 13);
  const T row = random({1, 1, 16}, 14);
  const T seq = concat<double>({row, row, row}, 1);
  const T pooled = mean_over_axis(seq, 1);
  const T via_gap = linear(pooled, p["cls.weight"], p["cls.bias"]);
  const T direct = linear(reshape(row, {1, 16}), p["cls.weight"], p["cls.bias"]);
  CHECK((via_gap.values() - direct.values()).abs().maxCoeff() < 1e-12);
}

TEST_CASE("mlp baseline") {
  ArchConfig a;
  a.kind = ModelKind::MlpBaseline;
  ModelParams<double> p = init_params<double>(a, 1);
  for (const auto& e : p.entries()) {
    T t = e.tensor;
    t.mutable_values().setZero();
  }
  const T x = random({5, 26}, 2);
  const T logits = model_forward(x, p, a, ForwardContext{Mode::Eval});
  CHECK(logits.shape() == Shape{5, 4});
  CHECK(logits.values().abs().maxCoeff() == 0.0);
  CHECK((softmax(logits).values() - 0.25).abs().maxCoeff() < 1e-15);
}

TEST_CASE("mlp baseline gradient check") {
  ArchConfig a;
  a.kind = ModelKind::MlpBaseline;
  a.mlp_hidden = 8;
  ModelParams<double> p = init_params<double>(a, 3);
  jitter_biases(p, 3);
  const T x = random({4, 26}, 4);
  const std::vector<int> labels{0, 1, 2, 3};
  const ForwardContext ctx{Mode::Train, 5, 1, 0};
  GradCase c;
  for (const auto& e : p.entries()) c.inputs.push_back(e.tensor);
  c.fn = [&](const std::vector<T>&) { return cross_entropy(model_forward(x, p, a, ctx), std::span<const int>(labels)); };
  std::mt19937_64 gen(6);
  CHECK(check_case(c, gen, 1e-6) < 1e-4);
}

TEST_CASE("tiny CNN-Transformer end-to-end gradient") {
  CHECK(check_tiny_model(99, 1e-6) < 1e-3);
}

TEST_CASE("init_params") {
  const ArchConfig a = small_arch();
  const auto p1 = init_params<float>(a, 42), p2 = init_params<float>(a, 42), p3 = init_params<float>(a, 43);
  bool any_diff = false;
  for (std::size_t i = 0; i < p1.entries().size(); ++i) {
    CHECK((p1.entries()[i].tensor.values() == p2.entries()[i].tensor.values()).all());
    any_diff = any_diff || p1.entries()[i].tensor.values().matrix() != p3.entries()[i].tensor.values().matrix();
  }
  CHECK(any_diff);
  const auto [fi, fo] = fan_in_out({6, 4, 3, 3});
  CHECK(fi == 36);
  CHECK(fo == 54);
  const double bound = std::sqrt(6.0 / (fi + fo));
  CHECK(p1["conv1.kernel"].values().abs().maxCoeff() <= bound);
}

TEST_CASE("parameter counts") {
  const ArchConfig a;
  std::int64_t cls = 0, attn0 = 0;
  for (const auto& s : param_specs(a)) {
    if (s.name.rfind("cls.", 0) == 0) cls += numel(s.shape);
    if (s.name.rfind("enc0.attn.", 0) == 0) attn0 += numel(s.shape);
  }
  CHECK(cls == 1028);
  CHECK(attn0 == 263168);
  CHECK(count_params(a) == init_params<float>(a, 1).trainable_count());
  CHECK(count_params(a) == init_params<float>(a, 2).trainable_count());
}

TEST_CASE("arch validation") {
  ArchConfig a;
  a.n_heads = 7;
  CHECK(test::error_code_of([&] { a.validate(); }) == ErrorCode::ConfigError);
  CHECK(test::error_code_of([] { label_name(4); }) == ErrorCode::LabelOutOfRange);
  CHECK(parse_label("sadness") == 2);
  CHECK_FALSE(parse_label("joy").has_value());
}

TEST_CASE("checkpoint round trip is bitwise") {
  test::TempDir dir;
  const ArchConfig a = small_arch();
  const auto p = init_params<float>(a, 17);
  save_checkpoint(p, dir / "m.ckpt");
  const auto q = load_checkpoint<float>(dir / "m.ckpt", a);
  REQUIRE(q.entries().size() == p.entries().size());
  for (std::size_t i = 0; i < p.entries().size(); ++i) {
    CHECK(q.entries()[i].name == p.entries()[i].name);
    CHECK(q.entries()[i].trainable == p.entries()[i].trainable);
    CHECK(std::memcmp(q.entries()[i].tensor.data(), p.entries()[i].tensor.data(),
                      sizeof(float) * static_cast<std::size_t>(p.entries()[i].tensor.size())) == 0);
  }
  save_checkpoint(q, dir / "again.ckpt");
  CHECK(test::read_file(dir / "again.ckpt") == test::read_file(dir / "m.ckpt"));
}

TEST_CASE("corrupted checkpoints fail with typed errors") {
  test::TempDir dir;
  const ArchConfig a = small_arch();
  save_checkpoint(init_params<float>(a, 1), dir / "m.ckpt");
  const std::string bytes = test::read_file(dir / "m.ckpt");
  auto load_bytes = [&](const std::string& b) {
    std::ofstream(dir / "x.ckpt", std::ios::binary | std::ios::trunc) << b;
    return test::error_code_of([&] { load_checkpoint<float>(dir / "x.ckpt", a); });
  };
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{8}, std::size_t{12}, std::size_t{20},
                          bytes.size() / 2, bytes.size() - 1}) {
    const auto code = load_bytes(bytes.substr(0, cut));
    CAPTURE(cut);
    CHECK((code == ErrorCode::BadMagic || code == ErrorCode::ShapeMismatch));
  }
  std::string m = bytes;
  m[0] = 'Z';
  CHECK(load_bytes(m) == ErrorCode::BadMagic);
  std::string v = bytes;
  v[8] = 2;
  CHECK(load_bytes(v) == ErrorCode::VersionMismatch);
  CHECK(load_bytes(bytes + "extra") == ErrorCode::ShapeMismatch);

  ArchConfig other = a;
  other.d_model = 32;
  try {
    load_checkpoint<float>(dir / "m.ckpt", other);
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeMismatch);
    CHECK(std::string(e.what()).find("proj.weight") != std::string::npos);
  }
  CHECK(test::error_code_of([&] { load_checkpoint<float>(dir / "missing.ckpt", a); }) == ErrorCode::FileNotFound);
}

}
