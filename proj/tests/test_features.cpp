#include "support.hpp"

#include "ser/features.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numbers>

using namespace ser;

namespace {

Waveform tone(double hz, Eigen::Index n, int rate = 16000) {
  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) w.samples[i] = std::sin(2.0 * std::numbers::pi * hz * i / rate);
  return w;
}

Waveform noise(Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  Waveform w;
  w.samples.resize(n);
  for (auto& x : w.samples) x = nd(gen);
  return w;
}

}  // namespace

TEST_SUITE("features") {

TEST_CASE("one second at 16 kHz gives 98 frames") {
  const Eigen::MatrixXd f = frame_signal(noise(16000, 1), FramingSpec{});
  CHECK(f.rows() == 400);
  CHECK(f.cols() == 98);
}

TEST_CASE("hamming endpoints") {
  const Eigen::VectorXd w = hamming_window(400);
  CHECK(std::abs(w[0] - 0.08) <= 1e-12);
  CHECK(std::abs(w[399] - 0.08) <= 1e-12);
  CHECK(w.maxCoeff() <= 1.0);
}

TEST_CASE("shorter than one frame") {
  CHECK(test::error_code_of([] { frame_signal(noise(399, 1), FramingSpec{}); }) == ErrorCode::SignalTooShort);
}

TEST_CASE("framing must land on whole samples") {
  FramingSpec spec;
  CHECK(test::error_code_of([&] { spec.frame_samples(22050); }) == ErrorCode::ConfigError);
  CHECK(spec.hop_samples(16000) == 160);
}

TEST_CASE("property: frame count is 1 + (n - frame) / hop") {
  std::mt19937_64 gen(2);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index n = 400 + static_cast<Eigen::Index>(gen() % 30000);
    CHECK(frame_signal(noise(n, trial), FramingSpec{}).cols() == 1 + (n - 400) / 160);
  }
}

TEST_CASE("zero frame has zero power") {
  const Eigen::MatrixXd p = stft_power(Eigen::MatrixXd::Zero(400, 3), 512);
  CHECK(p.rows() == 257);
  CHECK(p.isZero(0.0));
}

TEST_CASE("1 kHz tone peaks at bin 32") {
  const Waveform w = tone(1000.0, 4000);
  Eigen::MatrixXd frames(400, 5);
  for (int t = 0; t < 5; ++t) frames.col(t) = w.samples.segment(t * 160, 400);
  const Eigen::MatrixXd p = stft_power(frames, 512);
  for (int t = 0; t < 5; ++t) {
    Eigen::Index bin;
    p.col(t).maxCoeff(&bin);
    CHECK(bin == 32);
  }
}

TEST_CASE("Parseval") {
  const Eigen::MatrixXd frames = frame_signal(noise(4000, 9), FramingSpec{});
  const Eigen::MatrixXd p = stft_power(frames, 512);
  for (Eigen::Index t = 0; t < frames.cols(); ++t) {
    const double spectral = p(0, t) + p(256, t) + 2.0 * p.col(t).segment(1, 255).sum();
    const double temporal = 512.0 * frames.col(t).squaredNorm();
    CHECK(std::abs(spectral - temporal) / temporal < 1e-6);
  }
}

TEST_CASE("HTK mel scale") {
  CHECK(hz_to_mel(0.0) == 0.0);
  CHECK(std::abs(hz_to_mel(700.0) - 781.17) <= 0.01);
  for (double hz : {20.0, 440.0, 3000.0, 8000.0}) CHECK(mel_to_hz(hz_to_mel(hz)) == doctest::Approx(hz).epsilon(1e-12));
}

TEST_CASE("default filterbank is 128 x 257 with no empty rows") {
  const Eigen::MatrixXd fb = mel_filterbank(MelSpec{}, 16000);
  CHECK(fb.rows() == 128);
  CHECK(fb.cols() == 257);
  CHECK(fb.minCoeff() >= 0.0);
  CHECK(fb.maxCoeff() <= 1.0);
  for (Eigen::Index m = 0; m < fb.rows(); ++m) CHECK(fb.row(m).sum() > 0.0);
}

TEST_CASE("bad mel specs") {
  MelSpec s;
  s.fmax = 9000.0;
  CHECK(test::error_code_of([&] { mel_filterbank(s, 16000); }) == ErrorCode::ConfigError);
}

TEST_CASE("property: filterbank rows are unimodal on contiguous bins") {
  for (int n_mels : {20, 40, 64, 128}) {
    for (int n_fft : {512, 1024}) {
      MelSpec spec;
      spec.n_mels = n_mels;
      spec.n_fft = n_fft;
      const Eigen::MatrixXd fb = mel_filterbank(spec, 16000);
      for (Eigen::Index m = 0; m < fb.rows(); ++m) {
        Eigen::Index first = -1, last = -1;
        for (Eigen::Index k = 0; k < fb.cols(); ++k)
          if (fb(m, k) > 0.0) {
            if (first < 0) first = k;
            last = k;
          }
        REQUIRE(first >= 0);
        bool contiguous = true, unimodal = true, falling = false;
        for (Eigen::Index k = first; k <= last; ++k) {
          contiguous = contiguous && fb(m, k) > 0.0;
          if (k > first) {
            if (fb(m, k) < fb(m, k - 1)) falling = true;
            else if (falling && fb(m, k) > fb(m, k - 1)) unimodal = false;
          }
        }
        CAPTURE(n_mels);
        CAPTURE(n_fft);
        CAPTURE(m);
        CHECK(contiguous);
        CHECK(unimodal);
      }
    }
  }
}

TEST_CASE("log_mel floor and exact logs") {
  const Eigen::MatrixXd fb = mel_filterbank(MelSpec{}, 16000);
  const FeatureMap z = log_mel(Eigen::MatrixXd::Zero(257, 4), fb, 1e-10);
  CHECK((z.values.array() == std::log(1e-10)).all());

  Eigen::MatrixXd p(2, 1);
  p << std::exp(1.0), std::exp(2.0);
  const FeatureMap l = log_mel(p, Eigen::MatrixXd::Identity(2, 2), 1e-10);
  CHECK(l.values(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(l.values(1, 0) == doctest::Approx(2.0).epsilon(1e-15));

  CHECK(test::error_code_of([&] { log_mel(p, fb, 1e-10); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("normalize_features") {
  FeatureMap fm;
  fm.values.resize(2, 2);
  fm.values << 0, 0, 2, 2;
  const FeatureMap n = normalize_features(fm);
  Eigen::MatrixXd want(2, 2);
  want << -1, -1, 1, 1;
  CHECK(n.values.isApprox(want, 1e-15));

  FeatureMap r;
  r.values = Eigen::MatrixXd::Random(16, 30) * 5.0;
  const FeatureMap r1 = normalize_features(r);
  CHECK(std::abs(r1.values.mean()) < 1e-5);
  CHECK(std::abs((r1.values.array() - r1.values.mean()).square().mean() - 1.0) < 1e-5);
  CHECK((normalize_features(r1).values - r1.values).cwiseAbs().maxCoeff() < 1e-9);

  FeatureMap c;
  c.values = Eigen::MatrixXd::Constant(3, 3, 4.0);
  CHECK(test::error_code_of([&] { normalize_features(c); }) == ErrorCode::ConstantFeatures);
}

TEST_CASE("pad_or_truncate") {
  FeatureMap fm;
  fm.values.resize(2, 10);
  for (int t = 0; t < 10; ++t) fm.values.col(t).setConstant(t);
  CHECK(pad_or_truncate(fm, 10).values == fm.values);

  const FeatureMap cut = pad_or_truncate(fm, 4);
  REQUIRE(cut.values.cols() == 4);
  for (int t = 0; t < 4; ++t) CHECK(cut.values(0, t) == 3 + t);

  FeatureMap small;
  small.values.resize(2, 2);
  small.values << 1, 2, -3, 4;
  const FeatureMap padded = pad_or_truncate(small, 4);
  CHECK(padded.values.leftCols(2) == small.values);
  CHECK((padded.values.rightCols(2).array() == -3.0).all());
}

TEST_CASE("mfcc of a constant column") {
  FeatureMap fm;
  fm.values = Eigen::MatrixXd::Constant(128, 3, 2.5);
  const Eigen::MatrixXd c = mfcc(fm, 13);
  CHECK(c.rows() == 13);
  CHECK(c.cols() == 3);
  CHECK(c(0, 0) == doctest::Approx(2.5 * std::sqrt(128.0)).epsilon(1e-12));
  CHECK(c.bottomRows(12).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("full DCT is invertible") {
  FeatureMap fm;
  fm.values = Eigen::MatrixXd::Random(40, 7);
  const Eigen::MatrixXd c = mfcc(fm, 40);
  const Eigen::MatrixXd back = dct_matrix(40, 40).transpose() * c;
  CHECK((back - fm.values).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("mfcc_stats is means then population stds") {
  Eigen::MatrixXd c(2, 2);
  c << 1, 3, 0, 0;
  const Eigen::VectorXd s = mfcc_stats(c);
  REQUIRE(s.size() == 4);
  CHECK(s[0] == 2.0);
  CHECK(s[1] == 0.0);
  CHECK(s[2] == 1.0);
  CHECK(s[3] == 0.0);
}

TEST_CASE("pipeline shape and determinism") {
  Waveform w = tone(220.0, 24000);
  w.samples += 0.1 * noise(24000, 4).samples;
  const UtteranceFeatures a = extract_features(w, FeatureConfig{});
  const UtteranceFeatures b = extract_features(w, FeatureConfig{});
  CHECK(a.log_mel.values.rows() == 128);
  CHECK(a.log_mel.values.cols() == 300);
  CHECK(a.mfcc_stats.size() == 26);
  CHECK(a.log_mel.values == b.log_mel.values);
  CHECK(a.mfcc_stats == b.mfcc_stats);
  CHECK(a.log_mel.values.allFinite());
}

TEST_CASE("feature file round trip and corruption") {
  test::TempDir dir;
  const Eigen::MatrixXd m = Eigen::MatrixXd::Random(5, 7);
  write_feature_file(dir / "a.feat", m);
  const Eigen::MatrixXf back = read_feature_file(dir / "a.feat");
  CHECK(back == m.cast<float>());

  std::string bytes = test::read_file(dir / "a.feat");
  {
    std::ofstream(dir / "short.feat", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
    CHECK(test::error_code_of([&] { read_feature_file(dir / "short.feat"); }) == ErrorCode::ShapeMismatch);
  }
  bytes[0] = 'X';
  std::ofstream(dir / "magic.feat", std::ios::binary) << bytes;
  CHECK(test::error_code_of([&] { read_feature_file(dir / "magic.feat"); }) == ErrorCode::BadMagic);
}

}
