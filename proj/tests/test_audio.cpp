#include "support.hpp"

#include "ser/audio.hpp"
#include "ser/features.hpp"

#include <doctest.h>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

using namespace ser;

namespace {

Waveform sine(double hz, double seconds, int rate, double amp = 0.5) {
  Waveform w;
  w.sample_rate = rate;
  const auto n = static_cast<Eigen::Index>(std::lround(seconds * rate));
  w.samples.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) w.samples[i] = amp * std::sin(2.0 * std::numbers::pi * hz * i / rate);
  return w;
}

// Frequency of the largest bin of a zero-padded full-length FFT.
double peak_hz(const Waveform& w) {
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> x(w.samples.data(), w.samples.data() + w.samples.size());
  std::vector<std::complex<double>> X;
  fft.fwd(X, x);
  std::size_t best = 1;
  for (std::size_t k = 1; k < X.size(); ++k)
    if (std::norm(X[k]) > std::norm(X[best])) best = k;
  return static_cast<double>(best) * w.sample_rate / static_cast<double>(x.size());
}

}  // namespace

TEST_SUITE("audio") {

TEST_CASE("pcm16 mono decodes with 1/32768 scaling") {
  const auto img = test::wav_image(1, 1, 16000, 16, test::pcm16({16384, -16384}));
  const Waveform w = decode_wav(img);
  REQUIRE(w.size() == 2);
  CHECK(w.sample_rate == 16000);
  CHECK(w.samples[0] == 0.5);
  CHECK(w.samples[1] == -0.5);
}

TEST_CASE("stereo float32 is averaged to mono") {
  const auto img = test::wav_image(3, 2, 16000, 32, test::f32le({1.0f, 0.0f}));
  const Waveform w = decode_wav(img);
  REQUIRE(w.size() == 1);
  CHECK(w.samples[0] == 0.5);
}

TEST_CASE("declared data length past end of file is malformed") {
  const auto img = test::wav_image(1, 1, 16000, 16, test::pcm16({1, 2, 3}), 600);
  CHECK(test::error_code_of([&] { decode_wav(img); }) == ErrorCode::MalformedWav);
}

TEST_CASE("non-RIFF bytes and unsupported formats") {
  const std::vector<std::uint8_t> junk{'h', 'e', 'l', 'l', 'o'};
  CHECK(test::error_code_of([&] { decode_wav(junk); }) == ErrorCode::UnsupportedEncoding);
  // 8-bit PCM is not handled
  const auto img = test::wav_image(1, 1, 16000, 8, {1, 2, 3, 4});
  CHECK(test::error_code_of([&] { decode_wav(img); }) == ErrorCode::UnsupportedEncoding);
}

TEST_CASE("missing file") {
  CHECK(test::error_code_of([] { load_wav("/nonexistent/dir/x.wav"); }) == ErrorCode::FileNotFound);
}

TEST_CASE("write then load round-trips") {
  test::TempDir dir;
  Waveform w = sine(300.0, 0.1, 16000);
  write_wav(dir / "f.wav", w, WavEncoding::Float32);
  const Waveform back = load_wav(dir / "f.wav");
  CHECK(back.sample_rate == 16000);
  CHECK((back.samples - w.samples).cwiseAbs().maxCoeff() < 1e-7);

  write_wav(dir / "p.wav", w, WavEncoding::Pcm16);
  const Waveform q = load_wav(dir / "p.wav");
  CHECK((q.samples - w.samples).cwiseAbs().maxCoeff() <= 1.0 / 32768.0);

  write_wav(dir / "s.wav", {w.samples, -w.samples}, 16000, WavEncoding::Float32);
  CHECK(load_wav(dir / "s.wav").samples.cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("resample identity at matching rate") {
  const Waveform w = sine(440.0, 0.2, 16000);
  const Waveform r = resample(w, 16000);
  CHECK(r.sample_rate == 16000);
  CHECK(r.samples == w.samples);
}

TEST_CASE("44.1 kHz sine keeps its frequency at 16 kHz") {
  const Waveform w = sine(440.0, 1.0, 44100);
  const Waveform r = resample(w, 16000);
  CHECK(r.sample_rate == 16000);
  CHECK(std::abs(r.size() - 16000) <= 1);
  // 1 Hz resolution over one second
  CHECK(std::abs(peak_hz(r) - 440.0) <= 1.0);
  // and on the 512-point STFT grid
  const Eigen::MatrixXd p = stft_power(frame_signal(r, FramingSpec{}), 512);
  Eigen::Index bin;
  p.rowwise().sum().maxCoeff(&bin);
  CHECK(std::abs(static_cast<double>(bin) - 440.0 * 512 / 16000) <= 1.0);
}

TEST_CASE("8 kHz to 16 kHz doubles the length") {
  const Waveform w = sine(200.0, 0.37, 8000);
  CHECK(std::abs(resample(w, 16000).size() - 2 * w.size()) <= 1);
}

TEST_CASE("resample is rate-idempotent") {
  const Waveform once = resample(sine(523.0, 0.3, 22050), 16000);
  const Waveform twice = resample(once, 16000);
  CHECK(twice.samples == once.samples);
}

TEST_CASE("property: sine frequency survives resampling") {
  std::mt19937_64 gen(11);
  const int rates[] = {8000, 11025, 22050, 32000, 44100, 48000};
  for (int trial = 0; trial < 12; ++trial) {
    const int from = rates[gen() % 6];
    const int to = rates[gen() % 6];
    const double nyq = 0.45 * std::min(from, to);
    const double hz = std::uniform_real_distribution<double>(50.0, nyq)(gen);
    const Waveform w = sine(hz, 0.5, from);
    const Waveform r = resample(w, to);
    const double bin_from = static_cast<double>(from) / w.size();
    const double bin_to = static_cast<double>(to) / r.size();
    CAPTURE(from);
    CAPTURE(to);
    CAPTURE(hz);
    CHECK(std::abs(peak_hz(r) - peak_hz(w)) <= std::max(bin_from, bin_to) + 1e-9);
  }
}

TEST_CASE("condition standardizes") {
  Waveform w;
  w.samples = Eigen::Vector2d(1.0, 3.0);
  const Waveform c = condition(w);
  CHECK(c.samples[0] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(c.samples[1] == doctest::Approx(1.0).epsilon(1e-12));

  std::mt19937_64 gen(3);
  std::normal_distribution<double> nd;
  Waveform noise;
  noise.samples.resize(20000);
  for (auto& x : noise.samples) x = nd(gen);
  const Waveform n1 = condition(noise);
  const double mean = n1.samples.mean();
  const double var = (n1.samples.array() - mean).square().mean();
  CHECK(std::abs(mean) < 1e-6);
  CHECK(std::abs(var - 1.0) < 1e-6);
  CHECK((condition(n1).samples - n1.samples).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("constant signal cannot be conditioned") {
  Waveform w;
  w.samples = Eigen::Vector3d(0.7, 0.7, 0.7);
  CHECK(test::error_code_of([&] { condition(w); }) == ErrorCode::ConstantSignal);
}

TEST_CASE("trim removes surrounding silence to within one hop") {
  Waveform w;
  w.sample_rate = 16000;
  w.samples = Eigen::VectorXd::Zero(32000);
  w.samples.segment(8000, 16000) = sine(440.0, 1.0, 16000).samples;
  const Waveform t = trim_silence(w, -40.0);
  CHECK(std::abs(t.size() - 16000) <= 160);
}

TEST_CASE("trim leaves a pure tone and an all-zero signal alone") {
  const Waveform s = sine(440.0, 0.5, 16000);
  CHECK(trim_silence(s).samples == s.samples);
  Waveform z;
  z.samples = Eigen::VectorXd::Zero(4000);
  CHECK(trim_silence(z).samples == z.samples);
}

TEST_CASE("property: trim output is a contiguous slice") {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    Waveform w;
    const Eigen::Index n = 2000 + static_cast<Eigen::Index>(gen() % 20000);
    w.samples = Eigen::VectorXd::Zero(n);
    const Eigen::Index a = static_cast<Eigen::Index>(gen() % (n / 2));
    const Eigen::Index len = 400 + static_cast<Eigen::Index>(gen() % (n - a - 400 + 1));
    for (Eigen::Index i = a; i < a + len && i < n; ++i) w.samples[i] = u(gen) * (0.01 + (i % 97) / 97.0);
    const Waveform t = trim_silence(w);
    const double* in = w.samples.data();
    const double* out = t.samples.data();
    CHECK(std::search(in, in + n, out, out + t.size()) != in + n);
  }
}

}
