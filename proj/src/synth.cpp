#include "ser/synth.hpp"

#include "ser/rng.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

namespace ser {
namespace {

struct Voice {
  double f0_lo, f0_hi;
  double tilt;  // harmonic k has amplitude k^-tilt
};

// anger, happiness, sadness, neutral
constexpr Voice kVoices[kNumEmotions] = {
    {200.0, 240.0, 0.6},
    {280.0, 340.0, 1.0},
    {100.0, 130.0, 2.2},
    {150.0, 180.0, 1.5},
};

double envelope(int label, double t, double dur) {
  const double u = t / dur;
  const double ramp = std::min({1.0, t / 0.02, (dur - t) / 0.02});
  switch (label) {
    case 0: return ramp * std::sqrt(std::abs(std::sin(std::numbers::pi * 3.0 * t)));  // bursts
    case 1: return ramp * (0.6 + 0.4 * std::sin(2.0 * std::numbers::pi * 6.0 * t));  // tremolo
    case 2: return std::sin(std::numbers::pi * u);                                     // slow swell
    default: return ramp;                                                              // steady
  }
}

}  // namespace

Waveform synth_utterance(int label, int index, std::uint64_t seed, int sample_rate) {
  label_name(label);  // range check
  std::mt19937_64 gen(counter_hash({seed, static_cast<std::uint64_t>(label), static_cast<std::uint64_t>(index)}));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1e-3);

  const Voice& v = kVoices[label];
  const double f0 = v.f0_lo + (v.f0_hi - v.f0_lo) * u01(gen);
  const double dur = 1.0 + 0.4 * u01(gen);
  const double margin = 0.15;
  const double vib_rate = 4.0 + 2.0 * u01(gen);
  const double fs = sample_rate;
  const auto n_voiced = static_cast<Eigen::Index>(std::lround(dur * fs));
  const auto n_margin = static_cast<Eigen::Index>(std::lround(margin * fs));

  int n_harm = 1;
  while ((n_harm + 1) * v.f0_hi * 1.02 < 0.475 * fs) ++n_harm;
  Eigen::VectorXd amp(n_harm), phase0(n_harm);
  for (int k = 0; k < n_harm; ++k) {
    amp[k] = std::pow(k + 1.0, -v.tilt);
    phase0[k] = 2.0 * std::numbers::pi * u01(gen);
  }

  Eigen::VectorXd voiced(n_voiced);
  double phase = 0.0;
  for (Eigen::Index i = 0; i < n_voiced; ++i) {
    const double t = static_cast<double>(i) / fs;
    const double f = f0 * (1.0 + 0.01 * std::sin(2.0 * std::numbers::pi * vib_rate * t));
    phase += 2.0 * std::numbers::pi * f / fs;
    double s = 0.0;
    for (int k = 0; k < n_harm; ++k) s += amp[k] * std::sin((k + 1) * phase + phase0[k]);
    voiced[i] = s * envelope(label, t, dur);
  }
  voiced *= 0.5 / std::max(1e-12, voiced.cwiseAbs().maxCoeff());

  Waveform w;
  w.sample_rate = sample_rate;
  w.samples = Eigen::VectorXd::Zero(n_voiced + 2 * n_margin);
  w.samples.segment(n_margin, n_voiced) = voiced;
  for (Eigen::Index i = 0; i < w.samples.size(); ++i) w.samples[i] += noise(gen);
  return w;
}

std::vector<ManifestRow> synth_corpus(const std::filesystem::path& out_dir, int n_per_class, std::uint64_t seed) {
  if (n_per_class < 1) throw Error(ErrorCode::ConfigError, "n_per_class must be >= 1");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + out_dir.string() + ": " + ec.message());

  std::vector<ManifestRow> rows;
  for (int label = 0; label < kNumEmotions; ++label) {
    for (int i = 0; i < n_per_class; ++i) {
      char name[64];
      std::snprintf(name, sizeof name, "%s_%03d.wav", std::string(label_name(label)).c_str(), i);
      write_wav(out_dir / name, synth_utterance(label, i, seed));
      rows.push_back({name, label, std::nullopt});
    }
  }
  write_manifest(out_dir / "manifest.csv", rows);
  return rows;
}

}  // namespace ser
