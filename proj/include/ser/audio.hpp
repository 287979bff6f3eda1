#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace ser {

/// Mono audio at a fixed sample rate. Amplitudes are nominally in [-1, 1]
/// before conditioning.
struct Waveform {
  Eigen::VectorXd samples;
  int sample_rate = 16000;

  Eigen::Index size() const { return samples.size(); }
  double duration_seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
};

enum class WavEncoding { Pcm16, Float32 };

inline constexpr int kCanonicalSampleRate = 16000;
inline constexpr double kDefaultTrimThresholdDb = -40.0;

/// Reads a RIFF/WAVE file holding PCM16 or float32 samples. Channels are
/// averaged into one; PCM16 is scaled by 1/32768.
Waveform load_wav(const std::filesystem::path& path);

/// Same as load_wav, but over an in-memory file image.
Waveform decode_wav(std::span<const std::uint8_t> bytes);

void write_wav(const std::filesystem::path& path, const Waveform& w,
               WavEncoding encoding = WavEncoding::Pcm16);

/// Interleaved multi-channel writer, used mainly by tests; `channels` holds
/// one equally long vector per channel.
void write_wav(const std::filesystem::path& path, const std::vector<Eigen::VectorXd>& channels,
               int sample_rate, WavEncoding encoding);

/// Polyphase windowed-sinc resampler (Kaiser, beta 8.6, 64 taps per phase).
/// Returns the input unchanged when the rates already match.
Waveform resample(const Waveform& w, int target_rate);

/// Zero-mean, unit-variance (population) normalization.
/// Throws ConstantSignal when the standard deviation is below 1e-12.
Waveform condition(const Waveform& w);

/// Drops leading and trailing 25 ms / 10 ms frames whose energy is more than
/// |threshold_db| below the loudest frame. Returns a contiguous slice.
Waveform trim_silence(const Waveform& w, double threshold_db = kDefaultTrimThresholdDb);

}  // namespace ser
