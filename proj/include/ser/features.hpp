#pragma once

#include "ser/audio.hpp"

#include <Eigen/Core>

#include <filesystem>

namespace ser {

struct FramingSpec {
  double frame_len_ms = 25.0;
  double hop_ms = 10.0;

  Eigen::Index frame_samples(int sample_rate) const;
  Eigen::Index hop_samples(int sample_rate) const;

  bool operator==(const FramingSpec&) const = default;
};

struct MelSpec {
  int n_fft = 512;
  int n_mels = 128;
  double fmin = 0.0;
  double fmax = 8000.0;
  double log_floor = 1e-10;

  bool operator==(const MelSpec&) const = default;
};

/// F x T log-Mel map: rows are Mel bins, columns are frames.
struct FeatureMap {
  Eigen::MatrixXd values;

  Eigen::Index n_mels() const { return values.rows(); }
  Eigen::Index n_frames() const { return values.cols(); }
};

/// Windowed frames, one per column (frame_len x T). Hamming window
/// 0.54 - 0.46 cos(2 pi n / (N - 1)).
Eigen::MatrixXd frame_signal(const Waveform& w, const FramingSpec& spec);

Eigen::VectorXd hamming_window(Eigen::Index length);

/// |DFT|^2 of each zero-padded frame over bins 0..n_fft/2.
Eigen::MatrixXd stft_power(const Eigen::MatrixXd& frames, int n_fft);

/// HTK Mel scale, 2595 log10(1 + f / 700).
double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// n_mels x (n_fft/2 + 1) triangular filterbank. Each triangle has peak 1 at
/// its Mel-spaced center; a bin's weight is the triangle's mean over that
/// bin's frequency interval, so narrow low-frequency filters still land on
/// a bin.
Eigen::MatrixXd mel_filterbank(const MelSpec& spec, int sample_rate);

/// ln(max(fb * power, floor)).
FeatureMap log_mel(const Eigen::MatrixXd& power, const Eigen::MatrixXd& filterbank, double log_floor);

/// Global per-utterance standardization over all cells.
FeatureMap normalize_features(const FeatureMap& fm);

/// Center-crops or right-pads (with the map minimum) to exactly target_frames.
FeatureMap pad_or_truncate(const FeatureMap& fm, Eigen::Index target_frames);

/// Orthonormal DCT-II along the Mel axis, first n_coeffs rows.
Eigen::MatrixXd mfcc(const FeatureMap& log_mel_map, int n_coeffs);
Eigen::MatrixXd dct_matrix(int n_coeffs, Eigen::Index n_inputs);

/// Per-coefficient mean followed by per-coefficient population std across
/// frames (length 2 * rows).
Eigen::VectorXd mfcc_stats(const Eigen::MatrixXd& coeffs);

struct FeatureConfig {
  int sample_rate = kCanonicalSampleRate;
  FramingSpec framing;
  MelSpec mel;
  double trim_threshold_db = kDefaultTrimThresholdDb;
  Eigen::Index target_frames = 300;
  int n_mfcc = 13;

  bool operator==(const FeatureConfig&) const = default;
};

struct UtteranceFeatures {
  FeatureMap log_mel;          // normalized and padded to target_frames
  Eigen::VectorXd mfcc_stats;  // baseline input
};

/// resample -> trim_silence -> condition.
Waveform prepare_waveform(const Waveform& w, const FeatureConfig& cfg);

/// Unnormalized log-Mel of an already prepared waveform.
FeatureMap raw_log_mel(const Waveform& prepared, const FeatureConfig& cfg);

UtteranceFeatures extract_features(const Waveform& w, const FeatureConfig& cfg);

/// SERFEAT1 cache file: magic, u32 F, u32 T, F*T float32 LE row-major.
void write_feature_file(const std::filesystem::path& path, const Eigen::MatrixXd& values);
Eigen::MatrixXf read_feature_file(const std::filesystem::path& path);

}  // namespace ser
