#include "ser/features.hpp"

#include "binary_io.hpp"
#include "ser/error.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

namespace ser {
namespace {

constexpr std::string_view kFeatureMagic = "SERFEAT1";

Eigen::Index whole_samples(double ms, int sample_rate, const char* what) {
  const double exact = sample_rate * ms / 1000.0;
  const double rounded = std::round(exact);
  if (std::abs(exact - rounded) > 1e-9 || rounded < 1)
    throw Error(ErrorCode::ConfigError,
                std::string(what) + " is not a whole number of samples at " + std::to_string(sample_rate) + " Hz");
  return static_cast<Eigen::Index>(rounded);
}

void validate(const MelSpec& spec, int sample_rate) {
  if (spec.n_mels < 1) throw Error(ErrorCode::ConfigError, "n_mels must be >= 1");
  if (spec.n_fft < 2 || spec.n_fft % 2 != 0) throw Error(ErrorCode::ConfigError, "n_fft must be even and >= 2");
  if (!(spec.fmin >= 0.0 && spec.fmin < spec.fmax && spec.fmax <= sample_rate / 2.0))
    throw Error(ErrorCode::ConfigError, "need 0 <= fmin < fmax <= sample_rate / 2");
  if (!(spec.log_floor > 0.0)) throw Error(ErrorCode::ConfigError, "log_floor must be positive");
}

// Integral of the unit-peak triangle (lo, mid, hi) over [a, b].
double triangle_integral(double lo, double mid, double hi, double a, double b) {
  double total = 0.0;
  double r0 = std::max(a, lo), r1 = std::min(b, mid);
  if (r1 > r0) {
    double w = mid - lo;
    total += ((r1 - lo) * (r1 - lo) - (r0 - lo) * (r0 - lo)) / (2.0 * w);
  }
  double f0 = std::max(a, mid), f1 = std::min(b, hi);
  if (f1 > f0) {
    double w = hi - mid;
    total += ((hi - f0) * (hi - f0) - (hi - f1) * (hi - f1)) / (2.0 * w);
  }
  return total;
}

}  // namespace

Eigen::Index FramingSpec::frame_samples(int sample_rate) const {
  return whole_samples(frame_len_ms, sample_rate, "frame length");
}

Eigen::Index FramingSpec::hop_samples(int sample_rate) const {
  return whole_samples(hop_ms, sample_rate, "hop");
}

Eigen::VectorXd hamming_window(Eigen::Index length) {
  Eigen::VectorXd w(length);
  if (length == 1) {
    w[0] = 1.0;
    return w;
  }
  for (Eigen::Index n = 0; n < length; ++n)
    w[n] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * n / static_cast<double>(length - 1));
  return w;
}

Eigen::MatrixXd frame_signal(const Waveform& w, const FramingSpec& spec) {
  if (!(spec.frame_len_ms > spec.hop_ms && spec.hop_ms > 0))
    throw Error(ErrorCode::ConfigError, "framing needs frame_len_ms > hop_ms > 0");
  const Eigen::Index frame = spec.frame_samples(w.sample_rate);
  const Eigen::Index hop = spec.hop_samples(w.sample_rate);
  const Eigen::Index n = w.samples.size();
  if (n < frame)
    throw Error(ErrorCode::SignalTooShort,
                std::to_string(n) + " samples is shorter than one " + std::to_string(frame) + "-sample frame");
  const Eigen::Index n_frames = 1 + (n - frame) / hop;
  const Eigen::VectorXd window = hamming_window(frame);
  Eigen::MatrixXd frames(frame, n_frames);
  for (Eigen::Index t = 0; t < n_frames; ++t)
    frames.col(t) = w.samples.segment(t * hop, frame).cwiseProduct(window);
  return frames;
}

Eigen::MatrixXd stft_power(const Eigen::MatrixXd& frames, int n_fft) {
  if (n_fft < frames.rows())
    throw Error(ErrorCode::ConfigError, "n_fft " + std::to_string(n_fft) + " is smaller than the frame length");
  const Eigen::Index n_bins = n_fft / 2 + 1;
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> buffer(static_cast<std::size_t>(n_fft));
  std::vector<std::complex<double>> spectrum;
  Eigen::MatrixXd power(n_bins, frames.cols());
  for (Eigen::Index t = 0; t < frames.cols(); ++t) {
    std::fill(buffer.begin(), buffer.end(), 0.0);
    for (Eigen::Index i = 0; i < frames.rows(); ++i) buffer[static_cast<std::size_t>(i)] = frames(i, t);
    fft.fwd(spectrum, buffer);
    for (Eigen::Index k = 0; k < n_bins; ++k) power(k, t) = std::norm(spectrum[static_cast<std::size_t>(k)]);
  }
  return power;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Eigen::MatrixXd mel_filterbank(const MelSpec& spec, int sample_rate) {
  validate(spec, sample_rate);
  const Eigen::Index n_bins = spec.n_fft / 2 + 1;
  const double bin_hz = static_cast<double>(sample_rate) / spec.n_fft;

  const double mel_lo = hz_to_mel(spec.fmin);
  const double mel_hi = hz_to_mel(spec.fmax);
  std::vector<double> edges(static_cast<std::size_t>(spec.n_mels) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / (spec.n_mels + 1));

  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(spec.n_mels, n_bins);
  for (int m = 0; m < spec.n_mels; ++m) {
    const double lo = edges[static_cast<std::size_t>(m)];
    const double mid = edges[static_cast<std::size_t>(m) + 1];
    const double hi = edges[static_cast<std::size_t>(m) + 2];
    if (!(lo < mid && mid < hi))
      throw Error(ErrorCode::DegenerateFilter, "filter " + std::to_string(m) + " has zero width");
    for (Eigen::Index k = 0; k < n_bins; ++k) {
      const double center = k * bin_hz;
      fb(m, k) = triangle_integral(lo, mid, hi, center - 0.5 * bin_hz, center + 0.5 * bin_hz) / bin_hz;
    }
    if (!(fb.row(m).sum() > 0.0))
      throw Error(ErrorCode::DegenerateFilter,
                  "filter " + std::to_string(m) + " covers no FFT bin; reduce n_mels or raise n_fft");
  }
  return fb;
}

FeatureMap log_mel(const Eigen::MatrixXd& power, const Eigen::MatrixXd& filterbank, double log_floor) {
  if (filterbank.cols() != power.rows())
    throw Error(ErrorCode::ShapeMismatch, "filterbank has " + std::to_string(filterbank.cols()) +
                                              " columns but the spectrum has " + std::to_string(power.rows()) +
                                              " bins");
  FeatureMap fm;
  fm.values = (filterbank * power).cwiseMax(log_floor).array().log().matrix();
  return fm;
}

FeatureMap normalize_features(const FeatureMap& fm) {
  const double mean = fm.values.mean();
  const double sd = std::sqrt((fm.values.array() - mean).square().mean());
  if (!(sd >= 1e-12)) throw Error(ErrorCode::ConstantFeatures, "feature map has zero variance");
  FeatureMap out;
  out.values = ((fm.values.array() - mean) / sd).matrix();
  return out;
}

FeatureMap pad_or_truncate(const FeatureMap& fm, Eigen::Index target_frames) {
  if (target_frames < 1) throw Error(ErrorCode::ConfigError, "target_frames must be >= 1");
  const Eigen::Index t = fm.n_frames();
  if (t == target_frames) return fm;
  FeatureMap out;
  if (t > target_frames) {
    out.values = fm.values.middleCols((t - target_frames) / 2, target_frames);
  } else {
    out.values = Eigen::MatrixXd::Constant(fm.n_mels(), target_frames, fm.values.minCoeff());
    out.values.leftCols(t) = fm.values;
  }
  return out;
}

Eigen::MatrixXd dct_matrix(int n_coeffs, Eigen::Index n_inputs) {
  Eigen::MatrixXd d(n_coeffs, n_inputs);
  const double n = static_cast<double>(n_inputs);
  for (int k = 0; k < n_coeffs; ++k) {
    const double scale = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (Eigen::Index i = 0; i < n_inputs; ++i)
      d(k, i) = scale * std::cos(std::numbers::pi * k * (2.0 * i + 1.0) / (2.0 * n));
  }
  return d;
}

Eigen::MatrixXd mfcc(const FeatureMap& log_mel_map, int n_coeffs) {
  if (n_coeffs < 1 || n_coeffs > log_mel_map.n_mels())
    throw Error(ErrorCode::ShapeMismatch, "n_coeffs must lie in [1, n_mels]");
  return dct_matrix(n_coeffs, log_mel_map.n_mels()) * log_mel_map.values;
}

Eigen::VectorXd mfcc_stats(const Eigen::MatrixXd& coeffs) {
  const Eigen::Index n = coeffs.rows();
  Eigen::VectorXd stats(2 * n);
  const Eigen::VectorXd mean = coeffs.rowwise().mean();
  stats.head(n) = mean;
  stats.tail(n) = ((coeffs.colwise() - mean).array().square().rowwise().mean()).sqrt().matrix();
  return stats;
}

Waveform prepare_waveform(const Waveform& w, const FeatureConfig& cfg) {
  return condition(trim_silence(resample(w, cfg.sample_rate), cfg.trim_threshold_db));
}

FeatureMap raw_log_mel(const Waveform& prepared, const FeatureConfig& cfg) {
  const Eigen::MatrixXd frames = frame_signal(prepared, cfg.framing);
  const Eigen::MatrixXd power = stft_power(frames, cfg.mel.n_fft);
  return log_mel(power, mel_filterbank(cfg.mel, prepared.sample_rate), cfg.mel.log_floor);
}

UtteranceFeatures extract_features(const Waveform& w, const FeatureConfig& cfg) {
  const FeatureMap raw = raw_log_mel(prepare_waveform(w, cfg), cfg);
  UtteranceFeatures out;
  out.mfcc_stats = mfcc_stats(mfcc(raw, cfg.n_mfcc));
  out.log_mel = pad_or_truncate(normalize_features(raw), cfg.target_frames);
  return out;
}

void write_feature_file(const std::filesystem::path& path, const Eigen::MatrixXd& values) {
  detail::ByteWriter out;
  out.bytes(kFeatureMagic);
  out.u32(static_cast<std::uint32_t>(values.rows()));
  out.u32(static_cast<std::uint32_t>(values.cols()));
  for (Eigen::Index r = 0; r < values.rows(); ++r)
    for (Eigen::Index c = 0; c < values.cols(); ++c) out.f32(static_cast<float>(values(r, c)));
  out.save(path);
}

Eigen::MatrixXf read_feature_file(const std::filesystem::path& path) {
  detail::ByteReader in(detail::ByteReader::slurp(path), ErrorCode::BadMagic);
  if (in.remaining() < kFeatureMagic.size() || in.bytes(kFeatureMagic.size()) != kFeatureMagic)
    throw Error(ErrorCode::BadMagic, path.string() + " is not a SERFEAT1 file");
  const std::uint32_t rows = in.u32();
  const std::uint32_t cols = in.u32();
  if (in.remaining() != static_cast<std::size_t>(rows) * cols * 4)
    throw Error(ErrorCode::ShapeMismatch, path.string() + ": payload does not match " + std::to_string(rows) +
                                              "x" + std::to_string(cols));
  Eigen::MatrixXf values(rows, cols);
  for (Eigen::Index r = 0; r < values.rows(); ++r)
    for (Eigen::Index c = 0; c < values.cols(); ++c) values(r, c) = in.f32();
  return values;
}

}  // namespace ser
