#include "ser/audio.hpp"

#include "ser/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>

namespace ser {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }
  void seek(std::size_t pos) { pos_ = pos; }

  bool has(std::size_t n) const { return remaining() >= n; }

  std::uint16_t u16() {
    std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | bytes_[pos_ + static_cast<std::size_t>(i)];
    pos_ += 4;
    return v;
  }
  bool tag(const char (&expected)[5]) {
    bool ok = std::memcmp(bytes_.data() + pos_, expected, 4) == 0;
    pos_ += 4;
    return ok;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

struct FormatChunk {
  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t bits = 0;
};

double pcm16_at(std::span<const std::uint8_t> data, std::size_t index) {
  auto raw = static_cast<std::int16_t>(data[2 * index] | (data[2 * index + 1] << 8));
  return raw / 32768.0;
}

double float32_at(std::span<const std::uint8_t> data, std::size_t index) {
  std::uint32_t bits = 0;
  for (int b = 3; b >= 0; --b) bits = (bits << 8) | data[4 * index + static_cast<std::size_t>(b)];
  return static_cast<double>(std::bit_cast<float>(bits));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_tag(std::vector<std::uint8_t>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

double kaiser(double x, double half_width, double beta) {
  double r = x / half_width;
  if (std::abs(r) > 1.0) return 0.0;
  return std::cyl_bessel_i(0.0, beta * std::sqrt(1.0 - r * r)) / std::cyl_bessel_i(0.0, beta);
}

double sinc(double x) {
  if (x == 0.0) return 1.0;
  double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

}  // namespace

Waveform decode_wav(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  if (!in.has(12) || !in.tag("RIFF")) throw Error(ErrorCode::UnsupportedEncoding, "not a RIFF file");
  in.u32();
  if (!in.tag("WAVE")) throw Error(ErrorCode::UnsupportedEncoding, "RIFF file is not WAVE");

  FormatChunk fmt;
  bool have_fmt = false;
  std::span<const std::uint8_t> data;
  bool have_data = false;

  while (in.has(8) && !have_data) {
    std::size_t chunk_start = in.position();
    bool is_fmt = in.tag("fmt ");
    in.seek(chunk_start);
    bool is_data = in.tag("data");
    std::uint32_t size = in.u32();
    if (!in.has(size)) throw Error(ErrorCode::MalformedWav, "chunk extends past end of file");

    if (is_fmt) {
      if (size < 16) throw Error(ErrorCode::MalformedWav, "fmt chunk too small");
      std::size_t body = in.position();
      fmt.format = in.u16();
      fmt.channels = in.u16();
      fmt.sample_rate = in.u32();
      in.u32();  // byte rate
      in.u16();  // block align
      fmt.bits = in.u16();
      if (fmt.format == kFormatExtensible) {
        if (size < 40) throw Error(ErrorCode::MalformedWav, "extensible fmt chunk too small");
        in.seek(body + 24);
        fmt.format = in.u16();
      }
      in.seek(body + size);
      have_fmt = true;
    } else if (is_data) {
      data = in.take(size);
      have_data = true;
    } else {
      in.seek(in.position() + size);
    }
    if (size % 2 == 1 && in.has(1)) in.seek(in.position() + 1);
  }

  if (!have_fmt) throw Error(ErrorCode::MalformedWav, "missing fmt chunk");
  if (!have_data) throw Error(ErrorCode::MalformedWav, "missing data chunk");
  if (fmt.channels == 0 || fmt.sample_rate == 0)
    throw Error(ErrorCode::MalformedWav, "zero channels or sample rate");

  bool pcm16 = fmt.format == kFormatPcm && fmt.bits == 16;
  bool f32 = fmt.format == kFormatFloat && fmt.bits == 32;
  if (!pcm16 && !f32)
    throw Error(ErrorCode::UnsupportedEncoding,
                "format " + std::to_string(fmt.format) + " with " + std::to_string(fmt.bits) +
                    " bits per sample");

  std::size_t bytes_per_sample = pcm16 ? 2 : 4;
  std::size_t frame_bytes = bytes_per_sample * fmt.channels;
  if (data.size() % frame_bytes != 0) throw Error(ErrorCode::MalformedWav, "partial sample frame");
  std::size_t n_frames = data.size() / frame_bytes;
  if (n_frames == 0) throw Error(ErrorCode::MalformedWav, "no samples");

  Waveform w;
  w.sample_rate = static_cast<int>(fmt.sample_rate);
  w.samples.resize(static_cast<Eigen::Index>(n_frames));
  for (std::size_t i = 0; i < n_frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < fmt.channels; ++c) {
      std::size_t idx = i * fmt.channels + c;
      acc += pcm16 ? pcm16_at(data, idx) : float32_at(data, idx);
    }
    w.samples[static_cast<Eigen::Index>(i)] = acc / fmt.channels;
  }
  return w;
}

Waveform load_wav(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec))
    throw Error(ErrorCode::FileNotFound, path.string());
  std::ifstream file(path, std::ios::binary);
  if (!file) throw Error(ErrorCode::FileNotFound, path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  try {
    return decode_wav(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.message());
  }
}

void write_wav(const std::filesystem::path& path, const std::vector<Eigen::VectorXd>& channels,
               int sample_rate, WavEncoding encoding) {
  if (channels.empty()) throw Error(ErrorCode::IoError, "no channels to write");
  const auto n = static_cast<std::size_t>(channels.front().size());
  const auto n_channels = static_cast<std::uint16_t>(channels.size());
  const std::uint16_t bits = encoding == WavEncoding::Pcm16 ? 16 : 32;
  const std::uint16_t block = static_cast<std::uint16_t>(n_channels * bits / 8);
  const auto data_size = static_cast<std::uint32_t>(n * block);

  std::vector<std::uint8_t> out;
  out.reserve(44 + data_size);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_size);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, encoding == WavEncoding::Pcm16 ? kFormatPcm : kFormatFloat);
  put_u16(out, n_channels);
  put_u32(out, static_cast<std::uint32_t>(sample_rate));
  put_u32(out, static_cast<std::uint32_t>(sample_rate) * block);
  put_u16(out, block);
  put_u16(out, bits);
  put_tag(out, "data");
  put_u32(out, data_size);
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& ch : channels) {
      double x = ch[static_cast<Eigen::Index>(i)];
      if (encoding == WavEncoding::Pcm16) {
        double q = std::clamp(std::round(x * 32768.0), -32768.0, 32767.0);
        put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
      } else {
        put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
      }
    }
  }

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!file) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

void write_wav(const std::filesystem::path& path, const Waveform& w, WavEncoding encoding) {
  write_wav(path, std::vector<Eigen::VectorXd>{w.samples}, w.sample_rate, encoding);
}

Waveform resample(const Waveform& w, int target_rate) {
  if (target_rate <= 0) throw Error(ErrorCode::ConfigError, "target sample rate must be positive");
  if (w.sample_rate <= 0 || w.samples.size() == 0)
    throw Error(ErrorCode::MalformedWav, "resample needs a non-empty waveform");
  if (w.sample_rate == target_rate) return w;

  constexpr int kTaps = 64;
  constexpr int kHalf = kTaps / 2;
  constexpr double kBeta = 8.6;

  const std::int64_t g = std::gcd(w.sample_rate, target_rate);
  const std::int64_t up = target_rate / g;
  const std::int64_t down = w.sample_rate / g;
  const std::int64_t n_in = w.samples.size();
  const std::int64_t n_out = (n_in * up + down - 1) / down;
  // Cutoff in cycles per input sample.
  const double cutoff = 0.5 * std::min(1.0, static_cast<double>(up) / static_cast<double>(down));

  // Taps for output phase p cover input offsets base-31 .. base+32.
  std::vector<std::vector<double>> phases(static_cast<std::size_t>(up));
  auto taps_for = [&](std::int64_t phase) -> const std::vector<double>& {
    auto& taps = phases[static_cast<std::size_t>(phase)];
    if (!taps.empty()) return taps;
    taps.resize(kTaps);
    const double frac = static_cast<double>(phase) / static_cast<double>(up);
    double sum = 0.0;
    for (int k = 0; k < kTaps; ++k) {
      double x = frac + (kHalf - 1 - k);  // distance from tap to the output instant
      double h = 2.0 * cutoff * sinc(2.0 * cutoff * x) * kaiser(x, kHalf, kBeta);
      taps[static_cast<std::size_t>(k)] = h;
      sum += h;
    }
    for (double& h : taps) h /= sum;
    return taps;
  };

  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(n_out);
  for (std::int64_t n = 0; n < n_out; ++n) {
    const std::int64_t pos = n * down;
    const std::int64_t base = pos / up;
    const auto& taps = taps_for(pos % up);
    double acc = 0.0;
    for (int k = 0; k < kTaps; ++k) {
      std::int64_t i = base - (kHalf - 1) + k;
      if (i >= 0 && i < n_in) acc += taps[static_cast<std::size_t>(k)] * w.samples[i];
    }
    out.samples[n] = acc;
  }
  return out;
}

Waveform condition(const Waveform& w) {
  if (w.samples.size() == 0) throw Error(ErrorCode::ConstantSignal, "empty waveform");
  const double mean = w.samples.mean();
  const double var = (w.samples.array() - mean).square().mean();
  const double sd = std::sqrt(var);
  if (!(sd >= 1e-12)) throw Error(ErrorCode::ConstantSignal, "signal standard deviation below 1e-12");
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples = (w.samples.array() - mean) / sd;
  return out;
}

Waveform trim_silence(const Waveform& w, double threshold_db) {
  const Eigen::Index frame = static_cast<Eigen::Index>(std::lround(0.025 * w.sample_rate));
  const Eigen::Index hop = static_cast<Eigen::Index>(std::lround(0.010 * w.sample_rate));
  const Eigen::Index n = w.samples.size();
  if (frame <= 0 || hop <= 0 || n < frame) return w;

  const Eigen::Index n_frames = 1 + (n - frame) / hop;
  std::vector<double> energy(static_cast<std::size_t>(n_frames));
  for (Eigen::Index k = 0; k < n_frames; ++k)
    energy[static_cast<std::size_t>(k)] = w.samples.segment(k * hop, frame).squaredNorm();
  const double peak = *std::max_element(energy.begin(), energy.end());
  if (!(peak > 0.0)) return w;

  const double floor_db = 10.0 * std::log10(peak) + threshold_db;
  auto loud = [&](double e) { return e > 0.0 && 10.0 * std::log10(e) >= floor_db; };
  auto first_it = std::find_if(energy.begin(), energy.end(), loud);
  auto last_it = std::find_if(energy.rbegin(), energy.rend(), loud);
  const Eigen::Index first = first_it - energy.begin();
  const Eigen::Index last = n_frames - 1 - (last_it - energy.rbegin());

  // An edge frame that barely overlaps the content still counts as loud, so
  // only the hop it contributes on the interior side is kept.
  Eigen::Index start = first == 0 ? 0 : first * hop + (frame - hop);
  Eigen::Index end = last == n_frames - 1 ? n : last * hop + hop;
  if (start >= end) {
    start = first * hop;
    end = last * hop + frame;
  }
  if (start == 0 && end == n) return w;

  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples = w.samples.segment(start, end - start);
  return out;
}

}  // namespace ser
