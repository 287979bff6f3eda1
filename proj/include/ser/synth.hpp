#pragma once

#include "ser/audio.hpp"
#include "ser/dataset.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace ser {

/// Stand-in corpus with one acoustic signature per emotion: a fundamental
/// frequency band, an amplitude-envelope shape and a harmonic spectral tilt,
/// plus seeded Gaussian noise and short silent margins.
Waveform synth_utterance(int label, int index, std::uint64_t seed, int sample_rate = kCanonicalSampleRate);

/// Writes `<label>_<index>.wav` (PCM16) for n_per_class utterances per class
/// and `manifest.csv` (path,label; paths relative to out_dir). Returns the
/// manifest rows.
std::vector<ManifestRow> synth_corpus(const std::filesystem::path& out_dir, int n_per_class, std::uint64_t seed);

}  // namespace ser
