// dhvc/audio.hpp -- mono audio buffer and 16-bit PCM WAV ingestion.
#pragma once

#include <filesystem>
#include <vector>

namespace dhvc {

inline constexpr int kCanonicalSampleRate = 16000;

struct AudioBuffer {
  std::vector<double> samples;  // amplitudes in [-1, 1]
  int sample_rate_hz = kCanonicalSampleRate;
};

// Throws InvalidInputError if samples are non-finite or the rate is not positive.
void validate_audio(const AudioBuffer& audio);

// Throws InvalidInputError if the rate differs from 16 kHz.
void require_canonical_rate(const AudioBuffer& audio);

// Reads a PCM 16-bit mono little-endian WAV; rejects every other encoding
// with a descriptive InvalidInputError.
AudioBuffer read_wav(const std::filesystem::path& path);

// Writes PCM 16-bit mono little-endian; samples are clamped to [-1, 1].
void write_wav(const std::filesystem::path& path, const AudioBuffer& audio);

}  // namespace dhvc
