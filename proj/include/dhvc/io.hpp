// dhvc/io.hpp -- CSV and raw-float file formats for features and reports.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dhvc/dsp.hpp"
#include "dhvc/pitch.hpp"

namespace dhvc::io {

// Mel as CSV, one row per frame.
void write_mel_csv(const std::filesystem::path& path, const dsp::MelSpectrogram& mel);

// Raw little-endian f32 with an 8-byte header (u32 n_frames, u32 n_mels).
void write_mel_raw(const std::filesystem::path& path, const dsp::MelSpectrogram& mel);
dsp::MelSpectrogram read_mel_raw(const std::filesystem::path& path);

// Contour CSV: columns frame_index, f0_hz, voiced.
void write_contour_csv(const std::filesystem::path& path, const pitch::PitchContour& contour);
pitch::PitchContour read_contour_csv(const std::filesystem::path& path);

// Content features CSV, one row per frame.
void write_content_csv(const std::filesystem::path& path, const dsp::ContentFeatures& feats);
dsp::ContentFeatures read_content_csv(const std::filesystem::path& path);

// Generic numeric table with a header row.
void write_table_csv(const std::filesystem::path& path,
                     const std::vector<std::string>& header,
                     const std::vector<std::vector<double>>& rows);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

// FNV-1a 64-bit, used for config hashes in run manifests.
std::uint64_t fnv1a64(const std::string& text);

}  // namespace dhvc::io
