#include "dhvc/io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dhvc/errors.hpp"

namespace dhvc::io {

namespace {

std::ofstream open_out(const std::filesystem::path& path, bool binary) {
  std::ofstream f(path, binary ? std::ios::binary : std::ios::out);
  if (!f) throw InvalidInputError("cannot write file: " + path.string());
  return f;
}

std::ifstream open_in(const std::filesystem::path& path, bool binary) {
  std::ifstream f(path, binary ? std::ios::binary : std::ios::in);
  if (!f) throw InvalidInputError("cannot read file: " + path.string());
  return f;
}

void format_value(std::ostream& os, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  os << buf;
}

}  // namespace

void write_mel_csv(const std::filesystem::path& path, const dsp::MelSpectrogram& mel) {
  auto f = open_out(path, false);
  for (std::int64_t r = 0; r < mel.n_frames; ++r) {
    for (int m = 0; m < mel.n_mels; ++m) {
      if (m) f << ",";
      format_value(f, mel.at(r, m));
    }
    f << "\n";
  }
}

void write_mel_raw(const std::filesystem::path& path, const dsp::MelSpectrogram& mel) {
  auto f = open_out(path, true);
  const std::uint32_t header[2] = {static_cast<std::uint32_t>(mel.n_frames),
                                   static_cast<std::uint32_t>(mel.n_mels)};
  f.write(reinterpret_cast<const char*>(header), 8);
  std::vector<float> buf(mel.values.size());
  for (std::size_t i = 0; i < mel.values.size(); ++i)
    buf[i] = static_cast<float>(mel.values[i]);
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

dsp::MelSpectrogram read_mel_raw(const std::filesystem::path& path) {
  auto f = open_in(path, true);
  std::uint32_t header[2];
  f.read(reinterpret_cast<char*>(header), 8);
  if (!f) throw InvalidInputError("truncated mel raw file: " + path.string());
  dsp::MelSpectrogram mel;
  mel.n_frames = header[0];
  mel.n_mels = static_cast<int>(header[1]);
  std::vector<float> buf(static_cast<std::size_t>(header[0]) * header[1]);
  f.read(reinterpret_cast<char*>(buf.data()),
         static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f) throw InvalidInputError("truncated mel raw file: " + path.string());
  mel.values.assign(buf.begin(), buf.end());
  return mel;
}

void write_contour_csv(const std::filesystem::path& path, const pitch::PitchContour& contour) {
  auto f = open_out(path, false);
  f << "frame_index,f0_hz,voiced\n";
  for (std::int64_t i = 0; i < contour.size(); ++i) {
    f << i << ",";
    format_value(f, contour.f0_hz[static_cast<std::size_t>(i)]);
    f << "," << static_cast<int>(contour.voiced[static_cast<std::size_t>(i)]) << "\n";
  }
}

pitch::PitchContour read_contour_csv(const std::filesystem::path& path) {
  auto f = open_in(path, false);
  std::string line;
  std::getline(f, line);  // header
  pitch::PitchContour contour;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::getline(row, cell, ',');
    std::getline(row, cell, ',');
    contour.f0_hz.push_back(std::stod(cell));
    std::getline(row, cell, ',');
    contour.voiced.push_back(static_cast<std::uint8_t>(std::stoi(cell)));
  }
  return contour;
}

void write_content_csv(const std::filesystem::path& path, const dsp::ContentFeatures& feats) {
  auto f = open_out(path, false);
  for (std::int64_t r = 0; r < feats.n_frames; ++r) {
    for (int d = 0; d < feats.dim; ++d) {
      if (d) f << ",";
      format_value(f, feats.at(r, d));
    }
    f << "\n";
  }
}

dsp::ContentFeatures read_content_csv(const std::filesystem::path& path) {
  auto f = open_in(path, false);
  dsp::ContentFeatures feats;
  feats.dim = 0;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    int d = 0;
    while (std::getline(row, cell, ',')) {
      feats.values.push_back(std::stod(cell));
      ++d;
    }
    if (feats.dim == 0)
      feats.dim = d;
    else if (feats.dim != d)
      throw InvalidInputError("ragged content CSV: " + path.string());
    ++feats.n_frames;
  }
  return feats;
}

void write_table_csv(const std::filesystem::path& path,
                     const std::vector<std::string>& header,
                     const std::vector<std::vector<double>>& rows) {
  auto f = open_out(path, false);
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) f << ",";
    f << header[i];
  }
  f << "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) f << ",";
      format_value(f, row[i]);
    }
    f << "\n";
  }
}

std::string read_text_file(const std::filesystem::path& path) {
  auto f = open_in(path, true);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  auto f = open_out(path, true);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace dhvc::io
