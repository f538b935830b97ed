#include "dhvc/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dhvc/errors.hpp"

namespace dhvc::nets {

namespace {

void put_u16(std::ostream& os, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  os.write(b, 2);
}

void put_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff),
                     static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

std::uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InvalidInputError("cannot write checkpoint: " + path.string());
  f.write("DHVC", 4);
  put_u32(f, kCheckpointVersion);
  put_u32(f, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    put_u16(f, static_cast<std::uint16_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(f, static_cast<std::uint32_t>(t.rank()));
    for (int d = 0; d < t.rank(); ++d) put_u32(f, static_cast<std::uint32_t>(t.dim(d)));
    std::vector<float> buf(t.data.size());
    for (std::size_t i = 0; i < t.data.size(); ++i) buf[i] = static_cast<float>(t.data[i]);
    f.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  std::ostringstream cfg;
  for (const auto& [k, v] : ckpt.config) cfg << k << "=" << v << "\n";
  const std::string cfg_str = cfg.str();
  put_u32(f, static_cast<std::uint32_t>(cfg_str.size()));
  f.write(cfg_str.data(), static_cast<std::streamsize>(cfg_str.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InvalidInputError("cannot read checkpoint: " + path.string());
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "DHVC", 4) != 0)
    throw InvalidInputError("not a DHVC checkpoint: " + path.string());
  const std::uint32_t version = get_u32(f);
  if (version != kCheckpointVersion)
    throw InvalidInputError("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = get_u32(f);

  Checkpoint ckpt;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = get_u16(f);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    const std::uint32_t rank = get_u32(f);
    std::vector<std::int64_t> shape(rank);
    for (auto& d : shape) d = get_u32(f);
    std::vector<float> buf(static_cast<std::size_t>(numel_of(shape)));
    f.read(reinterpret_cast<char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!f) throw InvalidInputError("truncated checkpoint: " + path.string());
    Tensor t;
    t.shape = std::move(shape);
    t.data.assign(buf.begin(), buf.end());
    if (!ckpt.tensors.emplace(std::move(name), std::move(t)).second)
      throw InvalidInputError("duplicate tensor name in checkpoint: " + path.string());
  }

  const std::uint32_t cfg_len = get_u32(f);
  std::string cfg_str(cfg_len, '\0');
  f.read(cfg_str.data(), cfg_len);
  if (!f) throw InvalidInputError("truncated checkpoint config: " + path.string());
  std::istringstream ss(cfg_str);
  std::string line;
  while (std::getline(ss, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    ckpt.config[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return ckpt;
}

}  // namespace dhvc::nets
