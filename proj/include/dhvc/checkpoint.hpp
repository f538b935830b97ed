// dhvc/checkpoint.hpp -- named-tensor store file format.
//
// Wire format: magic "DHVC", version u32, tensor count u32, then per tensor
// name (u16 length + UTF-8), rank u32, dims u32[], payload little-endian f32;
// finally a UTF-8 key=value config block (u32 byte length + bytes).
#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "dhvc/tensor.hpp"

namespace dhvc::nets {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::map<std::string, Tensor> tensors;
  std::map<std::string, std::string> config;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dhvc::nets
