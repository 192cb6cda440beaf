#pragma once

#include "neurotopo/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace neurotopo {

inline constexpr char kCheckpointMagic[] = "NTW1";

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

// Layout: "NTW1", u64 LE manifest byte length, manifest text with one line
// "<name> <d0>x<d1>x... <offset>\n" per tensor (offset counted in floats),
// then all tensors as raw little-endian float32.
std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

const Tensor<float>& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name);

} // namespace neurotopo
