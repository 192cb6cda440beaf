#include "neurotopo/checkpoint.hpp"

#include "neurotopo/error.hpp"
#include "neurotopo/fileio.hpp"

#include <bit>
#include <cstring>
#include <sstream>

namespace neurotopo {

namespace {

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

float get_f32(const std::uint8_t* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

Shape parse_shape(const std::string& s) {
  Shape shape;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, 'x')) {
    if (part.empty()) throw IoError("checkpoint", "malformed shape " + s);
    shape.push_back(std::stoull(part));
  }
  return shape;
}

} // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor>& tensors) {
  std::string manifest;
  std::size_t offset = 0;
  for (const auto& t : tensors) {
    if (t.name.empty() || t.name.find_first_of(" \n") != std::string::npos) {
      throw DomainError("checkpoint", "tensor names must be non-empty without spaces");
    }
    manifest += t.name + " " + shape_string(t.tensor.shape()) + " " + std::to_string(offset) + "\n";
    offset += t.tensor.size();
  }
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  put_u64(out, manifest.size());
  out.insert(out.end(), manifest.begin(), manifest.end());
  out.reserve(out.size() + 4 * offset);
  for (const auto& t : tensors) {
    for (float f : t.tensor.values()) put_f32(out, f);
  }
  return out;
}

std::vector<NamedTensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw IoError("checkpoint", "missing NTW1 magic");
  }
  const std::uint64_t manifest_len = get_u64(bytes.data() + 4);
  if (manifest_len > bytes.size() - 12) throw IoError("checkpoint", "manifest length exceeds file size");
  const std::string manifest(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(manifest_len));
  const std::size_t data_start = 12 + manifest_len;

  std::vector<NamedTensor> out;
  std::stringstream lines(manifest);
  std::string line;
  std::size_t expected_offset = 0;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    std::stringstream fields(line);
    std::string name, shape_text;
    std::size_t offset = 0;
    if (!(fields >> name >> shape_text >> offset)) throw IoError("checkpoint", "malformed manifest line: " + line);
    if (offset != expected_offset) throw IoError("checkpoint", "non-contiguous tensor offsets");
    Shape shape = parse_shape(shape_text);
    const std::size_t count = shape_size(shape);
    expected_offset += count;
    out.push_back({name, Tensor<float>(std::move(shape))});
  }
  if (bytes.size() != data_start + 4 * expected_offset) {
    throw IoError("checkpoint", "file length " + std::to_string(bytes.size()) + " does not match manifest (" +
                                    std::to_string(data_start + 4 * expected_offset) + ")");
  }
  const std::uint8_t* p = bytes.data() + data_start;
  for (auto& t : out) {
    for (auto& v : t.tensor.values()) {
      v = get_f32(p);
      p += 4;
    }
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  write_file(path, encode_checkpoint(tensors));
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

const Tensor<float>& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
  for (const auto& t : tensors) {
    if (t.name == name) return t.tensor;
  }
  throw IoError("checkpoint", "checkpoint lacks tensor " + name);
}

} // namespace neurotopo
