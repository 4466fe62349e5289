#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "t4v/numkit.hpp"

namespace t4v {

struct NamedTensor {
  std::string name;
  Matrix value;
};

// T4VC checkpoint layout, integers little-endian:
//   0  magic "T4VC"
//   4  version u32 (1)
//   8  tensor count u32
//   then per tensor:
//      name length u32, name bytes (UTF-8, no terminator),
//      rows u64, cols u64, payload f64[rows*cols] row-major
//   end-4  CRC-32 (zlib polynomial) over every preceding byte
inline constexpr char kCheckpointMagic[4] = {'T', '4', 'V', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<unsigned char> encode_tensors(std::span<const NamedTensor> tensors);
std::vector<NamedTensor> decode_tensors(std::span<const unsigned char> bytes);
void write_tensors(std::span<const NamedTensor> tensors, const std::filesystem::path& path);
std::vector<NamedTensor> read_tensors(const std::filesystem::path& path);

/// Hex SHA-256 over shape and exact f64 bytes of each matrix, in order.
std::string tensor_digest(std::span<const Matrix> tensors);
std::string tensor_digest(const Matrix& tensor);
std::string sha256_hex(std::span<const unsigned char> bytes);

}  // namespace t4v
