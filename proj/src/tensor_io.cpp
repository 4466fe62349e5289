#include "t4v/tensor_io.hpp"

#include <openssl/evp.h>
#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <memory>
#include <sstream>

namespace t4v {

namespace {

constexpr const char* kModule = "tensor_io";

template <typename U>
void put_le(std::vector<unsigned char>& out, U v) {
  for (std::size_t k = 0; k < sizeof(U); ++k) out.push_back(static_cast<unsigned char>((v >> (8 * k)) & 0xFFu));
}

template <typename U>
U get_le(std::span<const unsigned char> bytes, std::size_t offset) {
  if (offset + sizeof(U) > bytes.size()) {
    fail(Errc::format, kModule, "truncated checkpoint (byte offset " + std::to_string(bytes.size()) + ")");
  }
  U v = 0;
  for (std::size_t k = 0; k < sizeof(U); ++k) v |= static_cast<U>(bytes[offset + k]) << (8 * k);
  return v;
}

void put_matrix(std::vector<unsigned char>& out, const Matrix& m) {
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(m(i, j)));
}

}  // namespace

std::vector<unsigned char> encode_tensors(std::span<const NamedTensor> tensors) {
  std::vector<unsigned char> out(kCheckpointMagic, kCheckpointMagic + 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put_matrix(out, t.value);
  }
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(crc32(0L, out.data(), static_cast<uInt>(out.size()))));
  return out;
}

std::vector<NamedTensor> decode_tensors(std::span<const unsigned char> bytes) {
  if (bytes.size() < 16) fail(Errc::format, kModule, "checkpoint shorter than minimal size (byte offset 0)");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) fail(Errc::format, kModule, "bad magic, expected \"T4VC\" (byte offset 0)");
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kCheckpointVersion) fail(Errc::format, kModule, "unsupported version " + std::to_string(version) + " (byte offset 4)");
  const std::size_t crc_at = bytes.size() - 4;
  const auto stored = get_le<std::uint32_t>(bytes, crc_at);
  const auto actual = static_cast<std::uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(crc_at)));
  if (stored != actual) {
    std::ostringstream os;
    os << "CRC mismatch: stored 0x" << std::hex << stored << ", computed 0x" << actual << std::dec
       << " (byte offset " << crc_at << ")";
    fail(Errc::format, kModule, os.str());
  }
  const auto body = bytes.first(crc_at);
  const auto count = get_le<std::uint32_t>(body, 8);
  std::size_t at = 12;
  std::vector<NamedTensor> out;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = get_le<std::uint32_t>(body, at);
    at += 4;
    if (at + len > body.size()) fail(Errc::format, kModule, "tensor name overruns file (byte offset " + std::to_string(at) + ")");
    NamedTensor t;
    t.name.assign(reinterpret_cast<const char*>(body.data() + at), len);
    at += len;
    const auto rows = get_le<std::uint64_t>(body, at);
    const auto cols = get_le<std::uint64_t>(body, at + 8);
    at += 16;
    if (rows * cols > (body.size() - at) / 8) fail(Errc::format, kModule, "tensor payload overruns file (byte offset " + std::to_string(at) + ")");
    t.value.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::uint64_t i = 0; i < rows; ++i)
      for (std::uint64_t j = 0; j < cols; ++j, at += 8)
        t.value(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            std::bit_cast<double>(get_le<std::uint64_t>(body, at));
    out.push_back(std::move(t));
  }
  if (at != body.size()) fail(Errc::format, kModule, "trailing bytes before CRC (byte offset " + std::to_string(at) + ")");
  return out;
}

void write_tensors(std::span<const NamedTensor> tensors, const std::filesystem::path& path) {
  const auto bytes = encode_tensors(tensors);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::io, kModule, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<NamedTensor> read_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io, kModule, "cannot open " + path.string());
  const std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_tensors(bytes);
}

std::string sha256_hex(std::span<const unsigned char> bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    fail(Errc::io, kModule, "SHA-256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return os.str();
}

std::string tensor_digest(std::span<const Matrix> tensors) {
  std::vector<unsigned char> bytes;
  for (const auto& m : tensors) put_matrix(bytes, m);
  return sha256_hex(bytes);
}

std::string tensor_digest(const Matrix& tensor) { return tensor_digest(std::span<const Matrix>(&tensor, 1)); }

}  // namespace t4v
