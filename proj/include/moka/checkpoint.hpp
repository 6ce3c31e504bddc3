#pragma once

#include "moka/common.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

namespace moka {

// Binary tensor container:
//   magic "MOKA1" | endian u8 (1 = little) | precision u8 (32 or 64)
//   | tensor count u64
//   | per tensor: name len u32, name bytes, rank u32, dims u64 each,
//     raw row-major values
//   | FNV-1a 64 checksum of all preceding bytes
// All integers little-endian. Load validates the checksum before returning
// anything, so a truncated or corrupted file never yields partial tensors.

inline constexpr char kCheckpointMagic[5] = {'M', 'O', 'K', 'A', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace detail {

template <typename T>
void append_raw(std::string& buf, const T& v) {
  const char* p = reinterpret_cast<const char*>(&v);
  buf.append(p, sizeof(T));
}

template <typename T>
T read_raw(const std::string& buf, std::size_t& at) {
  if (at + sizeof(T) > buf.size())
    throw CheckpointError("checkpoint truncated");
  T v;
  std::memcpy(&v, buf.data() + at, sizeof(T));
  at += sizeof(T);
  return v;
}

}  // namespace detail

template <typename Scalar>
using NamedTensors = std::vector<std::pair<std::string, MatX<Scalar>>>;

template <typename Scalar>
std::string encode_checkpoint(const NamedTensors<Scalar>& tensors) {
  std::string buf;
  buf.append(kCheckpointMagic, sizeof(kCheckpointMagic));
  buf.push_back(static_cast<char>(1));  // little-endian
  buf.push_back(static_cast<char>(sizeof(Scalar) * 8));
  detail::append_raw(buf, static_cast<std::uint64_t>(tensors.size()));
  for (const auto& [name, m] : tensors) {
    detail::append_raw(buf, static_cast<std::uint32_t>(name.size()));
    buf.append(name);
    detail::append_raw(buf, static_cast<std::uint32_t>(2));  // rank
    detail::append_raw(buf, static_cast<std::uint64_t>(m.rows()));
    detail::append_raw(buf, static_cast<std::uint64_t>(m.cols()));
    buf.append(reinterpret_cast<const char*>(m.data()),
               sizeof(Scalar) * static_cast<std::size_t>(m.size()));
  }
  detail::append_raw(buf, fnv1a64(buf.data(), buf.size()));
  return buf;
}

template <typename Scalar>
NamedTensors<Scalar> decode_checkpoint(const std::string& buf) {
  if (buf.size() < sizeof(kCheckpointMagic) + 2 + 8 + 8)
    throw CheckpointError("checkpoint truncated");
  if (std::memcmp(buf.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw CheckpointError("bad checkpoint magic");

  std::size_t at = buf.size() - 8;
  const std::uint64_t stored = detail::read_raw<std::uint64_t>(buf, at);
  const std::uint64_t actual = fnv1a64(buf.data(), buf.size() - 8);
  if (stored != actual)
    throw CheckpointError("checkpoint checksum mismatch (file corrupt)");

  at = sizeof(kCheckpointMagic);
  const auto endian_flag = detail::read_raw<std::uint8_t>(buf, at);
  if (endian_flag != 1) throw CheckpointError("unsupported endianness flag");
  const auto precision = detail::read_raw<std::uint8_t>(buf, at);
  if (precision != sizeof(Scalar) * 8)
    throw CheckpointError("checkpoint precision is " + std::to_string(precision) +
                          "-bit, expected " + std::to_string(sizeof(Scalar) * 8));

  const auto count = detail::read_raw<std::uint64_t>(buf, at);
  NamedTensors<Scalar> tensors;
  tensors.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = detail::read_raw<std::uint32_t>(buf, at);
    if (at + name_len > buf.size()) throw CheckpointError("checkpoint truncated");
    std::string name(buf.data() + at, name_len);
    at += name_len;
    const auto rank = detail::read_raw<std::uint32_t>(buf, at);
    if (rank != 2)
      throw CheckpointError("tensor '" + name + "' has rank " +
                            std::to_string(rank) + ", expected 2");
    const auto rows = detail::read_raw<std::uint64_t>(buf, at);
    const auto cols = detail::read_raw<std::uint64_t>(buf, at);
    const std::size_t bytes = sizeof(Scalar) * rows * cols;
    if (at + bytes > buf.size()) throw CheckpointError("checkpoint truncated");
    MatX<Scalar> m(static_cast<Index>(rows), static_cast<Index>(cols));
    std::memcpy(m.data(), buf.data() + at, bytes);
    at += bytes;
    tensors.emplace_back(std::move(name), std::move(m));
  }
  if (at != buf.size() - 8)
    throw CheckpointError("checkpoint has trailing bytes");
  return tensors;
}

template <typename Scalar>
void save_checkpoint(const std::string& path, const NamedTensors<Scalar>& tensors) {
  const std::string buf = encode_checkpoint(tensors);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open '" + path + "' for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw CheckpointError("write failed for '" + path + "'");
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  return buf;
}

template <typename Scalar>
NamedTensors<Scalar> load_checkpoint(const std::string& path) {
  return decode_checkpoint<Scalar>(read_file_bytes(path));
}

// Precision tag without decoding the payload (for CLI dispatch checks).
inline int checkpoint_precision_bits(const std::string& path) {
  const std::string buf = read_file_bytes(path);
  if (buf.size() < sizeof(kCheckpointMagic) + 2 ||
      std::memcmp(buf.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw CheckpointError("bad checkpoint magic");
  return static_cast<unsigned char>(buf[sizeof(kCheckpointMagic) + 1]);
}

}  // namespace moka
