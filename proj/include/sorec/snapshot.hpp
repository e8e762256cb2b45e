// Binary tensor snapshots.
//
// Single tensor ("SMT1"): magic, u32 rank, rank x u32 extents, row-major f32
// payload, all little-endian. Named checkpoint ("SMTC"): magic, u32 count,
// then per tensor u32 name length, name bytes, and one SMT1 record.
#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sorec/image.hpp"
#include "sorec/tensor.hpp"

namespace sorec {

class SnapshotError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using NamedTensor = std::pair<std::string, Tensor>;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b{char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

inline void read_exact(std::istream& is, char* dst, std::size_t n, const char* what) {
  is.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    throw SnapshotError(std::string("snapshot truncated while reading ") + what);
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
  std::array<unsigned char, 4> b{};
  read_exact(is, reinterpret_cast<char*>(b.data()), 4, what);
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

inline void expect_magic(std::istream& is, const char* magic) {
  char m[4];
  read_exact(is, m, 4, "magic");
  if (std::memcmp(m, magic, 4) != 0) throw SnapshotError(std::string("bad snapshot magic, expected ") + magic);
}

}  // namespace detail

inline void write_tensor(std::ostream& os, const Tensor& t) {
  os.write("SMT1", 4);
  detail::put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) detail::put_u32(os, static_cast<std::uint32_t>(d));
  for (double v : t.data()) detail::put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

inline Tensor read_tensor(std::istream& is) {
  detail::expect_magic(is, "SMT1");
  const std::uint32_t rank = detail::get_u32(is, "rank");
  if (rank > 8) throw SnapshotError("snapshot rank " + std::to_string(rank) + " is implausible");
  Shape shape(rank);
  for (auto& d : shape) {
    d = detail::get_u32(is, "extent");
    if (d == 0) throw SnapshotError("snapshot has a zero extent");
  }
  std::vector<double> data(shape_size(shape));
  for (double& v : data) v = std::bit_cast<float>(detail::get_u32(is, "payload"));
  return Tensor(std::move(shape), std::move(data));
}

inline void write_checkpoint(std::ostream& os, const std::vector<NamedTensor>& tensors) {
  os.write("SMTC", 4);
  detail::put_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(os, t);
  }
}

inline std::vector<NamedTensor> read_checkpoint(std::istream& is) {
  detail::expect_magic(is, "SMTC");
  const std::uint32_t n = detail::get_u32(is, "tensor count");
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t len = detail::get_u32(is, "name length");
    if (len > 4096) throw SnapshotError("snapshot tensor name length " + std::to_string(len) + " is implausible");
    std::string name(len, '\0');
    detail::read_exact(is, name.data(), len, "tensor name");
    out.emplace_back(std::move(name), read_tensor(is));
  }
  return out;
}

namespace detail {
inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  return os;
}
inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return is;
}
}  // namespace detail

inline void save_snapshot(const std::vector<NamedTensor>& tensors, const std::string& path) {
  auto os = detail::open_out(path);
  write_checkpoint(os, tensors);
  if (!os) throw std::runtime_error("write failed for " + path);
}

inline std::vector<NamedTensor> load_snapshot(const std::string& path) {
  auto is = detail::open_in(path);
  return read_checkpoint(is);
}

inline void save_tensor(const Tensor& t, const std::string& path) {
  auto os = detail::open_out(path);
  write_tensor(os, t);
}

inline Tensor load_tensor(const std::string& path) {
  auto is = detail::open_in(path);
  return read_tensor(is);
}

/// Precomputed flow field stored as a rank-3 (H, W, 3) SMT1 tensor.
inline FlowField load_flow_field(const std::string& path) {
  const Tensor t = load_tensor(path);
  if (t.rank() != 3 || t.dim(2) != 3)
    throw SnapshotError("flow field " + path + " must have shape (H,W,3), got " + shape_str(t.shape()));
  FlowField f(t.dim(1), t.dim(0), 3);
  std::copy(t.data().begin(), t.data().end(), f.data.begin());
  return f;
}

}  // namespace sorec
