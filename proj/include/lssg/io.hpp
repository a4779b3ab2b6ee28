#pragma once

// Binary containers.
//
// LSSV (one volume):
//   "LSSV" | u8 version = 1 | u32 C | u32 D | u32 H | u32 W | u8 precision (4|8)
//   | C*D*H*W IEEE-754 values in Volume storage order
//
// LSSP (named parameter sections):
//   "LSSP" | u8 version = 1 | u8 precision (4|8) | u32 section count
//   | per section: u32 name length, name bytes, u32 rank, rank x u32 dims,
//                  u64 payload offset (from start of file), u64 payload bytes
//   | payloads, in section order
//
// All integers and floats are little-endian regardless of host order.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "lssg/tensor.hpp"

namespace lssg {

namespace detail {

inline void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

template <std::floating_point T>
void put_real(std::string& out, T v, std::uint8_t precision) {
  if (precision == 4) {
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  } else {
    put_u64(out, std::bit_cast<std::uint64_t>(static_cast<double>(v)));
  }
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= std::uint32_t(static_cast<std::uint8_t>(bytes_[pos_++])) << (8 * i);
    }
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= std::uint64_t(static_cast<std::uint8_t>(bytes_[pos_++])) << (8 * i);
    }
    return v;
  }
  double real(std::uint8_t precision) {
    if (precision == 4) return std::bit_cast<float>(u32());
    return std::bit_cast<double>(u64());
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void seek(std::size_t p) {
    if (p > bytes_.size()) throw FormatError("offset past end of container");
    pos_ = p;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("truncated container");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

inline std::uint8_t check_precision(std::uint8_t p) {
  if (p != 4 && p != 8) throw FormatError("precision byte must be 4 or 8");
  return p;
}

}  // namespace detail

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <std::floating_point T>
std::string encode_lssv(const Volume<T>& v, std::uint8_t precision = sizeof(T)) {
  detail::check_precision(precision);
  std::string out = "LSSV";
  detail::put_u8(out, 1);
  const Shape4& s = v.shape();
  for (std::size_t dim : {s.c, s.d, s.h, s.w}) detail::put_u32(out, static_cast<std::uint32_t>(dim));
  detail::put_u8(out, precision);
  out.reserve(out.size() + v.size() * precision);
  for (T x : v.values()) detail::put_real(out, x, precision);
  return out;
}

template <std::floating_point T>
Volume<T> decode_lssv(const std::string& bytes) {
  detail::Reader r(bytes);
  if (r.str(4) != "LSSV") throw FormatError("bad LSSV magic");
  if (r.u8() != 1) throw FormatError("unsupported LSSV version");
  Shape4 s;
  s.c = r.u32();
  s.d = r.u32();
  s.h = r.u32();
  s.w = r.u32();
  const std::uint8_t precision = detail::check_precision(r.u8());
  if (r.remaining() != s.size() * precision) throw FormatError("LSSV payload length mismatch");
  std::vector<T> values(s.size());
  for (auto& x : values) x = static_cast<T>(r.real(precision));
  return Volume<T>(s, std::move(values));
}

template <std::floating_point T>
void write_lssv(const std::filesystem::path& path, const Volume<T>& v,
                std::uint8_t precision = sizeof(T)) {
  write_file(path, encode_lssv(v, precision));
}

template <std::floating_point T>
Volume<T> read_lssv(const std::filesystem::path& path) {
  return decode_lssv<T>(read_file(path));
}

template <std::floating_point T>
struct NamedTensor {
  std::string name;
  std::vector<std::size_t> dims;
  std::vector<T> values;

  bool operator==(const NamedTensor&) const = default;
};

template <std::floating_point T>
std::string encode_lssp(const std::vector<NamedTensor<T>>& sections,
                        std::uint8_t precision = sizeof(T)) {
  detail::check_precision(precision);
  std::size_t header = 4 + 1 + 1 + 4;
  for (const auto& s : sections) header += 4 + s.name.size() + 4 + 4 * s.dims.size() + 8 + 8;

  std::string out = "LSSP";
  detail::put_u8(out, 1);
  detail::put_u8(out, precision);
  detail::put_u32(out, static_cast<std::uint32_t>(sections.size()));
  std::uint64_t offset = header;
  for (const auto& s : sections) {
    std::size_t n = 1;
    for (auto d : s.dims) n *= d;
    if (n != s.values.size()) throw ShapeError("LSSP section '" + s.name + "': dims/values mismatch");
    detail::put_u32(out, static_cast<std::uint32_t>(s.name.size()));
    out += s.name;
    detail::put_u32(out, static_cast<std::uint32_t>(s.dims.size()));
    for (auto d : s.dims) detail::put_u32(out, static_cast<std::uint32_t>(d));
    detail::put_u64(out, offset);
    detail::put_u64(out, s.values.size() * precision);
    offset += s.values.size() * precision;
  }
  for (const auto& s : sections) {
    for (T x : s.values) detail::put_real(out, x, precision);
  }
  return out;
}

template <std::floating_point T>
std::vector<NamedTensor<T>> decode_lssp(const std::string& bytes) {
  detail::Reader r(bytes);
  if (r.str(4) != "LSSP") throw FormatError("bad LSSP magic");
  if (r.u8() != 1) throw FormatError("unsupported LSSP version");
  const std::uint8_t precision = detail::check_precision(r.u8());
  const std::uint32_t count = r.u32();
  struct Entry {
    NamedTensor<T> t;
    std::uint64_t offset;
    std::uint64_t length;
  };
  std::vector<Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.t.name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      e.t.dims.push_back(r.u32());
      n *= e.t.dims.back();
    }
    e.offset = r.u64();
    e.length = r.u64();
    if (e.length != n * precision) throw FormatError("LSSP section '" + e.t.name + "' length");
    entries.push_back(std::move(e));
  }
  std::vector<NamedTensor<T>> out;
  for (auto& e : entries) {
    r.seek(e.offset);
    const std::size_t n = e.length / precision;
    e.t.values.resize(n);
    for (auto& x : e.t.values) x = static_cast<T>(r.real(precision));
    if (!all_finite<T>(e.t.values)) throw NumericError("LSSP section '" + e.t.name + "'");
    out.push_back(std::move(e.t));
  }
  return out;
}

}  // namespace lssg
