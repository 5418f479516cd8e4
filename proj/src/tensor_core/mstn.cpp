// SPDX-License-Identifier: Apache-2.0

#include "misac/mstn.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace misac::mstn {

namespace {

constexpr char kMagic[4] = {'M', 'S', 'T', 'N'};
constexpr std::uint32_t kMaxRank = 16;

}  // namespace

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void append_f64(std::vector<std::uint8_t>& out, double v) { append_u64(out, std::bit_cast<std::uint64_t>(v)); }

void Reader::need(std::size_t n) const {
  if (buf_.size() - pos_ < n) throw FormatError("MSTN: truncated input");
}

std::uint32_t Reader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t Reader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return v;
}

double Reader::f64() { return std::bit_cast<double>(u64()); }
float Reader::f32() { return std::bit_cast<float>(u32()); }

std::string Reader::bytes(std::size_t n) {
  need(n);
  std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
  pos_ += n;
  return s;
}

void encode(std::vector<std::uint8_t>& out, const Tensor& t, DType dtype) {
  out.insert(out.end(), kMagic, kMagic + 4);
  append_u32(out, kVersion);
  append_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) append_u64(out, e);
  append_u32(out, static_cast<std::uint32_t>(dtype));
  for (double v : t.data()) {
    if (dtype == DType::f64) {
      append_f64(out, v);
    } else {
      append_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
}

Tensor decode(Reader& in) {
  if (in.bytes(4) != std::string(kMagic, 4)) throw FormatError("MSTN: bad magic");
  if (const auto v = in.u32(); v != kVersion) throw FormatError("MSTN: unsupported version " + std::to_string(v));
  const auto rank = in.u32();
  if (rank == 0 || rank > kMaxRank) throw FormatError("MSTN: bad rank");
  Shape shape(rank);
  for (auto& e : shape) {
    e = in.u64();
    if (e == 0) throw FormatError("MSTN: zero extent");
  }
  const auto tag = in.u32();
  if (tag != static_cast<std::uint32_t>(DType::f64) && tag != static_cast<std::uint32_t>(DType::f32)) {
    throw FormatError("MSTN: unknown dtype tag " + std::to_string(tag));
  }
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = tag == static_cast<std::uint32_t>(DType::f64) ? in.f64() : static_cast<double>(in.f32());
  return Tensor::from_data(std::move(shape), std::move(data));
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

void write_file(const std::filesystem::path& path, const Tensor& t, DType dtype) {
  std::vector<std::uint8_t> buf;
  encode(buf, t, dtype);
  write_bytes(path, buf);
}

Tensor read_file(const std::filesystem::path& path) {
  const auto buf = read_bytes(path);
  Reader r(buf);
  try {
    Tensor t = decode(r);
    if (!r.at_end()) throw FormatError("MSTN: trailing bytes");
    return t;
  } catch (const FormatError& e) {
    throw FormatError(std::string(e.what()) + " (" + path.string() + ")");
  }
}

}  // namespace misac::mstn
