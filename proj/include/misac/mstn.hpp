// SPDX-License-Identifier: Apache-2.0
//
// MSTN binary tensor format (little-endian):
//   "MSTN" | version u32 | rank u32 | extents u64[rank] | dtype u32 | payload
// dtype 1 = float64, 2 = float32.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "misac/tensor.hpp"

namespace misac::mstn {

inline constexpr std::uint32_t kVersion = 1;

enum class DType : std::uint32_t { f64 = 1, f32 = 2 };

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v);
void append_f64(std::vector<std::uint8_t>& out, double v);

/// Cursor over a byte buffer; all reads are bounds checked.
class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& buf, std::size_t pos = 0) : buf_(buf), pos_(pos) {}
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  float f32();
  std::string bytes(std::size_t n);
  std::size_t pos() const { return pos_; }
  bool at_end() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const;
  const std::vector<std::uint8_t>& buf_;
  std::size_t pos_;
};

void encode(std::vector<std::uint8_t>& out, const Tensor& t, DType dtype = DType::f64);
Tensor decode(Reader& in);

void write_file(const std::filesystem::path& path, const Tensor& t, DType dtype = DType::f64);
Tensor read_file(const std::filesystem::path& path);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace misac::mstn
