// SPDX-License-Identifier: Apache-2.0
//
// Layout (little-endian): "MSCK", u32 version, u64 header length, header JSON,
// one MSTN record per parameter in name order, then per parameter the Adam
// first and second moments as u64 count + f64 values, and a trailing CRC-32 of
// everything before it.

#include <zlib.h>

#include <fstream>
#include <system_error>

#include "misac/mstn.hpp"
#include "misac/runner.hpp"

namespace misac {

namespace {

constexpr char kMagic[4] = {'M', 'S', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

std::uint32_t crc_of(const std::uint8_t* p, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks.
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void append_vec(std::vector<std::uint8_t>& out, const std::vector<double>& v) {
  mstn::append_u64(out, v.size());
  for (double x : v) mstn::append_f64(out, x);
}

std::vector<double> read_vec(mstn::Reader& in) {
  const auto n = in.u64();
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(n, 1u << 24)));
  for (std::uint64_t i = 0; i < n; ++i) v.push_back(in.f64());
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  const bool moments = !c.adam_m.empty();
  if (moments && (c.adam_m.size() != c.params.size() || c.adam_v.size() != c.params.size()))
    throw std::invalid_argument("checkpoint: optimizer moments must cover every parameter");
  nlohmann::json names = nlohmann::json::array();
  for (const auto& [name, t] : c.params) names.push_back(name);
  const nlohmann::json header = {{"fingerprint", c.fingerprint},
                                 {"model_fingerprint", c.model_fingerprint},
                                 {"kind", c.kind},
                                 {"step", c.step},
                                 {"rng_state", c.rng_state},
                                 {"adam_steps", c.adam_steps},
                                 {"moments", moments},
                                 {"params", names}};
  const std::string h = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  mstn::append_u32(out, kVersion);
  mstn::append_u64(out, h.size());
  out.insert(out.end(), h.begin(), h.end());
  for (const auto& [name, t] : c.params) mstn::encode(out, t);
  if (moments) {
    for (const auto& m : c.adam_m) append_vec(out, m);
    for (const auto& v : c.adam_v) append_vec(out, v);
  }
  mstn::append_u32(out, crc_of(out.data(), out.size()));
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 20 || !std::equal(kMagic, kMagic + 4, bytes.begin()))
    throw ChecksumError("checkpoint: not a checkpoint or truncated");
  const std::size_t body = bytes.size() - 4;
  mstn::Reader tail(bytes, body);
  if (tail.u32() != crc_of(bytes.data(), body)) throw ChecksumError("checkpoint: checksum mismatch (corrupt or truncated)");

  // The CRC matched, so any parse failure below is a format problem rather than damage.
  const std::vector<std::uint8_t> payload(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(body));
  mstn::Reader in(payload, 4);
  const auto version = in.u32();
  if (version != kVersion) throw mstn::FormatError("checkpoint: unsupported version " + std::to_string(version));
  const auto header = nlohmann::json::parse(in.bytes(static_cast<std::size_t>(in.u64())));

  Checkpoint c;
  c.fingerprint = header.at("fingerprint").get<std::string>();
  c.model_fingerprint = header.at("model_fingerprint").get<std::string>();
  c.kind = header.at("kind").get<std::string>();
  c.step = header.at("step").get<std::uint64_t>();
  c.rng_state = header.at("rng_state").get<std::string>();
  c.adam_steps = header.at("adam_steps").get<std::uint64_t>();
  for (const auto& name : header.at("params")) c.params.emplace(name.get<std::string>(), mstn::decode(in));
  if (header.at("moments").get<bool>()) {
    for (std::size_t i = 0; i < c.params.size(); ++i) c.adam_m.push_back(read_vec(in));
    for (std::size_t i = 0; i < c.params.size(); ++i) c.adam_v.push_back(read_vec(in));
  }
  if (!in.at_end()) throw mstn::FormatError("checkpoint: trailing bytes");
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(c);
  auto tmp = path;
  tmp += ".tmp";
  mstn::write_bytes(tmp, bytes);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw std::runtime_error("checkpoint: cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("checkpoint not found: " + path.string());
  try {
    return decode_checkpoint(mstn::read_bytes(path));
  } catch (const ChecksumError& e) {
    throw ChecksumError(path.string() + ": " + e.what());
  }
}

void check_fingerprint(const Checkpoint& c, const RunConfig& cfg, FingerprintScope scope, bool force) {
  if (force) return;
  if (c.model_fingerprint != model_fingerprint(cfg))
    throw ConfigError("checkpoint architecture does not match the configuration (use --force to override)");
  if (scope == FingerprintScope::full && c.fingerprint != config_fingerprint(cfg))
    throw ConfigError("checkpoint was written under a different configuration (use --force to override)");
}

Checkpoint make_checkpoint(const RunConfig& cfg, const ParamStore& ps, const std::string& kind) {
  Checkpoint c;
  c.fingerprint = config_fingerprint(cfg);
  c.model_fingerprint = model_fingerprint(cfg);
  c.kind = kind;
  for (const auto& [name, t] : ps.items())
    c.params.emplace(name, Tensor::from_data(t.shape(), std::vector<double>(t.data().begin(), t.data().end())));
  return c;
}

void restore_params(const Checkpoint& c, const ParamStore& ps) {
  for (const auto& [name, t] : ps.items()) {
    auto it = c.params.find(name);
    if (it == c.params.end()) continue;
    if (it->second.shape() != t.shape())
      throw ConfigError("checkpoint parameter " + name + " has shape " + shape_str(it->second.shape()) + ", model expects " +
                        shape_str(t.shape()));
    Tensor dst = t;
    std::copy(it->second.data().begin(), it->second.data().end(), dst.mutable_data().begin());
  }
}

}  // namespace misac
