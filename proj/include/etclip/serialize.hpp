#pragma once

// Versioned binary checkpoint container. Layout: magic "ETCP", u32 version,
// length-prefixed UTF-8 config blob, u32 section count, then per section
// [u32 name length, name bytes, u8 dtype tag, u32 rank, u32 dims...,
// little-endian payload]. Dtype tags: 1 = f32, 2 = u64 (rng state, counters).

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "etclip/common.hpp"
#include "etclip/tensor.hpp"

namespace etclip {

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::uint8_t kDtypeF32 = 1;
constexpr std::uint8_t kDtypeU64 = 2;

struct Section {
  std::string name;
  std::uint8_t dtype = kDtypeF32;
  std::vector<std::uint32_t> dims;
  std::vector<float> f32;
  std::vector<std::uint64_t> u64;

  std::size_t count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string config_json;
  std::vector<Section> sections;

  const Section* find(const std::string& name) const {
    for (auto& s : sections)
      if (s.name == name) return &s;
    return nullptr;
  }

  const Section& require(const std::string& name) const {
    auto* s = find(name);
    ETCLIP_CHECK(s != nullptr, "checkpoint missing section: " + name);
    return *s;
  }

  void add_tensor(const std::string& name, const Tensor& t) {
    Section s;
    s.name = name;
    s.dtype = kDtypeF32;
    for (int d : t->shape) s.dims.push_back(static_cast<std::uint32_t>(d));
    s.f32 = t->value;
    sections.push_back(std::move(s));
  }

  void add_f32(const std::string& name, std::vector<float> data) {
    Section s;
    s.name = name;
    s.dtype = kDtypeF32;
    s.dims = {static_cast<std::uint32_t>(data.size())};
    s.f32 = std::move(data);
    sections.push_back(std::move(s));
  }

  void add_u64(const std::string& name, std::vector<std::uint64_t> data) {
    Section s;
    s.name = name;
    s.dtype = kDtypeU64;
    s.dims = {static_cast<std::uint32_t>(data.size())};
    s.u64 = std::move(data);
    sections.push_back(std::move(s));
  }

  // copies payload into an existing tensor, validating the shape
  void load_into(const std::string& name, const Tensor& t) const {
    const Section& s = require(name);
    ETCLIP_CHECK(s.dtype == kDtypeF32, "section " + name + " is not f32");
    ETCLIP_CHECK(s.dims.size() == t->shape.size() && s.count() == t->numel(),
                 "section " + name + " shape mismatch");
    for (std::size_t i = 0; i < s.dims.size(); ++i)
      ETCLIP_CHECK(static_cast<int>(s.dims[i]) == t->shape[i],
                   "section " + name + " dim mismatch");
    t->value = s.f32;
  }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct ByteReader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    ETCLIP_CHECK(pos + n <= buf.size(), "truncated checkpoint file");
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf[pos++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(
               static_cast<std::uint8_t>(buf[pos++]))
           << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(
               static_cast<std::uint8_t>(buf[pos++]))
           << (8 * i);
    return v;
  }
  float f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out;
  out += "ETCP";
  detail::put_u32(out, ckpt.version);
  detail::put_u32(out, static_cast<std::uint32_t>(ckpt.config_json.size()));
  out += ckpt.config_json;
  detail::put_u32(out, static_cast<std::uint32_t>(ckpt.sections.size()));
  for (auto& s : ckpt.sections) {
    detail::put_u32(out, static_cast<std::uint32_t>(s.name.size()));
    out += s.name;
    out.push_back(static_cast<char>(s.dtype));
    detail::put_u32(out, static_cast<std::uint32_t>(s.dims.size()));
    for (auto d : s.dims) detail::put_u32(out, d);
    if (s.dtype == kDtypeF32) {
      ETCLIP_CHECK(s.f32.size() == s.count(), "section payload size mismatch");
      for (float v : s.f32) detail::put_f32(out, v);
    } else if (s.dtype == kDtypeU64) {
      ETCLIP_CHECK(s.u64.size() == s.count(), "section payload size mismatch");
      for (auto v : s.u64) detail::put_u64(out, v);
    } else {
      detail::fail("unknown dtype tag in section " + s.name);
    }
  }
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& buf) {
  detail::ByteReader r{buf};
  ETCLIP_CHECK(r.bytes(4) == "ETCP", "bad checkpoint magic");
  Checkpoint ckpt;
  ckpt.version = r.u32();
  ETCLIP_CHECK(ckpt.version == kCheckpointVersion,
               "unsupported checkpoint version " +
                   std::to_string(ckpt.version));
  ckpt.config_json = r.bytes(r.u32());
  std::uint32_t n_sections = r.u32();
  for (std::uint32_t si = 0; si < n_sections; ++si) {
    Section s;
    s.name = r.bytes(r.u32());
    s.dtype = r.u8();
    ETCLIP_CHECK(s.dtype == kDtypeF32 || s.dtype == kDtypeU64,
                 "corrupt section dtype in " + s.name);
    std::uint32_t rank = r.u32();
    ETCLIP_CHECK(rank <= 8, "corrupt section rank in " + s.name);
    for (std::uint32_t i = 0; i < rank; ++i) s.dims.push_back(r.u32());
    std::size_t n = s.count();
    ETCLIP_CHECK(n <= (1ull << 31), "corrupt section size in " + s.name);
    if (s.dtype == kDtypeF32) {
      s.f32.reserve(n);
      for (std::size_t i = 0; i < n; ++i) s.f32.push_back(r.f32());
    } else {
      s.u64.reserve(n);
      for (std::size_t i = 0; i < n; ++i) s.u64.push_back(r.u64());
    }
    ckpt.sections.push_back(std::move(s));
  }
  ETCLIP_CHECK(r.pos == buf.size(), "trailing bytes after checkpoint");
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  ETCLIP_CHECK(f.good(), "cannot open for writing: " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  ETCLIP_CHECK(f.good(), "write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  ETCLIP_CHECK(f.good(), "cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  return deserialize_checkpoint(buf);
}

}  // namespace etclip
