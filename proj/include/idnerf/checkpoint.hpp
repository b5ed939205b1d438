#pragma once

// Versioned binary tensor container.
// Layout: magic "IDNF", version u32, count u32, then per entry:
//   name (u32 length + UTF-8 bytes), dtype tag u8, rank u8,
//   extents (u64 each), little-endian payload.
// Tags: 0 = f64, 1 = f32, 2 = u64 blob (optimizer/RNG state).

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "idnerf/common.hpp"
#include "idnerf/tensor.hpp"

namespace idnerf {

constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  uint8_t tag = 0;  // 0 f64, 1 f32, 2 u64
  Shape shape;
  std::vector<double> f64;   // tag 0/1
  std::vector<uint64_t> u64;  // tag 2
};

class Checkpoint {
 public:
  void put_tensor(const std::string& name, const Tensor& t) {
    CheckpointEntry e;
    e.tag = t.dtype() == DType::f64 ? 0 : 1;
    e.shape = t.shape();
    e.f64 = t.values();
    entries_[name] = std::move(e);
  }

  void put_u64(const std::string& name, const std::vector<uint64_t>& words) {
    CheckpointEntry e;
    e.tag = 2;
    e.shape = {static_cast<int64_t>(words.size())};
    e.u64 = words;
    entries_[name] = std::move(e);
  }

  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  Tensor tensor(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw IoError("checkpoint: missing tensor " + name);
    check(it->second.tag != 2, "checkpoint: " + name + " is a u64 blob");
    return Tensor::from(it->second.shape, it->second.f64,
                        it->second.tag == 0 ? DType::f64 : DType::f32);
  }

  const std::vector<uint64_t>& u64(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw IoError("checkpoint: missing blob " + name);
    check(it->second.tag == 2, "checkpoint: " + name + " is not a u64 blob");
    return it->second.u64;
  }

  const std::map<std::string, CheckpointEntry>& entries() const {
    return entries_;
  }

  // FNV-1a over entry names and exact payload bits; the manifest's
  // content hash of the weights.
  uint64_t content_hash() const {
    uint64_t h = 1469598103934665603ull;
    auto mix = [&h](uint64_t bits, int bytes) {
      for (int i = 0; i < bytes; ++i)
        h = (h ^ ((bits >> (8 * i)) & 0xff)) * 1099511628211ull;
    };
    for (const auto& [name, e] : entries_) {
      for (char c : name) mix(static_cast<uint8_t>(c), 1);
      mix(e.tag, 1);
      for (int64_t ext : e.shape) mix(static_cast<uint64_t>(ext), 8);
      if (e.tag == 2) {
        for (uint64_t w : e.u64) mix(w, 8);
      } else {
        for (double v : e.f64) {
          uint64_t bits;
          std::memcpy(&bits, &v, 8);
          mix(bits, 8);
        }
      }
    }
    return h;
  }

  void save(const std::string& path) const {
    std::ofstream f(path + ".tmp", std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot open " + path + ".tmp");
    f.write("IDNF", 4);
    write_u32(f, kCheckpointVersion);
    write_u32(f, static_cast<uint32_t>(entries_.size()));
    for (const auto& [name, e] : entries_) {
      write_u32(f, static_cast<uint32_t>(name.size()));
      f.write(name.data(), static_cast<std::streamsize>(name.size()));
      f.put(static_cast<char>(e.tag));
      f.put(static_cast<char>(e.shape.size()));
      for (int64_t ext : e.shape) write_u64(f, static_cast<uint64_t>(ext));
      if (e.tag == 2) {
        for (uint64_t w : e.u64) write_u64(f, w);
      } else if (e.tag == 1) {
        for (double v : e.f64) {
          float fv = static_cast<float>(v);
          uint32_t bits;
          std::memcpy(&bits, &fv, 4);
          write_u32(f, bits);
        }
      } else {
        for (double v : e.f64) {
          uint64_t bits;
          std::memcpy(&bits, &v, 8);
          write_u64(f, bits);
        }
      }
    }
    f.close();
    if (!f) throw IoError("checkpoint: write failed for " + path);
    if (std::rename((path + ".tmp").c_str(), path.c_str()) != 0)
      throw IoError("checkpoint: rename failed for " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "IDNF", 4) != 0)
      throw IoError("checkpoint: bad magic bytes in " + path);
    uint32_t version = read_u32(f);
    if (version != kCheckpointVersion)
      throw IoError("checkpoint: format version " + std::to_string(version) +
                    " unsupported, this build reads version " +
                    std::to_string(kCheckpointVersion));
    uint32_t count = read_u32(f);
    Checkpoint ck;
    for (uint32_t i = 0; i < count; ++i) {
      uint32_t nlen = read_u32(f);
      std::string name(nlen, '\0');
      f.read(name.data(), nlen);
      CheckpointEntry e;
      e.tag = static_cast<uint8_t>(f.get());
      uint8_t rank = static_cast<uint8_t>(f.get());
      int64_t n = 1;
      for (uint8_t d = 0; d < rank; ++d) {
        int64_t ext = static_cast<int64_t>(read_u64(f));
        e.shape.push_back(ext);
        n *= ext;
      }
      if (e.tag == 2) {
        e.u64.resize(static_cast<size_t>(n));
        for (auto& w : e.u64) w = read_u64(f);
      } else if (e.tag == 1) {
        e.f64.resize(static_cast<size_t>(n));
        for (auto& v : e.f64) {
          uint32_t bits = read_u32(f);
          float fv;
          std::memcpy(&fv, &bits, 4);
          v = static_cast<double>(fv);
        }
      } else {
        e.f64.resize(static_cast<size_t>(n));
        for (auto& v : e.f64) {
          uint64_t bits = read_u64(f);
          std::memcpy(&v, &bits, 8);
        }
      }
      if (!f) throw IoError("checkpoint: truncated file " + path);
      ck.entries_[name] = std::move(e);
    }
    return ck;
  }

 private:
  static void write_u32(std::ostream& s, uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    s.write(b, 4);
  }
  static void write_u64(std::ostream& s, uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    s.write(b, 8);
  }
  static uint32_t read_u32(std::istream& s) {
    unsigned char b[4];
    s.read(reinterpret_cast<char*>(b), 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
  }
  static uint64_t read_u64(std::istream& s) {
    unsigned char b[8];
    s.read(reinterpret_cast<char*>(b), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
  }

  std::map<std::string, CheckpointEntry> entries_;
};

}  // namespace idnerf
