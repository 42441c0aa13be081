#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mogo/tensor.hpp"

namespace mogo {

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

namespace io {

inline void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("unexpected end of stream reading u32");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& os, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(os, bits);
}

inline float read_f32(std::istream& is) {
  const uint32_t bits = read_u32(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline void write_f32_array(std::ostream& os, const float* data, size_t count) {
  // little-endian platform assumed for the bulk path; kept explicit per value
  // would be too slow for checkpoints.
  static_assert(sizeof(float) == 4);
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * 4));
}

inline void read_f32_array(std::istream& is, float* data, size_t count) {
  is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * 4));
  if (!is) throw IoError("unexpected end of stream reading f32 array");
}

}  // namespace io

// One named tensor record: u32 name length + UTF-8 name, u32 rank, u32
// extents, then raw little-endian f32 payload.
inline void write_tensor_record(std::ostream& os, const std::string& name,
                                const std::vector<int>& shape, const std::vector<float>& data) {
  io::write_u32(os, static_cast<uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  io::write_u32(os, static_cast<uint32_t>(shape.size()));
  for (int e : shape) io::write_u32(os, static_cast<uint32_t>(e));
  io::write_f32_array(os, data.data(), data.size());
}

struct TensorRecord {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

inline TensorRecord read_tensor_record(std::istream& is) {
  TensorRecord rec;
  const uint32_t name_len = io::read_u32(is);
  rec.name.resize(name_len);
  is.read(rec.name.data(), name_len);
  if (!is) throw IoError("unexpected end of stream reading tensor name");
  const uint32_t rank = io::read_u32(is);
  int64_t numel = 1;
  rec.shape.resize(rank);
  for (uint32_t i = 0; i < rank; ++i) {
    rec.shape[i] = static_cast<int>(io::read_u32(is));
    numel *= rec.shape[i];
  }
  rec.data.resize(static_cast<size_t>(numel));
  io::read_f32_array(is, rec.data.data(), rec.data.size());
  return rec;
}

// Checkpoint container: 4-byte magic, u32 header length + header text (flat
// key = value lines), u32 record count, tensor records.
class CheckpointWriter {
 public:
  CheckpointWriter(const std::string& path, const std::string& magic, const std::string& header)
      : os_(path, std::ios::binary) {
    if (!os_) throw IoError("cannot open checkpoint for writing: " + path);
    if (magic.size() != 4) throw IoError("checkpoint magic must be 4 bytes");
    os_.write(magic.data(), 4);
    io::write_u32(os_, static_cast<uint32_t>(header.size()));
    os_.write(header.data(), static_cast<std::streamsize>(header.size()));
    count_pos_ = os_.tellp();
    io::write_u32(os_, 0);
  }

  void add(const std::string& name, const Tensor& t) {
    write_tensor_record(os_, name, t.shape(), t.values());
    ++count_;
  }

  void add_raw(const std::string& name, const std::vector<int>& shape,
               const std::vector<float>& data) {
    write_tensor_record(os_, name, shape, data);
    ++count_;
  }

  void finish() {
    os_.seekp(count_pos_);
    io::write_u32(os_, static_cast<uint32_t>(count_));
    os_.flush();
    if (!os_) throw IoError("checkpoint write failed");
    os_.close();
  }

 private:
  std::ofstream os_;
  std::streampos count_pos_;
  uint32_t count_ = 0;
};

struct Checkpoint {
  std::string magic;
  std::string header;
  std::map<std::string, TensorRecord> tensors;

  const TensorRecord& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw IoError("checkpoint is missing tensor '" + name + "'");
    return it->second;
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    Checkpoint ck;
    char magic[4];
    is.read(magic, 4);
    if (!is) throw IoError("truncated checkpoint: " + path);
    ck.magic.assign(magic, 4);
    const uint32_t header_len = io::read_u32(is);
    ck.header.resize(header_len);
    is.read(ck.header.data(), header_len);
    if (!is) throw IoError("truncated checkpoint header: " + path);
    const uint32_t count = io::read_u32(is);
    for (uint32_t i = 0; i < count; ++i) {
      TensorRecord rec = read_tensor_record(is);
      ck.tensors.emplace(rec.name, std::move(rec));
    }
    return ck;
  }
};

inline uint64_t hash_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open file for hashing: " + path);
  uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 14];
  while (is) {
    is.read(buf, sizeof(buf));
    const std::streamsize got = is.gcount();
    if (got > 0) h = Rng::fnv1a(buf, static_cast<size_t>(got), h);
  }
  return h;
}

}  // namespace mogo
