#pragma once

// Binary checkpoint layout (all integers little-endian):
//
//   "FATECKPT"            8-byte magic
//   u32 version
//   u64 n, then n bytes   JSON metadata (configs, registry, provenance)
//   u32 tensor count
//   per tensor: u32 name length, name bytes, u32 rows, u32 cols,
//               rows*cols IEEE-754 binary32 values, row-major

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "fate/errors.hpp"
#include "fate/nn/tape.hpp"

namespace fate {

inline constexpr char kCheckpointMagic[8] = {'F', 'A', 'T', 'E', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  std::uint32_t rows = 0, cols = 0;
  std::vector<float> data;
};

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

class ByteReader {
 public:
  explicit ByteReader(const std::string& bytes) : b_(bytes) {}

  void need(std::size_t n) const {
    if (n > b_.size() - pos_) throw DataError("CheckpointInvalid", "checkpoint is truncated");
  }
  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  const std::string& b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_u32(out, kCheckpointVersion);
  const std::string meta = c.meta.dump();
  detail::put_u64(out, meta.size());
  out += meta;
  detail::put_u32(out, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    detail::put_u32(out, t.rows);
    detail::put_u32(out, t.cols);
    for (float v : t.data) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  detail::ByteReader r(bytes);
  if (r.bytes(sizeof kCheckpointMagic) != std::string(kCheckpointMagic, sizeof kCheckpointMagic)) {
    throw DataError("CheckpointInvalid", "bad checkpoint magic");
  }
  const auto version = r.uint(4);
  if (version != kCheckpointVersion) {
    throw DataError("CheckpointInvalid", "unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  const auto meta_len = r.uint(8);
  r.need(meta_len);
  try {
    c.meta = nlohmann::json::parse(r.bytes(meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("CheckpointInvalid", std::string("metadata: ") + e.what());
  }
  const auto count = r.uint(4);
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.bytes(r.uint(4));
    t.rows = static_cast<std::uint32_t>(r.uint(4));
    t.cols = static_cast<std::uint32_t>(r.uint(4));
    const std::uint64_t n = static_cast<std::uint64_t>(t.rows) * t.cols;
    r.need(n * 4);
    t.data.resize(n);
    for (auto& v : t.data) v = std::bit_cast<float>(static_cast<std::uint32_t>(r.uint(4)));
    c.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw DataError("CheckpointInvalid", "trailing bytes after tensors");
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("IoError", "cannot write '" + path + "'");
  const std::string bytes = serialize_checkpoint(c);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("IoError", "failed writing '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("IoError", "cannot read '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

/// Appends every parameter reached by `visit` as a float32 tensor.
template <class S, class Visit>
void store_parameters(Checkpoint& c, Visit&& visit) {
  visit([&](const std::string& name, nn::Parameter<S>& p) {
    NamedTensor t;
    t.name = name;
    t.rows = static_cast<std::uint32_t>(p.value.rows());
    t.cols = static_cast<std::uint32_t>(p.value.cols());
    t.data.resize(static_cast<std::size_t>(p.value.size()));
    for (nn::Index i = 0; i < p.value.size(); ++i) {
      t.data[static_cast<std::size_t>(i)] = static_cast<float>(p.value.data()[i]);
    }
    c.tensors.push_back(std::move(t));
  });
}

/// Copies tensors into the parameters reached by `visit`. Every visited
/// parameter must be present with a matching shape.
template <class S, class Visit>
void restore_parameters(const Checkpoint& c, Visit&& visit) {
  visit([&](const std::string& name, nn::Parameter<S>& p) {
    const NamedTensor* t = c.find(name);
    if (!t) throw DataError("CheckpointInvalid", "missing tensor '" + name + "'");
    if (t->rows != p.value.rows() || t->cols != p.value.cols()) {
      throw DataError("CheckpointInvalid", "tensor '" + name + "' has shape " +
                                               std::to_string(t->rows) + "x" +
                                               std::to_string(t->cols) + ", model expects " +
                                               std::to_string(p.value.rows()) + "x" +
                                               std::to_string(p.value.cols()));
    }
    for (nn::Index i = 0; i < p.value.size(); ++i) {
      p.value.data()[i] = static_cast<S>(t->data[static_cast<std::size_t>(i)]);
    }
    p.zero_grad();
  });
}

/// FNV-1a over names, shapes and raw values of the visited parameters.
template <class S, class Visit>
std::uint64_t parameter_hash(Visit&& visit) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  visit([&](const std::string& name, nn::Parameter<S>& p) {
    mix(name.data(), name.size());
    const std::int64_t shape[2] = {p.value.rows(), p.value.cols()};
    mix(shape, sizeof shape);
    mix(p.value.data(), static_cast<std::size_t>(p.value.size()) * sizeof(S));
  });
  return h;
}

}  // namespace fate
