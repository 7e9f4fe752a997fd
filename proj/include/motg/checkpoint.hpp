#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "motg/error.hpp"
#include "motg/model.hpp"

namespace motg {

// Container layout (all integers and doubles little-endian):
//   8 bytes  magic "MOTGCKPT"
//   u32      format version
//   config   vocab, d, hidden, layers, heads, context (u64 each), seed (u64),
//            init_std (f64), trace point (u32)
//   u64      training step
//   string   rng state (u64 length + bytes)
//   string   free-form metadata JSON
//   tensors  params, then Adam m, Adam v (u64 adam step, u64 skipped), then
//            u8 has_reference + reference params; each tensor is
//            u64 rows, u64 cols, rows*cols f64
//   u64      FNV-1a hash of every preceding byte
inline constexpr std::array<char, 8> kCheckpointMagic{'M', 'O', 'T', 'G', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  Parameters params;
  AdamState adam;
  std::optional<Parameters> reference;
  std::string rng_state;
  std::uint64_t step = 0;
  std::string metadata = "{}";
};

namespace detail {

class ByteWriter {
 public:
  template <class T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    bytes.insert(bytes.end(), b, b + sizeof(T));
  }
  void put_string(const std::string& s) {
    put<std::uint64_t>(s.size());
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  void put_matrix(const Matrix& m) {
    put<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) put<double>(m.data()[i]);
  }
  void put_params(const Parameters& p) {
    p.visit([&](const std::string&, const Matrix& m) { put_matrix(m); });
  }
  std::vector<unsigned char> bytes;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<unsigned char>& b, std::size_t end) : bytes_(b), end_(end) {}
  template <class T>
  T get() {
    need(sizeof(T));
    unsigned char b[sizeof(T)];
    std::memcpy(b, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  void get_matrix(Matrix& m) {
    const auto r = get<std::uint64_t>(), c = get<std::uint64_t>();
    if (r != static_cast<std::uint64_t>(m.rows()) || c != static_cast<std::uint64_t>(m.cols()))
      throw CheckpointError("checkpoint tensor shape does not match the stored config");
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = get<double>();
  }
  void get_params(Parameters& p) {
    p.visit([&](const std::string&, Matrix& m) { get_matrix(m); });
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::uint64_t n) const {
    if (pos_ + n > end_) throw CheckpointError("checkpoint is truncated or corrupt");
  }
  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
  std::size_t end_;
};

inline std::uint64_t fnv1a_bytes(const unsigned char* p, std::size_t n) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace detail

inline std::vector<unsigned char> serialize_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.bytes.insert(w.bytes.end(), kCheckpointMagic.begin(), kCheckpointMagic.end());
  w.put<std::uint32_t>(kCheckpointVersion);
  const ModelConfig& c = ck.config;
  w.put<std::uint64_t>(c.vocab_size);
  w.put<std::uint64_t>(c.embed_dim);
  w.put<std::uint64_t>(c.hidden_dim);
  w.put<std::uint64_t>(c.num_layers);
  w.put<std::uint64_t>(c.num_heads);
  w.put<std::uint64_t>(c.context_length);
  w.put<std::uint64_t>(c.seed);
  w.put<double>(c.init_std);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.trace_point));
  w.put<std::uint64_t>(ck.step);
  w.put_string(ck.rng_state);
  w.put_string(ck.metadata);
  w.put_params(ck.params);
  w.put_params(ck.adam.m);
  w.put_params(ck.adam.v);
  w.put<std::uint64_t>(ck.adam.step);
  w.put<std::uint64_t>(ck.adam.skipped);
  w.put<std::uint8_t>(ck.reference ? 1 : 0);
  if (ck.reference) w.put_params(*ck.reference);
  w.put<std::uint64_t>(detail::fnv1a_bytes(w.bytes.data(), w.bytes.size()));
  return w.bytes;
}

inline Checkpoint deserialize_checkpoint(const std::vector<unsigned char>& bytes,
                                         const ModelConfig* expected = nullptr) {
  if (bytes.size() < kCheckpointMagic.size() + 4 + 8 ||
      !std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin()))
    throw CheckpointError("not a checkpoint file (bad magic)");
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored_hash = 0;
  for (int i = 7; i >= 0; --i) stored_hash = (stored_hash << 8) | bytes[body + static_cast<std::size_t>(i)];
  detail::ByteReader r(bytes, body);
  for (std::size_t i = 0; i < kCheckpointMagic.size(); ++i) (void)r.get<char>();
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  if (detail::fnv1a_bytes(bytes.data(), body) != stored_hash) throw CheckpointError("checkpoint checksum mismatch");
  Checkpoint ck;
  ModelConfig& c = ck.config;
  c.vocab_size = r.get<std::uint64_t>();
  c.embed_dim = r.get<std::uint64_t>();
  c.hidden_dim = r.get<std::uint64_t>();
  c.num_layers = r.get<std::uint64_t>();
  c.num_heads = r.get<std::uint64_t>();
  c.context_length = r.get<std::uint64_t>();
  c.seed = r.get<std::uint64_t>();
  c.init_std = r.get<double>();
  const auto tp = r.get<std::uint32_t>();
  if (tp > 2) throw CheckpointError("checkpoint has an unknown trace point");
  c.trace_point = static_cast<TracePoint>(tp);
  try {
    c.validate();
  } catch (const InvalidInput& e) {
    throw CheckpointError(std::string("checkpoint config invalid: ") + e.what());
  }
  if (expected && !expected->same_shape(c)) throw CheckpointError("checkpoint model config does not match");
  ck.step = r.get<std::uint64_t>();
  ck.rng_state = r.get_string();
  ck.metadata = r.get_string();
  ck.params = init_parameters(c);
  ck.adam = AdamState::for_params(ck.params);
  r.get_params(ck.params);
  r.get_params(ck.adam.m);
  r.get_params(ck.adam.v);
  ck.adam.step = r.get<std::uint64_t>();
  ck.adam.skipped = r.get<std::uint64_t>();
  if (r.get<std::uint8_t>()) {
    ck.reference = zeros_like(ck.params);
    r.get_params(*ck.reference);
  }
  if (r.pos() != body) throw CheckpointError("checkpoint has trailing bytes");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  const auto bytes = serialize_checkpoint(ck);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot open '" + tmp + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointError("failed writing '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw CheckpointError("cannot move checkpoint into '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path, const ModelConfig* expected = nullptr) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, expected);
}

}  // namespace motg
