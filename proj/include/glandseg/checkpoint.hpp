#pragma once

// Checkpoint file layout (all integers little-endian):
//   "GLANDSEG"            8-byte magic
//   u32 version           currently 1
//   u64 n + n bytes       configuration text (ExperimentConfig::serialize)
//   u64 step              training steps completed
//   u64 adam_step         optimizer step counter
//   u64 n + n bytes       shuffling RNG state (textual)
//   u32 count             tensor table entries, each:
//     u32 n + n bytes     name
//     u32 rank, u64 dims[rank]
//     float32 values[∏dims]
// Tensor names: network parameters, "<norm>.running_mean/var" buffers, and
// "adam.m.<param>" / "adam.v.<param>" moment buffers.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "glandseg/config.hpp"
#include "glandseg/network.hpp"
#include "glandseg/optimizer.hpp"

namespace glandseg {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  static constexpr char kMagic[8] = {'G', 'L', 'A', 'N', 'D', 'S', 'E', 'G'};
  static constexpr std::uint32_t kVersion = 1;

  std::uint32_t version = kVersion;
  ExperimentConfig config;
  std::uint64_t step = 0;
  std::uint64_t adam_step = 0;
  std::string rng_state;
  std::vector<NamedArray> tensors;

  const NamedArray* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

namespace detail {

class BinWriter {
 public:
  explicit BinWriter(std::ostream& os) : os_(os) {}
  void u32(std::uint32_t v) { bytes(v, 4); }
  void u64(std::uint64_t v) { bytes(v, 8); }
  void str64(const std::string& s) {
    u64(s.size());
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void str32(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void f32(float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    u32(bits);
  }

 private:
  void bytes(std::uint64_t v, int n) {
    char b[8];
    for (int i = 0; i < n; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os_.write(b, n);
  }
  std::ostream& os_;
};

class BinReader {
 public:
  BinReader(std::istream& is, std::string origin) : is_(is), origin_(std::move(origin)) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(bytes(4)); }
  std::uint64_t u64() { return bytes(8); }
  std::string str(std::uint64_t n) {
    if (n > (1ULL << 32)) fail("implausible string length");
    std::string s(n, '\0');
    is_.read(s.data(), static_cast<std::streamsize>(n));
    check();
    return s;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
  [[noreturn]] void fail(const std::string& what) const { throw CheckpointError(origin_ + ": " + what); }

 private:
  std::uint64_t bytes(int n) {
    unsigned char b[8] = {};
    is_.read(reinterpret_cast<char*>(b), n);
    check();
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  void check() const {
    if (!is_) fail("truncated checkpoint");
  }
  std::istream& is_;
  std::string origin_;
};

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError(path.string() + ": cannot open for writing");
  detail::BinWriter w(os);
  os.write(Checkpoint::kMagic, 8);
  w.u32(ck.version);
  w.str64(ck.config.serialize());
  w.u64(ck.step);
  w.u64(ck.adam_step);
  w.str64(ck.rng_state);
  w.u32(static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    w.str32(t.name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.u64(d);
    for (float v : t.values) w.f32(v);
  }
  if (!os) throw CheckpointError(path.string() + ": write failed");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError(path.string() + ": cannot open checkpoint");
  detail::BinReader r(is, path.string());
  char magic[8] = {};
  is.read(magic, 8);
  if (!is || std::memcmp(magic, Checkpoint::kMagic, 8) != 0) r.fail("not a checkpoint file");
  Checkpoint ck;
  ck.version = r.u32();
  if (ck.version != Checkpoint::kVersion) r.fail("unsupported checkpoint version " + std::to_string(ck.version));
  ck.config = ExperimentConfig::parse(r.str(r.u64()), path.string() + " (embedded config)");
  ck.step = r.u64();
  ck.adam_step = r.u64();
  ck.rng_state = r.str(r.u64());
  const std::uint32_t count = r.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedArray t;
    t.name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank > 8) r.fail("implausible rank for " + t.name);
    for (std::uint32_t i = 0; i < rank; ++i) t.shape.push_back(r.u64());
    const std::size_t n = shape_numel(t.shape);
    if (n > (1ULL << 32)) r.fail("implausible size for " + t.name);
    t.values.resize(n);
    for (auto& v : t.values) v = r.f32();
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

// Snapshot of network weights, running statistics and (optionally) Adam state.
inline Checkpoint capture_checkpoint(const ExperimentConfig& config, const MiniLinkNet& net, const Adam* adam,
                                     std::uint64_t step, std::string rng_state = {}) {
  Checkpoint ck;
  ck.config = config;
  ck.step = step;
  ck.rng_state = std::move(rng_state);
  auto put = [&](const std::string& name, const Shape& shape, std::span<const float> values) {
    ck.tensors.push_back({name, shape, std::vector<float>(values.begin(), values.end())});
  };
  for (const auto& [name, t] : net.parameters()) put(name, t.shape(), t.data());
  for (const auto& [name, t] : net.buffers()) put(name, t.shape(), t.data());
  if (adam) {
    ck.adam_step = adam->steps();
    const auto& params = adam->parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
      put("adam.m." + params[k].first, params[k].second.shape(), adam->first_moment(k));
      put("adam.v." + params[k].first, params[k].second.shape(), adam->second_moment(k));
    }
  }
  return ck;
}

// Copies stored weights and statistics into `net`; every network tensor must be present.
inline void restore_network(const Checkpoint& ck, MiniLinkNet& net) {
  auto copy_into = [&](const std::string& name, Tensor t) {
    const NamedArray* a = ck.find(name);
    if (!a) throw CheckpointError("checkpoint lacks tensor " + name);
    if (a->shape != t.shape())
      throw CheckpointError("checkpoint tensor " + name + " has shape " + shape_str(a->shape) + ", network expects " +
                            shape_str(t.shape()));
    auto dst = t.mutable_data();
    std::copy(a->values.begin(), a->values.end(), dst.begin());
  };
  for (const auto& [name, t] : net.parameters()) copy_into(name, t);
  for (const auto& [name, t] : net.buffers()) copy_into(name, t);
}

inline void restore_optimizer(const Checkpoint& ck, Adam& adam) {
  std::vector<std::vector<float>> m, v;
  for (const auto& [name, p] : adam.parameters()) {
    const NamedArray* a = ck.find("adam.m." + name);
    const NamedArray* b = ck.find("adam.v." + name);
    if (!a || !b) throw CheckpointError("checkpoint lacks optimizer state for " + name);
    m.push_back(a->values);
    v.push_back(b->values);
  }
  adam.restore(ck.adam_step, std::move(m), std::move(v));
}

// Builds the network described by a checkpoint and loads its weights.
inline MiniLinkNet network_from_checkpoint(const Checkpoint& ck) {
  MiniLinkNet net(ck.config.network_config());
  restore_network(ck, net);
  return net;
}

}  // namespace glandseg
