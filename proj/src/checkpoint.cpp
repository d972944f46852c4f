#include "apseg/checkpoint.hpp"

#include <cstring>
#include <iomanip>
#include <sstream>

#include "apseg/binary_io.hpp"
#include "apseg/errors.hpp"
#include "apseg/feature_file.hpp"

namespace apseg {

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const ParameterSet<T>& params, const CheckpointMeta& meta) {
  ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u64(meta.config_hash);
  w.u64(meta.seed);
  w.u64(meta.step);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.shape.size()));
    for (auto d : p.shape) w.u32(static_cast<std::uint32_t>(d));
    w.u64(p.step);
    for (const auto* buf : {&p.value, &p.m, &p.v})
      for (T x : *buf) w.f32(static_cast<float>(x));
  }
  return std::move(w.bytes());
}

CheckpointContents decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes, "checkpoint");
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("checkpoint: bad magic");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  CheckpointContents ck;
  ck.meta.config_hash = r.u64();
  ck.meta.seed = r.u64();
  ck.meta.step = r.u64();
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = r.str(4096);
    const auto ndim = r.u32();
    if (ndim > 8) throw FormatError("checkpoint: parameter " + e.name + " has rank " + std::to_string(ndim));
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      e.shape.push_back(r.u32());
      n *= e.shape.back();
    }
    e.adam_step = r.u64();
    r.need(n * 12);
    for (auto* buf : {&e.value, &e.m, &e.v}) {
      buf->resize(n);
      for (auto& x : *buf) x = r.f32();
    }
    ck.entries.push_back(std::move(e));
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: " + std::to_string(r.remaining()) + " trailing bytes");
  return ck;
}

template <typename T>
CheckpointMeta restore_checkpoint(const CheckpointContents& ck, ParameterSet<T>& params,
                                  std::uint64_t expected_hash) {
  if (ck.meta.config_hash != expected_hash) {
    std::ostringstream os;
    os << "checkpoint config hash " << std::hex << std::setw(16) << std::setfill('0') << ck.meta.config_hash
       << " does not match the active configuration " << std::setw(16) << expected_hash;
    throw ConfigHashMismatch(os.str());
  }
  if (ck.entries.size() != params.size())
    throw FormatError("checkpoint holds " + std::to_string(ck.entries.size()) + " parameters, model has " +
                      std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = ck.entries[i];
    auto& p = params[i];
    if (e.name != p.name || e.shape != p.shape)
      throw FormatError("checkpoint parameter " + e.name + " " + shape_str(e.shape) + " does not match " +
                        p.name + " " + shape_str(p.shape));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = ck.entries[i];
    auto& p = params[i];
    p.value.assign(e.value.begin(), e.value.end());
    p.m.assign(e.m.begin(), e.m.end());
    p.v.assign(e.v.begin(), e.v.end());
    p.step = e.adam_step;
    p.grad.clear();
  }
  return ck.meta;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParameterSet<T>& params,
                     const CheckpointMeta& meta) {
  write_file_bytes(path, encode_checkpoint(params, meta));
}

template <typename T>
CheckpointMeta load_checkpoint(const std::filesystem::path& path, ParameterSet<T>& params,
                               std::uint64_t expected_hash) {
  return restore_checkpoint(decode_checkpoint(read_file_bytes(path)), params, expected_hash);
}

std::uint64_t file_hash(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return fnv1a(bytes.data(), bytes.size());
}

#define APSEG_INSTANTIATE_CKPT(T)                                                                   \
  template std::vector<std::uint8_t> encode_checkpoint<T>(const ParameterSet<T>&, const CheckpointMeta&); \
  template CheckpointMeta restore_checkpoint<T>(const CheckpointContents&, ParameterSet<T>&, std::uint64_t); \
  template void save_checkpoint<T>(const std::filesystem::path&, const ParameterSet<T>&,            \
                                   const CheckpointMeta&);                                          \
  template CheckpointMeta load_checkpoint<T>(const std::filesystem::path&, ParameterSet<T>&, std::uint64_t);

APSEG_INSTANTIATE_CKPT(float)
APSEG_INSTANTIATE_CKPT(double)

}  // namespace apseg
