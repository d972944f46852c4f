#pragma once

// `.apck` v1 checkpoints.
//
//   "APCK"                 4 bytes
//   version                u32 = 1
//   config_hash            u64
//   seed                   u64
//   step                   u64
//   count                  u32
//   per parameter          name (u32 length + bytes), u32 ndim, u32 dims...,
//                          u64 adam step, f32 value[n], f32 m[n], f32 v[n]
//
// Little-endian throughout.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "apseg/optim.hpp"

namespace apseg {

inline constexpr char kCheckpointMagic[4] = {'A', 'P', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
};

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::uint64_t adam_step = 0;
  std::vector<float> value, m, v;
};

struct CheckpointContents {
  CheckpointMeta meta;
  std::vector<CheckpointEntry> entries;
};

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const ParameterSet<T>& params, const CheckpointMeta& meta);
CheckpointContents decode_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Copies the stored state into `params`. Throws ConfigHashMismatch when the
/// stored hash differs from `expected_hash`, FormatError when names or shapes
/// do not line up with the parameter set.
template <typename T>
CheckpointMeta restore_checkpoint(const CheckpointContents& ck, ParameterSet<T>& params,
                                  std::uint64_t expected_hash);

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParameterSet<T>& params,
                     const CheckpointMeta& meta);
template <typename T>
CheckpointMeta load_checkpoint(const std::filesystem::path& path, ParameterSet<T>& params,
                               std::uint64_t expected_hash);

/// FNV-1a of the file bytes.
std::uint64_t file_hash(const std::filesystem::path& path);

}  // namespace apseg
