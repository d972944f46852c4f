#pragma once

// `.apfe` v1 multi-level feature files.
//
//   "APFE"                      4 bytes
//   version                     u32 = 1
//   image_id                    u32 byte length + UTF-8 bytes
//   num_levels                  u32 = 3
//   per level                   u32 level_id, channels, height, width
//   payload                     f32 values, level by level, row-major (c,h,w)
//
// All integers and floats are little-endian.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "apseg/encoder.hpp"

namespace apseg {

inline constexpr char kFeatureMagic[4] = {'A', 'P', 'F', 'E'};
inline constexpr std::uint32_t kFeatureVersion = 1;

struct FeatureLevelInfo {
  std::uint32_t level_id = 0;
  std::uint32_t channels = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint64_t checksum = 0;  // FNV-1a of the level's payload bytes
};

struct FeatureFileHeader {
  std::uint32_t version = kFeatureVersion;
  std::string image_id;
  std::vector<FeatureLevelInfo> levels;
};

template <typename T>
std::vector<std::uint8_t> encode_features(const std::string& image_id,
                                          const MultiLevelFeatures<T>& feats);
/// Throws FormatError on bad magic, version, level layout or payload length.
template <typename T>
MultiLevelFeatures<T> decode_features(const std::vector<std::uint8_t>& bytes,
                                      FeatureFileHeader* header = nullptr);

template <typename T>
void save_features(const std::filesystem::path& path, const std::string& image_id,
                   const MultiLevelFeatures<T>& feats);
template <typename T>
MultiLevelFeatures<T> load_features(const std::filesystem::path& path,
                                    FeatureFileHeader* header = nullptr);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace apseg
