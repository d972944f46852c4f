#include "apseg/feature_file.hpp"

#include <fstream>
#include <iterator>

#include "apseg/binary_io.hpp"
#include "apseg/optim.hpp"

namespace apseg {

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to " + path.string());
}

template <typename T>
std::vector<std::uint8_t> encode_features(const std::string& image_id,
                                          const MultiLevelFeatures<T>& feats) {
  feats.validate();
  ByteWriter w;
  w.raw(kFeatureMagic, 4);
  w.u32(kFeatureVersion);
  w.str(image_id);
  w.u32(3);
  for (std::uint32_t l = 0; l < 3; ++l) {
    const auto& t = feats.levels[l];
    w.u32(l + 1);
    w.u32(static_cast<std::uint32_t>(t.dim(0)));
    w.u32(static_cast<std::uint32_t>(t.dim(1)));
    w.u32(static_cast<std::uint32_t>(t.dim(2)));
  }
  for (const auto& t : feats.levels)
    for (T v : t.data()) w.f32(static_cast<float>(v));
  return std::move(w.bytes());
}

template <typename T>
MultiLevelFeatures<T> decode_features(const std::vector<std::uint8_t>& bytes,
                                      FeatureFileHeader* header) {
  ByteReader r(bytes, "feature file");
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kFeatureMagic, 4) != 0) throw FormatError("feature file: bad magic");
  FeatureFileHeader hdr;
  hdr.version = r.u32();
  if (hdr.version != kFeatureVersion)
    throw FormatError("feature file: unsupported version " + std::to_string(hdr.version));
  hdr.image_id = r.str();
  const std::uint32_t num_levels = r.u32();
  if (num_levels != 3) throw FormatError("feature file: expected 3 levels, got " + std::to_string(num_levels));
  std::uint64_t payload = 0;
  for (std::uint32_t l = 0; l < num_levels; ++l) {
    FeatureLevelInfo info;
    info.level_id = r.u32();
    info.channels = r.u32();
    info.height = r.u32();
    info.width = r.u32();
    if (info.level_id != l + 1) throw FormatError("feature file: level ids must be 1,2,3 in order");
    if (info.channels == 0 || info.height == 0 || info.width == 0)
      throw FormatError("feature file: empty level " + std::to_string(info.level_id));
    payload += 4ULL * info.channels * info.height * info.width;
    hdr.levels.push_back(info);
  }
  if (r.remaining() != payload)
    throw FormatError("feature file: payload holds " + std::to_string(r.remaining()) +
                      " bytes, header requires " + std::to_string(payload));

  MultiLevelFeatures<T> out;
  out.source = FeatureSource::Imported;
  for (std::uint32_t l = 0; l < 3; ++l) {
    auto& info = hdr.levels[l];
    const std::size_t n = std::size_t{info.channels} * info.height * info.width;
    info.checksum = fnv1a(bytes.data() + r.position(), n * 4);
    std::vector<T> data(n);
    for (auto& v : data) v = static_cast<T>(r.f32());
    out.levels[l] = Tensor<T>::constant({info.channels, info.height, info.width}, std::move(data));
  }
  try {
    out.validate();
  } catch (const DimensionError& e) {
    throw FormatError(std::string("feature file: ") + e.what());
  }
  if (header) *header = std::move(hdr);
  return out;
}

template <typename T>
void save_features(const std::filesystem::path& path, const std::string& image_id,
                   const MultiLevelFeatures<T>& feats) {
  write_file_bytes(path, encode_features(image_id, feats));
}

template <typename T>
MultiLevelFeatures<T> load_features(const std::filesystem::path& path, FeatureFileHeader* header) {
  return decode_features<T>(read_file_bytes(path), header);
}

#define APSEG_INSTANTIATE_FEATURE_IO(T)                                                        \
  template std::vector<std::uint8_t> encode_features<T>(const std::string&,                   \
                                                        const MultiLevelFeatures<T>&);         \
  template MultiLevelFeatures<T> decode_features<T>(const std::vector<std::uint8_t>&,         \
                                                    FeatureFileHeader*);                       \
  template void save_features<T>(const std::filesystem::path&, const std::string&,            \
                                 const MultiLevelFeatures<T>&);                                \
  template MultiLevelFeatures<T> load_features<T>(const std::filesystem::path&, FeatureFileHeader*);

APSEG_INSTANTIATE_FEATURE_IO(float)
APSEG_INSTANTIATE_FEATURE_IO(double)

}  // namespace apseg
