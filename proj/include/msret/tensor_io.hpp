#pragma once

// Feature-map tensors and descriptor sets, plus their binary containers.
//
// .fmap layout (all integers little-endian):
//   [0..4)   magic "FMAP"
//   [4]      version (1)
//   [5]      dtype code (1 = float32 LE)
//   [6..8)   reserved, zero
//   [8..12)  K   [12..16) H   [16..20) W
//   [20..)   K*H*W float32, channel-major: index = (k*H + h)*W + w
//
// .desc layout:
//   "DESC", version byte (1), u32 N, u32 D,
//   N x [u16 id length, id bytes (UTF-8)],
//   N*D float32 in record order.

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "msret/detail/byte_io.hpp"
#include "msret/errors.hpp"
#include "msret/log.hpp"

namespace msret {

inline constexpr std::string_view kFmapMagic = "FMAP";
inline constexpr std::uint8_t kFmapVersion = 1;
inline constexpr std::uint8_t kDtypeFloat32 = 1;
inline constexpr std::size_t kFmapHeaderSize = 20;

inline constexpr std::string_view kDescMagic = "DESC";
inline constexpr std::uint8_t kDescVersion = 1;

/// K x H x W activation tensor of one image at one layer, channel-major.
struct FeatureMaps {
  std::string image_id;
  std::string layer;
  std::uint32_t channels = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<float> data;

  FeatureMaps() = default;
  FeatureMaps(std::uint32_t k, std::uint32_t h, std::uint32_t w, float fill = 0.0f)
      : channels(k), height(h), width(w),
        data(static_cast<std::size_t>(k) * h * w, fill) {}

  std::size_t plane_size() const noexcept { return static_cast<std::size_t>(height) * width; }
  std::size_t size() const noexcept { return data.size(); }

  std::size_t offset(std::uint32_t k, std::uint32_t h, std::uint32_t w) const noexcept {
    return (static_cast<std::size_t>(k) * height + h) * width + w;
  }
  float at(std::uint32_t k, std::uint32_t h, std::uint32_t w) const { return data[offset(k, h, w)]; }
  float& at(std::uint32_t k, std::uint32_t h, std::uint32_t w) { return data[offset(k, h, w)]; }

  std::span<const float> channel(std::uint32_t k) const {
    return std::span<const float>(data).subspan(static_cast<std::size_t>(k) * plane_size(),
                                                plane_size());
  }

  /// Throws ValidationError if dims are zero or the payload length disagrees.
  void validate() const {
    std::vector<std::string> problems;
    if (channels == 0) problems.emplace_back("channels K must be >= 1");
    if (height == 0) problems.emplace_back("height H must be >= 1");
    if (width == 0) problems.emplace_back("width W must be >= 1");
    const std::size_t expected = static_cast<std::size_t>(channels) * height * width;
    if (data.size() != expected) {
      problems.push_back("data length " + std::to_string(data.size()) + " != K*H*W = " +
                         std::to_string(expected));
    }
    if (!problems.empty()) throw ValidationError(std::move(problems));
  }

  bool has_negative() const {
    for (float v : data) {
      if (v < 0.0f) return true;
    }
    return false;
  }
};

namespace detail {

inline void check_fmap_dims(std::uint32_t k, std::uint32_t h, std::uint32_t w) {
  if (k == 0) throw FormatError("K", "feature map declares K = 0");
  if (h == 0) throw FormatError("H", "feature map declares H = 0");
  if (w == 0) throw FormatError("W", "feature map declares W = 0");
}

inline std::uint64_t fmap_payload_bytes(std::uint32_t k, std::uint32_t h, std::uint32_t w) {
  return static_cast<std::uint64_t>(k) * h * w * 4u;
}

struct FmapHeader {
  std::uint32_t k, h, w;
};

inline FmapHeader decode_fmap_header(ByteReader& r) {
  if (r.bytes(4, "magic") != kFmapMagic) throw FormatError("magic", "bad magic");
  const auto version = r.u8("version");
  if (version != kFmapVersion) {
    throw FormatError("version", "unsupported version " + std::to_string(version));
  }
  const auto dtype = r.u8("dtype");
  if (dtype != kDtypeFloat32) {
    throw FormatError("dtype", "unsupported dtype code " + std::to_string(dtype));
  }
  if (r.u16("reserved") != 0) throw FormatError("reserved", "reserved bytes must be zero");
  FmapHeader hdr{r.u32("K"), r.u32("H"), r.u32("W")};
  check_fmap_dims(hdr.k, hdr.h, hdr.w);
  return hdr;
}

inline void warn_if_negative(const FeatureMaps& fm, const std::string& origin) {
  if (fm.has_negative()) {
    log::warn("feature map '" + origin +
              "' contains negative activations (pre-ReLU dump?); pooling proceeds as-is");
  }
}

}  // namespace detail

/// Serializes a tensor to the .fmap byte layout.
inline std::string encode_feature_maps(const FeatureMaps& fm) {
  fm.validate();
  detail::ByteWriter w;
  w.bytes(kFmapMagic);
  w.u8(kFmapVersion);
  w.u8(kDtypeFloat32);
  w.u16(0);
  w.u32(fm.channels);
  w.u32(fm.height);
  w.u32(fm.width);
  w.f32s(fm.data);
  return w.take();
}

inline FeatureMaps decode_feature_maps(std::string_view bytes) {
  detail::ByteReader r(bytes);
  const auto hdr = detail::decode_fmap_header(r);
  const auto payload = detail::fmap_payload_bytes(hdr.k, hdr.h, hdr.w);
  if (r.remaining() < payload) {
    throw FormatError("payload", "truncated data: payload declares " + std::to_string(payload) +
                                     " bytes, found " + std::to_string(r.remaining()));
  }
  if (r.remaining() > payload) {
    throw FormatError("payload", "trailing bytes after payload");
  }
  FeatureMaps fm(hdr.k, hdr.h, hdr.w);
  r.f32s(fm.data, "payload");
  return fm;
}

inline void write_feature_maps(const FeatureMaps& fm, const std::filesystem::path& path) {
  detail::write_file(path, encode_feature_maps(fm));
}

/// Reads a .fmap file. The header is validated against the file size before the
/// payload buffer is allocated. image_id defaults to the file stem; negative
/// values are reported as a warning, not an error.
inline FeatureMaps read_feature_maps(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::error_code ec;
  const auto file_size = std::filesystem::file_size(path, ec);
  if (ec) throw IoError("cannot stat '" + path.string() + "': " + ec.message());

  std::string header(kFmapHeaderSize, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header.size()));
  header.resize(static_cast<std::size_t>(in.gcount()));
  try {
    detail::ByteReader r(header);
    const auto hdr = detail::decode_fmap_header(r);
    const auto payload = detail::fmap_payload_bytes(hdr.k, hdr.h, hdr.w);
    const auto available = file_size - kFmapHeaderSize;
    if (available < payload) {
      throw FormatError("payload", "truncated data: payload declares " +
                                       std::to_string(payload) + " bytes, found " +
                                       std::to_string(available));
    }
    if (available > payload) throw FormatError("payload", "trailing bytes after payload");

    FeatureMaps fm(hdr.k, hdr.h, hdr.w);
    in.read(reinterpret_cast<char*>(fm.data.data()), static_cast<std::streamsize>(payload));
    if (static_cast<std::uint64_t>(in.gcount()) != payload) {
      throw FormatError("payload", "short read of payload");
    }
    if constexpr (std::endian::native == std::endian::big) {
      for (auto& v : fm.data) {
        const auto u = std::bit_cast<std::uint32_t>(v);
        v = std::bit_cast<float>((u >> 24) | ((u >> 8) & 0xff00u) | ((u << 8) & 0xff0000u) | (u << 24));
      }
    }
    fm.image_id = path.stem().string();
    detail::warn_if_negative(fm, path.string());
    return fm;
  } catch (const FormatError& e) {
    throw FormatError(e.field(), path.string() + ": " + e.what());
  }
}

/// Ordered collection of (image id, vector) pairs sharing one dimensionality.
class DescriptorSet {
 public:
  DescriptorSet() = default;
  DescriptorSet(std::string layer, std::uint32_t dim) : layer_(std::move(layer)), dim_(dim) {
    if (dim_ == 0) throw ValidationError({"descriptor dim must be >= 1"});
  }

  const std::string& layer() const noexcept { return layer_; }
  void set_layer(std::string layer) { layer_ = std::move(layer); }
  std::uint32_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }

  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const std::string& id(std::size_t i) const { return ids_.at(i); }
  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(values_).subspan(i * dim_, dim_);
  }
  std::span<float> row(std::size_t i) { return std::span<float>(values_).subspan(i * dim_, dim_); }
  const std::vector<float>& values() const noexcept { return values_; }

  std::optional<std::size_t> find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  std::span<const float> at(std::string_view id) const {
    auto i = find(id);
    if (!i) throw Error("descriptor set '" + layer_ + "' has no entry for image '" + std::string(id) + "'");
    return row(*i);
  }

  void add(std::string id, std::span<const float> vec) {
    if (vec.size() != dim_) {
      throw DimensionMismatch("descriptor for '" + id + "' has dim " + std::to_string(vec.size()) +
                              ", set expects " + std::to_string(dim_));
    }
    if (index_.count(id) != 0) throw ValidationError({"duplicate image id '" + id + "'"});
    index_.emplace(id, ids_.size());
    ids_.push_back(std::move(id));
    values_.insert(values_.end(), vec.begin(), vec.end());
  }

  void reserve(std::size_t n) {
    ids_.reserve(n);
    values_.reserve(n * dim_);
    index_.reserve(n);
  }

  /// Entries whose ids appear in `keep`, in this set's order.
  template <typename Pred>
  DescriptorSet filter(Pred&& keep) const {
    DescriptorSet out(layer_, dim_);
    for (std::size_t i = 0; i < size(); ++i) {
      if (keep(ids_[i])) out.add(ids_[i], row(i));
    }
    return out;
  }

  friend bool operator==(const DescriptorSet& a, const DescriptorSet& b) {
    return a.layer_ == b.layer_ && a.dim_ == b.dim_ && a.ids_ == b.ids_ && a.values_ == b.values_;
  }

 private:
  std::string layer_;
  std::uint32_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<float> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline std::string encode_descriptor_set(const DescriptorSet& ds) {
  detail::ByteWriter w;
  w.bytes(kDescMagic);
  w.u8(kDescVersion);
  w.u32(static_cast<std::uint32_t>(ds.size()));
  w.u32(ds.dim());
  for (const auto& id : ds.ids()) {
    if (id.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw ValidationError({"image id longer than 65535 bytes: '" + id.substr(0, 32) + "...'"});
    }
    w.u16(static_cast<std::uint16_t>(id.size()));
    w.bytes(id);
  }
  w.f32s(ds.values());
  return w.take();
}

/// Decodes a .desc buffer. The layer name is not stored in the container and
/// is supplied by the caller.
inline DescriptorSet decode_descriptor_set(std::string_view bytes, std::string layer = {}) {
  detail::ByteReader r(bytes);
  if (r.bytes(4, "magic") != kDescMagic) throw FormatError("magic", "bad magic");
  const auto version = r.u8("version");
  if (version != kDescVersion) {
    throw FormatError("version", "unsupported version " + std::to_string(version));
  }
  const auto count = r.u32("count");
  const auto dim = r.u32("dim");
  if (dim == 0) throw FormatError("dim", "descriptor file declares dim = 0");
  // Each record needs at least 2 bytes of id header plus 4*dim payload bytes.
  if (static_cast<std::uint64_t>(count) * (2 + 4ull * dim) > r.remaining()) {
    throw FormatError("count", "truncated data: " + std::to_string(count) +
                                   " records do not fit in " + std::to_string(r.remaining()) +
                                   " bytes");
  }
  std::vector<std::string> ids;
  ids.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.u16("id length");
    ids.emplace_back(r.bytes(len, "id bytes"));
  }
  const std::uint64_t payload = static_cast<std::uint64_t>(count) * dim * 4;
  if (r.remaining() < payload) {
    throw FormatError("payload", "truncated data: payload declares " + std::to_string(payload) +
                                     " bytes, found " + std::to_string(r.remaining()));
  }
  if (r.remaining() > payload) throw FormatError("payload", "trailing bytes after payload");
  DescriptorSet ds(std::move(layer), dim);
  ds.reserve(count);
  std::vector<float> vec(dim);
  for (std::uint32_t i = 0; i < count; ++i) {
    r.f32s(vec, "payload");
    ds.add(std::move(ids[i]), vec);
  }
  return ds;
}

inline void write_descriptor_set(const DescriptorSet& ds, const std::filesystem::path& path) {
  detail::write_file(path, encode_descriptor_set(ds));
}

inline DescriptorSet read_descriptor_set(const std::filesystem::path& path, std::string layer = {}) {
  const auto bytes = detail::read_file(path);
  try {
    return decode_descriptor_set(bytes, std::move(layer));
  } catch (const FormatError& e) {
    throw FormatError(e.field(), path.string() + ": " + e.what());
  }
}

}  // namespace msret
