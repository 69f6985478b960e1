#pragma once

// Binary feature cache ("VDIF"):
//   char[4]  magic "VDIF"
//   u32      version (1)
//   u32      D, L, H, W
//   f32[L*D]       global features, frame-major
//   f32[L*D*H*W]   patch features, layout L x D x H x W
// All integers and floats little-endian.

#include <array>
#include <bit>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vdi/encoders.hpp"
#include "vdi/error.hpp"

namespace vdi {

inline constexpr std::array<char, 4> kFeatureMagic = {'V', 'D', 'I', 'F'};
inline constexpr std::uint32_t kFeatureVersion = 1;

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("feature cache: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32(std::ostream& out, double v) {
  put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

inline double get_f32(std::istream& in) {
  return static_cast<double>(std::bit_cast<float>(get_u32(in)));
}

}  // namespace detail

inline void write_features(std::ostream& out, const FrameFeatures& f) {
  f.validate();
  out.write(kFeatureMagic.data(), 4);
  detail::put_u32(out, kFeatureVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(f.dim()));
  detail::put_u32(out, static_cast<std::uint32_t>(f.num_frames()));
  detail::put_u32(out, static_cast<std::uint32_t>(f.grid_h));
  detail::put_u32(out, static_cast<std::uint32_t>(f.grid_w));
  for (Index i = 0; i < f.num_frames(); ++i) {
    for (Index d = 0; d < f.dim(); ++d) detail::put_f32(out, f.global(i, d));
  }
  for (const auto& p : f.patches) {
    for (Index d = 0; d < f.dim(); ++d) {
      for (Index cell = 0; cell < f.grid_cells(); ++cell) detail::put_f32(out, p(cell, d));
    }
  }
}

inline FrameFeatures read_features(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || magic != kFeatureMagic) {
    throw IoError("feature cache: bad magic");
  }
  const auto version = detail::get_u32(in);
  if (version != kFeatureVersion) {
    throw IoError("feature cache: unsupported version " + std::to_string(version));
  }
  const Index dim = detail::get_u32(in);
  const Index frames = detail::get_u32(in);
  FrameFeatures f;
  f.grid_h = detail::get_u32(in);
  f.grid_w = detail::get_u32(in);
  f.global.resize(frames, dim);
  for (Index i = 0; i < frames; ++i) {
    for (Index d = 0; d < dim; ++d) f.global(i, d) = detail::get_f32(in);
  }
  f.patches.assign(static_cast<std::size_t>(frames), Matrix(f.grid_cells(), dim));
  for (auto& p : f.patches) {
    for (Index d = 0; d < dim; ++d) {
      for (Index cell = 0; cell < f.grid_cells(); ++cell) p(cell, d) = detail::get_f32(in);
    }
  }
  f.validate();
  return f;
}

inline void write_features(const std::filesystem::path& path, const FrameFeatures& f) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write feature file '" + path.string() + "'");
  write_features(out, f);
}

inline FrameFeatures read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read feature file '" + path.string() + "'");
  return read_features(in);
}

/// On-disk cache keyed by (video id, encoder id, frame count).
class FeatureCache {
 public:
  explicit FeatureCache(std::filesystem::path root) : root_(std::move(root)) {}

  /// Cache rooted at $VDI_CACHE_DIR, or nullopt when the variable is unset.
  static std::optional<FeatureCache> from_environment() {
    const char* dir = std::getenv("VDI_CACHE_DIR");
    if (dir == nullptr || *dir == '\0') return std::nullopt;
    return FeatureCache(dir);
  }

  std::filesystem::path path_for(const std::string& video_id, const std::string& encoder_id,
                                 Index num_frames) const {
    return root_ / encoder_id /
           (video_id + ".L" + std::to_string(num_frames) + ".vdif");
  }

  FrameFeatures get_or_compute(const std::string& video_id, const std::string& encoder_id,
                               Index num_frames, const std::function<FrameFeatures()>& compute) {
    const auto path = path_for(video_id, encoder_id, num_frames);
    if (std::filesystem::exists(path)) {
      ++hits_;
      return read_features(path);
    }
    ++misses_;
    FrameFeatures f = compute();
    write_features(path, f);
    return f;
  }

  std::size_t hits() const { return hits_; }
  std::size_t misses() const { return misses_; }
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
};

}  // namespace vdi
