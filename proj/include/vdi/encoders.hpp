#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vdi/autodiff.hpp"
#include "vdi/error.hpp"
#include "vdi/nn.hpp"
#include "vdi/random.hpp"

namespace vdi {

using ad::Index;
using ad::Matrix;
using ad::Var;

/// Per-frame visual features of one video.
///
/// `global` is L x D with row i holding the frame vector x^v_i. `patches`
/// holds one (H*W) x D matrix per frame; patch (h, w) is row h*W + w.
struct FrameFeatures {
  Matrix global;
  std::vector<Matrix> patches;
  Index grid_h = 0;
  Index grid_w = 0;

  Index num_frames() const { return global.rows(); }
  Index dim() const { return global.cols(); }
  Index grid_cells() const { return grid_h * grid_w; }

  void validate() const {
    if (num_frames() < 1 || dim() < 1) throw DimensionMismatch("frame features: empty");
    if (static_cast<Index>(patches.size()) != num_frames()) {
      throw DimensionMismatch("frame features: patch count differs from frame count");
    }
    for (const auto& p : patches) {
      if (p.rows() != grid_cells() || p.cols() != dim()) {
        throw DimensionMismatch("frame features: patch grid shape");
      }
    }
    if (!global.allFinite()) throw Error("frame features: non-finite global entries");
  }

  bool operator==(const FrameFeatures& o) const {
    if (grid_h != o.grid_h || grid_w != o.grid_w || global != o.global) return false;
    return patches == o.patches;
  }
};

/// Raw frame as a small integer grid (row-major).
struct FramePayload {
  Index height = 0;
  Index width = 0;
  std::vector<std::int32_t> cells;

  std::int32_t at(Index h, Index w) const { return cells[static_cast<std::size_t>(h * width + w)]; }
  bool operator==(const FramePayload&) const = default;
};

inline std::uint64_t payload_hash(std::uint64_t seed, const FramePayload& f) {
  std::uint64_t h = hash_combine(seed, static_cast<std::uint64_t>(f.height));
  h = hash_combine(h, static_cast<std::uint64_t>(f.width));
  for (auto c : f.cells) h = hash_combine(h, static_cast<std::uint32_t>(c));
  return h;
}

/// Indices of `count` frames sampled uniformly (segment centres) from a
/// sequence of `total` frames. Repeats frames when total < count.
inline std::vector<std::size_t> sample_frame_indices(std::size_t total, std::size_t count) {
  if (total == 0 || count == 0) throw Error("frame sampling needs at least one frame");
  std::vector<std::size_t> idx(count);
  for (std::size_t k = 0; k < count; ++k) {
    idx[k] = static_cast<std::size_t>((static_cast<double>(k) + 0.5) *
                                      static_cast<double>(total) / static_cast<double>(count));
    if (idx[k] >= total) idx[k] = total - 1;
  }
  return idx;
}

// ---------------------------------------------------------------------------
// Visual encoders

/// Frozen image encoder producing global and patch features.
class VisualEncoder {
 public:
  virtual ~VisualEncoder() = default;
  virtual FrameFeatures encode_frames(std::span<const FramePayload> frames) const = 0;
  virtual Index dim() const = 0;
  /// Identifier used to key the feature cache.
  virtual std::string id() const = 0;
  /// Digest of the encoder's weights; must never change after construction.
  virtual std::uint64_t parameter_hash() const = 0;
};

/// Deterministic hash-based visual encoder.
///
/// Each grid cell value v at (h, w) becomes the patch vector
/// a(v) + 0.5 b(v, h, w), where a is a per-value code and b a per-location
/// code, so patches carry both "what" and "where". Value 0 is background and
/// is damped to 0.2 of that. The global vector is the patch sum over
/// sqrt(H*W) plus 0.1 times a code hashed from the whole payload. All outputs
/// are rounded to float precision so they survive the cache exactly.
class StubVisualEncoder final : public VisualEncoder {
 public:
  StubVisualEncoder(std::uint64_t seed, Index dim, Index codebook_size = 64)
      : seed_(seed), dim_(dim), codebook_(codebook_size, dim) {
    if (dim < 1) throw ConfigError("visual encoder dimension must be positive");
    for (Index v = 0; v < codebook_size; ++v) {
      for (Index d = 0; d < dim; ++d) codebook_(v, d) = value_code(v, d);
    }
  }

  FrameFeatures encode_frames(std::span<const FramePayload> frames) const override {
    if (frames.empty()) throw Error("encode_frames: no frames");
    const Index h = frames.front().height;
    const Index w = frames.front().width;
    if (h < 1 || w < 1) throw DimensionMismatch("encode_frames: empty frame");
    FrameFeatures out;
    out.grid_h = h;
    out.grid_w = w;
    out.global.resize(static_cast<Index>(frames.size()), dim_);
    out.patches.reserve(frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i) {
      const auto& f = frames[i];
      if (f.height != h || f.width != w ||
          static_cast<Index>(f.cells.size()) != h * w) {
        throw DimensionMismatch("encode_frames: frame " + std::to_string(i) +
                                " has a different size");
      }
      Matrix patches(h * w, dim_);
      for (Index r = 0; r < h; ++r) {
        for (Index c = 0; c < w; ++c) {
          const std::int64_t v = f.at(r, c);
          for (Index d = 0; d < dim_; ++d) {
            const double a = (v >= 0 && v < codebook_.rows()) ? codebook_(v, d) : value_code(v, d);
            const double weight = v == 0 ? kBackgroundWeight : 1.0;
            patches(r * w + c, d) = round_float(weight * (a + 0.5 * location_code(v, r, c, d)));
          }
        }
      }
      const double inv_sqrt_cells = 1.0 / std::sqrt(static_cast<double>(h * w));
      const std::uint64_t ph = payload_hash(seed_, f);
      for (Index d = 0; d < dim_; ++d) {
        const double noise = hash_to_symmetric_unit(hash_combine(ph, static_cast<std::uint64_t>(d)));
        out.global(static_cast<Index>(i), d) =
            round_float(patches.col(d).sum() * inv_sqrt_cells + kGlobalNoise * noise);
      }
      out.patches.push_back(std::move(patches));
    }
    return out;
  }

  Index dim() const override { return dim_; }
  std::string id() const override {
    return "stub-visual-s" + std::to_string(seed_) + "-d" + std::to_string(dim_);
  }
  std::uint64_t parameter_hash() const override {
    std::uint64_t h = hash_combine(seed_, static_cast<std::uint64_t>(dim_));
    for (Index i = 0; i < codebook_.size(); ++i) {
      h = hash_combine(h, std::bit_cast<std::uint64_t>(codebook_.data()[i]));
    }
    return h;
  }

 private:
  static constexpr double kBackgroundWeight = 0.2;
  static constexpr double kGlobalNoise = 0.1;

  static double round_float(double x) { return static_cast<double>(static_cast<float>(x)); }

  double value_code(std::int64_t v, Index d) const {
    const std::uint64_t h =
        hash_combine(hash_combine(seed_ ^ 0x5a5aULL, static_cast<std::uint64_t>(v)),
                     static_cast<std::uint64_t>(d));
    return hash_to_symmetric_unit(h);
  }

  double location_code(std::int64_t v, Index r, Index c, Index d) const {
    std::uint64_t h = hash_combine(seed_ ^ 0xa5a5ULL, static_cast<std::uint64_t>(v));
    h = hash_combine(h, static_cast<std::uint64_t>(r));
    h = hash_combine(h, static_cast<std::uint64_t>(c));
    return hash_to_symmetric_unit(hash_combine(h, static_cast<std::uint64_t>(d)));
  }

  std::uint64_t seed_;
  Index dim_;
  Matrix codebook_;
};

// ---------------------------------------------------------------------------
// Text encoders

enum class SourceKind { full, static_query, dynamic_query };

inline std::string_view to_string(SourceKind k) {
  switch (k) {
    case SourceKind::full: return "full";
    case SourceKind::static_query: return "static";
    case SourceKind::dynamic_query: return "dynamic";
  }
  return "?";
}

/// Sentence embedding (1 x D) tagged with the query variant it came from.
struct TextEmbedding {
  Var vector;
  SourceKind kind = SourceKind::full;

  Index dim() const { return vector.cols(); }
};

/// Trainable text encoder. Its parameters live in the ParameterSet passed at
/// construction, in ParamGroup::text.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual TextEmbedding encode_text(const std::vector<std::string>& tokens,
                                    SourceKind kind) const = 0;
  virtual Index dim() const = 0;
  virtual std::string id() const = 0;
};

/// Mean of fixed hash-seeded token vectors followed by one trainable linear
/// layer. Open vocabulary: every token string has a vector.
class StubTextEncoder final : public TextEncoder {
 public:
  StubTextEncoder(nn::ParameterSet& params, std::uint64_t seed, Index dim, Rng& rng)
      : seed_(seed), dim_(dim), projection_(params, "text.projection", nn::ParamGroup::text, dim, dim, rng) {
    if (dim < 1) throw ConfigError("text encoder dimension must be positive");
  }

  TextEmbedding encode_text(const std::vector<std::string>& tokens,
                            SourceKind kind) const override {
    if (tokens.empty()) throw EmptyContent("encode_text: empty token list");
    return {projection_(ad::constant(bag_of_tokens(tokens))), kind};
  }

  /// Mean of the frozen token vectors (1 x D).
  Matrix bag_of_tokens(const std::vector<std::string>& tokens) const {
    Matrix mean = Matrix::Zero(1, dim_);
    for (const auto& t : tokens) mean += token_vector(t);
    return mean / static_cast<double>(tokens.size());
  }

  Matrix token_vector(const std::string& token) const {
    const std::uint64_t base = hash_string(seed_, token);
    Matrix v(1, dim_);
    for (Index d = 0; d < dim_; ++d) {
      v(0, d) = hash_to_symmetric_unit(hash_combine(base, static_cast<std::uint64_t>(d)));
    }
    return v;
  }

  Index dim() const override { return dim_; }
  std::string id() const override { return "stub-text-s" + std::to_string(seed_); }
  nn::Linear& projection() { return projection_; }

 private:
  std::uint64_t seed_;
  Index dim_;
  nn::Linear projection_;
};

}  // namespace vdi
