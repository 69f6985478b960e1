#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vdi/autodiff.hpp"
#include "vdi/encoders.hpp"
#include "vdi/nn.hpp"

namespace vdi {

/// H x W saliency map of one frame, row-major flattened to 1 x (H*W).
struct FrameHeatmap {
  Var values;
  Index grid_h = 0;
  Index grid_w = 0;
};

/// Temporal summary of a video's heatmaps (1 x D).
struct DynamicFeature {
  Var vector;
};

/// M[h,w] = <P_g(global), P_p(patch[h,w])> / sqrt(D).
/// global: 1 x D, patches: (H*W) x D. Result: 1 x (H*W).
inline Var heatmap_row(const nn::Linear& global_projection, const nn::Linear& patch_projection,
                       const Var& global, const Var& patches) {
  if (global.cols() != patches.cols()) throw DimensionMismatch("heatmap: widths differ");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(global_projection.out_features()));
  Var g = global_projection(global);
  Var p = patch_projection(patches);
  return ad::scale(ad::transpose(ad::matmul(p, ad::transpose(g))), inv_sqrt_d);
}

/// Spatial-dynamics branch: per-frame heatmaps, a per-frame projection of the
/// flattened map, a transformer encoder over time, mean pooling, and the
/// similarity-structure consistency loss against dynamic queries.
class SpatialDynamicInjector {
 public:
  SpatialDynamicInjector() = default;
  SpatialDynamicInjector(nn::ParameterSet& params, const nn::TransformerOptions& options,
                         Index grid_h, Index grid_w, Rng& rng)
      : grid_h_(grid_h),
        grid_w_(grid_w),
        global_projection_(params, "sd.global_projection", nn::ParamGroup::injection,
                           options.dim, options.dim, rng),
        patch_projection_(params, "sd.patch_projection", nn::ParamGroup::injection, options.dim,
                          options.dim, rng),
        flatten_projection_(params, "sd.flatten_projection", nn::ParamGroup::injection,
                            grid_h * grid_w, options.dim, rng),
        sequence_model_(params, "sd.sequence_model", nn::ParamGroup::injection, options, rng),
        query_projection_(params, "sd.query_projection", nn::ParamGroup::injection, options.dim,
                          options.dim, rng) {}

  FrameHeatmap frame_heatmap(const Matrix& global, const Matrix& patches) const {
    if (patches.rows() != grid_h_ * grid_w_) throw DimensionMismatch("heatmap: grid size");
    return {heatmap_row(global_projection_, patch_projection_, ad::constant(global),
                        ad::constant(patches)),
            grid_h_, grid_w_};
  }

  /// All heatmaps of a video stacked as L x (H*W), computed in one pass.
  Var video_heatmaps(const FrameFeatures& frames) const {
    if (frames.grid_h != grid_h_ || frames.grid_w != grid_w_) {
      throw DimensionMismatch("heatmaps: feature grid differs from configured grid");
    }
    const Index cells = grid_h_ * grid_w_;
    const Index frames_n = frames.num_frames();
    Matrix stacked(frames_n * cells, frames.dim());
    for (Index i = 0; i < frames_n; ++i) {
      stacked.middleRows(i * cells, cells) = frames.patches[static_cast<std::size_t>(i)];
    }
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(global_projection_.out_features()));
    Var g = global_projection_(ad::constant(frames.global));
    Var p = patch_projection_(ad::constant(std::move(stacked)));
    std::vector<Index> owner(static_cast<std::size_t>(frames_n * cells));
    for (Index r = 0; r < frames_n * cells; ++r) owner[static_cast<std::size_t>(r)] = r / cells;
    Var g_expanded = ad::gather_rows(g, std::move(owner));
    Var dots = ad::row_sums(ad::mul(g_expanded, p));
    return ad::scale(ad::reshape(dots, frames_n, cells), inv_sqrt_d);
  }

  /// heatmaps: L x (H*W) -> 1 x D.
  DynamicFeature dynamic_feature(const Var& heatmaps) const {
    if (heatmaps.rows() < 1) throw DimensionMismatch("dynamic_feature: no heatmaps");
    Var per_frame = flatten_projection_(heatmaps);
    return {ad::mean_rows(sequence_model_(per_frame))};
  }

  DynamicFeature dynamic_feature(const std::vector<FrameHeatmap>& maps) const {
    if (maps.empty()) throw DimensionMismatch("dynamic_feature: no heatmaps");
    std::vector<Var> rows;
    for (const auto& m : maps) {
      if (m.grid_h != maps.front().grid_h || m.grid_w != maps.front().grid_w) {
        throw DimensionMismatch("dynamic_feature: heatmap shapes differ");
      }
      rows.push_back(m.values);
    }
    return dynamic_feature(rows.size() == 1 ? rows.front() : ad::concat_rows(rows));
  }

  DynamicFeature dynamic_feature(const FrameFeatures& frames) const {
    return dynamic_feature(video_heatmaps(frames));
  }

  /// (cos(m_a, m_b) - cos(FC(q_a), FC(q_b)))^2.
  Var sd_loss(const DynamicFeature& a, const DynamicFeature& b, const TextEmbedding& qa,
              const TextEmbedding& qb) const {
    if (qa.kind != SourceKind::dynamic_query || qb.kind != SourceKind::dynamic_query) {
      throw Error("sd_loss expects dynamic-query embeddings");
    }
    Var ev = ad::cosine_rows(a.vector, b.vector);
    Var eq = ad::cosine_rows(query_projection_(qa.vector), query_projection_(qb.vector));
    return ad::square(ad::sub(ev, eq));
  }

  /// Batched pairwise form: dynamics (k x D) and dynamic-query embeddings
  /// (k x D) for the k injectable samples of a batch of n. Returns
  /// (1/n^2) sum_i sum_j sd_loss(i, j), diagonal included.
  Var batch_sd_loss(const Var& dynamics, const Var& dynamic_queries, Index batch_size) const {
    if (dynamics.rows() != dynamic_queries.rows()) throw DimensionMismatch("batch_sd_loss");
    Var mv = ad::normalize_rows(dynamics);
    Var mq = ad::normalize_rows(query_projection_(dynamic_queries));
    Var diff = ad::sub(ad::matmul(mv, ad::transpose(mv)), ad::matmul(mq, ad::transpose(mq)));
    const double n = static_cast<double>(batch_size);
    return ad::scale(ad::sum(ad::square(diff)), 1.0 / (n * n));
  }

  Index grid_h() const { return grid_h_; }
  Index grid_w() const { return grid_w_; }
  nn::Linear& global_projection() { return global_projection_; }
  nn::Linear& patch_projection() { return patch_projection_; }
  nn::Linear& flatten_projection() { return flatten_projection_; }
  nn::TransformerEncoderLayer& sequence_model() { return sequence_model_; }
  nn::Linear& query_projection() { return query_projection_; }

 private:
  Index grid_h_ = 0;
  Index grid_w_ = 0;
  nn::Linear global_projection_;
  nn::Linear patch_projection_;
  nn::Linear flatten_projection_;
  nn::TransformerEncoderLayer sequence_model_;
  nn::Linear query_projection_;
};

}  // namespace vdi
