#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vdi/vdi.hpp"

namespace vdi::testing {

struct GradientReport {
  std::string worst_name;
  double worst_error = 0.0;
  std::size_t blocks = 0;
};

/// Compares reverse-mode gradients of `loss` with central differences for
/// every named parameter. Error per block is ||a - n|| / max(||a||, ||n||);
/// blocks where both norms are below `floor` count as zero error.
inline GradientReport check_gradients(const std::function<Var()>& loss,
                                      std::vector<nn::NamedParameter> params, double h = 1e-6,
                                      double floor = 1e-9) {
  for (auto& p : params) p.var.zero_grad();
  loss().backward();
  GradientReport report;
  for (auto& p : params) {
    const Matrix analytic = p.var.grad();
    Matrix numeric(analytic.rows(), analytic.cols());
    Matrix& w = p.var.mutable_value();
    {
      ad::NoGradGuard no_grad;
      for (Index k = 0; k < w.size(); ++k) {
        const double saved = w.data()[k];
        w.data()[k] = saved + h;
        const double up = loss().item();
        w.data()[k] = saved - h;
        const double down = loss().item();
        w.data()[k] = saved;
        numeric.data()[k] = (up - down) / (2.0 * h);
      }
    }
    const double scale = std::max(analytic.norm(), numeric.norm());
    const double err = scale < floor ? 0.0 : (analytic - numeric).norm() / scale;
    ++report.blocks;
    if (err > report.worst_error || report.worst_name.empty()) {
      report.worst_error = err;
      report.worst_name = p.name;
    }
  }
  return report;
}

/// Same check for free-standing leaf variables.
inline double check_leaf_gradients(const std::function<Var()>& loss, std::vector<Var> leaves,
                                   double h = 1e-6) {
  std::vector<nn::NamedParameter> named;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    named.push_back({"leaf" + std::to_string(k), nn::ParamGroup::head, leaves[k]});
  }
  return check_gradients(loss, named, h).worst_error;
}

inline Matrix random_matrix(Index rows, Index cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Index k = 0; k < m.size(); ++k) m.data()[k] = scale * rng.uniform(-1.0, 1.0);
  return m;
}

/// Frame features with random global and patch vectors.
inline FrameFeatures random_frames(Index frames, Index dim, Index grid_h, Index grid_w, Rng& rng) {
  FrameFeatures f;
  f.grid_h = grid_h;
  f.grid_w = grid_w;
  f.global = random_matrix(frames, dim, rng);
  for (Index i = 0; i < frames; ++i) f.patches.push_back(random_matrix(grid_h * grid_w, dim, rng));
  return f;
}

/// Small synthetic sample set built through the public pipeline.
inline std::vector<Sample> synthetic_samples(const Model& model, std::size_t videos,
                                             std::uint64_t seed, bool novel = false,
                                             std::size_t first_query_id = 0) {
  SyntheticSpec spec;
  spec.num_videos = videos;
  spec.frames_per_video = model.config().num_frames;
  spec.grid = model.config().grid_h;
  spec.seed = seed;
  spec.novel_combinations = novel;
  spec.min_event_frames = std::min<Index>(2, spec.frames_per_video);
  spec.max_event_frames = std::max<Index>(spec.min_event_frames, spec.frames_per_video / 2);
  const auto ds = generate_synthetic(spec);
  const auto encoder = model.make_visual_encoder();
  return build_samples(ds.annotations, ds.videos, encoder, model, nullptr, first_query_id);
}

}  // namespace vdi::testing
