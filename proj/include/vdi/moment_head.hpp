#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vdi/autodiff.hpp"
#include "vdi/encoders.hpp"
#include "vdi/metrics.hpp"
#include "vdi/nn.hpp"

namespace vdi {

/// Maps proposal cell (i, j) to [i * step, (j + 1) * step) with
/// step = duration / L.
struct TimeGrid {
  double duration_s = 0.0;
  Index num_frames = 0;

  double step() const { return duration_s / static_cast<double>(num_frames); }
  Interval cell(Index i, Index j) const {
    const double s = step();
    return {static_cast<double>(i) * s, static_cast<double>(j + 1) * s};
  }
};

/// Valid proposal cells (j >= i) in row-major order.
inline std::vector<std::pair<Index, Index>> valid_cells(Index num_frames) {
  std::vector<std::pair<Index, Index>> cells;
  cells.reserve(static_cast<std::size_t>(num_frames * (num_frames + 1) / 2));
  for (Index i = 0; i < num_frames; ++i) {
    for (Index j = i; j < num_frames; ++j) cells.emplace_back(i, j);
  }
  return cells;
}

/// Position of cell (i, j), j >= i, within valid_cells().
inline Index valid_cell_index(Index num_frames, Index i, Index j) {
  // rows before i contribute L + (L-1) + ... + (L-i+1) cells
  return i * num_frames - i * (i - 1) / 2 + (j - i);
}

/// 2D segment feature map. Only valid cells are stored: `features` is
/// V x D with V = L(L+1)/2, rows ordered as valid_cells(L). Cells with j < i
/// do not exist in this representation.
struct SegmentFeatureMap {
  Var features;
  Index num_frames = 0;

  bool valid(Index i, Index j) const { return i >= 0 && j >= i && j < num_frames; }
  Index num_valid() const { return features.rows(); }
  Eigen::RowVectorXd at(Index i, Index j) const {
    return features.value().row(valid_cell_index(num_frames, i, j));
  }
};

enum class ScoreKind { iou, cl, fused };

/// L x L score map; invalid cells (j < i) hold -infinity.
struct ProposalScoreMap {
  Matrix scores;
  ScoreKind kind = ScoreKind::iou;

  Index num_frames() const { return scores.rows(); }
};

/// Soft IoU targets per cell; zero on invalid cells.
struct IoULabelMap {
  Matrix labels;

  /// Targets of valid cells in valid_cells() order (V x 1).
  Matrix valid_column() const {
    const Index l = labels.rows();
    Matrix col(l * (l + 1) / 2, 1);
    Index r = 0;
    for (const auto& [i, j] : valid_cells(l)) col(r++, 0) = labels(i, j);
    return col;
  }

  /// Cell with the largest label (first in row-major order on ties).
  std::pair<Index, Index> best_cell() const {
    std::pair<Index, Index> best{0, 0};
    double v = -1.0;
    for (const auto& [i, j] : valid_cells(labels.rows())) {
      if (labels(i, j) > v) {
        v = labels(i, j);
        best = {i, j};
      }
    }
    return best;
  }
};

/// Contrastive negatives in the shared projected space. Either set may be
/// empty (undefined Var).
struct NegativeSets {
  Var moment_negatives;  // k x D
  Var query_negatives;   // m x D
  double temperature = 0.1;
};

inline IoULabelMap iou_label_map(double gt_start, double gt_end, const TimeGrid& grid) {
  if (!(gt_end > gt_start)) {
    throw InvalidBoundary("ground truth end " + std::to_string(gt_end) +
                          " is not after start " + std::to_string(gt_start));
  }
  const Index l = grid.num_frames;
  IoULabelMap map{Matrix::Zero(l, l)};
  const Interval gt{gt_start, gt_end};
  for (const auto& [i, j] : valid_cells(l)) map.labels(i, j) = temporal_iou(grid.cell(i, j), gt);
  return map;
}

/// Mean BCE between sigmoid(cosine / sigma) and the IoU targets over valid
/// cells. `valid_scores` holds raw cosines (V x 1, valid_cells() order).
inline Var iou_loss(const IoULabelMap& labels, const Var& valid_scores, double sigma) {
  return ad::bce_with_logits_mean(ad::scale(valid_scores, 1.0 / sigma), labels.valid_column());
}

/// Plain-value overload on score maps already mapped into (0, 1).
inline double iou_loss(const IoULabelMap& labels, const ProposalScoreMap& probabilities) {
  const Index l = labels.labels.rows();
  if (probabilities.scores.rows() != l || probabilities.scores.cols() != l) {
    throw DimensionMismatch("iou_loss: map sizes");
  }
  double total = 0.0;
  const auto cells = valid_cells(l);
  for (const auto& [i, j] : cells) {
    const double p = probabilities.scores(i, j);
    const double y = labels.labels(i, j);
    total -= y * std::log(p) + (1.0 - y) * std::log1p(-p);
  }
  return total / static_cast<double>(cells.size());
}

/// -log p^m - log p^q with cosine / tau logits; the positive pair sits in
/// both denominators.
inline Var contrastive_loss(const Var& positive_moment, const Var& positive_query,
                            const NegativeSets& negatives) {
  if (!(negatives.temperature > 0.0)) throw ConfigError("contrastive temperature must be positive");
  const double inv_tau = 1.0 / negatives.temperature;
  auto term = [inv_tau](const Var& anchor, const Var& positive, const Var& negs) {
    Var candidates = negs.defined() && negs.rows() > 0 ? ad::concat_rows({positive, negs}) : positive;
    Var logits = ad::scale(ad::cosine_rows(candidates, anchor), inv_tau);
    return ad::sub(ad::logsumexp(logits), ad::element(logits, 0, 0));
  };
  return ad::add(term(positive_query, positive_moment, negatives.moment_negatives),
                 term(positive_moment, positive_query, negatives.query_negatives));
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// sigmoid(s / sigma) on valid cells; invalid cells keep -inf.
inline ProposalScoreMap to_probabilities(const ProposalScoreMap& cosines, double sigma) {
  ProposalScoreMap out = cosines;
  for (const auto& [i, j] : valid_cells(cosines.num_frames())) {
    out.scores(i, j) = sigmoid(cosines.scores(i, j) / sigma);
  }
  return out;
}

/// Start = row whose maximum over valid end indices is largest; end =
/// argmax within that row. First index wins ties.
inline std::pair<Index, Index> decode_boundary(const Matrix& fused) {
  const Index l = fused.rows();
  Index best_row = 0;
  double best_row_max = -std::numeric_limits<double>::infinity();
  for (Index i = 0; i < l; ++i) {
    double row_max = -std::numeric_limits<double>::infinity();
    for (Index j = i; j < l; ++j) row_max = std::max(row_max, fused(i, j));
    if (i == 0 || row_max > best_row_max) {
      best_row_max = row_max;
      best_row = i;
    }
  }
  Index best_col = best_row;
  for (Index j = best_row; j < l; ++j) {
    if (fused(best_row, j) > fused(best_row, best_col)) best_col = j;
  }
  return {best_row, best_col};
}

struct DecodedMoments {
  ProposalScoreMap fused;
  std::pair<Index, Index> top_cell;
  /// Every valid cell, best first (decoded cell leads).
  std::vector<std::pair<Index, Index>> ranked_cells;
};

/// Hadamard fusion of two probability maps followed by boundary decoding.
inline DecodedMoments fuse_and_decode(const ProposalScoreMap& iou_probabilities,
                                      const ProposalScoreMap& cl_probabilities) {
  const Index l = iou_probabilities.num_frames();
  if (cl_probabilities.num_frames() != l || iou_probabilities.scores.cols() != l ||
      cl_probabilities.scores.cols() != l) {
    throw DimensionMismatch("fuse_and_decode: map sizes");
  }
  DecodedMoments out;
  out.fused.kind = ScoreKind::fused;
  out.fused.scores = Matrix::Constant(l, l, -std::numeric_limits<double>::infinity());
  auto cells = valid_cells(l);
  for (const auto& [i, j] : cells) {
    out.fused.scores(i, j) = iou_probabilities.scores(i, j) * cl_probabilities.scores(i, j);
  }
  out.top_cell = decode_boundary(out.fused.scores);
  const auto& fused = out.fused.scores;
  std::stable_sort(cells.begin(), cells.end(), [&](const auto& a, const auto& b) {
    return fused(a.first, a.second) > fused(b.first, b.second);
  });
  auto top = std::find(cells.begin(), cells.end(), out.top_cell);
  std::rotate(cells.begin(), top, top + 1);
  out.ranked_cells = std::move(cells);
  return out;
}

inline MomentPrediction to_prediction(const DecodedMoments& decoded, const TimeGrid& grid,
                                      std::string video_id, std::size_t query_id) {
  MomentPrediction p{std::move(video_id), query_id, {}};
  p.segments.reserve(decoded.ranked_cells.size());
  for (const auto& [i, j] : decoded.ranked_cells) {
    const Interval t = grid.cell(i, j);
    p.segments.push_back({t.start, t.end, decoded.fused.scores(i, j)});
  }
  return p;
}

/// Mean-pools frame features over every valid segment [i..j].
/// global: L x D. Returns V x D in valid_cells() order.
inline Matrix pool_segments(const Matrix& global) {
  const Index l = global.rows();
  Matrix prefix = Matrix::Zero(l + 1, global.cols());
  for (Index i = 0; i < l; ++i) prefix.row(i + 1) = prefix.row(i) + global.row(i);
  Matrix out(l * (l + 1) / 2, global.cols());
  Index r = 0;
  for (const auto& [i, j] : valid_cells(l)) {
    out.row(r++) = (prefix.row(j + 1) - prefix.row(i)) / static_cast<double>(j - i + 1);
  }
  return out;
}

/// Retrieval head: segment pooling, a two-layer 3x3 convolution over the
/// proposal map (zero padding outside valid cells), and two pairs of
/// projections producing the IoU-supervised and contrastive score spaces.
class MomentHead {
 public:
  static constexpr Index kKernelTaps = 9;

  MomentHead() = default;
  MomentHead(nn::ParameterSet& params, Index dim, Index num_frames, Rng& rng)
      : dim_(dim), num_frames_(num_frames), taps_(conv_taps(num_frames)) {
    for (int layer = 0; layer < 2; ++layer) {
      const std::string name = "head.conv" + std::to_string(layer + 1);
      conv_weight_[layer] = params.add(name + ".weight", nn::ParamGroup::head,
                                       nn::glorot(kKernelTaps * dim, dim, rng));
      conv_bias_[layer] = params.add(name + ".bias", nn::ParamGroup::head, Matrix::Zero(1, dim));
    }
    iou_query_ = nn::Linear(params, "head.iou_query", nn::ParamGroup::head, dim, dim, rng);
    iou_moment_ = nn::Linear(params, "head.iou_moment", nn::ParamGroup::head, dim, dim, rng);
    cl_query_ = nn::Linear(params, "head.cl_query", nn::ParamGroup::head, dim, dim, rng);
    cl_moment_ = nn::Linear(params, "head.cl_moment", nn::ParamGroup::head, dim, dim, rng);
  }

  Index num_frames() const { return num_frames_; }
  Index dim() const { return dim_; }

  SegmentFeatureMap build_segment_map(const FrameFeatures& frames) const {
    return build_from_pooled(pool_segments(frames.global));
  }

  /// `pooled` is the output of pool_segments() for this head's L.
  SegmentFeatureMap build_from_pooled(const Matrix& pooled) const {
    if (pooled.rows() != num_frames_ * (num_frames_ + 1) / 2 || pooled.cols() != dim_) {
      throw DimensionMismatch("segment map: expected " + std::to_string(num_frames_) +
                              " frames of width " + std::to_string(dim_));
    }
    Var x = ad::constant(pooled);
    x = ad::relu(convolve(x, 0));
    x = convolve(x, 1);
    return {x, num_frames_};
  }

  /// Raw cosine of every valid cell against the query in the IoU space (V x 1).
  Var iou_cosines(const Var& query, const SegmentFeatureMap& map) const {
    return ad::cosine_rows(iou_moment_(map.features), iou_query_(query));
  }

  Var cl_moments(const SegmentFeatureMap& map) const { return cl_moment_(map.features); }
  Var cl_query(const Var& query) const { return cl_query_(query); }

  ProposalScoreMap iou_scores(const TextEmbedding& query, const SegmentFeatureMap& map) const {
    return scatter(iou_cosines(query.vector, map).value(), ScoreKind::iou);
  }

  ProposalScoreMap cl_scores(const TextEmbedding& query, const SegmentFeatureMap& map) const {
    return scatter(ad::cosine_rows(cl_moments(map), cl_query(query.vector)).value(), ScoreKind::cl);
  }

  /// Writes a V x 1 column of valid-cell scores into an L x L map.
  ProposalScoreMap scatter(const Matrix& column, ScoreKind kind) const {
    ProposalScoreMap m{Matrix::Constant(num_frames_, num_frames_,
                                        -std::numeric_limits<double>::infinity()),
                       kind};
    Index r = 0;
    for (const auto& [i, j] : valid_cells(num_frames_)) m.scores(i, j) = column(r++, 0);
    return m;
  }

  /// Centre tap = identity, other taps and biases zero, for both layers.
  void set_identity_convolution() {
    for (int layer = 0; layer < 2; ++layer) {
      Matrix w = Matrix::Zero(kKernelTaps * dim_, dim_);
      w.block(4 * dim_, 0, dim_, dim_).setIdentity();
      conv_weight_[layer].mutable_value() = w;
      conv_bias_[layer].mutable_value().setZero();
    }
  }

  nn::Linear& iou_query() { return iou_query_; }
  nn::Linear& iou_moment() { return iou_moment_; }
  nn::Linear& cl_query_projection() { return cl_query_; }
  nn::Linear& cl_moment_projection() { return cl_moment_; }

 private:
  /// For each valid cell, the valid-cell indices of its 3x3 neighbourhood
  /// (row-major taps), -1 outside the map or below the diagonal.
  static std::vector<Index> conv_taps(Index l) {
    std::vector<Index> taps;
    for (const auto& [i, j] : valid_cells(l)) {
      for (Index di = -1; di <= 1; ++di) {
        for (Index dj = -1; dj <= 1; ++dj) {
          const Index a = i + di, b = j + dj;
          const bool inside = a >= 0 && b >= 0 && a < l && b < l && b >= a;
          taps.push_back(inside ? valid_cell_index(l, a, b) : -1);
        }
      }
    }
    return taps;
  }

  Var convolve(const Var& x, int layer) const {
    Var columns = ad::gather_rows(x, taps_, kKernelTaps);
    return ad::add_bias(ad::matmul(columns, conv_weight_[layer]), conv_bias_[layer]);
  }

  Index dim_ = 0;
  Index num_frames_ = 0;
  std::vector<Index> taps_;
  Var conv_weight_[2];
  Var conv_bias_[2];
  nn::Linear iou_query_, iou_moment_, cl_query_, cl_moment_;
};

}  // namespace vdi
