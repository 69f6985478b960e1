#pragma once

#include <string>

#include "vdi/autodiff.hpp"
#include "vdi/encoders.hpp"
#include "vdi/nn.hpp"

namespace vdi {

/// Static-query summary of the video frames (1 x D).
struct ContextFeature {
  Var vector;
};

/// Probes frame features with the static-query embedding through a
/// transformer decoder (query = static query, key = value = frames) and
/// pulls the projected dynamic-query embedding towards the result.
class VisualContextInjector {
 public:
  VisualContextInjector() = default;
  VisualContextInjector(nn::ParameterSet& params, const nn::TransformerOptions& options, Rng& rng)
      : decoder_(params, "vc.decoder", nn::ParamGroup::injection, options, rng),
        projection_(params, "vc.projection", nn::ParamGroup::injection, options.dim, options.dim,
                    rng) {}

  ContextFeature context_feature(const TextEmbedding& static_query,
                                 const FrameFeatures& frames) const {
    if (static_query.kind != SourceKind::static_query) {
      throw Error("context_feature expects a static-query embedding");
    }
    if (static_query.dim() != frames.dim()) throw DimensionMismatch("context_feature: width");
    return {decoder_(static_query.vector, ad::constant(frames.global))};
  }

  /// ||FC(x_qd) - ctx||^2.
  Var loss(const TextEmbedding& dynamic_query, const ContextFeature& ctx) const {
    return vc_loss(projection_, dynamic_query, ctx);
  }

  static Var vc_loss(const nn::Linear& projection, const TextEmbedding& dynamic_query,
                     const ContextFeature& ctx) {
    if (dynamic_query.kind != SourceKind::dynamic_query) {
      throw Error("vc_loss expects a dynamic-query embedding");
    }
    return ad::squared_norm(ad::sub(projection(dynamic_query.vector), ctx.vector));
  }

  nn::TransformerDecoderLayer& decoder() { return decoder_; }
  nn::Linear& projection() { return projection_; }

 private:
  nn::TransformerDecoderLayer decoder_;
  nn::Linear projection_;
};

}  // namespace vdi
