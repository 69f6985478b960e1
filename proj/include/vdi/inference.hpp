#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vdi/metrics.hpp"
#include "vdi/model.hpp"

namespace vdi {

/// Which sentence variant drives retrieval.
enum class QueryVariant { full, static_query, dynamic_query };

/// Fused score map and ranked segments for one sample. Only the text encoder
/// and the retrieval head run; the injection modules are never touched.
inline DecodedMoments decode_sample(const Model& model, const Sample& sample,
                                    const std::vector<std::string>& tokens) {
  ad::NoGradGuard no_grad;
  const auto& head = model.head();
  const SegmentFeatureMap map = head.build_from_pooled(*sample.pooled);
  const TextEmbedding q = model.text_encoder().encode_text(tokens, SourceKind::full);
  const double sigma = model.config().sigma;
  return fuse_and_decode(to_probabilities(head.iou_scores(q, map), sigma),
                         to_probabilities(head.cl_scores(q, map), sigma));
}

/// Tokens for `variant`, or nullopt when the sample has no masked pair.
inline std::optional<std::vector<std::string>> query_tokens(const Sample& sample,
                                                            QueryVariant variant) {
  switch (variant) {
    case QueryVariant::full: return sample.query.tokens;
    case QueryVariant::static_query:
      if (!sample.masked) return std::nullopt;
      return sample.masked->static_query;
    case QueryVariant::dynamic_query:
      if (!sample.masked) return std::nullopt;
      return sample.masked->dynamic_query;
  }
  return std::nullopt;
}

inline MomentPrediction predict(const Model& model, const Sample& sample,
                                QueryVariant variant = QueryVariant::full) {
  auto tokens = query_tokens(sample, variant);
  if (!tokens) throw EmptyContent("sample has no masked query pair");
  return to_prediction(decode_sample(model, sample, *tokens), sample.grid, sample.video_id,
                       sample.query_id);
}

inline std::vector<MomentPrediction> predict_all(const Model& model,
                                                 const std::vector<Sample>& samples) {
  std::vector<MomentPrediction> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(predict(model, s));
  return out;
}

inline std::vector<GroundTruth> ground_truths(const std::vector<Sample>& samples) {
  std::vector<GroundTruth> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({s.query_id, s.ground_truth});
  return out;
}

inline EvalReport evaluate_samples(const Model& model, const std::vector<Sample>& samples) {
  return evaluate(predict_all(model, samples), ground_truths(samples));
}

struct ProbeReport {
  EvalReport full;
  EvalReport static_query;
  EvalReport dynamic_query;
  /// Samples left out of both masked runs (no noun chunk, or chunks cover
  /// the whole sentence).
  std::size_t excluded = 0;
};

/// Evaluates the same samples with the full, static and dynamic query.
inline ProbeReport dynamics_probe(const Model& model, const std::vector<Sample>& samples) {
  ProbeReport r;
  r.full = evaluate_samples(model, samples);
  std::vector<MomentPrediction> stat, dyn;
  std::vector<GroundTruth> truths;
  for (const auto& s : samples) {
    if (!s.masked) {
      ++r.excluded;
      continue;
    }
    stat.push_back(predict(model, s, QueryVariant::static_query));
    dyn.push_back(predict(model, s, QueryVariant::dynamic_query));
    truths.push_back({s.query_id, s.ground_truth});
  }
  r.static_query = evaluate(stat, truths);
  r.dynamic_query = evaluate(dyn, truths);
  return r;
}

inline nlohmann::json to_json(const ProbeReport& r) {
  return {{"full", to_json(r.full)},
          {"static", to_json(r.static_query)},
          {"dynamic", to_json(r.dynamic_query)},
          {"excluded_static", r.excluded},
          {"excluded_dynamic", r.excluded}};
}

}  // namespace vdi
