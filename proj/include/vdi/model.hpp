#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "vdi/data_io.hpp"
#include "vdi/encoders.hpp"
#include "vdi/feature_cache.hpp"
#include "vdi/moment_head.hpp"
#include "vdi/nn.hpp"
#include "vdi/spatial_dynamic.hpp"
#include "vdi/text_pipeline.hpp"
#include "vdi/visual_context.hpp"

namespace vdi {

struct ModelConfig {
  Index dim = 64;
  Index num_frames = 16;
  Index heads = 4;
  Index ff_multiplier = 4;
  Index grid_h = 4;
  Index grid_w = 4;
  double tau = 0.1;
  double sigma = 0.1;
  std::uint64_t text_seed = 17;
  std::uint64_t visual_seed = 7;
  std::uint64_t init_seed = 0;
  std::string mask_token{text::kDefaultMaskToken};
  bool use_positions = true;

  void validate() const {
    if (dim < 1 || num_frames < 1 || heads < 1 || ff_multiplier < 1 || grid_h < 1 || grid_w < 1) {
      throw ConfigError("model config: sizes must be positive");
    }
    if (dim % heads != 0) throw ConfigError("model config: dim must be divisible by heads");
    if (!(tau > 0.0) || !(sigma > 0.0)) throw ConfigError("model config: tau and sigma must be positive");
    if (mask_token.empty()) throw ConfigError("model config: empty mask token");
  }

  nn::TransformerOptions transformer() const {
    return {dim, heads, ff_multiplier, num_frames, use_positions};
  }
};

struct TrainConfig {
  double lambda_iou = 1.0;
  double lambda_cl = 1.0;
  double lambda_vc = 0.5;
  double lambda_sd = 0.01;
  double base_lr = 1e-4;
  double text_lr_ratio = 0.1;
  double weight_decay = 1e-2;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  int max_epochs = 50;
  int patience = 3;

  void validate() const {
    if (lambda_iou < 0 || lambda_cl < 0 || lambda_vc < 0 || lambda_sd < 0) {
      throw ConfigError("train config: loss weights must be non-negative");
    }
    if (!(text_lr_ratio > 0.0 && text_lr_ratio <= 1.0)) {
      throw ConfigError("train config: text_lr_ratio must lie in (0, 1]");
    }
    if (!(base_lr > 0.0)) throw ConfigError("train config: base_lr must be positive");
    if (weight_decay < 0.0) throw ConfigError("train config: weight_decay must be non-negative");
    if (batch_size < 1) throw ConfigError("train config: batch_size must be positive");
    if (lambda_sd > 0.0 && batch_size < 2) {
      throw ConfigError("train config: batch_size >= 2 required when lambda_sd > 0");
    }
    if (max_epochs < 1) throw ConfigError("train config: max_epochs must be positive");
    if (patience < 0) throw ConfigError("train config: patience must be non-negative");
  }
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"dim", c.dim},           {"num_frames", c.num_frames}, {"heads", c.heads},
          {"ff_multiplier", c.ff_multiplier}, {"grid_h", c.grid_h}, {"grid_w", c.grid_w},
          {"tau", c.tau},           {"sigma", c.sigma},           {"text_seed", c.text_seed},
          {"visual_seed", c.visual_seed}, {"init_seed", c.init_seed},
          {"mask_token", c.mask_token}, {"use_positions", c.use_positions}};
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"lambda_iou", c.lambda_iou}, {"lambda_cl", c.lambda_cl},   {"lambda_vc", c.lambda_vc},
          {"lambda_sd", c.lambda_sd},   {"base_lr", c.base_lr},       {"text_lr_ratio", c.text_lr_ratio},
          {"weight_decay", c.weight_decay}, {"batch_size", c.batch_size}, {"seed", c.seed},
          {"max_epochs", c.max_epochs}, {"patience", c.patience}};
}

/// Applies a flat JSON object whose keys are ModelConfig and/or TrainConfig
/// field names. Unknown keys and wrongly typed values raise ConfigError.
inline void apply_config(const nlohmann::json& j, ModelConfig* model, TrainConfig* train) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const auto model_keys = to_json(ModelConfig{});
  const auto train_keys = to_json(TrainConfig{});
  nlohmann::json m = model ? to_json(*model) : model_keys;
  nlohmann::json t = train ? to_json(*train) : train_keys;
  for (const auto& [key, value] : j.items()) {
    if (model && model_keys.contains(key)) {
      m[key] = value;
    } else if (train && train_keys.contains(key)) {
      t[key] = value;
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  try {
    if (model) {
      ModelConfig c;
      c.dim = m.at("dim").get<Index>();
      c.num_frames = m.at("num_frames").get<Index>();
      c.heads = m.at("heads").get<Index>();
      c.ff_multiplier = m.at("ff_multiplier").get<Index>();
      c.grid_h = m.at("grid_h").get<Index>();
      c.grid_w = m.at("grid_w").get<Index>();
      c.tau = m.at("tau").get<double>();
      c.sigma = m.at("sigma").get<double>();
      c.text_seed = m.at("text_seed").get<std::uint64_t>();
      c.visual_seed = m.at("visual_seed").get<std::uint64_t>();
      c.init_seed = m.at("init_seed").get<std::uint64_t>();
      c.mask_token = m.at("mask_token").get<std::string>();
      c.use_positions = m.at("use_positions").get<bool>();
      *model = c;
    }
    if (train) {
      TrainConfig c;
      c.lambda_iou = t.at("lambda_iou").get<double>();
      c.lambda_cl = t.at("lambda_cl").get<double>();
      c.lambda_vc = t.at("lambda_vc").get<double>();
      c.lambda_sd = t.at("lambda_sd").get<double>();
      c.base_lr = t.at("base_lr").get<double>();
      c.text_lr_ratio = t.at("text_lr_ratio").get<double>();
      c.weight_decay = t.at("weight_decay").get<double>();
      c.batch_size = t.at("batch_size").get<std::size_t>();
      c.seed = t.at("seed").get<std::uint64_t>();
      c.max_epochs = t.at("max_epochs").get<int>();
      c.patience = t.at("patience").get<int>();
      *train = c;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
}

/// Text encoder, retrieval head and the two training-only injection modules,
/// all registered in one ParameterSet.
class Model {
 public:
  explicit Model(const ModelConfig& config)
      : config_((config.validate(), config)),
        chunker_(std::make_shared<text::RuleBasedChunker>()) {
    Rng rng(hash_combine(config.init_seed, 0x766469ULL));
    text_ = std::make_unique<StubTextEncoder>(params_, config.text_seed, config.dim, rng);
    head_ = MomentHead(params_, config.dim, config.num_frames, rng);
    vc_ = VisualContextInjector(params_, config.transformer(), rng);
    sd_ = SpatialDynamicInjector(params_, config.transformer(), config.grid_h, config.grid_w, rng);
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }
  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }
  const TextEncoder& text_encoder() const { return *text_; }
  StubTextEncoder& stub_text_encoder() { return *text_; }
  MomentHead& head() { return head_; }
  const MomentHead& head() const { return head_; }
  VisualContextInjector& visual_context() { return vc_; }
  const VisualContextInjector& visual_context() const { return vc_; }
  SpatialDynamicInjector& spatial_dynamic() { return sd_; }
  const SpatialDynamicInjector& spatial_dynamic() const { return sd_; }
  const text::ChunkerBackend& chunker() const { return *chunker_; }
  void set_chunker(std::shared_ptr<const text::ChunkerBackend> c) { chunker_ = std::move(c); }

  /// Stub visual encoder matching this model's width and seed.
  StubVisualEncoder make_visual_encoder() const {
    return StubVisualEncoder(config_.visual_seed, config_.dim);
  }

 private:
  ModelConfig config_;
  nn::ParameterSet params_;
  std::unique_ptr<StubTextEncoder> text_;
  MomentHead head_;
  VisualContextInjector vc_;
  SpatialDynamicInjector sd_;
  std::shared_ptr<const text::ChunkerBackend> chunker_;
};

/// Everything the trainer needs for one annotation, precomputed once.
struct Sample {
  std::string video_id;
  std::size_t query_id = 0;
  std::shared_ptr<const FrameFeatures> features;
  std::shared_ptr<const Matrix> pooled;
  text::QuerySentence query;
  std::optional<text::MaskedQueryPair> masked;
  TimeGrid grid;
  Interval ground_truth;
  IoULabelMap labels;
  std::pair<Index, Index> positive_cell;
};

inline Sample make_sample(const TimedAnnotation& a, std::size_t query_id,
                          std::shared_ptr<const FrameFeatures> features,
                          std::shared_ptr<const Matrix> pooled, const text::ChunkerBackend& chunker,
                          const std::string& mask_token) {
  a.validate();
  Sample s;
  s.video_id = a.video_id;
  s.query_id = query_id;
  s.grid = {a.duration_s, features->num_frames()};
  s.features = std::move(features);
  s.pooled = pooled ? std::move(pooled)
                    : std::make_shared<const Matrix>(pool_segments(s.features->global));
  s.query = a.query;
  s.masked = text::try_masked_pair(a.query, chunker, mask_token);
  s.ground_truth = {a.start_s, a.end_s};
  s.labels = iou_label_map(a.start_s, a.end_s, s.grid);
  s.positive_cell = s.labels.best_cell();
  return s;
}

/// Frame features for `video` at `num_frames` sampled frames, through the
/// cache when one is given.
inline FrameFeatures encode_video(const Video& video, Index num_frames,
                                  const VisualEncoder& encoder, FeatureCache* cache = nullptr) {
  auto compute = [&] {
    std::vector<FramePayload> picked;
    for (std::size_t k : sample_frame_indices(video.frames.size(), static_cast<std::size_t>(num_frames))) {
      picked.push_back(video.frames[k]);
    }
    return encoder.encode_frames(picked);
  };
  if (cache == nullptr) return compute();
  return cache->get_or_compute(video.id, encoder.id(), num_frames, compute);
}

/// One Sample per annotation, query ids numbered from `first_query_id`. Each
/// referenced video is encoded and pooled once.
inline std::vector<Sample> build_samples(const std::vector<TimedAnnotation>& annotations,
                                         const std::vector<Video>& videos,
                                         const VisualEncoder& encoder, const Model& model,
                                         FeatureCache* cache = nullptr,
                                         std::size_t first_query_id = 0) {
  std::map<std::string, const Video*> by_id;
  for (const auto& v : videos) by_id[v.id] = &v;
  std::map<std::string, std::pair<std::shared_ptr<const FrameFeatures>, std::shared_ptr<const Matrix>>>
      encoded;
  std::vector<Sample> samples;
  samples.reserve(annotations.size());
  for (std::size_t k = 0; k < annotations.size(); ++k) {
    const auto& a = annotations[k];
    auto it = encoded.find(a.video_id);
    if (it == encoded.end()) {
      auto vit = by_id.find(a.video_id);
      if (vit == by_id.end()) throw Error("annotation refers to unknown video '" + a.video_id + "'");
      auto f = std::make_shared<const FrameFeatures>(
          encode_video(*vit->second, model.config().num_frames, encoder, cache));
      if (f->grid_h != model.config().grid_h || f->grid_w != model.config().grid_w) {
        throw DimensionMismatch("video '" + a.video_id + "' has a different patch grid");
      }
      auto pooled = std::make_shared<const Matrix>(pool_segments(f->global));
      it = encoded.emplace(a.video_id, std::make_pair(std::move(f), std::move(pooled))).first;
    }
    samples.push_back(make_sample(a, first_query_id + k, it->second.first, it->second.second,
                                  model.chunker(), model.config().mask_token));
  }
  return samples;
}

}  // namespace vdi
