#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "vdi/inference.hpp"
#include "vdi/model.hpp"

namespace vdi {

/// Batch loss and its four weighted terms. Each term is already averaged the
/// way the total uses it: iou, cl and vc are sums over samples divided by n,
/// sd is the pairwise double sum divided by n^2. A term whose weight is zero
/// is not computed and reads 0.
struct LossBreakdown {
  Var total;
  double iou = 0.0;
  double cl = 0.0;
  double vc = 0.0;
  double sd = 0.0;
  std::size_t batch_size = 0;
  /// Samples that had both masked queries and so fed vc and sd.
  std::size_t injectable = 0;
};

/// Weighted training objective over one batch.
inline LossBreakdown total_loss(const Model& model, const std::vector<const Sample*>& batch,
                                const TrainConfig& cfg) {
  if (batch.empty()) throw Error("total_loss: empty batch");
  const auto n = static_cast<Index>(batch.size());
  const double inv_n = 1.0 / static_cast<double>(n);
  const auto& head = model.head();
  const auto& text = model.text_encoder();
  const auto& mc = model.config();

  LossBreakdown out;
  out.batch_size = batch.size();
  std::vector<Var> terms;

  if (cfg.lambda_iou > 0.0 || cfg.lambda_cl > 0.0) {
    std::vector<SegmentFeatureMap> maps;
    std::vector<Var> queries;
    for (const Sample* s : batch) {
      maps.push_back(head.build_from_pooled(*s->pooled));
      queries.push_back(text.encode_text(s->query.tokens, SourceKind::full).vector);
    }
    if (cfg.lambda_iou > 0.0) {
      std::vector<Var> per_sample;
      for (Index b = 0; b < n; ++b) {
        const auto& s = *batch[static_cast<std::size_t>(b)];
        per_sample.push_back(iou_loss(s.labels, head.iou_cosines(queries[static_cast<std::size_t>(b)],
                                                                 maps[static_cast<std::size_t>(b)]),
                                      mc.sigma));
      }
      Var iou = ad::scale(ad::sum(ad::concat_rows(per_sample)), inv_n);
      out.iou = iou.item();
      terms.push_back(ad::scale(iou, cfg.lambda_iou));
    }
    if (cfg.lambda_cl > 0.0) {
      std::vector<Var> moments, cl_queries, positives;
      std::vector<Index> positive_index;
      for (Index b = 0; b < n; ++b) {
        const auto& s = *batch[static_cast<std::size_t>(b)];
        Var m = head.cl_moments(maps[static_cast<std::size_t>(b)]);
        const Index p = valid_cell_index(mc.num_frames, s.positive_cell.first, s.positive_cell.second);
        moments.push_back(m);
        positive_index.push_back(p);
        positives.push_back(ad::slice_rows(m, p, 1));
        cl_queries.push_back(head.cl_query(queries[static_cast<std::size_t>(b)]));
      }
      Var all_positives = n > 1 ? ad::concat_rows(positives) : positives.front();
      Var all_queries = n > 1 ? ad::concat_rows(cl_queries) : cl_queries.front();
      std::vector<Var> per_sample;
      for (Index b = 0; b < n; ++b) {
        const auto bs = static_cast<std::size_t>(b);
        std::vector<Index> same_video, others;
        for (Index r = 0; r < moments[bs].rows(); ++r) {
          if (r != positive_index[bs]) same_video.push_back(r);
        }
        for (Index o = 0; o < n; ++o) {
          if (o != b) others.push_back(o);
        }
        std::vector<Var> moment_negs;
        if (!same_video.empty()) moment_negs.push_back(ad::gather_rows(moments[bs], same_video));
        if (!others.empty()) moment_negs.push_back(ad::gather_rows(all_positives, others));
        NegativeSets negs;
        negs.temperature = mc.tau;
        if (!moment_negs.empty()) {
          negs.moment_negatives =
              moment_negs.size() == 1 ? moment_negs.front() : ad::concat_rows(moment_negs);
        }
        if (!others.empty()) negs.query_negatives = ad::gather_rows(all_queries, others);
        per_sample.push_back(contrastive_loss(positives[bs], cl_queries[bs], negs));
      }
      Var cl = ad::scale(ad::sum(ad::concat_rows(per_sample)), inv_n);
      out.cl = cl.item();
      terms.push_back(ad::scale(cl, cfg.lambda_cl));
    }
  }

  if (cfg.lambda_vc > 0.0 || cfg.lambda_sd > 0.0) {
    std::vector<const Sample*> injectable;
    for (const Sample* s : batch) {
      if (s->masked) injectable.push_back(s);
    }
    out.injectable = injectable.size();
    if (!injectable.empty()) {
      std::vector<TextEmbedding> dynamic_queries;
      for (const Sample* s : injectable) {
        dynamic_queries.push_back(text.encode_text(s->masked->dynamic_query, SourceKind::dynamic_query));
      }
      if (cfg.lambda_vc > 0.0) {
        const auto& vc_module = model.visual_context();
        std::vector<Var> per_sample;
        for (std::size_t k = 0; k < injectable.size(); ++k) {
          const Sample& s = *injectable[k];
          const TextEmbedding stat = text.encode_text(s.masked->static_query, SourceKind::static_query);
          per_sample.push_back(
              vc_module.loss(dynamic_queries[k], vc_module.context_feature(stat, *s.features)));
        }
        Var vc = ad::scale(ad::sum(per_sample.size() == 1 ? per_sample.front()
                                                          : ad::concat_rows(per_sample)),
                           inv_n);
        out.vc = vc.item();
        terms.push_back(ad::scale(vc, cfg.lambda_vc));
      }
      if (cfg.lambda_sd > 0.0) {
        const auto& sd_module = model.spatial_dynamic();
        std::vector<Var> dynamics, dq;
        for (std::size_t k = 0; k < injectable.size(); ++k) {
          dynamics.push_back(sd_module.dynamic_feature(*injectable[k]->features).vector);
          dq.push_back(dynamic_queries[k].vector);
        }
        Var sd = sd_module.batch_sd_loss(dynamics.size() == 1 ? dynamics.front() : ad::concat_rows(dynamics),
                                         dq.size() == 1 ? dq.front() : ad::concat_rows(dq), n);
        out.sd = sd.item();
        terms.push_back(ad::scale(sd, cfg.lambda_sd));
      }
    }
  }

  if (terms.empty()) {
    out.total = Var::scalar(0.0);
  } else {
    out.total = terms.front();
    for (std::size_t k = 1; k < terms.size(); ++k) out.total = ad::add(out.total, terms[k]);
  }
  return out;
}

/// Decoupled-weight-decay Adam. The text group runs at base_lr * ratio and
/// everything else at base_lr. Parameters without a gradient this step are
/// left untouched, decay included.
class AdamW {
 public:
  struct Options {
    double base_lr = 1e-4;
    double text_lr_ratio = 0.1;
    double weight_decay = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  AdamW(nn::ParameterSet& params, Options options) : params_(&params), options_(options) {
    for (const auto& p : params.all()) {
      first_.emplace(p.name, Matrix::Zero(p.var.rows(), p.var.cols()));
      second_.emplace(p.name, Matrix::Zero(p.var.rows(), p.var.cols()));
      steps_.emplace(p.name, 0);
    }
  }

  double learning_rate(nn::ParamGroup group) const {
    return group == nn::ParamGroup::text ? options_.base_lr * options_.text_lr_ratio
                                         : options_.base_lr;
  }

  void step() {
    for (auto& p : params_->all()) {
      if (!p.var.has_grad()) continue;
      const Matrix g = p.var.grad();
      Matrix& m = first_.at(p.name);
      Matrix& v = second_.at(p.name);
      const int t = ++steps_.at(p.name);
      m = options_.beta1 * m + (1.0 - options_.beta1) * g;
      v = options_.beta2 * v + (1.0 - options_.beta2) * g.cwiseProduct(g);
      const double c1 = 1.0 - std::pow(options_.beta1, t);
      const double c2 = 1.0 - std::pow(options_.beta2, t);
      const double lr = learning_rate(p.group);
      Matrix& w = p.var.mutable_value();
      w *= 1.0 - lr * options_.weight_decay;
      w.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + options_.eps);
    }
  }

  const Options& options() const { return options_; }

 private:
  nn::ParameterSet* params_;
  Options options_;
  std::map<std::string, Matrix> first_;
  std::map<std::string, Matrix> second_;
  std::map<std::string, int> steps_;
};

/// Shuffled batches covering every sample once. A trailing batch of one is
/// folded into the batch before it so pairwise terms always see pairs.
inline std::vector<std::vector<const Sample*>> make_batches(const std::vector<Sample>& samples,
                                                            std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> order(samples.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  rng.shuffle(order.begin(), order.end());
  std::vector<std::vector<const Sample*>> batches;
  for (std::size_t k = 0; k < order.size(); k += batch_size) {
    std::vector<const Sample*> b;
    for (std::size_t r = k; r < std::min(order.size(), k + batch_size); ++r) {
      b.push_back(&samples[order[r]]);
    }
    batches.push_back(std::move(b));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  double iou = 0.0;
  double cl = 0.0;
  double vc = 0.0;
  double sd = 0.0;
  EvalReport validation;
  bool improved = false;
};

struct TrainState {
  int epoch = 0;
  int best_epoch = 0;
  double best_validation_metric = -1.0;  // R@1,IoU=0.5
  double best_validation_miou = -1.0;
  std::vector<EpochRecord> history;
  std::map<std::string, Matrix> best_snapshot;
  std::string rng_state;

  std::vector<double> loss_curve() const {
    std::vector<double> out;
    for (const auto& e : history) out.push_back(e.mean_loss);
    return out;
  }
};

/// Called after every epoch; return false to stop training.
using EpochCallback = std::function<bool(const EpochRecord&)>;

/// Trains `model` on `train`, validating on `val` after every epoch. Stops
/// once R@1,IoU=0.5 on `val` has failed to improve for `patience`
/// consecutive evaluations (mIoU breaks ties), or after max_epochs, then
/// restores the best weights.
inline TrainState fit(Model& model, const std::vector<Sample>& train,
                      const std::vector<Sample>& val, const TrainConfig& cfg,
                      const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train.empty() || val.empty()) throw ConfigError("fit: training and validation sets must be non-empty");
  AdamW optimizer(model.params(), {cfg.base_lr, cfg.text_lr_ratio, cfg.weight_decay});
  Rng rng(cfg.seed);
  TrainState state;
  int stale = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    const auto batches = make_batches(train, cfg.batch_size, rng);
    for (const auto& batch : batches) {
      model.params().zero_grad();
      LossBreakdown loss = total_loss(model, batch, cfg);
      if (loss.total.requires_grad()) loss.total.backward();
      optimizer.step();
      rec.mean_loss += loss.total.item();
      rec.iou += loss.iou;
      rec.cl += loss.cl;
      rec.vc += loss.vc;
      rec.sd += loss.sd;
    }
    const double nb = static_cast<double>(batches.size());
    rec.mean_loss /= nb;
    rec.iou /= nb;
    rec.cl /= nb;
    rec.vc /= nb;
    rec.sd /= nb;
    model.params().zero_grad();

    rec.validation = evaluate_samples(model, val);
    const double r1 = rec.validation.recall_at(1, 0.5);
    const double miou = rec.validation.miou;
    rec.improved = r1 > state.best_validation_metric ||
                   (r1 == state.best_validation_metric && miou > state.best_validation_miou);
    if (rec.improved) {
      state.best_validation_metric = r1;
      state.best_validation_miou = miou;
      state.best_epoch = epoch;
      state.best_snapshot = model.params().snapshot();
      stale = 0;
    } else {
      ++stale;
    }
    state.epoch = epoch;
    state.history.push_back(rec);
    if (on_epoch && !on_epoch(rec)) break;
    if (stale >= cfg.patience) break;
  }
  model.params().restore(state.best_snapshot);
  state.rng_state = rng.state();
  return state;
}

}  // namespace vdi
