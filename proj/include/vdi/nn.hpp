#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "vdi/autodiff.hpp"
#include "vdi/random.hpp"

namespace vdi::nn {

using ad::Index;
using ad::Matrix;
using ad::Var;

/// Optimizer parameter groups. `text` is the text encoder (reduced learning
/// rate), `head` the retrieval model kept at inference, `injection` the
/// training-only modules dropped from inference artifacts.
enum class ParamGroup { text, head, injection };

inline std::string_view to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::text: return "text";
    case ParamGroup::head: return "head";
    case ParamGroup::injection: return "injection";
  }
  return "?";
}

inline ParamGroup param_group_from_string(std::string_view s) {
  if (s == "text") return ParamGroup::text;
  if (s == "head") return ParamGroup::head;
  if (s == "injection") return ParamGroup::injection;
  throw ConfigError("unknown parameter group '" + std::string(s) + "'");
}

struct NamedParameter {
  std::string name;
  ParamGroup group;
  Var var;
};

/// Ordered registry of trainable tensors. Registration order is stable, which
/// keeps optimizer state and checkpoints deterministic.
class ParameterSet {
 public:
  Var add(std::string name, ParamGroup group, Matrix init) {
    if (index_.count(name) != 0) throw ConfigError("duplicate parameter '" + name + "'");
    Var v(std::move(init), true);
    index_.emplace(name, params_.size());
    params_.push_back({std::move(name), group, v});
    return v;
  }

  std::vector<NamedParameter>& all() { return params_; }
  const std::vector<NamedParameter>& all() const { return params_; }

  Var find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("no parameter named '" + name + "'");
    return params_[it->second].var;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.var.value().size());
    return n;
  }

  /// Copies of every value, keyed by name.
  std::map<std::string, Matrix> snapshot() const {
    std::map<std::string, Matrix> out;
    for (const auto& p : params_) out.emplace(p.name, p.var.value());
    return out;
  }

  void restore(const std::map<std::string, Matrix>& values) {
    for (auto& p : params_) {
      auto it = values.find(p.name);
      if (it == values.end()) continue;
      if (it->second.rows() != p.var.rows() || it->second.cols() != p.var.cols()) {
        throw DimensionMismatch("restore: shape mismatch for '" + p.name + "'");
      }
      p.var.mutable_value() = it->second;
    }
  }

 private:
  std::vector<NamedParameter> params_;
  std::map<std::string, std::size_t> index_;
};

/// Uniform Glorot initialisation.
inline Matrix glorot(Index fan_in, Index fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix m(fan_in, fan_out);
  for (Index c = 0; c < fan_out; ++c) {
    for (Index r = 0; r < fan_in; ++r) m(r, c) = rng.uniform(-limit, limit);
  }
  return m;
}

/// y = x W + b, with W stored in x out.
class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet& params, const std::string& name, ParamGroup group, Index in, Index out,
         Rng& rng)
      : weight_(params.add(name + ".weight", group, glorot(in, out, rng))),
        bias_(params.add(name + ".bias", group, Matrix::Zero(1, out))) {}

  Var operator()(const Var& x) const { return ad::add_bias(ad::matmul(x, weight_), bias_); }

  Var& weight() { return weight_; }
  Var& bias() { return bias_; }
  Index in_features() const { return weight_.rows(); }
  Index out_features() const { return weight_.cols(); }

  /// Sets W = I and b = 0 (square layers only). Used by tests that need a
  /// transparent projection.
  void set_identity() {
    weight_.mutable_value() = Matrix::Identity(weight_.rows(), weight_.cols());
    bias_.mutable_value().setZero();
  }

  void set_zero() {
    weight_.mutable_value().setZero();
    bias_.mutable_value().setZero();
  }

 private:
  Var weight_;
  Var bias_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterSet& params, const std::string& name, ParamGroup group, Index dim)
      : gain_(params.add(name + ".gain", group, Matrix::Ones(1, dim))),
        bias_(params.add(name + ".bias", group, Matrix::Zero(1, dim))) {}

  Var operator()(const Var& x) const { return ad::layer_norm_rows(x, gain_, bias_); }

 private:
  Var gain_;
  Var bias_;
};

/// Scaled dot-product attention with `heads` heads over model width D.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterSet& params, const std::string& name, ParamGroup group, Index dim,
                     Index heads, Rng& rng)
      : heads_(heads),
        query_(params, name + ".query", group, dim, dim, rng),
        key_(params, name + ".key", group, dim, dim, rng),
        value_(params, name + ".value", group, dim, dim, rng),
        output_(params, name + ".output", group, dim, dim, rng) {
    if (heads <= 0 || dim % heads != 0) {
      throw ConfigError("attention width " + std::to_string(dim) + " not divisible by " +
                        std::to_string(heads) + " heads");
    }
  }

  /// queries: Nq x D; keys, values: Nk x D. Returns Nq x D.
  Var operator()(const Var& queries, const Var& keys, const Var& values) const {
    const Index dim = query_.in_features();
    if (queries.cols() != dim || keys.cols() != dim || values.cols() != dim) {
      throw DimensionMismatch("attention input width");
    }
    const Index head_dim = dim / heads_;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    Var q = query_(queries);
    Var k = key_(keys);
    Var v = value_(values);
    std::vector<Var> outputs;
    outputs.reserve(static_cast<std::size_t>(heads_));
    for (Index h = 0; h < heads_; ++h) {
      Var qh = ad::slice_cols(q, h * head_dim, head_dim);
      Var kh = ad::slice_cols(k, h * head_dim, head_dim);
      Var vh = ad::slice_cols(v, h * head_dim, head_dim);
      Var weights = ad::softmax_rows(ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_scale));
      outputs.push_back(ad::matmul(weights, vh));
    }
    Var merged = heads_ == 1 ? outputs.front() : ad::concat_cols(outputs);
    return output_(merged);
  }

  Index heads() const { return heads_; }
  Linear& query() { return query_; }
  Linear& key() { return key_; }
  Linear& value() { return value_; }
  Linear& output() { return output_; }

 private:
  Index heads_ = 1;
  Linear query_, key_, value_, output_;
};

/// Two-layer position-wise MLP with ReLU.
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParameterSet& params, const std::string& name, ParamGroup group, Index dim,
              Index hidden, Rng& rng)
      : expand_(params, name + ".expand", group, dim, hidden, rng),
        contract_(params, name + ".contract", group, hidden, dim, rng) {}

  Var operator()(const Var& x) const { return contract_(ad::relu(expand_(x))); }

  Linear& expand() { return expand_; }
  Linear& contract() { return contract_; }

 private:
  Linear expand_, contract_;
};

struct TransformerOptions {
  Index dim = 64;
  Index heads = 4;
  Index ff_multiplier = 4;
  /// Length of the learned positional table.
  Index max_positions = 16;
  bool use_positions = true;
};

/// Learned positional embeddings added to a sequence (rows = positions).
class PositionalTable {
 public:
  PositionalTable() = default;
  PositionalTable(ParameterSet& params, const std::string& name, ParamGroup group,
                  Index max_positions, Index dim, Rng& rng) {
    Matrix init(max_positions, dim);
    for (Index c = 0; c < dim; ++c) {
      for (Index r = 0; r < max_positions; ++r) init(r, c) = 0.02 * rng.normal();
    }
    table_ = params.add(name, group, std::move(init));
  }

  Var apply(const Var& sequence) const {
    if (sequence.rows() > table_.rows()) {
      throw DimensionMismatch("sequence longer than positional table (" +
                              std::to_string(sequence.rows()) + " > " +
                              std::to_string(table_.rows()) + ")");
    }
    return ad::add(sequence, ad::slice_rows(table_, 0, sequence.rows()));
  }

  Var& table() { return table_; }

 private:
  Var table_;
};

/// Single pre-norm transformer decoder layer over a one-token target. The
/// target attends to the memory sequence (keys and values both come from
/// memory plus learned positions), followed by a feed-forward block. Both
/// sub-blocks are residual.
class TransformerDecoderLayer {
 public:
  TransformerDecoderLayer() = default;
  TransformerDecoderLayer(ParameterSet& params, const std::string& name, ParamGroup group,
                          const TransformerOptions& opt, Rng& rng)
      : options_(opt),
        norm_attention_(params, name + ".norm_attention", group, opt.dim),
        norm_ff_(params, name + ".norm_ff", group, opt.dim),
        attention_(params, name + ".cross_attention", group, opt.dim, opt.heads, rng),
        ff_(params, name + ".ff", group, opt.dim, opt.ff_multiplier * opt.dim, rng),
        positions_(params, name + ".positions", group, opt.max_positions, opt.dim, rng) {}

  /// target: Nt x D, memory: Nm x D.
  Var operator()(const Var& target, const Var& memory) const {
    Var kv = options_.use_positions ? positions_.apply(memory) : memory;
    Var h = ad::add(target, attention_(norm_attention_(target), kv, kv));
    return ad::add(h, ff_(norm_ff_(h)));
  }

  TransformerOptions& options() { return options_; }
  MultiHeadAttention& attention() { return attention_; }
  FeedForward& feed_forward() { return ff_; }
  PositionalTable& positions() { return positions_; }

 private:
  TransformerOptions options_;
  LayerNorm norm_attention_, norm_ff_;
  MultiHeadAttention attention_;
  FeedForward ff_;
  PositionalTable positions_;
};

/// Single pre-norm transformer encoder layer with learned positions.
class TransformerEncoderLayer {
 public:
  TransformerEncoderLayer() = default;
  TransformerEncoderLayer(ParameterSet& params, const std::string& name, ParamGroup group,
                          const TransformerOptions& opt, Rng& rng)
      : options_(opt),
        norm_attention_(params, name + ".norm_attention", group, opt.dim),
        norm_ff_(params, name + ".norm_ff", group, opt.dim),
        attention_(params, name + ".self_attention", group, opt.dim, opt.heads, rng),
        ff_(params, name + ".ff", group, opt.dim, opt.ff_multiplier * opt.dim, rng),
        positions_(params, name + ".positions", group, opt.max_positions, opt.dim, rng) {}

  /// sequence: L x D -> L x D.
  Var operator()(const Var& sequence) const {
    Var x = options_.use_positions ? positions_.apply(sequence) : sequence;
    Var normed = norm_attention_(x);
    Var h = ad::add(x, attention_(normed, normed, normed));
    return ad::add(h, ff_(norm_ff_(h)));
  }

  TransformerOptions& options() { return options_; }
  MultiHeadAttention& attention() { return attention_; }
  FeedForward& feed_forward() { return ff_; }
  PositionalTable& positions() { return positions_; }

 private:
  TransformerOptions options_;
  LayerNorm norm_attention_, norm_ff_;
  MultiHeadAttention attention_;
  FeedForward ff_;
  PositionalTable positions_;
};

}  // namespace vdi::nn
