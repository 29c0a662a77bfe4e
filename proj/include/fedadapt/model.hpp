#pragma once

#include <compare>
#include <cstdint>
#include <span>
#include <vector>

#include "fedadapt/nn.hpp"
#include "fedadapt/tensor.hpp"

namespace fedadapt {

struct ModelSpec {
  std::size_t layers = 4;    // D
  std::size_t hidden = 32;   // n
  std::size_t heads = 2;
  std::size_t ffn_dim = 0;   // 0 means 4 * hidden
  std::size_t vocab = 64;
  std::size_t seqlen = 8;
  std::size_t num_labels = 4;
  Activation activation = Activation::relu;
  double ln_eps = 1e-12;

  std::size_t ffn() const { return ffn_dim ? ffn_dim : 4 * hidden; }
  /// Throws ConfigError naming the offending field.
  void validate() const;
  bool operator==(const ModelSpec&) const = default;
};

/// (depth, width): adapters on the top `depth` layers, bottleneck `width`.
struct AdapterConfig {
  std::size_t depth = 0;
  std::size_t width = 0;
  auto operator<=>(const AdapterConfig&) const = default;
};

struct TransformerBlock {
  AttentionParams attn;
  Parameter ln1_gain, ln1_shift;
  Parameter ff1_w, ff1_b, ff2_w, ff2_b;
  Parameter ln2_gain, ln2_shift;

  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;
};

/// One bottleneck unit: h <- h + f(h W_down + b_down) W_up + b_up.
struct MetaAdapter {
  Parameter down_w, down_b, up_w, up_b;
  std::size_t width() const { return down_b.numel(); }
};

/// Meta-adapters of one layer, applied in sequence.
using AdapterStack = std::vector<MetaAdapter>;

enum class TrainingScope { adapters, full, layer_freeze };

struct TrainingPolicy {
  TrainingScope scope = TrainingScope::adapters;
  std::size_t frozen_layers = 0;  // layer_freeze only
  bool operator==(const TrainingPolicy&) const = default;
};

struct ModelState {
  ModelSpec spec;
  Parameter tok_emb, pos_emb;
  std::vector<TransformerBlock> blocks;   // blocks[j-1] is layer j
  std::vector<AdapterStack> adapters;     // adapters[j-1] follows layer j
  Parameter head_w, head_b;
  AdapterConfig config;
  /// Meta-adapter widths shared by every adapted layer; sums to config.width.
  std::vector<std::size_t> stack_layout;
  TrainingPolicy policy;

  /// Canonical order: embeddings, then per layer its block and adapters, then head.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::vector<Parameter*> trainable_parameters();

  /// 1-based index of the lowest layer carrying adapters; D + 1 if none.
  std::size_t lowest_adapted_layer() const;
  /// Largest boundary l such that layers 1..l (blocks and adapters) hold no
  /// trainable parameter. Embeddings are not considered.
  std::size_t frozen_prefix() const;
  bool embeddings_trainable() const { return tok_emb.trainable || pos_emb.trainable; }
};

/// Applies trainability flags for the policy. Backbone parameters keep their
/// values; only flags change.
void set_training_policy(ModelState& model, const TrainingPolicy& policy);

/// Random frozen backbone, N(0, 0.02) classifier, no adapters.
ModelState build_model(const ModelSpec& spec, std::uint64_t seed);

/// Row-major token ids [batch x seq].
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<int> ids;
};

/// Layer-0 activations: token embedding + positional embedding.
Tensor embed(const ModelState& model, const TokenBatch& tokens);

/// Runs layers from+1..to (with their adapters) without recording a tape.
Tensor forward_layers(const ModelState& model, Tensor act, std::size_t from, std::size_t to);

/// Logits [B x num_labels].
Tensor forward(const ModelState& model, const TokenBatch& tokens);

/// Logits from the layer-`boundary` output. Requires boundary <= frozen_prefix().
Tensor forward_from_boundary(const ModelState& model, std::size_t boundary,
                             const Tensor& activations);

/// Forward from the boundary with a tape, cross-entropy, then backward.
/// Accumulates gradients of trainable parameters and returns the loss.
/// When d_boundary is non-null it receives the gradient at the boundary.
double backprop_from_boundary(ModelState& model, std::size_t boundary,
                              const Tensor& activations, std::span<const int> labels,
                              Tensor* d_boundary = nullptr);

/// Full path from tokens, including embedding gradients when trainable.
double backprop(ModelState& model, const TokenBatch& tokens, std::span<const int> labels);

/// Mean loss without gradients.
double loss_only(const ModelState& model, const TokenBatch& tokens, std::span<const int> labels);

struct Sample {
  std::vector<int> tokens;
  int label = 0;
  bool operator==(const Sample&) const = default;
};

TokenBatch make_batch(std::span<const Sample> samples);
std::vector<int> batch_labels(std::span<const Sample> samples);

/// Fraction of samples whose argmax logit (lowest index on ties) equals the
/// label. Throws EvaluationError on an empty shard.
double evaluate(const ModelState& model, std::span<const Sample> samples,
                std::size_t batch_size = 64);

/// Same, starting from precomputed layer-`boundary` activations of every
/// sample, [N x S x n].
double evaluate_from_boundary(const ModelState& model, std::size_t boundary,
                              const Tensor& activations, std::span<const int> labels,
                              std::size_t batch_size = 64);

/// Closed-form parameter count of one transformer block.
std::size_t block_param_count(const ModelSpec& spec);
/// Embeddings + blocks (no head, no adapters).
std::size_t backbone_param_count(const ModelSpec& spec);

}  // namespace fedadapt
