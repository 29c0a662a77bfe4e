#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fedadapt/model.hpp"
#include "fedadapt/rng.hpp"

namespace fedadapt {

inline constexpr std::size_t kMinAdapterWidth = 8;
inline constexpr double kAdapterInitStd = 0.02;

/// 2mn + n + m: one adapter of bottleneck m on hidden size n, both biases.
std::size_t adapter_param_count(std::size_t m, std::size_t n);

/// Sum of numel over trainable parameter buffers.
std::size_t trainable_param_count(const ModelState& model);

/// Closed form d * (2mn + n + m) + n * labels (+ labels when with_head_bias).
std::size_t monolithic_trainable_count(std::size_t depth, std::size_t m, std::size_t n,
                                       std::size_t labels, bool with_head_bias = true);

/// Fresh meta-adapter: weights N(0, 0.02), biases zero, trainable.
MetaAdapter make_meta_adapter(std::size_t layer, std::size_t index, std::size_t hidden,
                              std::size_t width, SeededRng& rng);

/// Adapters on layers D-d+1..D, each a stack of width/width_step meta-adapters.
/// The model must not carry adapters yet. depth 0 records the width only.
ModelState insert_adapters(ModelState model, AdapterConfig config, std::size_t width_step,
                           SeededRng& rng);

/// Single adapter of the full width per layer.
ModelState insert_monolithic(ModelState model, AdapterConfig config, SeededRng& rng);

/// Adds fresh stacks (same layout) on the depth_step layers just below the
/// adapted range. Existing stacks are untouched.
ModelState deepen(ModelState model, std::size_t depth_step, SeededRng& rng);

/// Appends one meta-adapter of width_step to every adapted layer.
ModelState widen(ModelState model, std::size_t width_step, SeededRng& rng);

/// Trainable buffers (adapters + head, or whatever the policy marks
/// trainable) in canonical parameter order.
struct AdapterPayload {
  AdapterConfig config;
  std::vector<std::string> names;
  std::vector<std::vector<double>> buffers;

  std::size_t scalar_count() const;
  bool operator==(const AdapterPayload&) const = default;
};

AdapterPayload extract_payload(const ModelState& model);

/// Copies payload buffers into the model's trainable parameters. Throws
/// ProtocolError if names, sizes or the config disagree.
void apply_payload(ModelState& model, const AdapterPayload& payload);

}  // namespace fedadapt
