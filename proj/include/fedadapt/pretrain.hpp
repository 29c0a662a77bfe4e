#pragma once

#include <cstdint>

#include "fedadapt/data.hpp"
#include "fedadapt/model.hpp"

namespace fedadapt {

/// Centralized pre-training of the backbone on a source task that shares the
/// downstream task's unshifted token features.
struct PretrainSpec {
  bool enabled = false;
  std::uint64_t seed = 1;
  std::size_t num_labels = 16;
  std::size_t samples = 4000;
  std::size_t epochs = 3;
  std::size_t batch_size = 8;
  double lr = 0.05;

  void validate() const;
  bool operator==(const PretrainSpec&) const = default;
};

/// Backbone initialized from `seed`, trained end to end on the source corpus,
/// then given a fresh N(0, 0.02) head for spec.num_labels classes. Every
/// parameter is frozen on return.
ModelState pretrain_backbone(const ModelSpec& spec, const SyntheticTaskSpec& task,
                             const PretrainSpec& pretrain);

/// Accuracy of the pre-training head on a held-out source corpus, for
/// diagnostics.
double pretrain_source_accuracy(const ModelSpec& spec, const SyntheticTaskSpec& task,
                                const PretrainSpec& pretrain);

}  // namespace fedadapt
