#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "fedadapt/model.hpp"
#include "fedadapt/rng.hpp"

namespace fedadapt {

/// Token id 0 is reserved for the leading classification token.
inline constexpr int kClsToken = 0;

struct SyntheticTaskSpec {
  std::size_t vocab = 64;
  std::size_t seqlen = 8;
  std::size_t num_labels = 4;
  std::uint64_t teacher_seed = 1;
  std::size_t samples_per_label = 250;
  double noise = 0.0;
  /// Teacher feature dimension.
  std::size_t teacher_dim = 8;
  /// Sharpness of label-correlated token sampling.
  double affinity = 1.0;
  /// Fraction of token-feature variance replaced by fresh directions, so a
  /// backbone pre-trained on the source features sees a shifted domain.
  double shift = 0.0;

  void validate() const;
};

/// Hidden labeller: label = argmax over classes of mean token feature times W.
struct Teacher {
  std::size_t vocab = 0, dim = 0, num_labels = 0;
  std::vector<double> token_features;  // vocab x dim, row 0 (CLS) is zero
  std::vector<double> weights;         // dim x num_labels

  int predict(std::span<const int> tokens) const;
};

struct Dataset {
  std::vector<Sample> samples;
  std::size_t num_labels = 0;
  Teacher teacher;
};

/// samples_per_label sequences per class, each accepted only if the teacher
/// assigns that class; then exactly floor(noise * N) labels are flipped to
/// a different class. Token ids lie in [1, vocab) after the CLS token.
Dataset generate_task(const SyntheticTaskSpec& spec, SeededRng& rng);

struct Shard {
  std::size_t client_id = 0;
  std::vector<Sample> train;
  std::vector<Sample> test;
};

/// Source-domain token features: the unshifted features drawn from
/// teacher_seed, vocab x teacher_dim with row 0 zero.
std::vector<double> source_token_features(const SyntheticTaskSpec& spec);

/// `count` uniformly random sequences (drawn from `seed`) labelled by a
/// second linear teacher over the source features, with `num_labels` classes
/// and weights fixed by teacher_seed.
std::vector<Sample> generate_source_corpus(const SyntheticTaskSpec& spec, std::size_t num_labels,
                                           std::size_t count, std::uint64_t seed);

/// Equal-size client slices whose label mix follows a per-client
/// symmetric Dirichlet(a). Deterministic under rng.
std::vector<std::vector<Sample>> partition_noniid(std::span<const Sample> samples,
                                                  std::size_t num_labels,
                                                  std::size_t num_clients, double a,
                                                  SeededRng& rng);

/// Stratified split with floor((1 - ratio) * N) test samples.
Shard split_train_test(std::size_t client_id, std::vector<Sample> samples, double ratio,
                       SeededRng& rng);

std::vector<double> label_histogram(std::span<const Sample> samples, std::size_t num_labels);
double total_variation(std::span<const double> p, std::span<const double> q);

/// One JSON object per line: {"tokens": [...], "label": k}.
void write_samples_jsonl(std::ostream& out, std::span<const Sample> samples);
std::vector<Sample> read_samples_jsonl(std::istream& in);

}  // namespace fedadapt
