#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "fedadapt/model.hpp"

namespace fedadapt {

/// Boundary-layer activations of one local mini-batch.
struct CacheEntry {
  std::uint64_t batch_id = 0;
  std::size_t boundary = 0;        // l = D - depth_at_store
  std::size_t depth_at_store = 0;  // d_prev
  std::size_t round_stored = 0;
  Tensor activations;              // [B x S x n]
};

/// Per-client store. Owned and mutated by a single client worker.
class ActivationCache {
 public:
  const CacheEntry* find(std::uint64_t batch_id) const;
  void store(CacheEntry entry);
  void erase(std::uint64_t batch_id) { entries_.erase(batch_id); }
  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }
  /// Bytes held by stored activations (8 per scalar).
  std::size_t stored_bytes() const;
  /// Test hook: mutable access to an entry.
  CacheEntry* mutable_entry(std::uint64_t batch_id);

 private:
  std::map<std::uint64_t, CacheEntry> entries_;
};

/// Server-side record of dispatched depths per round and of each client's
/// last participation.
class DepthWatermark {
 public:
  void register_client(std::size_t client);
  /// Appends the depth dispatched in `round`; rounds are consecutive from 0.
  void record_round(std::size_t round, std::size_t depth);
  void mark_participation(std::size_t client, std::size_t round);

  /// Max dispatched depth over rounds (since_round, now]. Precondition:
  /// since_round <= the latest recorded round.
  std::size_t max_dispatched_since(std::size_t since_round) const;

  /// d' for a client: max depth dispatched since it last participated, or
  /// nullopt if it never did (cold start, full recompute). Throws
  /// RegistryError for an unknown client.
  std::optional<std::size_t> query(std::size_t client) const;

  std::optional<std::size_t> last_participation(std::size_t client) const;
  std::size_t rounds_recorded() const { return history_.size(); }
  std::span<const std::size_t> history() const { return history_; }

 private:
  std::vector<std::size_t> history_;
  std::map<std::size_t, std::optional<std::size_t>> last_round_;
};

struct FetchResult {
  std::size_t boundary = 0;
  Tensor activations;
  bool recomputed = false;
  bool expired = false;           // an entry existed but its depth was below d'
  bool integrity_failure = false; // an entry existed but was malformed
};

/// Serves boundary activations for one batch. Hit iff an entry exists,
/// is well-formed and its depth_at_store >= watermark; otherwise runs the
/// frozen layers up to D - watermark and replaces the entry.
FetchResult fetch_or_recompute(ActivationCache& cache, std::size_t watermark,
                               const ModelState& model, std::uint64_t batch_id,
                               const TokenBatch& tokens, std::size_t round);

/// seqlen * n * bytes_per_scalar per sample, one boundary layer.
std::size_t storage_bytes(const ModelSpec& spec, std::size_t num_samples,
                          std::size_t bytes_per_scalar = sizeof(double));

/// Number of strict increases along a depth path.
std::size_t count_depth_increases(std::span<const std::size_t> depth_path);

}  // namespace fedadapt
