#include "fedadapt/cache.hpp"

#include <algorithm>

#include "fedadapt/error.hpp"

namespace fedadapt {

const CacheEntry* ActivationCache::find(std::uint64_t batch_id) const {
  auto it = entries_.find(batch_id);
  return it == entries_.end() ? nullptr : &it->second;
}

CacheEntry* ActivationCache::mutable_entry(std::uint64_t batch_id) {
  auto it = entries_.find(batch_id);
  return it == entries_.end() ? nullptr : &it->second;
}

void ActivationCache::store(CacheEntry entry) {
  const auto id = entry.batch_id;
  entries_.insert_or_assign(id, std::move(entry));
}

std::size_t ActivationCache::stored_bytes() const {
  std::size_t total = 0;
  for (const auto& [id, e] : entries_) total += e.activations.numel() * sizeof(double);
  return total;
}

void DepthWatermark::register_client(std::size_t client) { last_round_.try_emplace(client); }

void DepthWatermark::record_round(std::size_t round, std::size_t depth) {
  if (round != history_.size()) {
    throw ContractError("watermark: round " + std::to_string(round) + " recorded out of order (expected " +
                        std::to_string(history_.size()) + ")");
  }
  history_.push_back(depth);
}

void DepthWatermark::mark_participation(std::size_t client, std::size_t round) {
  auto it = last_round_.find(client);
  if (it == last_round_.end()) throw RegistryError("watermark: unknown client " + std::to_string(client));
  it->second = round;
}

std::size_t DepthWatermark::max_dispatched_since(std::size_t since_round) const {
  if (since_round + 1 >= history_.size()) {
    throw ContractError("watermark: no rounds recorded after round " + std::to_string(since_round));
  }
  return *std::max_element(history_.begin() + static_cast<std::ptrdiff_t>(since_round) + 1, history_.end());
}

std::optional<std::size_t> DepthWatermark::last_participation(std::size_t client) const {
  auto it = last_round_.find(client);
  if (it == last_round_.end()) throw RegistryError("watermark: unknown client " + std::to_string(client));
  return it->second;
}

std::optional<std::size_t> DepthWatermark::query(std::size_t client) const {
  const auto last = last_participation(client);
  if (!last) return std::nullopt;
  if (*last + 1 >= history_.size()) return history_.empty() ? 0 : history_.back();
  return max_dispatched_since(*last);
}

FetchResult fetch_or_recompute(ActivationCache& cache, std::size_t watermark,
                               const ModelState& model, std::uint64_t batch_id,
                               const TokenBatch& tokens, std::size_t round) {
  const std::size_t D = model.spec.layers;
  if (watermark > D) throw ContractError("watermark depth " + std::to_string(watermark) + " exceeds model depth");
  if (model.embeddings_trainable()) throw ContractError("activation cache requires frozen embeddings");
  const std::size_t boundary = D - watermark;
  if (boundary > model.frozen_prefix()) {
    throw ContractError("watermark " + std::to_string(watermark) + " is shallower than the model's trainable range");
  }
  FetchResult r;
  if (const CacheEntry* e = cache.find(batch_id)) {
    const Shape want{tokens.batch, model.spec.seqlen, model.spec.hidden};
    const bool intact = e->activations.shape == want && e->activations.well_formed() &&
                        e->depth_at_store <= D && e->boundary == D - e->depth_at_store;
    if (!intact) {
      r.integrity_failure = true;
    } else if (e->depth_at_store >= watermark) {
      r.boundary = e->boundary;
      r.activations = e->activations;
      return r;
    } else {
      r.expired = true;
    }
  }
  r.boundary = boundary;
  r.activations = forward_layers(model, embed(model, tokens), 0, boundary);
  r.recomputed = true;
  cache.store({batch_id, boundary, watermark, round, r.activations});
  return r;
}

std::size_t storage_bytes(const ModelSpec& spec, std::size_t num_samples, std::size_t bytes_per_scalar) {
  return num_samples * spec.seqlen * spec.hidden * bytes_per_scalar;
}

std::size_t count_depth_increases(std::span<const std::size_t> depth_path) {
  std::size_t n = 0;
  for (std::size_t i = 1; i < depth_path.size(); ++i)
    if (depth_path[i] > depth_path[i - 1]) ++n;
  return n;
}

}  // namespace fedadapt
