#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fedadapt/adapter.hpp"
#include "fedadapt/cache.hpp"
#include "fedadapt/costmodel.hpp"
#include "fedadapt/data.hpp"
#include "fedadapt/model.hpp"
#include "fedadapt/rng.hpp"

namespace fedadapt {

struct ClientState {
  std::size_t id = 0;
  Shard shard;
  DeviceProfile device;
  ActivationCache cache;
};

struct LocalTrainOptions {
  std::size_t epochs = 1;
  std::size_t batch_size = 4;
  double lr = 0.1;
  /// Cap on SGD steps per round; 0 means no cap (full passes).
  std::size_t max_steps = 0;
  bool use_cache = true;
};

struct LocalResult {
  AdapterPayload payload;
  std::size_t samples = 0;
  std::size_t steps = 0;
  std::size_t cache_hits = 0;
  std::size_t recomputes = 0;
  std::size_t expired = 0;
  std::size_t integrity_failures = 0;
  double compute_s = 0.0;
};

/// Materializes `payload` on a copy of `global`, runs SGD over the client's
/// train shard and returns the updated trainable buffers. `watermark` is the
/// depth used for cache lookups; it must be at least the model's trainable
/// depth. Batch ids are positions in the (fixed) train order.
LocalResult local_train(ClientState& client, const ModelState& global,
                        const AdapterPayload& payload, std::size_t watermark,
                        std::size_t round, const LocalTrainOptions& opts);

/// Uniform sample without replacement of k ids out of [0, population), in
/// draw order.
std::vector<std::size_t> select_clients(std::size_t population, std::size_t k, SeededRng& rng);

struct ClientUpdate {
  std::size_t client = 0;
  AdapterPayload payload;
  std::size_t samples = 0;
};

/// Sample-weighted coordinate-wise mean in client-id order. Throws
/// AggregationError on mismatched payloads or zero total weight.
AdapterPayload fedavg(std::vector<ClientUpdate> updates);

/// Global model of one trial track plus its emulated clock.
struct TrackSlot {
  ModelState model;
  std::size_t participants = 0;
  EmulatedClock clock;
  std::size_t rounds = 0;
};

struct ClientRecord {
  std::size_t client = 0;
  std::size_t track = 0;
  std::size_t samples = 0;
  std::size_t steps = 0;
  std::size_t cache_hits = 0;
  std::size_t recomputes = 0;
  std::size_t expired = 0;
  std::size_t integrity_failures = 0;
  double download_s = 0.0;
  double compute_s = 0.0;
  double upload_s = 0.0;
  std::size_t bytes = 0;
  double joules = 0.0;
};

struct TrackRoundRecord {
  std::size_t track = 0;
  AdapterConfig config;
  std::size_t payload_bytes = 0;
  double round_time = 0.0;
  double clock = 0.0;
  std::size_t bytes = 0;
  double joules = 0.0;
};

struct RoundReport {
  std::size_t round = 0;
  std::size_t watermark = 0;
  std::vector<ClientRecord> clients;
  std::vector<TrackRoundRecord> tracks;
};

struct FederationOptions {
  LocalTrainOptions local;
  NetworkProfile network;
  std::size_t wire_scalar_width = 4;
  /// Train clients of a round concurrently. Results do not depend on it.
  bool parallel = true;
};

/// Trainable depth as seen by the cache: layers above the frozen prefix.
std::size_t trainable_depth(const ModelState& model);

/// Parameter server: client registry, depth history, round loop.
class Federation {
 public:
  Federation(std::vector<ClientState> clients, FederationOptions opts, std::uint64_t seed);

  /// One synchronous round over the given tracks. Selects the sum of their
  /// participant counts as fresh distinct clients, splits them in order,
  /// trains, aggregates each track and advances its clock. The recorded
  /// watermark is the deepest of these tracks and `dispatched_depth`, which
  /// covers live tracks sitting out this round.
  RoundReport run_round(std::span<TrackSlot* const> tracks, std::size_t dispatched_depth = 0);

  std::size_t round() const { return round_; }
  std::size_t population() const { return clients_.size(); }
  const std::vector<ClientState>& clients() const { return clients_; }
  std::vector<ClientState>& clients() { return clients_; }
  const DepthWatermark& watermark() const { return watermark_; }
  const FederationOptions& options() const { return opts_; }
  std::size_t payload_bytes_for(const ModelState& model) const;
  /// Drops every client's cached activations.
  void clear_caches();

 private:
  std::vector<ClientState> clients_;
  FederationOptions opts_;
  SeededRng rng_;
  DepthWatermark watermark_;
  std::size_t round_ = 0;
};

}  // namespace fedadapt

namespace fedadapt {

/// Server-side accuracy on a fixed held-out set. Activations of frozen
/// bottom layers are computed once per boundary and reused; every model
/// passed in must share the backbone the evaluator first saw.
class Evaluator {
 public:
  explicit Evaluator(std::vector<Sample> samples, std::size_t batch_size = 64);

  double operator()(const ModelState& model);
  std::size_t size() const { return samples_.size(); }

 private:
  std::vector<Sample> samples_;
  std::vector<int> labels_;
  std::size_t batch_size_;
  std::vector<std::optional<Tensor>> memo_;  // indexed by boundary
};

}  // namespace fedadapt
