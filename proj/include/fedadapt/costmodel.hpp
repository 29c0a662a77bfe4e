#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace fedadapt {

/// Per-client device characteristics. Latency is for one full-model training
/// batch (forward over all layers plus full backward).
struct DeviceProfile {
  std::string name;
  double per_batch_latency_full = 0.88;
  double compute_power_watts = 10.0;
  double radio_power_watts = 1.0;
  double cache_reload_latency = 0.01;

  void validate() const;
};

struct NetworkProfile {
  double uplink_bytes_per_s = 1e6;
  double downlink_bytes_per_s = 1e6;

  void validate() const;
};

/// Nondecreasing emulated wall clock of one trial track.
class EmulatedClock {
 public:
  double seconds() const { return seconds_; }
  void advance(double dt);
  void reset_to(double t);

 private:
  double seconds_ = 0.0;
};

/// tx2, nano, rpi4b. Latencies are the measured full-model per-batch
/// numbers; power and reload figures are artifact-supplied ballparks.
const std::vector<DeviceProfile>& bundled_profiles();
/// Throws ConfigError for an unknown name.
const DeviceProfile& bundled_profile(const std::string& name);

/// Forward cost of one layer: latency / (3D) (backward ~ 2x forward).
double unit_layer_cost(const DeviceProfile& profile, std::size_t num_layers);

/// Emulated seconds for one batch at tuning depth d:
///   no cache: c * (D + 2d);  cache: c * 3d + reload.
double compute_time_per_batch(const DeviceProfile& profile, std::size_t num_layers,
                              std::size_t depth, bool cache_enabled);

/// General form: c * (forward_layers + 2 * backward_layers) (+ reload).
double batch_compute_seconds(const DeviceProfile& profile, std::size_t num_layers,
                             std::size_t forward_layers, std::size_t backward_layers,
                             bool reload);

/// Share of the per-batch compute spent in the forward pass without
/// caching: D / (D + 2d).
double forward_share(std::size_t num_layers, std::size_t depth);

/// trainable scalars * wire width + fixed header.
std::size_t payload_bytes(std::size_t trainable_scalars, std::size_t scalar_width = 4,
                          std::size_t header_bytes = 32);

double transfer_seconds(std::size_t bytes, double bytes_per_s);

struct ClientTiming {
  double download_s = 0.0;
  double compute_s = 0.0;
  double upload_s = 0.0;
  double total() const { return download_s + compute_s + upload_s; }
};

/// Synchronous round: the slowest member's download + compute + upload.
/// Aggregation is charged zero.
double round_time(std::span<const ClientTiming> group);

double energy_joules(double compute_s, double transfer_s, const DeviceProfile& profile);

/// 2 * m * n * seqlen per sample.
std::size_t adapter_forward_flops(std::size_t m, std::size_t n, std::size_t seqlen);

/// Per-sample forward FLOPs of a transformer encoder stack (projections,
/// FFN, attention products), multiply-add counted as 2.
double transformer_forward_flops(std::size_t layers, std::size_t hidden, std::size_t ffn,
                                 std::size_t seqlen);

}  // namespace fedadapt
