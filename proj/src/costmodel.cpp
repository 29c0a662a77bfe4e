#include "fedadapt/costmodel.hpp"

#include <algorithm>

#include "fedadapt/error.hpp"

namespace fedadapt {

void DeviceProfile::validate() const {
  auto positive = [&](double v, const char* field) {
    if (!(v > 0.0)) throw ConfigError("device '" + name + "': " + field + " must be positive");
  };
  positive(per_batch_latency_full, "per_batch_latency_full");
  positive(compute_power_watts, "compute_power_watts");
  positive(radio_power_watts, "radio_power_watts");
  positive(cache_reload_latency, "cache_reload_latency");
}

void NetworkProfile::validate() const {
  if (!(uplink_bytes_per_s > 0.0)) throw ConfigError("network.uplink_bytes_per_s must be positive");
  if (!(downlink_bytes_per_s > 0.0)) throw ConfigError("network.downlink_bytes_per_s must be positive");
}

void EmulatedClock::advance(double dt) {
  if (dt < 0.0) throw ContractError("clock cannot move backwards");
  seconds_ += dt;
}

void EmulatedClock::reset_to(double t) {
  if (t < seconds_) throw ContractError("clock cannot move backwards");
  seconds_ = t;
}

const std::vector<DeviceProfile>& bundled_profiles() {
  static const std::vector<DeviceProfile> profiles = {
      {"tx2", 0.88, 10.0, 1.0, 0.010},
      {"nano", 1.89, 7.5, 1.0, 0.015},
      {"rpi4b", 18.27, 6.0, 1.0, 0.030},
  };
  return profiles;
}

const DeviceProfile& bundled_profile(const std::string& name) {
  for (const auto& p : bundled_profiles())
    if (p.name == name) return p;
  throw ConfigError("unknown device profile '" + name + "' (bundled: tx2, nano, rpi4b)");
}

double unit_layer_cost(const DeviceProfile& profile, std::size_t num_layers) {
  return profile.per_batch_latency_full / (3.0 * static_cast<double>(num_layers));
}

double compute_time_per_batch(const DeviceProfile& profile, std::size_t num_layers,
                              std::size_t depth, bool cache_enabled) {
  if (depth > num_layers) throw ConfigError("tuning depth exceeds model depth");
  if (cache_enabled) return batch_compute_seconds(profile, num_layers, depth, depth, true);
  return batch_compute_seconds(profile, num_layers, num_layers, depth, false);
}

double batch_compute_seconds(const DeviceProfile& profile, std::size_t num_layers,
                             std::size_t forward_layers, std::size_t backward_layers,
                             bool reload) {
  const double c = unit_layer_cost(profile, num_layers);
  const double t = c * static_cast<double>(forward_layers + 2 * backward_layers);
  return reload ? t + profile.cache_reload_latency : t;
}

double forward_share(std::size_t num_layers, std::size_t depth) {
  return static_cast<double>(num_layers) / static_cast<double>(num_layers + 2 * depth);
}

std::size_t payload_bytes(std::size_t trainable_scalars, std::size_t scalar_width,
                          std::size_t header_bytes) {
  return trainable_scalars * scalar_width + header_bytes;
}

double transfer_seconds(std::size_t bytes, double bytes_per_s) {
  return static_cast<double>(bytes) / bytes_per_s;
}

double round_time(std::span<const ClientTiming> group) {
  if (group.empty()) throw ContractError("round_time: empty group");
  double worst = 0.0;
  for (const auto& c : group) worst = std::max(worst, c.total());
  return worst;
}

double energy_joules(double compute_s, double transfer_s, const DeviceProfile& profile) {
  return compute_s * profile.compute_power_watts + transfer_s * profile.radio_power_watts;
}

std::size_t adapter_forward_flops(std::size_t m, std::size_t n, std::size_t seqlen) {
  return 2 * m * n * seqlen;
}

double transformer_forward_flops(std::size_t layers, std::size_t hidden, std::size_t ffn,
                                 std::size_t seqlen) {
  const double n = static_cast<double>(hidden), f = static_cast<double>(ffn),
               s = static_cast<double>(seqlen);
  const double projections = 2.0 * s * 4.0 * n * n;
  const double feedforward = 2.0 * s * 2.0 * n * f;
  const double attention = 2.0 * 2.0 * s * s * n;
  return static_cast<double>(layers) * (projections + feedforward + attention);
}

}  // namespace fedadapt
