#include <gtest/gtest.h>

#include <vector>

#include "fedadapt/costmodel.hpp"
#include "fedadapt/error.hpp"

using namespace fedadapt;

namespace {

DeviceProfile unit_profile() {
  DeviceProfile p;
  p.name = "unit";
  p.per_batch_latency_full = 36.0;
  p.cache_reload_latency = 0.5;
  return p;
}

}  // namespace

TEST(Profiles, BundledLatencies) {
  EXPECT_EQ(bundled_profile("tx2").per_batch_latency_full, 0.88);
  EXPECT_EQ(bundled_profile("nano").per_batch_latency_full, 1.89);
  EXPECT_EQ(bundled_profile("rpi4b").per_batch_latency_full, 18.27);
  EXPECT_THROW(bundled_profile("pixel"), ConfigError);
  for (const DeviceProfile& p : bundled_profiles()) {
    EXPECT_NO_THROW(p.validate());
    // Reload overhead stays under 2% of a full-model batch.
    EXPECT_LT(p.cache_reload_latency, 0.02 * p.per_batch_latency_full);
  }
}

TEST(Profiles, ValidationRejectsNonPositive) {
  DeviceProfile p = unit_profile();
  p.per_batch_latency_full = 0.0;
  EXPECT_THROW(p.validate(), ConfigError);
  NetworkProfile n;
  n.uplink_bytes_per_s = -1.0;
  EXPECT_THROW(n.validate(), ConfigError);
}

TEST(ComputeTime, ForwardShareTwelveLayersDepthTwo) {
  EXPECT_EQ(forward_share(12, 2), 0.75);
  const DeviceProfile p = unit_profile();
  EXPECT_DOUBLE_EQ(compute_time_per_batch(p, 12, 2, false) / p.per_batch_latency_full, 16.0 / 36.0);
  EXPECT_EQ(forward_share(12, 0), 1.0);
  EXPECT_DOUBLE_EQ(forward_share(4, 4), 1.0 / 3.0);
}

TEST(ComputeTime, FullDepthNoCacheIsFullLatency) {
  const DeviceProfile& tx2 = bundled_profile("tx2");
  EXPECT_DOUBLE_EQ(compute_time_per_batch(tx2, 4, 4, false), 0.88);
  EXPECT_DOUBLE_EQ(unit_layer_cost(tx2, 4), 0.88 / 12);
}

TEST(ComputeTime, CachedDepthZeroIsReloadOnly) {
  const DeviceProfile p = unit_profile();
  EXPECT_EQ(compute_time_per_batch(p, 12, 0, true), 0.5);
}

TEST(ComputeTime, CachedTimeLinearInDepth) {
  const DeviceProfile p = unit_profile();
  const double step = compute_time_per_batch(p, 12, 1, true) - compute_time_per_batch(p, 12, 0, true);
  EXPECT_DOUBLE_EQ(step, 3.0);
  for (std::size_t d = 2; d <= 12; ++d) {
    EXPECT_DOUBLE_EQ(compute_time_per_batch(p, 12, d, true) - compute_time_per_batch(p, 12, d - 1, true), step);
  }
}

TEST(ComputeTime, GeneralFormAgreesWithShorthand) {
  const DeviceProfile p = unit_profile();
  EXPECT_EQ(batch_compute_seconds(p, 12, 12, 2, false), compute_time_per_batch(p, 12, 2, false));
  EXPECT_EQ(batch_compute_seconds(p, 12, 2, 2, true), compute_time_per_batch(p, 12, 2, true));
  EXPECT_DOUBLE_EQ(batch_compute_seconds(p, 12, 5, 2, true), 5.0 + 4.0 + 0.5);
}

TEST(Payload, BytesFromScalarCount) {
  EXPECT_EQ(payload_bytes(614784, 4, 0), 2459136u);
  EXPECT_EQ(payload_bytes(614784), 2459136u + 32);
  EXPECT_NEAR(static_cast<double>(payload_bytes(110010000, 4, 0)) / 1e6, 440.04, 1e-9);
  EXPECT_EQ(payload_bytes(768 * 20 + 20, 4, 32), (768u * 20 + 20) * 4 + 32);
}

TEST(RoundTime, SingleClientArithmetic) {
  const ClientTiming c{transfer_seconds(1000000, 1e6), 10 * 1.0, transfer_seconds(1000000, 1e6)};
  const std::vector<ClientTiming> group{c};
  EXPECT_EQ(round_time(group), 12.0);
}

TEST(RoundTime, SlowestMemberBoundsTheRound) {
  const std::vector<ClientTiming> group{{1, 2, 1}, {0.5, 9, 0.5}, {3, 1, 3}};
  EXPECT_EQ(round_time(group), 10.0);
  EXPECT_THROW(round_time(std::vector<ClientTiming>{}), ContractError);
}

TEST(RoundTime, DoublingBandwidthHalvesTransferOnly) {
  const std::size_t bytes = 3000000;
  const double compute = 4.0;
  auto total = [&](double bw) {
    const std::vector<ClientTiming> g{{transfer_seconds(bytes, bw), compute, transfer_seconds(bytes, bw)}};
    return round_time(g);
  };
  EXPECT_DOUBLE_EQ(total(1e6) - compute, 2 * (total(2e6) - compute));
  EXPECT_GT(total(1e6), total(2e6));
}

TEST(Clock, MonotoneAndAdditive) {
  EmulatedClock c;
  c.advance(1.5);
  c.advance(2.25);
  EXPECT_EQ(c.seconds(), 3.75);
  EXPECT_THROW(c.advance(-1.0), ContractError);
  EXPECT_THROW(c.reset_to(1.0), ContractError);
  c.reset_to(5.0);
  EXPECT_EQ(c.seconds(), 5.0);
}

TEST(Energy, Arithmetic) {
  DeviceProfile p = unit_profile();
  p.compute_power_watts = 5.0;
  p.radio_power_watts = 2.0;
  EXPECT_EQ(energy_joules(0.0, 0.0, p), 0.0);
  EXPECT_EQ(energy_joules(10.0, 4.0, p), 58.0);
  EXPECT_LT(energy_joules(10.0, transfer_seconds(payload_bytes(1000), 1e6), p),
            energy_joules(10.0, transfer_seconds(payload_bytes(2000), 1e6), p));
}

TEST(Flops, AdapterFormulaAndShareOfBert) {
  EXPECT_EQ(adapter_forward_flops(32, 768, 256), 12582912u);
  EXPECT_EQ(adapter_forward_flops(0, 768, 256), 0u);
  const double bert = transformer_forward_flops(12, 768, 3072, 256);
  EXPECT_LT(12.0 * static_cast<double>(adapter_forward_flops(32, 768, 256)) / bert, 0.01);
}
