#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedadapt/config.hpp"
#include "fedadapt/configurator.hpp"
#include "fedadapt/fed.hpp"
#include "fedadapt/trace.hpp"

namespace fedadapt {

/// Backbone, clients and held-out set for one seed. Identical across modes
/// for the same config and seed.
struct Environment {
  ModelState backbone;
  std::vector<ClientState> clients;
  std::vector<Sample> heldout;
};

Environment build_environment(const SessionConfig& config, std::uint64_t seed);

struct RunResult {
  Trace trace;
  SessionOutcome outcome;
  double reference_accuracy = 0.0;
};

/// Best held-out accuracy of a full fine-tuning run of reference_rounds
/// rounds on the same seed.
RunResult run_reference(const SessionConfig& config, std::uint64_t seed);

/// One session in config.mode. A missing reference accuracy is obtained from
/// a reference run first (for full_ft the run itself is the reference).
RunResult run_mode(const SessionConfig& config, std::uint64_t seed,
                   std::optional<double> reference = std::nullopt,
                   const SessionHooks& hooks = {});

/// Earliest eval clock with accuracy >= relative * reference.
std::optional<double> time_to_accuracy(const Trace& trace, double relative, double reference);

/// Bytes of every track-round finishing at or before `clock`.
std::size_t traffic_until(const Trace& trace, double clock);

struct ClientTotals {
  std::size_t rounds = 0;
  std::size_t bytes = 0;
  double joules = 0.0;
};

struct TraceSummary {
  std::string mode;
  std::uint64_t seed = 0;
  std::size_t rounds = 0;
  std::size_t total_bytes = 0;
  double total_joules = 0.0;
  std::size_t expirations = 0;
  std::vector<AdapterConfig> configs_visited;
  double best_accuracy = 0.0;
  double final_clock = 0.0;
  std::optional<double> reference_accuracy;
  std::map<std::size_t, ClientTotals> per_client;
};

TraceSummary summarize(const Trace& trace);
nlohmann::ordered_json summary_json(const TraceSummary& s, const Trace& trace,
                                    const std::vector<double>& targets);

struct SweepRow {
  AdapterConfig config;
  std::uint64_t seed = 0;
  std::vector<std::optional<double>> times;  // per target
  std::size_t total_bytes = 0;
  bool reached = false;
};

/// Fixed-adapter sessions over the depth x width grid, shared seeds.
std::vector<SweepRow> sweep(const SessionConfig& config,
                            const std::vector<AdapterConfig>& grid);

}  // namespace fedadapt
