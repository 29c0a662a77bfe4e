#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedadapt/configurator.hpp"
#include "fedadapt/costmodel.hpp"
#include "fedadapt/data.hpp"
#include "fedadapt/fed.hpp"
#include "fedadapt/model.hpp"
#include "fedadapt/pretrain.hpp"
#include "json.hpp"

namespace fedadapt {

enum class Mode { autofed, fixed_adapter, full_ft, layer_freeze };
const char* mode_name(Mode m);
Mode parse_mode(const std::string& s);

/// Everything a session needs. Defaults follow docs/config.md.
struct SessionConfig {
  Mode mode = Mode::autofed;
  AdapterConfig fixed{4, 32};
  bool fixed_monolithic = false;
  std::size_t freeze_layers = 0;

  ModelSpec model;
  SyntheticTaskSpec task;  // vocab, seqlen and num_labels mirror `model`
  /// When enabled the backbone comes from pre-training (shared by all seeds)
  /// instead of a per-seed random draw.
  PretrainSpec pretrain;

  std::size_t num_clients = 40;
  std::size_t participants = 5;  // N per group
  std::size_t groups = 3;
  double dirichlet_a = 10.0;
  double train_ratio = 0.8;
  bool parallel = true;
  std::size_t wire_scalar_width = 4;

  LocalTrainOptions local;
  bool cache = true;
  std::vector<std::string> device_assignment{"tx2"};
  std::vector<DeviceProfile> custom_profiles;
  NetworkProfile network;

  ConfiguratorParams configurator;

  std::vector<double> targets{0.99, 0.95, 0.90};
  /// Relative target that ends a session; defaults to the largest target.
  std::optional<double> stop_target;
  std::optional<double> reference_accuracy;
  std::size_t reference_rounds = 60;

  std::vector<std::uint64_t> seeds{1};
  SessionBudget budget;

  std::vector<std::size_t> sweep_depths;
  std::vector<std::size_t> sweep_widths;

  double stop_relative() const;
  std::size_t total_participants() const { return participants * groups; }
  const DeviceProfile& profile(const std::string& name) const;
  /// Cross-field checks; throws ConfigError naming the field.
  void validate() const;
};

/// Throws ConfigError naming the offending field and the reason.
SessionConfig parse_config(const nlohmann::json& j);
SessionConfig load_config(const std::string& path);
nlohmann::ordered_json config_to_json(const SessionConfig& c);

}  // namespace fedadapt
