#include "fedadapt/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "fedadapt/error.hpp"

namespace fedadapt {

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::autofed: return "autofed";
    case Mode::fixed_adapter: return "fixed_adapter";
    case Mode::full_ft: return "full_ft";
    case Mode::layer_freeze: return "layer_freeze";
  }
  return "?";
}

Mode parse_mode(const std::string& s) {
  for (Mode m : {Mode::autofed, Mode::fixed_adapter, Mode::full_ft, Mode::layer_freeze})
    if (s == mode_name(m)) return m;
  throw ConfigError("mode: unknown mode \"" + s + "\" (autofed, fixed_adapter, full_ft, layer_freeze)");
}

double SessionConfig::stop_relative() const {
  if (stop_target) return *stop_target;
  return targets.empty() ? 1.0 : *std::max_element(targets.begin(), targets.end());
}

const DeviceProfile& SessionConfig::profile(const std::string& name) const {
  for (const DeviceProfile& p : custom_profiles)
    if (p.name == name) return p;
  return bundled_profile(name);
}

void SessionConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) { throw ConfigError(field + ": " + why); };
  model.validate();
  task.validate();
  pretrain.validate();
  if (num_clients < 1) fail("federation.num_clients", "must be >= 1");
  if (participants < 1) fail("federation.participants", "must be >= 1");
  if (groups < 1) fail("federation.groups", "must be >= 1");
  if (total_participants() > num_clients) {
    fail("federation.participants", std::to_string(total_participants()) + " participants per round exceed " +
                                        std::to_string(num_clients) + " clients");
  }
  if (!(dirichlet_a > 0.0)) fail("federation.dirichlet_a", "must be positive");
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) fail("federation.train_ratio", "must lie in (0, 1)");
  if (wire_scalar_width != 4 && wire_scalar_width != 8) fail("federation.wire_scalar_width", "must be 4 or 8");
  if (local.epochs < 1) fail("local.epochs", "must be >= 1");
  if (local.batch_size < 1) fail("local.batch_size", "must be >= 1");
  if (!(local.lr >= 0.0)) fail("local.lr", "must be non-negative");
  if (device_assignment.empty()) fail("devices.assignment", "must name at least one profile");
  for (const DeviceProfile& p : custom_profiles) p.validate();
  for (const std::string& name : device_assignment) {
    try {
      profile(name);
    } catch (const ConfigError&) {
      fail("devices.assignment", "unknown profile \"" + name + "\"");
    }
  }
  network.validate();
  configurator.validate(model);
  if (mode == Mode::fixed_adapter) {
    if (fixed.depth > model.layers) fail("fixed.depth", "exceeds model.layers");
    if (fixed.depth > 0 && fixed.width < kMinAdapterWidth) fail("fixed.width", "must be >= 8");
    if (!fixed_monolithic && fixed.width % configurator.width_step != 0) {
      fail("fixed.width", "must be a multiple of configurator.width_step unless monolithic");
    }
  }
  if (mode == Mode::layer_freeze && freeze_layers > model.layers) fail("freeze_layers", "exceeds model.layers");
  for (double t : targets)
    if (!(t >= 0.0 && t <= 1.0)) fail("targets", "relative targets must lie in [0, 1]");
  if (stop_target && !(*stop_target >= 0.0 && *stop_target <= 1.0)) fail("stop_target", "must lie in [0, 1]");
  if (reference_accuracy && !(*reference_accuracy > 0.0 && *reference_accuracy <= 1.0)) {
    fail("reference_accuracy", "must lie in (0, 1]");
  }
  if (reference_rounds < 1) fail("reference_rounds", "must be >= 1");
  if (seeds.empty()) fail("seeds", "must list at least one seed");
  if (budget.max_rounds < 1) fail("budget.max_rounds", "must be >= 1");
  if (budget.max_clock < 0.0) fail("budget.max_clock", "must be >= 0");
  for (std::size_t d : sweep_depths)
    if (d > model.layers) fail("sweep.depths", "depth " + std::to_string(d) + " exceeds model.layers");
  for (std::size_t w : sweep_widths)
    if (w < kMinAdapterWidth || w % configurator.width_step != 0) {
      fail("sweep.widths", "width " + std::to_string(w) + " must be >= 8 and a multiple of the width step");
    }
}

namespace {

using nlohmann::json;

class Reader {
 public:
  Reader(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) throw ConfigError(where() + "must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(field(key) + ": has the wrong type (" + j_.at(key).dump() + ")");
    }
    if constexpr (std::is_same_v<T, bool>) {
      if (!j_.at(key).is_boolean()) throw ConfigError(field(key) + ": must be true or false");
    } else if constexpr (std::is_unsigned_v<T>) {
      const json& v = j_.at(key);
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) throw ConfigError(field(key) + ": must be a non-negative integer");
    }
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }
  const json& at(const char* key) const { return j_.at(key); }
  std::string field(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError(field(k) + ": unknown field");
  }

 private:
  std::string where() const { return prefix_.empty() ? "config: " : prefix_ + ": "; }
  const json& j_;
  std::string prefix_;
  std::set<std::string> seen_;
};

}  // namespace

SessionConfig parse_config(const json& j) {
  SessionConfig c;
  Reader r(j, "");
  if (r.has("mode")) {
    std::string m;
    r.get("mode", m);
    c.mode = parse_mode(m);
  }
  if (r.has("fixed")) {
    Reader f(r.at("fixed"), "fixed");
    f.get("depth", c.fixed.depth);
    f.get("width", c.fixed.width);
    f.get("monolithic", c.fixed_monolithic);
    f.finish();
  }
  r.get("freeze_layers", c.freeze_layers);
  if (r.has("model")) {
    Reader m(r.at("model"), "model");
    m.get("layers", c.model.layers);
    m.get("hidden", c.model.hidden);
    m.get("heads", c.model.heads);
    m.get("ffn_dim", c.model.ffn_dim);
    m.get("vocab", c.model.vocab);
    m.get("seqlen", c.model.seqlen);
    m.get("num_labels", c.model.num_labels);
    m.get("ln_eps", c.model.ln_eps);
    if (m.has("activation")) {
      std::string a;
      m.get("activation", a);
      try {
        c.model.activation = parse_activation(a);
      } catch (const Error& e) {
        throw ConfigError(std::string("model.activation: ") + e.what());
      }
    }
    m.finish();
  }
  if (r.has("task")) {
    Reader t(r.at("task"), "task");
    t.get("teacher_seed", c.task.teacher_seed);
    t.get("samples_per_label", c.task.samples_per_label);
    t.get("noise", c.task.noise);
    t.get("teacher_dim", c.task.teacher_dim);
    t.get("affinity", c.task.affinity);
    t.get("shift", c.task.shift);
    t.finish();
  }
  if (r.has("pretrain")) {
    Reader p(r.at("pretrain"), "pretrain");
    p.get("enabled", c.pretrain.enabled);
    p.get("seed", c.pretrain.seed);
    p.get("num_labels", c.pretrain.num_labels);
    p.get("samples", c.pretrain.samples);
    p.get("epochs", c.pretrain.epochs);
    p.get("batch_size", c.pretrain.batch_size);
    p.get("lr", c.pretrain.lr);
    p.finish();
  }
  c.task.vocab = c.model.vocab;
  c.task.seqlen = c.model.seqlen;
  c.task.num_labels = c.model.num_labels;
  if (r.has("federation")) {
    Reader f(r.at("federation"), "federation");
    f.get("num_clients", c.num_clients);
    f.get("participants", c.participants);
    f.get("groups", c.groups);
    f.get("dirichlet_a", c.dirichlet_a);
    f.get("train_ratio", c.train_ratio);
    f.get("parallel", c.parallel);
    f.get("wire_scalar_width", c.wire_scalar_width);
    f.finish();
  }
  if (r.has("local")) {
    Reader l(r.at("local"), "local");
    l.get("epochs", c.local.epochs);
    l.get("batch_size", c.local.batch_size);
    l.get("lr", c.local.lr);
    l.get("max_steps", c.local.max_steps);
    l.finish();
  }
  r.get("cache", c.cache);
  if (r.has("devices")) {
    Reader d(r.at("devices"), "devices");
    d.get("assignment", c.device_assignment);
    if (d.has("profiles")) {
      const json& arr = d.at("profiles");
      if (!arr.is_array()) throw ConfigError("devices.profiles: must be an array");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        Reader p(arr[i], "devices.profiles[" + std::to_string(i) + "]");
        DeviceProfile dp;
        p.get("name", dp.name);
        p.get("per_batch_latency_full", dp.per_batch_latency_full);
        p.get("compute_power_watts", dp.compute_power_watts);
        p.get("radio_power_watts", dp.radio_power_watts);
        p.get("cache_reload_latency", dp.cache_reload_latency);
        p.finish();
        if (dp.name.empty()) throw ConfigError(p.field("name") + ": required");
        c.custom_profiles.push_back(dp);
      }
    }
    d.finish();
  }
  if (r.has("network")) {
    Reader n(r.at("network"), "network");
    if (n.has("bandwidth_bytes_per_s")) {
      double bw = 0.0;
      n.get("bandwidth_bytes_per_s", bw);
      c.network.uplink_bytes_per_s = c.network.downlink_bytes_per_s = bw;
    }
    n.get("uplink_bytes_per_s", c.network.uplink_bytes_per_s);
    n.get("downlink_bytes_per_s", c.network.downlink_bytes_per_s);
    n.finish();
  }
  if (r.has("configurator")) {
    Reader k(r.at("configurator"), "configurator");
    k.get("start_depth", c.configurator.start.depth);
    k.get("start_width", c.configurator.start.width);
    k.get("depth_step", c.configurator.depth_step);
    k.get("width_step", c.configurator.width_step);
    k.get("max_width", c.configurator.max_width);
    k.get("trial_intvl", c.configurator.trial_intvl);
    k.get("trial_rounds", c.configurator.trial_rounds);
    k.get("interval_growth", c.configurator.interval_growth);
    if (k.has("decision_clock")) {
      std::string s;
      k.get("decision_clock", s);
      c.configurator.decision_clock = parse_decision_clock(s);
    }
    k.finish();
  }
  r.get("targets", c.targets);
  if (r.has("stop_target")) {
    double v = 0.0;
    r.get("stop_target", v);
    c.stop_target = v;
  }
  if (r.has("reference_accuracy")) {
    double v = 0.0;
    r.get("reference_accuracy", v);
    c.reference_accuracy = v;
  }
  r.get("reference_rounds", c.reference_rounds);
  r.get("seeds", c.seeds);
  if (r.has("budget")) {
    Reader b(r.at("budget"), "budget");
    b.get("max_rounds", c.budget.max_rounds);
    b.get("max_clock", c.budget.max_clock);
    b.finish();
  }
  if (r.has("sweep")) {
    Reader s(r.at("sweep"), "sweep");
    s.get("depths", c.sweep_depths);
    s.get("widths", c.sweep_widths);
    s.finish();
  }
  r.finish();
  c.validate();
  return c;
}

SessionConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_config(j);
}

nlohmann::ordered_json config_to_json(const SessionConfig& c) {
  using oj = nlohmann::ordered_json;
  oj profiles = oj::array();
  for (const DeviceProfile& p : c.custom_profiles) {
    profiles.push_back({{"name", p.name},
                        {"per_batch_latency_full", p.per_batch_latency_full},
                        {"compute_power_watts", p.compute_power_watts},
                        {"radio_power_watts", p.radio_power_watts},
                        {"cache_reload_latency", p.cache_reload_latency}});
  }
  oj j;
  j["mode"] = mode_name(c.mode);
  j["fixed"] = {{"depth", c.fixed.depth}, {"width", c.fixed.width}, {"monolithic", c.fixed_monolithic}};
  j["freeze_layers"] = c.freeze_layers;
  j["model"] = {{"layers", c.model.layers},       {"hidden", c.model.hidden},
                {"heads", c.model.heads},         {"ffn_dim", c.model.ffn()},
                {"vocab", c.model.vocab},         {"seqlen", c.model.seqlen},
                {"num_labels", c.model.num_labels}, {"activation", activation_name(c.model.activation)},
                {"ln_eps", c.model.ln_eps}};
  j["task"] = {{"teacher_seed", c.task.teacher_seed},
               {"samples_per_label", c.task.samples_per_label},
               {"noise", c.task.noise},
               {"teacher_dim", c.task.teacher_dim},
               {"affinity", c.task.affinity},
               {"shift", c.task.shift}};
  j["pretrain"] = {{"enabled", c.pretrain.enabled},       {"seed", c.pretrain.seed},
                   {"num_labels", c.pretrain.num_labels}, {"samples", c.pretrain.samples},
                   {"epochs", c.pretrain.epochs},         {"batch_size", c.pretrain.batch_size},
                   {"lr", c.pretrain.lr}};
  j["federation"] = {{"num_clients", c.num_clients},   {"participants", c.participants},
                     {"groups", c.groups},             {"dirichlet_a", c.dirichlet_a},
                     {"train_ratio", c.train_ratio},   {"parallel", c.parallel},
                     {"wire_scalar_width", c.wire_scalar_width}};
  j["local"] = {{"epochs", c.local.epochs},
                {"batch_size", c.local.batch_size},
                {"lr", c.local.lr},
                {"max_steps", c.local.max_steps}};
  j["cache"] = c.cache;
  j["devices"] = {{"assignment", c.device_assignment}, {"profiles", profiles}};
  j["network"] = {{"uplink_bytes_per_s", c.network.uplink_bytes_per_s},
                  {"downlink_bytes_per_s", c.network.downlink_bytes_per_s}};
  const ConfiguratorParams& k = c.configurator;
  j["configurator"] = {{"start_depth", k.start.depth},   {"start_width", k.start.width},
                       {"depth_step", k.depth_step},     {"width_step", k.width_step},
                       {"max_width", k.max_width},       {"trial_intvl", k.trial_intvl},
                       {"trial_rounds", k.trial_rounds}, {"interval_growth", k.interval_growth},
                       {"decision_clock", decision_clock_name(k.decision_clock)}};
  j["targets"] = c.targets;
  j["stop_target"] = c.stop_relative();
  j["reference_accuracy"] = c.reference_accuracy ? oj(*c.reference_accuracy) : oj();
  j["reference_rounds"] = c.reference_rounds;
  j["seeds"] = c.seeds;
  j["budget"] = {{"max_rounds", c.budget.max_rounds}, {"max_clock", c.budget.max_clock}};
  j["sweep"] = {{"depths", c.sweep_depths}, {"widths", c.sweep_widths}};
  return j;
}

}  // namespace fedadapt
