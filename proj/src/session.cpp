#include "fedadapt/session.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <mutex>

#include "fedadapt/adapter.hpp"
#include "fedadapt/error.hpp"
#include "fedadapt/pretrain.hpp"

namespace fedadapt {
namespace {

enum SeedTag : std::uint64_t { kBackbone = 1, kData, kPartition, kSplit, kSelection, kAdapters };

FederationOptions federation_options(const SessionConfig& c) {
  FederationOptions o;
  o.local = c.local;
  o.local.use_cache = c.cache;
  o.network = c.network;
  o.wire_scalar_width = c.wire_scalar_width;
  o.parallel = c.parallel;
  return o;
}

TraceEvent session_event(const SessionConfig& c, std::uint64_t seed, std::optional<double> reference) {
  return {{"mode", mode_name(c.mode)},
          {"seed", seed},
          {"reference_accuracy", reference ? TraceEvent(*reference) : TraceEvent()},
          {"targets", c.targets},
          {"stop_target", c.stop_relative()},
          {"config", config_to_json(c)}};
}

ModelState model_for_mode(const SessionConfig& c, const ModelState& backbone, SeededRng& rng) {
  switch (c.mode) {
    case Mode::fixed_adapter:
      return c.fixed_monolithic ? insert_monolithic(backbone, c.fixed, rng)
                                : insert_adapters(backbone, c.fixed, c.configurator.width_step, rng);
    case Mode::full_ft: {
      ModelState m = backbone;
      set_training_policy(m, {TrainingScope::full, 0});
      return m;
    }
    case Mode::layer_freeze: {
      ModelState m = backbone;
      set_training_policy(m, {TrainingScope::layer_freeze, c.freeze_layers});
      return m;
    }
    case Mode::autofed: break;
  }
  throw ContractError("model_for_mode: autofed has no fixed model");
}

void finish_trace(Trace& trace, const SessionConfig& c, double reference) {
  TraceSummary s = summarize(trace);
  s.reference_accuracy = reference;
  trace.emit("summary", summary_json(s, trace, c.targets));
}

// Pre-training is deterministic in its inputs and shared by every seed, so
// one copy per distinct configuration is kept for the process lifetime.
ModelState pretrained_backbone(const SessionConfig& c) {
  static std::mutex mu;
  static std::map<std::string, ModelState> memo;
  const std::string key = nlohmann::json{config_to_json(c)["model"], config_to_json(c)["task"],
                                         config_to_json(c)["pretrain"]}
                              .dump();
  std::lock_guard lock(mu);
  auto it = memo.find(key);
  if (it == memo.end()) it = memo.emplace(key, pretrain_backbone(c.model, c.task, c.pretrain)).first;
  return it->second;
}

}  // namespace

Environment build_environment(const SessionConfig& c, std::uint64_t seed) {
  c.validate();
  Environment env;
  env.backbone = c.pretrain.enabled ? pretrained_backbone(c) : build_model(c.model, mix_seed(seed, kBackbone));
  SeededRng data_rng(mix_seed(seed, kData));
  const Dataset ds = generate_task(c.task, data_rng);
  SeededRng part_rng(mix_seed(seed, kPartition));
  auto slices = partition_noniid(ds.samples, ds.num_labels, c.num_clients, c.dirichlet_a, part_rng);
  const SeededRng split_root(mix_seed(seed, kSplit));
  for (std::size_t i = 0; i < slices.size(); ++i) {
    SeededRng split_rng = split_root.fork(i);
    ClientState client;
    client.id = i;
    client.shard = split_train_test(i, std::move(slices[i]), c.train_ratio, split_rng);
    client.device = c.profile(c.device_assignment[i % c.device_assignment.size()]);
    env.heldout.insert(env.heldout.end(), client.shard.test.begin(), client.shard.test.end());
    env.clients.push_back(std::move(client));
  }
  return env;
}

RunResult run_reference(const SessionConfig& config, std::uint64_t seed) {
  SessionConfig c = config;
  c.mode = Mode::full_ft;
  c.budget.max_rounds = c.reference_rounds;
  c.budget.max_clock = 0.0;
  Environment env = build_environment(c, seed);
  Federation fed(std::move(env.clients), federation_options(c), mix_seed(seed, kSelection));
  Evaluator eval(env.heldout);
  SeededRng rng(mix_seed(seed, kAdapters));
  RunResult r;
  r.trace.emit("session", session_event(c, seed, std::nullopt));
  r.outcome = run_fixed_session(model_for_mode(c, env.backbone, rng), fed, eval, c.total_participants(),
                                std::numeric_limits<double>::infinity(), c.budget, r.trace);
  r.reference_accuracy = r.outcome.best_accuracy;
  finish_trace(r.trace, c, r.reference_accuracy);
  return r;
}

RunResult run_mode(const SessionConfig& c, std::uint64_t seed, std::optional<double> reference,
                   const SessionHooks& hooks) {
  if (!reference) reference = c.reference_accuracy;
  if (!reference) {
    RunResult ref = run_reference(c, seed);
    if (c.mode == Mode::full_ft) {
      // The reference run is itself the full fine-tuning session.
      if (auto t = time_to_accuracy(ref.trace, c.stop_relative(), ref.reference_accuracy)) {
        ref.outcome.reached = true;
        ref.outcome.time_to_target = *t;
      }
      return ref;
    }
    reference = ref.reference_accuracy;
  }
  if (!(*reference > 0.0)) throw EvaluationError("reference accuracy is zero; relative targets are undefined");
  Environment env = build_environment(c, seed);
  Federation fed(std::move(env.clients), federation_options(c), mix_seed(seed, kSelection));
  Evaluator eval(env.heldout);
  SeededRng rng(mix_seed(seed, kAdapters));
  const double target = c.stop_relative() * *reference;

  RunResult r;
  r.reference_accuracy = *reference;
  r.trace.emit("session", session_event(c, seed, reference));
  if (c.mode == Mode::autofed) {
    r.outcome = run_session(env.backbone, fed, eval, c.configurator, c.total_participants(), target,
                            c.budget, rng, r.trace, hooks);
  } else {
    r.outcome = run_fixed_session(model_for_mode(c, env.backbone, rng), fed, eval, c.total_participants(),
                                  target, c.budget, r.trace, hooks);
  }
  finish_trace(r.trace, c, *reference);
  return r;
}

std::optional<double> time_to_accuracy(const Trace& trace, double relative, double reference) {
  if (!(reference > 0.0)) throw EvaluationError("time_to_accuracy: reference accuracy must be positive");
  const double threshold = relative * reference;
  std::optional<double> best;
  for (const TraceEvent* e : trace.of_type("eval")) {
    if (e->at("accuracy").get<double>() < threshold) continue;
    const double clock = e->at("clock").get<double>();
    best = std::min(best.value_or(clock), clock);
  }
  return best;
}

std::size_t traffic_until(const Trace& trace, double clock) {
  std::size_t total = 0;
  for (const TraceEvent* e : trace.of_type("round"))
    for (const auto& t : e->at("tracks"))
      if (t.at("clock").get<double>() <= clock) total += t.at("bytes").get<std::size_t>();
  return total;
}

TraceSummary summarize(const Trace& trace) {
  TraceSummary s;
  for (const TraceEvent& e : trace.events()) {
    const std::string type = e.at("type");
    try {
      if (type == "session") {
        s.mode = e.at("mode");
        s.seed = e.at("seed");
        if (!e.at("reference_accuracy").is_null()) s.reference_accuracy = e.at("reference_accuracy").get<double>();
      } else if (type == "dispatch") {
        const auto& b = e.at("base");
        const AdapterConfig cfg{b.at(0).get<std::size_t>(), b.at(1).get<std::size_t>()};
        if (std::find(s.configs_visited.begin(), s.configs_visited.end(), cfg) == s.configs_visited.end()) {
          s.configs_visited.push_back(cfg);
        }
      } else if (type == "round") {
        ++s.rounds;
        for (const auto& t : e.at("tracks")) s.final_clock = std::max(s.final_clock, t.at("clock").get<double>());
        for (const auto& c : e.at("clients")) {
          ClientTotals& ct = s.per_client[c.at("client").get<std::size_t>()];
          ++ct.rounds;
          ct.bytes += c.at("bytes").get<std::size_t>();
          ct.joules += c.at("joules").get<double>();
          s.total_bytes += c.at("bytes").get<std::size_t>();
          s.total_joules += c.at("joules").get<double>();
        }
      } else if (type == "expire") {
        ++s.expirations;
      } else if (type == "eval") {
        s.best_accuracy = std::max(s.best_accuracy, e.at("accuracy").get<double>());
      }
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError("trace event " + type + ": " + ex.what());
    }
  }
  return s;
}

nlohmann::ordered_json summary_json(const TraceSummary& s, const Trace& trace,
                                    const std::vector<double>& targets) {
  using oj = nlohmann::ordered_json;
  oj visited = oj::array();
  for (const AdapterConfig& c : s.configs_visited) visited.push_back(config_json(c));
  oj tta = oj::array();
  for (double t : targets) {
    oj row{{"relative", t}, {"time", nullptr}, {"bytes", nullptr}};
    if (s.reference_accuracy && *s.reference_accuracy > 0.0) {
      if (auto time = time_to_accuracy(trace, t, *s.reference_accuracy)) {
        row["time"] = *time;
        row["bytes"] = traffic_until(trace, *time);
      }
    }
    tta.push_back(row);
  }
  return {{"mode", s.mode},
          {"seed", s.seed},
          {"rounds", s.rounds},
          {"final_clock", s.final_clock},
          {"total_bytes", s.total_bytes},
          {"total_joules", s.total_joules},
          {"expirations", s.expirations},
          {"configs_visited", visited},
          {"best_accuracy", s.best_accuracy},
          {"reference_accuracy", s.reference_accuracy ? oj(*s.reference_accuracy) : oj()},
          {"time_to_accuracy", tta}};
}

std::vector<SweepRow> sweep(const SessionConfig& config, const std::vector<AdapterConfig>& grid) {
  if (grid.empty()) throw ConfigError("sweep: empty grid");
  std::vector<SweepRow> rows;
  for (std::uint64_t seed : config.seeds) {
    std::optional<double> reference = config.reference_accuracy;
    if (!reference) reference = run_reference(config, seed).reference_accuracy;
    for (const AdapterConfig& cfg : grid) {
      SessionConfig c = config;
      c.mode = Mode::fixed_adapter;
      c.fixed = cfg;
      const RunResult r = run_mode(c, seed, reference);
      SweepRow row;
      row.config = cfg;
      row.seed = seed;
      row.reached = r.outcome.reached;
      row.total_bytes = summarize(r.trace).total_bytes;
      for (double t : c.targets) row.times.push_back(time_to_accuracy(r.trace, t, *reference));
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace fedadapt
