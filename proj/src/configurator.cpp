#include "fedadapt/configurator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fedadapt/error.hpp"

namespace fedadapt {

const char* track_kind_name(TrackKind k) {
  switch (k) {
    case TrackKind::current: return "current";
    case TrackKind::deeper: return "deeper";
    case TrackKind::wider: return "wider";
  }
  return "?";
}

DecisionClock parse_decision_clock(const std::string& s) {
  if (s == "current") return DecisionClock::current;
  if (s == "max") return DecisionClock::max;
  throw ConfigError("configurator.decision_clock: expected \"current\" or \"max\", got \"" + s + "\"");
}

const char* decision_clock_name(DecisionClock c) {
  return c == DecisionClock::current ? "current" : "max";
}

TraceEvent config_json(const AdapterConfig& c) { return TraceEvent::array({c.depth, c.width}); }

void ConfiguratorParams::validate(const ModelSpec& spec) const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("configurator." + field + ": " + why);
  };
  if (depth_step < 1) fail("depth_step", "must be >= 1");
  if (width_step < 1) fail("width_step", "must be >= 1");
  if (start.depth > spec.layers) fail("start_depth", "exceeds the number of layers");
  if (start.width < kMinAdapterWidth) fail("start_width", "must be >= " + std::to_string(kMinAdapterWidth));
  if (start.width % width_step != 0) fail("start_width", "must be a multiple of width_step");
  if (max_width < start.width) fail("max_width", "below start_width");
  if (trial_intvl < 0.0) fail("trial_intvl", "must be >= 0");
  if (trial_rounds < 1) fail("trial_rounds", "must be >= 1");
  if (!(interval_growth >= 1.0)) fail("interval_growth", "must be >= 1");
}

std::vector<TrialTrack> dispatch(const ConfiguratorParams& params, const ModelState& winner,
                                 SeededRng& rng) {
  const std::size_t D = winner.spec.layers;
  const AdapterConfig c = winner.config;
  std::vector<TrialTrack> out;
  TrialTrack cur;
  cur.kind = TrackKind::current;
  cur.slot.model = winner;
  out.push_back(std::move(cur));
  if (c.depth < D) {
    TrialTrack t;
    t.kind = TrackKind::deeper;
    t.slot.model = deepen(winner, std::min(params.depth_step, D - c.depth), rng);
    out.push_back(std::move(t));
  }
  if (c.depth > 0 && c.width + params.width_step <= params.max_width) {
    TrialTrack t;
    t.kind = TrackKind::wider;
    t.slot.model = widen(winner, params.width_step, rng);
    out.push_back(std::move(t));
  }
  return out;
}

bool should_decide(const ConfiguratorState& state, double now) {
  return now - state.t_trial > state.intvl;
}

std::size_t decide_winner(std::span<const TrialTrack> tracks, double now) {
  std::optional<std::size_t> best;
  double best_acc = 0.0;
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    const Evaluation* latest = nullptr;
    for (const Evaluation& e : tracks[i].history)
      if (e.clock <= now) latest = &e;
    if (!latest) continue;
    const bool better =
        !best || latest->accuracy > best_acc ||
        (latest->accuracy == best_acc && tracks[i].config() < tracks[*best].config());
    if (better) {
      best = i;
      best_acc = latest->accuracy;
    }
  }
  if (!best) throw DecisionError("no track has an evaluation at or before t=" + std::to_string(now));
  return *best;
}

std::vector<std::size_t> share_participants(std::size_t total, std::size_t tracks) {
  if (tracks == 0 || total < tracks) {
    throw ConfigError("cannot share " + std::to_string(total) + " participants over " +
                      std::to_string(tracks) + " tracks");
  }
  std::vector<std::size_t> out(tracks, total / tracks);
  for (std::size_t i = 0; i < total % tracks; ++i) ++out[i];
  return out;
}

double estimate_round_time(const Federation& fed, const ModelState& model) {
  const auto& opts = fed.options();
  const std::size_t D = model.spec.layers;
  const std::size_t depth = trainable_depth(model);
  const std::size_t bytes = fed.payload_bytes_for(model);
  const double transfer = transfer_seconds(bytes, opts.network.downlink_bytes_per_s) +
                          transfer_seconds(bytes, opts.network.uplink_bytes_per_s);
  double worst = 0.0;
  for (const ClientState& c : fed.clients()) {
    const std::size_t per_epoch = (c.shard.train.size() + opts.local.batch_size - 1) / opts.local.batch_size;
    std::size_t steps = per_epoch * opts.local.epochs;
    if (opts.local.max_steps) steps = std::min(steps, opts.local.max_steps);
    const double compute = static_cast<double>(steps) * batch_compute_seconds(c.device, D, D, depth, false);
    worst = std::max(worst, transfer + compute);
  }
  return worst;
}

namespace {

TraceEvent round_event(const RoundReport& rep, std::span<TrialTrack* const> due) {
  TraceEvent tracks = TraceEvent::array();
  for (const TrackRoundRecord& t : rep.tracks) {
    tracks.push_back({{"track", t.track},
                      {"kind", track_kind_name(due[t.track]->kind)},
                      {"config", config_json(t.config)},
                      {"payload_bytes", t.payload_bytes},
                      {"round_time", t.round_time},
                      {"clock", t.clock},
                      {"bytes", t.bytes},
                      {"joules", t.joules}});
  }
  TraceEvent clients = TraceEvent::array();
  for (const ClientRecord& c : rep.clients) {
    clients.push_back({{"client", c.client},
                       {"track", c.track},
                       {"samples", c.samples},
                       {"steps", c.steps},
                       {"cache_hits", c.cache_hits},
                       {"recomputes", c.recomputes},
                       {"expired", c.expired},
                       {"integrity_failures", c.integrity_failures},
                       {"download_s", c.download_s},
                       {"compute_s", c.compute_s},
                       {"upload_s", c.upload_s},
                       {"bytes", c.bytes},
                       {"joules", c.joules}});
  }
  return {{"round", rep.round}, {"watermark", rep.watermark}, {"tracks", tracks}, {"clients", clients}};
}

class Driver {
 public:
  Driver(Federation& fed, Evaluator& eval, std::size_t participants, double target,
         const SessionBudget& budget, Trace& trace, const SessionHooks& hooks)
      : fed_(fed), eval_(eval), participants_(participants), target_(target), budget_(budget),
        trace_(trace), hooks_(hooks) {}

  /// Installs tracks starting at `now`, splitting the participant budget.
  void install(std::vector<TrialTrack> tracks, double now) {
    st_.tracks = std::move(tracks);
    const auto shares = share_participants(participants_, st_.tracks.size());
    for (std::size_t i = 0; i < st_.tracks.size(); ++i) {
      st_.tracks[i].slot.participants = shares[i];
      st_.tracks[i].slot.clock.reset_to(now);
    }
    st_.base = st_.tracks.front().config();
    st_.t_trial = now;
    out_.bases.push_back(st_.base);
  }

  void emit_dispatch(const ModelState& winner) {
    TraceEvent tracks = TraceEvent::array();
    for (const TrialTrack& t : st_.tracks) {
      tracks.push_back({{"kind", track_kind_name(t.kind)},
                        {"config", config_json(t.config())},
                        {"participants", t.slot.participants},
                        {"payload_bytes", fed_.payload_bytes_for(t.slot.model)}});
    }
    trace_.emit("dispatch", {{"iteration", st_.iteration},
                             {"clock", st_.t_trial},
                             {"base", config_json(st_.base)},
                             {"interval", st_.intvl},
                             {"tracks", tracks}});
    if (hooks_.on_dispatch) hooks_.on_dispatch(winner, st_.tracks);
  }

  SessionOutcome run(bool adaptive, const ConfiguratorParams* params, SeededRng* rng) {
    std::string reason;
    std::optional<std::size_t> last_wm;
    while (true) {
      if (out_.rounds >= budget_.max_rounds) {
        reason = "round_budget";
        break;
      }
      std::vector<TrialTrack*> due;
      for (TrialTrack& t : st_.tracks)
        if (!adaptive || !should_decide(st_, t.slot.clock.seconds())) due.push_back(&t);
      if (due.empty()) {
        decide(max_clock(), *params, *rng);
        continue;
      }
      double earliest = std::numeric_limits<double>::infinity();
      for (const TrialTrack* t : due) earliest = std::min(earliest, t->slot.clock.seconds());
      if (budget_.max_clock > 0.0 && earliest >= budget_.max_clock) {
        reason = "clock_budget";
        break;
      }

      std::vector<TrackSlot*> slots;
      for (TrialTrack* t : due) slots.push_back(&t->slot);
      std::size_t dispatched = 0;
      for (const TrialTrack& t : st_.tracks) dispatched = std::max(dispatched, trainable_depth(t.slot.model));
      const RoundReport rep = fed_.run_round(slots, dispatched);
      ++out_.rounds;
      trace_.emit("round", round_event(rep, due));
      if (last_wm && rep.watermark > *last_wm) {
        trace_.emit("expire", {{"round", rep.round}, {"from", *last_wm}, {"to", rep.watermark}});
        ++out_.expirations;
      }
      last_wm = std::max(last_wm.value_or(0), rep.watermark);
      if (hooks_.on_round) hooks_.on_round(rep);

      std::optional<double> hit;
      for (std::size_t i = 0; i < due.size(); ++i) {
        TrialTrack& t = *due[i];
        const double acc = eval_(t.slot.model);
        const double clock = t.slot.clock.seconds();
        t.history.push_back({clock, acc});
        out_.best_accuracy = std::max(out_.best_accuracy, acc);
        trace_.emit("eval", {{"round", rep.round},
                             {"track", i},
                             {"kind", track_kind_name(t.kind)},
                             {"config", config_json(t.config())},
                             {"clock", clock},
                             {"accuracy", acc}});
        if (acc >= target_) hit = std::min(hit.value_or(clock), clock);
      }
      if (hit) {
        out_.reached = true;
        out_.time_to_target = *hit;
        reason = "target";
        break;
      }
      if (adaptive && params->decision_clock == DecisionClock::current) {
        const double now = st_.tracks.front().slot.clock.seconds();
        if (should_decide(st_, now)) decide(now, *params, *rng);
      }
    }
    out_.final_clock = max_clock();
    trace_.emit("termination", {{"reason", reason},
                                {"rounds", out_.rounds},
                                {"clock", out_.final_clock},
                                {"reached", out_.reached},
                                {"time_to_target", out_.reached ? TraceEvent(out_.time_to_target) : TraceEvent()}});
    return out_;
  }

  void set_interval(double intvl) { st_.intvl = intvl; }
  ConfiguratorState& state() { return st_; }

  double auto_interval(const ConfiguratorParams& params) const {
    double base = params.trial_intvl;
    if (base <= 0.0) {
      double worst = 0.0;
      for (const TrialTrack& t : st_.tracks) worst = std::max(worst, estimate_round_time(fed_, t.slot.model));
      base = static_cast<double>(params.trial_rounds) * worst;
    }
    return base * std::pow(params.interval_growth, static_cast<double>(st_.iteration));
  }

 private:
  double max_clock() const {
    double m = 0.0;
    for (const TrialTrack& t : st_.tracks) m = std::max(m, t.slot.clock.seconds());
    return m;
  }

  void decide(double now, const ConfiguratorParams& params, SeededRng& rng) {
    const std::size_t w = decide_winner(st_.tracks, now);
    TraceEvent scores = TraceEvent::array();
    for (const TrialTrack& t : st_.tracks) {
      const Evaluation* latest = nullptr;
      for (const Evaluation& e : t.history)
        if (e.clock <= now) latest = &e;
      scores.push_back({{"kind", track_kind_name(t.kind)},
                        {"config", config_json(t.config())},
                        {"accuracy", latest ? TraceEvent(latest->accuracy) : TraceEvent()},
                        {"rounds", t.slot.rounds}});
    }
    ModelState winner = st_.tracks[w].slot.model;
    trace_.emit("decision", {{"iteration", st_.iteration},
                             {"clock", now},
                             {"winner", track_kind_name(st_.tracks[w].kind)},
                             {"config", config_json(winner.config)},
                             {"tracks", scores}});
    ++out_.decisions;
    ++st_.iteration;
    install(dispatch(params, winner, rng), now);
    st_.intvl = auto_interval(params);
    emit_dispatch(winner);
  }

  Federation& fed_;
  Evaluator& eval_;
  std::size_t participants_;
  double target_;
  SessionBudget budget_;
  Trace& trace_;
  const SessionHooks& hooks_;
  ConfiguratorState st_;
  SessionOutcome out_;
};

}  // namespace

SessionOutcome run_session(const ModelState& backbone, Federation& fed, Evaluator& eval,
                           const ConfiguratorParams& params, std::size_t participants,
                           double target, const SessionBudget& budget, SeededRng& rng,
                           Trace& trace, const SessionHooks& hooks) {
  params.validate(backbone.spec);
  Driver drv(fed, eval, participants, target, budget, trace, hooks);
  drv.state().params = params;
  const ModelState start = insert_adapters(backbone, params.start, params.width_step, rng);
  drv.install(dispatch(params, start, rng), 0.0);
  drv.set_interval(drv.auto_interval(params));
  drv.emit_dispatch(start);
  return drv.run(true, &params, &rng);
}

SessionOutcome run_fixed_session(ModelState model, Federation& fed, Evaluator& eval,
                                 std::size_t participants, double target,
                                 const SessionBudget& budget, Trace& trace,
                                 const SessionHooks& hooks) {
  Driver drv(fed, eval, participants, target, budget, trace, hooks);
  std::vector<TrialTrack> one(1);
  one[0].slot.model = model;
  drv.install(std::move(one), 0.0);
  drv.emit_dispatch(model);
  return drv.run(false, nullptr, nullptr);
}

}  // namespace fedadapt
