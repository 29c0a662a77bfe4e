#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedadapt/adapter.hpp"
#include "fedadapt/fed.hpp"
#include "fedadapt/trace.hpp"

namespace fedadapt {

enum class TrackKind { current, deeper, wider };
const char* track_kind_name(TrackKind k);

/// Which clock stands for "now" when deciding.
enum class DecisionClock { current, max };
DecisionClock parse_decision_clock(const std::string& s);
const char* decision_clock_name(DecisionClock c);

struct Evaluation {
  double clock = 0.0;
  double accuracy = 0.0;
};

struct TrialTrack {
  TrackKind kind = TrackKind::current;
  TrackSlot slot;
  std::vector<Evaluation> history;

  const AdapterConfig& config() const { return slot.model.config; }
};

struct ConfiguratorParams {
  AdapterConfig start{0, 8};  // D_0, W_0
  std::size_t depth_step = 1;  // S_d
  std::size_t width_step = 8;  // S_w
  std::size_t max_width = 64;
  /// Seconds between decisions; 0 picks trial_rounds times the slowest
  /// live track's estimated round time at each dispatch.
  double trial_intvl = 0.0;
  std::size_t trial_rounds = 3;
  /// The interval is multiplied by this factor after every decision.
  double interval_growth = 1.0;
  DecisionClock decision_clock = DecisionClock::current;

  void validate(const ModelSpec& spec) const;
};

struct ConfiguratorState {
  std::size_t iteration = 0;
  AdapterConfig base;
  double t_trial = 0.0;
  double intvl = 0.0;
  ConfiguratorParams params;
  std::vector<TrialTrack> tracks;
};

/// Current, deeper (depth step capped at D, omitted at d = D) and wider
/// (omitted at d = 0 or past max_width) tracks derived from the winner.
/// Fresh weights are drawn from rng in that order.
std::vector<TrialTrack> dispatch(const ConfiguratorParams& params, const ModelState& winner,
                                 SeededRng& rng);

/// True iff now - T_trial exceeds the interval.
bool should_decide(const ConfiguratorState& state, double now);

/// Index of the track with the highest latest accuracy among evaluations
/// made at or before `now`; ties go to the smaller depth, then the smaller
/// width. Tracks without such an evaluation are skipped. Throws
/// DecisionError when no track qualifies.
std::size_t decide_winner(std::span<const TrialTrack> tracks, double now);

/// Splits `total` clients evenly over `tracks`, earlier tracks taking the
/// remainder.
std::vector<std::size_t> share_participants(std::size_t total, std::size_t tracks);

/// Upper bound on one round of a track: every client's full shard without
/// cache hits, plus both transfers; max over the population.
double estimate_round_time(const Federation& fed, const ModelState& model);

struct SessionBudget {
  std::size_t max_rounds = 200;
  /// Emulated seconds; 0 disables the limit.
  double max_clock = 0.0;
};

struct SessionOutcome {
  bool reached = false;
  double time_to_target = 0.0;
  std::size_t rounds = 0;
  double final_clock = 0.0;
  double best_accuracy = 0.0;
  std::vector<AdapterConfig> bases;
  std::size_t expirations = 0;
  std::size_t decisions = 0;
};

struct SessionHooks {
  std::function<void(const ModelState& winner, std::span<const TrialTrack> tracks)> on_dispatch;
  std::function<void(const RoundReport& report)> on_round;
};

/// Progressive session: rounds over due tracks, evaluation after each,
/// decisions at interval boundaries, re-dispatch from the winner. Stops when
/// an evaluation reaches `target` or the budget runs out.
SessionOutcome run_session(const ModelState& backbone, Federation& fed, Evaluator& eval,
                           const ConfiguratorParams& params, std::size_t participants,
                           double target, const SessionBudget& budget, SeededRng& rng,
                           Trace& trace, const SessionHooks& hooks = {});

/// Single-track session with a fixed trainable set.
SessionOutcome run_fixed_session(ModelState model, Federation& fed, Evaluator& eval,
                                 std::size_t participants, double target,
                                 const SessionBudget& budget, Trace& trace,
                                 const SessionHooks& hooks = {});

TraceEvent config_json(const AdapterConfig& c);

}  // namespace fedadapt
