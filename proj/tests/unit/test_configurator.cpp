#include <gtest/gtest.h>

#include <algorithm>

#include "fedadapt/configurator.hpp"
#include "fedadapt/error.hpp"

using namespace fedadapt;

namespace {

ModelSpec spec() {
  ModelSpec s;
  s.layers = 4;
  s.hidden = 16;
  s.heads = 2;
  s.ffn_dim = 32;
  s.vocab = 16;
  s.seqlen = 6;
  s.num_labels = 3;
  return s;
}

ModelState adapted(AdapterConfig cfg, std::uint64_t seed = 2) {
  SeededRng rng(seed);
  return insert_adapters(build_model(spec(), 5), cfg, 8, rng);
}

TrialTrack track(AdapterConfig cfg, std::vector<Evaluation> h) {
  TrialTrack t;
  t.slot.model = adapted(cfg);
  t.history = std::move(h);
  return t;
}

std::vector<ClientState> make_clients(std::size_t n) {
  SyntheticTaskSpec t;
  t.vocab = 16;
  t.seqlen = 6;
  t.num_labels = 3;
  t.samples_per_label = 12 * n;
  t.affinity = 2.0;
  SeededRng rng(1);
  const Dataset ds = generate_task(t, rng);
  auto parts = partition_noniid(ds.samples, 3, n, 10.0, rng);
  std::vector<ClientState> out;
  for (std::size_t i = 0; i < n; ++i) {
    ClientState c;
    c.id = i;
    c.shard = split_train_test(i, std::move(parts[i]), 0.8, rng);
    c.device = bundled_profile("tx2");
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace

TEST(Params, Validation) {
  ConfiguratorParams p;
  EXPECT_NO_THROW(p.validate(spec()));
  p.start = {5, 8};
  EXPECT_THROW(p.validate(spec()), ConfigError);
  p = {};
  p.start = {1, 4};
  EXPECT_THROW(p.validate(spec()), ConfigError);
  p = {};
  p.start = {1, 12};
  EXPECT_THROW(p.validate(spec()), ConfigError);
  p = {};
  p.interval_growth = 0.5;
  EXPECT_THROW(p.validate(spec()), ConfigError);
  p = {};
  p.trial_rounds = 0;
  EXPECT_THROW(p.validate(spec()), ConfigError);
  EXPECT_THROW(parse_decision_clock("later"), ConfigError);
  EXPECT_EQ(parse_decision_clock("max"), DecisionClock::max);
}

TEST(Dispatch, ThreeTracksWithInheritance) {
  ConfiguratorParams p;
  SeededRng rng(4);
  const ModelState w = adapted({2, 16});
  const auto tracks = dispatch(p, w, rng);
  ASSERT_EQ(tracks.size(), 3u);
  EXPECT_EQ(tracks[0].kind, TrackKind::current);
  EXPECT_EQ(tracks[1].config(), (AdapterConfig{3, 16}));
  EXPECT_EQ(tracks[2].config(), (AdapterConfig{2, 24}));
  EXPECT_EQ(extract_payload(tracks[0].slot.model), extract_payload(w));
  // Every winner buffer reappears unchanged under the same name.
  const AdapterPayload base = extract_payload(w);
  for (const auto& t : tracks) {
    const AdapterPayload p = extract_payload(t.slot.model);
    for (std::size_t i = 0; i < base.names.size(); ++i) {
      const auto it = std::find(p.names.begin(), p.names.end(), base.names[i]);
      ASSERT_NE(it, p.names.end()) << base.names[i];
      EXPECT_EQ(p.buffers[static_cast<std::size_t>(it - p.names.begin())], base.buffers[i]);
    }
  }
}

TEST(Dispatch, EdgesOmitTracks) {
  ConfiguratorParams p;
  SeededRng rng(4);
  auto t = dispatch(p, adapted({0, 8}), rng);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t[1].config(), (AdapterConfig{1, 8}));
  t = dispatch(p, adapted({4, 16}), rng);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t[1].kind, TrackKind::wider);
  p.max_width = 16;
  t = dispatch(p, adapted({4, 16}), rng);
  EXPECT_EQ(t.size(), 1u);
  p.depth_step = 3;
  t = dispatch(p, adapted({2, 8}), rng);
  EXPECT_EQ(t[1].config(), (AdapterConfig{4, 8}));
}

TEST(Decide, IntervalIsStrict) {
  ConfiguratorState s;
  s.t_trial = 10.0;
  s.intvl = 5.0;
  EXPECT_FALSE(should_decide(s, 15.0));
  EXPECT_TRUE(should_decide(s, 15.5));
}

TEST(Decide, LatestEvaluationAtOrBeforeNow) {
  std::vector<TrialTrack> t;
  t.push_back(track({1, 8}, {{1.0, 0.5}, {3.0, 0.6}}));
  t.push_back(track({2, 8}, {{2.0, 0.7}, {5.0, 0.4}}));
  EXPECT_EQ(decide_winner(t, 4.0), 1u);
  EXPECT_EQ(decide_winner(t, 6.0), 0u);
  EXPECT_EQ(decide_winner(t, 1.5), 0u);
  EXPECT_THROW(decide_winner(t, 0.5), DecisionError);
}

TEST(Decide, TiesPreferCheaperConfig) {
  std::vector<TrialTrack> t;
  t.push_back(track({2, 16}, {{1.0, 0.8}}));
  t.push_back(track({2, 8}, {{1.0, 0.8}}));
  t.push_back(track({3, 8}, {{1.0, 0.8}}));
  EXPECT_EQ(decide_winner(t, 2.0), 1u);
}

TEST(Share, EvenWithRemainderFirst) {
  EXPECT_EQ(share_participants(15, 3), (std::vector<std::size_t>{5, 5, 5}));
  EXPECT_EQ(share_participants(7, 3), (std::vector<std::size_t>{3, 2, 2}));
  EXPECT_THROW(share_participants(2, 3), ConfigError);
  EXPECT_THROW(share_participants(2, 0), ConfigError);
}

TEST(Estimate, BoundsObservedRoundTime) {
  FederationOptions o;
  Federation fed(make_clients(6), o, 1);
  TrackSlot a{adapted({2, 8}), 3, {}, 0};
  const double est = estimate_round_time(fed, a.model);
  TrackSlot* t[] = {&a};
  for (int i = 0; i < 3; ++i) EXPECT_LE(fed.run_round(t).tracks[0].round_time, est);
  EXPECT_LT(estimate_round_time(fed, adapted({0, 8})), est);
}

TEST(Session, BasesMonotoneAndDeterministic) {
  ConfiguratorParams p;
  p.trial_rounds = 2;
  SessionBudget b;
  b.max_rounds = 30;
  auto run = [&](std::vector<AdapterConfig>* dispatched) {
    FederationOptions o;
    Federation fed(make_clients(8), o, 3);
    auto clients = make_clients(8);
    std::vector<Sample> held;
    for (const auto& c : clients) held.insert(held.end(), c.shard.test.begin(), c.shard.test.end());
    Evaluator eval(held);
    SeededRng rng(9);
    Trace trace;
    SessionHooks hooks;
    hooks.on_dispatch = [&](const ModelState& winner, std::span<const TrialTrack> tracks) {
      dispatched->push_back(winner.config);
      EXPECT_EQ(tracks.front().config(), winner.config);
    };
    return std::make_pair(run_session(build_model(spec(), 5), fed, eval, p, 6, 2.0, b, rng, trace, hooks),
                          trace.str());
  };
  std::vector<AdapterConfig> d1, d2;
  const auto [o1, t1] = run(&d1);
  const auto [o2, t2] = run(&d2);
  EXPECT_EQ(t1, t2);
  EXPECT_FALSE(o1.reached);
  EXPECT_EQ(o1.rounds, 30u);
  EXPECT_EQ(d1, o1.bases);
  ASSERT_GE(o1.bases.size(), 2u);
  for (std::size_t i = 1; i < o1.bases.size(); ++i) {
    EXPECT_GE(o1.bases[i].depth, o1.bases[i - 1].depth);
    EXPECT_GE(o1.bases[i].width, o1.bases[i - 1].width);
  }
  EXPECT_EQ(o1.bases.front(), p.start);
}

TEST(FixedSession, ReachesEasyTarget) {
  FederationOptions o;
  Federation fed(make_clients(6), o, 3);
  auto clients = make_clients(6);
  std::vector<Sample> held;
  for (const auto& c : clients) held.insert(held.end(), c.shard.test.begin(), c.shard.test.end());
  Evaluator eval(held);
  Trace trace;
  SessionBudget b;
  b.max_rounds = 5;
  const SessionOutcome out = run_fixed_session(adapted({1, 8}), fed, eval, 3, 0.0, b, trace);
  EXPECT_TRUE(out.reached);
  EXPECT_EQ(out.rounds, 1u);
  EXPECT_EQ(out.bases, (std::vector<AdapterConfig>{{1, 8}}));
  EXPECT_GT(out.time_to_target, 0.0);
}
