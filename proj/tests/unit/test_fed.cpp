#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "fedadapt/adapter.hpp"
#include "fedadapt/error.hpp"
#include "fedadapt/fed.hpp"

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

std::vector<ClientState> make_clients(std::size_t n, std::uint64_t seed = 1) {
  SyntheticTaskSpec t;
  t.vocab = 16;
  t.seqlen = 6;
  t.num_labels = 3;
  t.samples_per_label = 10 * n;
  t.affinity = 2.0;
  SeededRng rng(seed);
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

ModelState adapted(AdapterConfig cfg, std::uint64_t seed = 2) {
  SeededRng rng(seed);
  return insert_adapters(build_model(spec(), 5), cfg, 8, rng);
}

AdapterPayload random_payload(std::size_t scalars, SeededRng& rng) {
  AdapterPayload p;
  p.config = {1, 8};
  p.names = {"a", "b"};
  p.buffers = {std::vector<double>(scalars), std::vector<double>(3)};
  for (auto& b : p.buffers)
    for (double& v : b) v = rng.normal();
  return p;
}

}  // namespace

TEST(SelectClients, DistinctInRangeDeterministic) {
  SeededRng a(3), b(3);
  const auto x = select_clients(40, 15, a);
  EXPECT_EQ(x, select_clients(40, 15, b));
  EXPECT_EQ(std::set<std::size_t>(x.begin(), x.end()).size(), 15u);
  for (auto id : x) EXPECT_LT(id, 40u);
  SeededRng c(3);
  EXPECT_THROW(select_clients(4, 5, c), SelectionError);
  EXPECT_EQ(select_clients(4, 4, c).size(), 4u);
}

TEST(SelectClients, MarginalFrequenciesUniform) {
  SeededRng rng(11);
  std::vector<int> hits(20, 0);
  const int trials = 4000;
  for (int t = 0; t < trials; ++t)
    for (auto id : select_clients(20, 5, rng)) ++hits[id];
  const double p = 0.25, sigma = std::sqrt(trials * p * (1 - p));
  for (int h : hits) EXPECT_NEAR(h, trials * p, 4 * sigma);
}

TEST(FedAvg, IdenticalPayloadsAreExact) {
  SeededRng rng(1);
  const AdapterPayload p = random_payload(50, rng);
  std::vector<ClientUpdate> u{{4, p, 3}, {1, p, 7}, {9, p, 1}};
  EXPECT_EQ(fedavg(u), p);
}

TEST(FedAvg, MatchesWeightedMeanOracle) {
  SeededRng rng(2);
  std::vector<ClientUpdate> u;
  for (std::size_t i = 0; i < 6; ++i) u.push_back({i, random_payload(40, rng), 1 + rng.uniform_index(20)});
  const AdapterPayload avg = fedavg(u);
  long double total = 0;
  for (const auto& x : u) total += static_cast<long double>(x.samples);
  for (std::size_t b = 0; b < avg.buffers.size(); ++b)
    for (std::size_t j = 0; j < avg.buffers[b].size(); ++j) {
      long double want = 0;
      for (const auto& x : u) want += static_cast<long double>(x.samples) * x.payload.buffers[b][j];
      want /= total;
      EXPECT_NEAR(avg.buffers[b][j], static_cast<double>(want), 1e-12);
    }
}

TEST(FedAvg, OrderInvariantAndInsideHull) {
  SeededRng rng(3);
  std::vector<ClientUpdate> u;
  for (std::size_t i = 0; i < 5; ++i) u.push_back({i * 3, random_payload(30, rng), 2 + i});
  const AdapterPayload a = fedavg(u);
  std::reverse(u.begin(), u.end());
  EXPECT_EQ(fedavg(u), a);
  for (std::size_t b = 0; b < a.buffers.size(); ++b)
    for (std::size_t j = 0; j < a.buffers[b].size(); ++j) {
      double lo = INFINITY, hi = -INFINITY;
      for (const auto& x : u) {
        lo = std::min(lo, x.payload.buffers[b][j]);
        hi = std::max(hi, x.payload.buffers[b][j]);
      }
      EXPECT_GE(a.buffers[b][j], lo);
      EXPECT_LE(a.buffers[b][j], hi);
    }
}

TEST(FedAvg, Errors) {
  SeededRng rng(4);
  const AdapterPayload p = random_payload(5, rng);
  AdapterPayload q = p;
  q.buffers[0].push_back(1.0);
  EXPECT_THROW(fedavg({{0, p, 1}, {1, q, 1}}), AggregationError);
  q = p;
  q.names[1] = "c";
  EXPECT_THROW(fedavg({{0, p, 1}, {1, q, 1}}), AggregationError);
  q = p;
  q.config = {2, 8};
  EXPECT_THROW(fedavg({{0, p, 1}, {1, q, 1}}), AggregationError);
  EXPECT_THROW(fedavg({{0, p, 0}, {1, p, 0}}), AggregationError);
  EXPECT_THROW(fedavg({}), AggregationError);
}

TEST(LocalTrain, StepsAndFrozenBackbone) {
  auto clients = make_clients(4);
  const ModelState g = adapted({2, 8});
  LocalTrainOptions o;
  const LocalResult r = local_train(clients[0], g, extract_payload(g), 2, 0, o);
  const std::size_t n = clients[0].shard.train.size();
  EXPECT_EQ(r.samples, n);
  EXPECT_EQ(r.steps, (n + 3) / 4);
  EXPECT_EQ(r.recomputes, r.steps);
  EXPECT_EQ(r.payload.config, g.config);
  EXPECT_NE(r.payload, extract_payload(g));

  o.max_steps = 2;
  o.epochs = 3;
  EXPECT_EQ(local_train(clients[1], g, extract_payload(g), 2, 0, o).steps, 2u);
  o.max_steps = 0;
  EXPECT_EQ(local_train(clients[1], g, extract_payload(g), 2, 0, o).steps, 3 * ((clients[1].shard.train.size() + 3) / 4));
}

TEST(LocalTrain, CachedAndUncachedAgreeBitExactly) {
  auto with = make_clients(3);
  auto without = make_clients(3);
  const ModelState g = adapted({2, 16});
  const AdapterPayload p = extract_payload(g);
  LocalTrainOptions on, off;
  off.use_cache = false;
  for (std::size_t round = 0; round < 3; ++round) {
    const LocalResult a = local_train(with[1], g, p, 2, round, on);
    const LocalResult b = local_train(without[1], g, p, 2, round, off);
    EXPECT_EQ(a.payload, b.payload) << "round " << round;
    if (round > 0) {
      EXPECT_EQ(a.cache_hits, a.steps);
    }
    EXPECT_EQ(b.cache_hits + b.recomputes, 0u);
  }
}

TEST(LocalTrain, ComputeChargesFollowCostModel) {
  auto clients = make_clients(2);
  const ModelState g = adapted({1, 8});
  const DeviceProfile& tx2 = bundled_profile("tx2");
  LocalTrainOptions o;
  const LocalResult cold = local_train(clients[0], g, extract_payload(g), 1, 0, o);
  EXPECT_DOUBLE_EQ(cold.compute_s, static_cast<double>(cold.steps) * compute_time_per_batch(tx2, 4, 1, false));
  const LocalResult warm = local_train(clients[0], g, extract_payload(g), 1, 1, o);
  EXPECT_DOUBLE_EQ(warm.compute_s, static_cast<double>(warm.steps) * compute_time_per_batch(tx2, 4, 1, true));
  // A deeper watermark stores a lower boundary; a shallow model then
  // re-runs the frozen layers in between.
  const LocalResult deep = local_train(clients[1], g, extract_payload(g), 3, 0, o);
  EXPECT_EQ(deep.recomputes, deep.steps);
  const LocalResult after = local_train(clients[1], g, extract_payload(g), 3, 1, o);
  EXPECT_DOUBLE_EQ(after.compute_s,
                   static_cast<double>(after.steps) * batch_compute_seconds(tx2, 4, 3, 1, true));
  EXPECT_THROW(local_train(clients[1], g, extract_payload(g), 0, 2, o), ContractError);
}

TEST(LocalTrain, ExpiredEntriesAreCounted) {
  auto clients = make_clients(2);
  LocalTrainOptions o;
  const ModelState g1 = adapted({1, 8});
  local_train(clients[0], g1, extract_payload(g1), 1, 0, o);
  const ModelState g2 = adapted({2, 8});
  const LocalResult r = local_train(clients[0], g2, extract_payload(g2), 2, 1, o);
  EXPECT_EQ(r.expired, r.steps);
  EXPECT_EQ(r.integrity_failures, 0u);
}

TEST(Federation, RoundAccountingAndWatermark) {
  FederationOptions o;
  Federation fed(make_clients(10), o, 7);
  TrackSlot a{adapted({0, 8}), 3, {}, 0};
  TrackSlot b{adapted({1, 8}), 2, {}, 0};
  TrackSlot* tracks[] = {&a, &b};
  const RoundReport r = fed.run_round(tracks);
  EXPECT_EQ(r.round, 0u);
  EXPECT_EQ(r.watermark, 1u);
  ASSERT_EQ(r.clients.size(), 5u);
  std::set<std::size_t> ids;
  for (const auto& c : r.clients) ids.insert(c.client);
  EXPECT_EQ(ids.size(), 5u);
  EXPECT_EQ(r.clients[0].track, 0u);
  EXPECT_EQ(r.clients[4].track, 1u);
  ASSERT_EQ(r.tracks.size(), 2u);
  EXPECT_EQ(r.tracks[0].bytes, 2 * 3 * fed.payload_bytes_for(a.model));
  EXPECT_EQ(r.tracks[1].bytes, 2 * 2 * fed.payload_bytes_for(b.model));
  double worst = 0.0;
  for (const auto& c : r.clients)
    if (c.track == 1) worst = std::max(worst, c.download_s + c.compute_s + c.upload_s);
  EXPECT_EQ(r.tracks[1].round_time, worst);
  EXPECT_EQ(b.clock.seconds(), worst);
  EXPECT_EQ(a.rounds, 1u);
  EXPECT_EQ(fed.watermark().history().size(), 1u);
  EXPECT_EQ(fed.round(), 1u);
  for (const auto& c : r.clients) EXPECT_EQ(fed.watermark().last_participation(c.client), 0u);
}

TEST(Federation, WatermarkCoversTracksSittingOut) {
  FederationOptions o;
  Federation fed(make_clients(6), o, 2);
  TrackSlot a{adapted({1, 8}), 2, {}, 0};
  TrackSlot* t[] = {&a};
  EXPECT_EQ(fed.run_round(t).watermark, 1u);
  EXPECT_EQ(fed.run_round(t, 3).watermark, 3u);
  EXPECT_EQ(fed.run_round(t, 0).watermark, 1u);
  EXPECT_EQ(std::vector<std::size_t>(fed.watermark().history().begin(), fed.watermark().history().end()),
            (std::vector<std::size_t>{1, 3, 1}));
}

TEST(Federation, ParallelAndSerialIdentical) {
  FederationOptions par, ser;
  ser.parallel = false;
  Federation f1(make_clients(12), par, 3), f2(make_clients(12), ser, 3);
  TrackSlot a1{adapted({2, 8}), 4, {}, 0}, a2 = a1;
  TrackSlot* t1[] = {&a1};
  TrackSlot* t2[] = {&a2};
  for (int i = 0; i < 3; ++i) {
    const RoundReport r1 = f1.run_round(t1);
    const RoundReport r2 = f2.run_round(t2);
    ASSERT_EQ(r1.clients.size(), r2.clients.size());
    for (std::size_t k = 0; k < r1.clients.size(); ++k) EXPECT_EQ(r1.clients[k].client, r2.clients[k].client);
    EXPECT_EQ(r1.tracks[0].clock, r2.tracks[0].clock);
  }
  EXPECT_EQ(extract_payload(a1.model), extract_payload(a2.model));
}

TEST(Federation, Errors) {
  FederationOptions o;
  Federation fed(make_clients(4), o, 1);
  EXPECT_THROW(fed.run_round(std::span<TrackSlot* const>{}), ContractError);
  TrackSlot big{adapted({1, 8}), 5, {}, 0};
  TrackSlot* t[] = {&big};
  EXPECT_THROW(fed.run_round(t), SelectionError);
  auto clients = make_clients(3);
  clients[1].id = 7;
  EXPECT_THROW(Federation(std::move(clients), o, 1), ConfigError);
}

TEST(TrainableDepth, FromPolicy) {
  EXPECT_EQ(trainable_depth(adapted({0, 8})), 0u);
  EXPECT_EQ(trainable_depth(adapted({3, 8})), 3u);
  ModelState m = build_model(spec(), 1);
  set_training_policy(m, {TrainingScope::layer_freeze, 1});
  EXPECT_EQ(trainable_depth(m), 3u);
  set_training_policy(m, {TrainingScope::full, 0});
  EXPECT_EQ(trainable_depth(m), 4u);
}

TEST(Evaluator, MatchesDirectEvaluation) {
  auto clients = make_clients(4);
  std::vector<Sample> held;
  for (const auto& c : clients) held.insert(held.end(), c.shard.test.begin(), c.shard.test.end());
  Evaluator eval(held, 7);
  for (AdapterConfig cfg : {AdapterConfig{0, 8}, AdapterConfig{2, 8}, AdapterConfig{0, 8}, AdapterConfig{4, 16}})
    EXPECT_EQ(eval(adapted(cfg)), evaluate(adapted(cfg), held));
  ModelState full = build_model(spec(), 5);
  set_training_policy(full, {TrainingScope::full, 0});
  EXPECT_EQ(eval(full), evaluate(full, held));
  EXPECT_THROW(Evaluator(std::vector<Sample>{}), EvaluationError);
}
