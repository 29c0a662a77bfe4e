#include "fedadapt/fed.hpp"

#include <algorithm>
#include <exception>
#include <numeric>

#include "fedadapt/error.hpp"

namespace fedadapt {

std::size_t trainable_depth(const ModelState& model) {
  return model.spec.layers - model.frozen_prefix();
}

LocalResult local_train(ClientState& client, const ModelState& global,
                        const AdapterPayload& payload, std::size_t watermark,
                        std::size_t round, const LocalTrainOptions& opts) {
  if (client.shard.train.empty()) {
    throw TrainingError("client " + std::to_string(client.id) + " has no training samples");
  }
  if (opts.batch_size == 0) throw ConfigError("local.batch_size: must be >= 1");
  ModelState model = global;
  apply_payload(model, payload);

  const std::size_t D = model.spec.layers;
  const std::size_t depth = trainable_depth(model);
  const bool cached = opts.use_cache && !model.embeddings_trainable();
  if (cached && watermark < depth) {
    throw ContractError("watermark " + std::to_string(watermark) + " below trainable depth " +
                        std::to_string(depth));
  }
  std::vector<Parameter*> params = model.trainable_parameters();
  const auto& train = client.shard.train;
  const std::size_t nb = (train.size() + opts.batch_size - 1) / opts.batch_size;

  LocalResult r;
  r.samples = train.size();
  for (std::size_t e = 0; e < opts.epochs; ++e) {
    for (std::size_t b = 0; b < nb; ++b) {
      if (opts.max_steps && r.steps == opts.max_steps) break;
      const std::size_t lo = b * opts.batch_size;
      const std::size_t hi = std::min(train.size(), lo + opts.batch_size);
      const std::span<const Sample> batch(train.data() + lo, hi - lo);
      const TokenBatch tokens = make_batch(batch);
      const std::vector<int> labels = batch_labels(batch);
      if (cached) {
        FetchResult f = fetch_or_recompute(client.cache, watermark, model, b, tokens, round);
        backprop_from_boundary(model, f.boundary, f.activations, labels);
        if (f.recomputed) {
          ++r.recomputes;
          r.compute_s += batch_compute_seconds(client.device, D, D, depth, false);
        } else {
          ++r.cache_hits;
          r.compute_s += batch_compute_seconds(client.device, D, D - f.boundary, depth, true);
        }
        r.expired += f.expired;
        r.integrity_failures += f.integrity_failure;
      } else {
        backprop(model, tokens, labels);
        r.compute_s += batch_compute_seconds(client.device, D, D, depth, false);
      }
      sgd_step(params, opts.lr);
      ++r.steps;
    }
  }
  r.payload = extract_payload(model);
  return r;
}

std::vector<std::size_t> select_clients(std::size_t population, std::size_t k, SeededRng& rng) {
  if (k > population) {
    throw SelectionError("cannot select " + std::to_string(k) + " clients from " +
                         std::to_string(population));
  }
  std::vector<std::size_t> ids(population);
  std::iota(ids.begin(), ids.end(), 0);
  for (std::size_t i = 0; i < k; ++i) std::swap(ids[i], ids[i + rng.uniform_index(population - i)]);
  ids.resize(k);
  return ids;
}

AdapterPayload fedavg(std::vector<ClientUpdate> updates) {
  if (updates.empty()) throw AggregationError("fedavg: no updates");
  std::sort(updates.begin(), updates.end(),
            [](const ClientUpdate& a, const ClientUpdate& b) { return a.client < b.client; });
  const AdapterPayload& first = updates.front().payload;
  std::size_t total = 0;
  for (const ClientUpdate& u : updates) {
    const AdapterPayload& p = u.payload;
    if (p.config != first.config || p.names != first.names || p.buffers.size() != first.buffers.size()) {
      throw AggregationError("fedavg: client " + std::to_string(u.client) + " sent a payload for a different configuration");
    }
    for (std::size_t i = 0; i < p.buffers.size(); ++i) {
      if (p.buffers[i].size() != first.buffers[i].size()) {
        throw AggregationError("fedavg: client " + std::to_string(u.client) + " buffer " + p.names[i] + " has the wrong size");
      }
    }
    total += u.samples;
  }
  if (total == 0) throw AggregationError("fedavg: total sample count is zero");

  // Deltas against the first payload keep identical inputs exact; the clamp
  // guards the convex hull against rounding.
  AdapterPayload out = first;
  for (std::size_t i = 0; i < out.buffers.size(); ++i) {
    auto& dst = out.buffers[i];
    const auto& x0 = first.buffers[i];
    for (std::size_t j = 0; j < dst.size(); ++j) {
      double acc = 0.0, lo = x0[j], hi = x0[j];
      for (const ClientUpdate& u : updates) {
        const double x = u.payload.buffers[i][j];
        acc += static_cast<double>(u.samples) / static_cast<double>(total) * (x - x0[j]);
        lo = std::min(lo, x);
        hi = std::max(hi, x);
      }
      dst[j] = std::clamp(x0[j] + acc, lo, hi);
    }
  }
  return out;
}

Federation::Federation(std::vector<ClientState> clients, FederationOptions opts, std::uint64_t seed)
    : clients_(std::move(clients)), opts_(opts), rng_(seed) {
  for (std::size_t i = 0; i < clients_.size(); ++i) {
    if (clients_[i].id != i) throw ConfigError("federation: client ids must be 0..N-1 in order");
    watermark_.register_client(i);
  }
  opts_.network.validate();
}

std::size_t Federation::payload_bytes_for(const ModelState& model) const {
  return payload_bytes(trainable_param_count(model), opts_.wire_scalar_width);
}

void Federation::clear_caches() {
  for (ClientState& c : clients_) c.cache.clear();
}

RoundReport Federation::run_round(std::span<TrackSlot* const> tracks, std::size_t dispatched_depth) {
  if (tracks.empty()) throw ContractError("run_round: no tracks");
  std::size_t k = 0, depth = dispatched_depth;
  for (const TrackSlot* t : tracks) {
    if (t->participants == 0) throw ConfigError("run_round: track with zero participants");
    k += t->participants;
    depth = std::max(depth, trainable_depth(t->model));
  }
  RoundReport rep;
  rep.round = round_;
  rep.watermark = depth;
  SeededRng pick = rng_.fork(round_);
  const std::vector<std::size_t> chosen = select_clients(clients_.size(), k, pick);
  watermark_.record_round(round_, depth);

  std::vector<std::size_t> track_of(k);
  for (std::size_t t = 0, pos = 0; t < tracks.size(); ++t)
    for (std::size_t i = 0; i < tracks[t]->participants; ++i) track_of[pos++] = t;

  std::vector<AdapterPayload> sent;
  std::vector<std::size_t> bytes;
  for (const TrackSlot* t : tracks) {
    sent.push_back(extract_payload(t->model));
    bytes.push_back(payload_bytes_for(t->model));
  }
  std::vector<std::size_t> marks(k);
  for (std::size_t i = 0; i < k; ++i) marks[i] = watermark_.query(chosen[i]).value_or(depth);

  std::vector<LocalResult> results(k);
  std::vector<std::exception_ptr> errors(k);
  const long long kk = static_cast<long long>(k);
#pragma omp parallel for schedule(dynamic) if (opts_.parallel)
  for (long long ii = 0; ii < kk; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    try {
      results[i] = local_train(clients_[chosen[i]], tracks[track_of[i]]->model, sent[track_of[i]],
                               marks[i], round_, opts_.local);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<std::vector<ClientUpdate>> per_track(tracks.size());
  std::vector<std::vector<ClientTiming>> timings(tracks.size());
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t t = track_of[i];
    const ClientState& c = clients_[chosen[i]];
    LocalResult& r = results[i];
    ClientRecord rec;
    rec.client = c.id;
    rec.track = t;
    rec.samples = r.samples;
    rec.steps = r.steps;
    rec.cache_hits = r.cache_hits;
    rec.recomputes = r.recomputes;
    rec.expired = r.expired;
    rec.integrity_failures = r.integrity_failures;
    rec.download_s = transfer_seconds(bytes[t], opts_.network.downlink_bytes_per_s);
    rec.compute_s = r.compute_s;
    rec.upload_s = transfer_seconds(bytes[t], opts_.network.uplink_bytes_per_s);
    rec.bytes = 2 * bytes[t];
    rec.joules = energy_joules(rec.compute_s, rec.download_s + rec.upload_s, c.device);
    timings[t].push_back({rec.download_s, rec.compute_s, rec.upload_s});
    per_track[t].push_back({c.id, std::move(r.payload), r.samples});
    rep.clients.push_back(rec);
    watermark_.mark_participation(c.id, round_);
  }
  for (std::size_t t = 0; t < tracks.size(); ++t) {
    TrackSlot& slot = *tracks[t];
    apply_payload(slot.model, fedavg(std::move(per_track[t])));
    const double dt = round_time(timings[t]);
    slot.clock.advance(dt);
    ++slot.rounds;
    TrackRoundRecord tr;
    tr.track = t;
    tr.config = slot.model.config;
    tr.payload_bytes = bytes[t];
    tr.round_time = dt;
    tr.clock = slot.clock.seconds();
    for (const ClientRecord& c : rep.clients) {
      if (c.track != t) continue;
      tr.bytes += c.bytes;
      tr.joules += c.joules;
    }
    rep.tracks.push_back(tr);
  }
  ++round_;
  return rep;
}

}  // namespace fedadapt

namespace fedadapt {

Evaluator::Evaluator(std::vector<Sample> samples, std::size_t batch_size)
    : samples_(std::move(samples)), labels_(batch_labels(samples_)), batch_size_(batch_size) {
  if (samples_.empty()) throw EvaluationError("evaluator: empty held-out set");
}

double Evaluator::operator()(const ModelState& model) {
  if (model.embeddings_trainable()) return evaluate(model, samples_, batch_size_);
  const std::size_t boundary = model.frozen_prefix();
  if (memo_.size() <= boundary) memo_.resize(boundary + 1);
  if (!memo_[boundary]) memo_[boundary] = forward_layers(model, embed(model, make_batch(samples_)), 0, boundary);
  return evaluate_from_boundary(model, boundary, *memo_[boundary], labels_, batch_size_);
}

}  // namespace fedadapt
