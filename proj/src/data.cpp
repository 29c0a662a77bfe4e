#include "fedadapt/data.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>

#include "fedadapt/error.hpp"
#include "json.hpp"

namespace fedadapt {
namespace {

template <typename T>
void shuffle(std::vector<T>& v, SeededRng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.uniform_index(i)]);
}

std::size_t sample_categorical(std::span<const double> weights, SeededRng& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  // Rounding fell off the end: last positive weight.
  for (std::size_t i = weights.size(); i-- > 0;)
    if (weights[i] > 0.0) return i;
  return weights.size() - 1;
}

std::vector<double> draw_features(const SyntheticTaskSpec& spec, SeededRng& rng) {
  std::vector<double> f(spec.vocab * spec.teacher_dim, 0.0);
  for (std::size_t v = 1; v < spec.vocab; ++v)
    for (std::size_t i = 0; i < spec.teacher_dim; ++i) f[v * spec.teacher_dim + i] = rng.normal();
  return f;
}

}  // namespace

std::vector<double> source_token_features(const SyntheticTaskSpec& spec) {
  spec.validate();
  SeededRng rng(spec.teacher_seed);
  return draw_features(spec, rng);
}

std::vector<Sample> generate_source_corpus(const SyntheticTaskSpec& spec, std::size_t num_labels,
                                           std::size_t count, std::uint64_t seed) {
  if (num_labels < 2) throw ConfigError("pretrain.num_labels: must be >= 2");
  Teacher t;
  t.vocab = spec.vocab;
  t.dim = spec.teacher_dim;
  t.num_labels = num_labels;
  t.token_features = source_token_features(spec);
  SeededRng weight_rng(mix_seed(spec.teacher_seed, 2));
  t.weights.resize(spec.teacher_dim * num_labels);
  for (double& w : t.weights) w = weight_rng.normal();
  SeededRng rng(seed);
  std::vector<Sample> out(count);
  for (Sample& s : out) {
    s.tokens.assign(1, kClsToken);
    for (std::size_t p = 1; p < spec.seqlen; ++p)
      s.tokens.push_back(static_cast<int>(1 + rng.uniform_index(spec.vocab - 1)));
    s.label = t.predict(s.tokens);
  }
  return out;
}

void SyntheticTaskSpec::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("task." + field + ": " + why);
  };
  if (num_labels < 2) fail("num_labels", "must be >= 2");
  if (vocab < 2) fail("vocab", "must be >= 2");
  if (seqlen < 2) fail("seqlen", "must be >= 2");
  if (samples_per_label < 1) fail("samples_per_label", "must be >= 1");
  if (!(noise >= 0.0 && noise < 0.5)) fail("noise", "must lie in [0, 0.5)");
  if (teacher_dim < 1) fail("teacher_dim", "must be >= 1");
  if (!(affinity >= 0.0)) fail("affinity", "must be non-negative");
  if (!(shift >= 0.0 && shift <= 1.0)) fail("shift", "must lie in [0, 1]");
}

int Teacher::predict(std::span<const int> tokens) const {
  std::vector<double> feat(dim, 0.0);
  for (int t : tokens) {
    const double* f = token_features.data() + static_cast<std::size_t>(t) * dim;
    for (std::size_t i = 0; i < dim; ++i) feat[i] += f[i];
  }
  int best = 0;
  double best_score = -INFINITY;
  for (std::size_t c = 0; c < num_labels; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < dim; ++i) s += feat[i] * weights[i * num_labels + c];
    if (s > best_score) {
      best_score = s;
      best = static_cast<int>(c);
    }
  }
  return best;
}

Dataset generate_task(const SyntheticTaskSpec& spec, SeededRng& rng) {
  spec.validate();
  SeededRng teacher_rng(spec.teacher_seed);
  Dataset ds;
  ds.num_labels = spec.num_labels;
  Teacher& t = ds.teacher;
  t.vocab = spec.vocab;
  t.dim = spec.teacher_dim;
  t.num_labels = spec.num_labels;
  t.token_features = draw_features(spec, teacher_rng);
  t.weights.resize(spec.teacher_dim * spec.num_labels);
  for (double& w : t.weights) w = teacher_rng.normal();
  if (spec.shift > 0.0) {
    SeededRng shift_rng(mix_seed(spec.teacher_seed, 1));
    const double keep = std::sqrt(1.0 - spec.shift), fresh = std::sqrt(spec.shift);
    for (std::size_t v = 1; v < spec.vocab; ++v)
      for (std::size_t i = 0; i < spec.teacher_dim; ++i) {
        double& f = t.token_features[v * spec.teacher_dim + i];
        f = keep * f + fresh * shift_rng.normal();
      }
  }

  // Per-class token preference: softmax(affinity * standardized token score).
  std::vector<std::vector<double>> token_weights(spec.num_labels, std::vector<double>(spec.vocab, 0.0));
  for (std::size_t c = 0; c < spec.num_labels; ++c) {
    std::vector<double> score(spec.vocab, 0.0);
    for (std::size_t v = 1; v < spec.vocab; ++v) {
      double s = 0.0;
      for (std::size_t i = 0; i < spec.teacher_dim; ++i)
        s += t.token_features[v * spec.teacher_dim + i] *
             (t.weights[i * spec.num_labels + c] -
              [&] {
                double m = 0.0;
                for (std::size_t k = 0; k < spec.num_labels; ++k) m += t.weights[i * spec.num_labels + k];
                return m / static_cast<double>(spec.num_labels);
              }());
      score[v] = s;
    }
    double mean = 0.0, var = 0.0;
    for (std::size_t v = 1; v < spec.vocab; ++v) mean += score[v];
    mean /= static_cast<double>(spec.vocab - 1);
    for (std::size_t v = 1; v < spec.vocab; ++v) var += (score[v] - mean) * (score[v] - mean);
    const double sd = std::sqrt(var / static_cast<double>(spec.vocab - 1)) + 1e-12;
    for (std::size_t v = 1; v < spec.vocab; ++v)
      token_weights[c][v] = std::exp(spec.affinity * (score[v] - mean) / sd);
  }

  constexpr std::size_t kMaxAttempts = 10000;
  for (std::size_t c = 0; c < spec.num_labels; ++c) {
    for (std::size_t k = 0; k < spec.samples_per_label; ++k) {
      Sample s;
      bool accepted = false;
      for (std::size_t attempt = 0; attempt < kMaxAttempts && !accepted; ++attempt) {
        s.tokens.assign(1, kClsToken);
        for (std::size_t p = 1; p < spec.seqlen; ++p)
          s.tokens.push_back(static_cast<int>(sample_categorical(token_weights[c], rng)));
        accepted = t.predict(s.tokens) == static_cast<int>(c);
      }
      if (!accepted) {
        throw ConfigError("task: class " + std::to_string(c) + " is unreachable by rejection sampling; raise affinity");
      }
      s.label = static_cast<int>(c);
      ds.samples.push_back(std::move(s));
    }
  }

  const std::size_t flips = static_cast<std::size_t>(std::floor(spec.noise * static_cast<double>(ds.samples.size())));
  std::vector<std::size_t> order(ds.samples.size());
  std::iota(order.begin(), order.end(), 0);
  shuffle(order, rng);
  for (std::size_t i = 0; i < flips; ++i) {
    Sample& s = ds.samples[order[i]];
    const auto shift = 1 + rng.uniform_index(spec.num_labels - 1);
    s.label = static_cast<int>((static_cast<std::size_t>(s.label) + shift) % spec.num_labels);
  }
  shuffle(ds.samples, rng);
  return ds;
}

std::vector<std::vector<Sample>> partition_noniid(std::span<const Sample> samples,
                                                  std::size_t num_labels,
                                                  std::size_t num_clients, double a,
                                                  SeededRng& rng) {
  if (num_clients < 1) throw PartitionError("partition: need at least one client");
  if (!(a > 0.0)) throw PartitionError("partition: concentration must be positive");
  if (samples.size() < num_clients) {
    throw PartitionError("partition: " + std::to_string(samples.size()) + " samples cannot give " +
                         std::to_string(num_clients) + " clients one sample each");
  }
  std::vector<std::vector<std::size_t>> pools(num_labels);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto label = static_cast<std::size_t>(samples[i].label);
    if (label >= num_labels) throw DataError("partition: sample " + std::to_string(i) + " has label out of range");
    pools[label].push_back(i);
  }
  for (auto& p : pools) shuffle(p, rng);

  std::vector<std::vector<double>> mix(num_clients, std::vector<double>(num_labels));
  for (auto& q : mix) {
    double total = 0.0;
    for (double& v : q) total += (v = rng.gamma(a));
    for (double& v : q) v /= total;
  }

  // Round-robin slot filling keeps slices equal-sized; an exhausted label is
  // dropped from the client's mix for the remaining draws.
  std::vector<std::vector<Sample>> out(num_clients);
  std::vector<double> w(num_labels);
  for (std::size_t slot = 0; slot < samples.size(); ++slot) {
    const std::size_t c = slot % num_clients;
    double avail = 0.0;
    for (std::size_t k = 0; k < num_labels; ++k) avail += (w[k] = pools[k].empty() ? 0.0 : mix[c][k]);
    if (avail <= 0.0)
      for (std::size_t k = 0; k < num_labels; ++k) w[k] = pools[k].empty() ? 0.0 : 1.0;
    const std::size_t k = sample_categorical(w, rng);
    out[c].push_back(samples[pools[k].back()]);
    pools[k].pop_back();
  }
  return out;
}

Shard split_train_test(std::size_t client_id, std::vector<Sample> samples, double ratio,
                       SeededRng& rng) {
  if (samples.size() < 5) {
    throw SplitError("client " + std::to_string(client_id) + " holds " + std::to_string(samples.size()) +
                     " samples; a train/test split needs at least 5");
  }
  if (!(ratio > 0.0 && ratio < 1.0)) throw SplitError("split ratio must lie in (0, 1)");
  shuffle(samples, rng);
  std::stable_sort(samples.begin(), samples.end(),
                   [](const Sample& a, const Sample& b) { return a.label < b.label; });
  // Spread test picks evenly over the label-sorted order.
  const double test_frac = 1.0 - ratio;
  Shard sh;
  sh.client_id = client_id;
  const std::size_t n = samples.size();
  const auto n_test = static_cast<std::size_t>(std::floor(test_frac * static_cast<double>(n) + 1e-9));
  for (std::size_t i = 0; i < n; ++i) {
    const bool is_test = (i + 1) * n_test / n > i * n_test / n;
    (is_test ? sh.test : sh.train).push_back(std::move(samples[i]));
  }
  shuffle(sh.train, rng);
  return sh;
}

std::vector<double> label_histogram(std::span<const Sample> samples, std::size_t num_labels) {
  std::vector<double> h(num_labels, 0.0);
  for (const Sample& s : samples) h.at(static_cast<std::size_t>(s.label)) += 1.0;
  if (!samples.empty())
    for (double& v : h) v /= static_cast<double>(samples.size());
  return h;
}

double total_variation(std::span<const double> p, std::span<const double> q) {
  double tv = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) tv += std::abs(p[i] - q[i]);
  return 0.5 * tv;
}

void write_samples_jsonl(std::ostream& out, std::span<const Sample> samples) {
  for (const Sample& s : samples) out << nlohmann::json{{"tokens", s.tokens}, {"label", s.label}}.dump() << '\n';
}

std::vector<Sample> read_samples_jsonl(std::istream& in) {
  std::vector<Sample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      out.push_back({j.at("tokens").get<std::vector<int>>(), j.at("label").get<int>()});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace fedadapt
