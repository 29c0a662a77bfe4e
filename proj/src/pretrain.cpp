#include "fedadapt/pretrain.hpp"

#include <numeric>
#include <string>

#include "fedadapt/error.hpp"
#include "fedadapt/nn.hpp"
#include "fedadapt/rng.hpp"

namespace fedadapt {
namespace {

enum Tag : std::uint64_t { kInit = 1, kCorpus, kOrder, kHead, kHeldOut };

ModelState train_source_model(const ModelSpec& spec, const SyntheticTaskSpec& task,
                              const PretrainSpec& p) {
  p.validate();
  ModelSpec source = spec;
  source.num_labels = p.num_labels;
  ModelState m = build_model(source, mix_seed(p.seed, kInit));
  set_training_policy(m, {TrainingScope::full, 0});
  const std::vector<Sample> corpus = generate_source_corpus(task, p.num_labels, p.samples, mix_seed(p.seed, kCorpus));
  std::vector<Parameter*> params = m.trainable_parameters();
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  SeededRng rng(mix_seed(p.seed, kOrder));
  std::vector<Sample> batch;
  for (std::size_t e = 0; e < p.epochs; ++e) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
    for (std::size_t lo = 0; lo < order.size(); lo += p.batch_size) {
      batch.clear();
      for (std::size_t i = lo; i < std::min(order.size(), lo + p.batch_size); ++i) batch.push_back(corpus[order[i]]);
      backprop(m, make_batch(batch), batch_labels(batch));
      sgd_step(params, p.lr);
    }
  }
  return m;
}

}  // namespace

void PretrainSpec::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("pretrain." + field + ": " + why);
  };
  if (num_labels < 2) fail("num_labels", "must be >= 2");
  if (samples < 1) fail("samples", "must be >= 1");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (!(lr > 0.0)) fail("lr", "must be positive");
}

ModelState pretrain_backbone(const ModelSpec& spec, const SyntheticTaskSpec& task,
                             const PretrainSpec& pretrain) {
  ModelState src = train_source_model(spec, task, pretrain);
  ModelState m = build_model(spec, mix_seed(pretrain.seed, kInit));
  m.tok_emb.value = src.tok_emb.value;
  m.pos_emb.value = src.pos_emb.value;
  for (std::size_t j = 0; j < spec.layers; ++j) {
    std::vector<Parameter*> to, from;
    m.blocks[j].collect(to);
    src.blocks[j].collect(from);
    for (std::size_t k = 0; k < to.size(); ++k) to[k]->value = from[k]->value;
  }
  SeededRng head(mix_seed(pretrain.seed, kHead));
  for (double& w : m.head_w.value.data) w = 0.02 * head.normal();
  set_training_policy(m, {TrainingScope::adapters, 0});
  return m;
}

double pretrain_source_accuracy(const ModelSpec& spec, const SyntheticTaskSpec& task,
                                const PretrainSpec& pretrain) {
  const ModelState m = train_source_model(spec, task, pretrain);
  const auto held = generate_source_corpus(task, pretrain.num_labels, 1000, mix_seed(pretrain.seed, kHeldOut));
  return evaluate(m, held);
}

}  // namespace fedadapt
