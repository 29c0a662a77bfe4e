#include "fedadapt/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedadapt/error.hpp"
#include "fedadapt/rng.hpp"

namespace fedadapt {
namespace {

std::string layer_prefix(std::size_t layer) { return "layer" + std::to_string(layer); }

void fill_normal(Parameter& p, SeededRng& rng, double stddev) {
  for (double& v : p.value.data) v = rng.normal(0.0, stddev);
}

void fill_const(Parameter& p, double v) { std::fill(p.value.data.begin(), p.value.data.end(), v); }

struct AdapterTape {
  Tensor input, pre, act;
};

struct BlockTape {
  AttentionCache attn;
  LayerNormCache ln1, ln2;
  Tensor h1, ff_pre, ff_act;
  Tensor h2;
  std::vector<AdapterTape> adapters;
};

bool block_trainable(const TransformerBlock& b) {
  std::vector<const Parameter*> ps;
  b.collect(ps);
  return std::any_of(ps.begin(), ps.end(), [](const Parameter* p) { return p->trainable; });
}

bool stack_trainable(const AdapterStack& s) {
  return std::any_of(s.begin(), s.end(), [](const MetaAdapter& m) {
    return m.down_w.trainable || m.down_b.trainable || m.up_w.trainable || m.up_b.trainable;
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out(a.shape);
  for (std::size_t i = 0; i < a.numel(); ++i) out.data[i] = a.data[i] + b.data[i];
  return out;
}

void add_into(Tensor& a, const Tensor& b) {
  for (std::size_t i = 0; i < a.numel(); ++i) a.data[i] += b.data[i];
}

Tensor block_forward(const TransformerBlock& blk, const AdapterStack& stack,
                     const ModelSpec& spec, const Tensor& x, BlockTape* tape) {
  Tensor a = multi_head_attention(x, blk.attn, spec.heads, tape ? &tape->attn : nullptr);
  Tensor h1 = layer_norm(add(x, a), blk.ln1_gain, blk.ln1_shift, spec.ln_eps,
                         tape ? &tape->ln1 : nullptr);
  Tensor ff_pre = linear_forward(h1, blk.ff1_w, blk.ff1_b);
  Tensor ff_act = activation_forward(ff_pre, spec.activation);
  Tensor f2 = linear_forward(ff_act, blk.ff2_w, blk.ff2_b);
  Tensor h = layer_norm(add(h1, f2), blk.ln2_gain, blk.ln2_shift, spec.ln_eps,
                        tape ? &tape->ln2 : nullptr);
  if (tape) {
    tape->h1 = std::move(h1);
    tape->ff_pre = std::move(ff_pre);
    tape->ff_act = std::move(ff_act);
    tape->adapters.clear();
  }
  for (const MetaAdapter& m : stack) {
    Tensor pre = linear_forward(h, m.down_w, m.down_b);
    Tensor z = activation_forward(pre, spec.activation);
    Tensor up = linear_forward(z, m.up_w, m.up_b);
    Tensor next = add(h, up);
    if (tape) tape->adapters.push_back({std::move(h), std::move(pre), std::move(z)});
    h = std::move(next);
  }
  return h;
}

/// need_input: the gradient w.r.t. the block input is required below.
Tensor block_backward(TransformerBlock& blk, AdapterStack& stack, const ModelSpec& spec,
                      const BlockTape& tape, Tensor dy, bool need_input) {
  const bool internals = need_input || block_trainable(blk);
  for (std::size_t i = stack.size(); i-- > 0;) {
    MetaAdapter& m = stack[i];
    const AdapterTape& t = tape.adapters[i];
    bool need_dh = internals;
    for (std::size_t k = 0; k < i && !need_dh; ++k) {
      const MetaAdapter& below = stack[k];
      need_dh = below.down_w.trainable || below.down_b.trainable || below.up_w.trainable || below.up_b.trainable;
    }
    Tensor dz = linear_backward(dy, t.act, m.up_w, m.up_b, true);
    Tensor dpre = activation_backward(dz, t.pre, spec.activation);
    Tensor dh = linear_backward(dpre, t.input, m.down_w, m.down_b, need_dh);
    if (!need_dh) return {};
    add_into(dy, dh);
  }
  if (!internals) return {};

  Tensor dr2 = layer_norm_backward(dy, tape.ln2, blk.ln2_gain, blk.ln2_shift);
  Tensor dff_act = linear_backward(dr2, tape.ff_act, blk.ff2_w, blk.ff2_b, true);
  Tensor dff_pre = activation_backward(dff_act, tape.ff_pre, spec.activation);
  Tensor dh1 = linear_backward(dff_pre, tape.h1, blk.ff1_w, blk.ff1_b, true);
  add_into(dh1, dr2);
  Tensor dr1 = layer_norm_backward(dh1, tape.ln1, blk.ln1_gain, blk.ln1_shift);
  Tensor dx = multi_head_attention_backward(dr1, tape.attn, blk.attn, need_input);
  if (!need_input) return {};
  add_into(dx, dr1);
  return dx;
}

Tensor pool_first_token(const Tensor& act) {
  const std::size_t B = act.dim(0), S = act.dim(1), n = act.dim(2);
  Tensor pooled({B, n});
  for (std::size_t b = 0; b < B; ++b)
    std::copy_n(act.data.begin() + b * S * n, n, pooled.data.begin() + b * n);
  return pooled;
}

void check_activations(const ModelState& model, const Tensor& act) {
  if (act.rank() != 3 || act.dim(2) != model.spec.hidden || act.dim(1) != model.spec.seqlen) {
    throw DimensionError("activations " + shape_str(act.shape) + " do not match [B x " +
                         std::to_string(model.spec.seqlen) + " x " +
                         std::to_string(model.spec.hidden) + "]");
  }
}

void check_boundary(const ModelState& model, std::size_t boundary) {
  if (boundary > model.spec.layers) {
    throw ContractError("boundary " + std::to_string(boundary) + " exceeds model depth " +
                        std::to_string(model.spec.layers));
  }
  if (boundary > model.frozen_prefix()) {
    throw ContractError("boundary " + std::to_string(boundary) +
                        " lies above trainable layer " + std::to_string(model.frozen_prefix() + 1) +
                        "; recompute from a lower boundary");
  }
}

}  // namespace

void ModelSpec::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("model." + field + ": " + why);
  };
  if (layers < 1) fail("layers", "must be >= 1");
  if (hidden < 1) fail("hidden", "must be >= 1");
  if (heads < 1) fail("heads", "must be >= 1");
  if (hidden % heads != 0) fail("heads", "hidden size " + std::to_string(hidden) + " not divisible by " + std::to_string(heads));
  if (seqlen < 1) fail("seqlen", "must be >= 1");
  if (vocab < 1) fail("vocab", "must be >= 1");
  if (num_labels < 2) fail("num_labels", "must be >= 2");
  if (!(ln_eps > 0.0)) fail("ln_eps", "must be positive");
}

void TransformerBlock::collect(std::vector<Parameter*>& out) {
  attn.collect(out);
  for (Parameter* p : {&ln1_gain, &ln1_shift, &ff1_w, &ff1_b, &ff2_w, &ff2_b, &ln2_gain, &ln2_shift})
    out.push_back(p);
}

void TransformerBlock::collect(std::vector<const Parameter*>& out) const {
  attn.collect(out);
  for (const Parameter* p : {&ln1_gain, &ln1_shift, &ff1_w, &ff1_b, &ff2_w, &ff2_b, &ln2_gain, &ln2_shift})
    out.push_back(p);
}

std::vector<Parameter*> ModelState::parameters() {
  std::vector<Parameter*> out{&tok_emb, &pos_emb};
  for (std::size_t j = 0; j < blocks.size(); ++j) {
    blocks[j].collect(out);
    for (MetaAdapter& m : adapters[j])
      for (Parameter* p : {&m.down_w, &m.down_b, &m.up_w, &m.up_b}) out.push_back(p);
  }
  out.push_back(&head_w);
  out.push_back(&head_b);
  return out;
}

std::vector<const Parameter*> ModelState::parameters() const {
  std::vector<const Parameter*> out{&tok_emb, &pos_emb};
  for (std::size_t j = 0; j < blocks.size(); ++j) {
    blocks[j].collect(out);
    for (const MetaAdapter& m : adapters[j])
      for (const Parameter* p : {&m.down_w, &m.down_b, &m.up_w, &m.up_b}) out.push_back(p);
  }
  out.push_back(&head_w);
  out.push_back(&head_b);
  return out;
}

std::vector<Parameter*> ModelState::trainable_parameters() {
  std::vector<Parameter*> out;
  for (Parameter* p : parameters())
    if (p->trainable) out.push_back(p);
  return out;
}

std::size_t ModelState::lowest_adapted_layer() const {
  for (std::size_t j = 0; j < adapters.size(); ++j)
    if (!adapters[j].empty()) return j + 1;
  return spec.layers + 1;
}

std::size_t ModelState::frozen_prefix() const {
  for (std::size_t j = 0; j < blocks.size(); ++j)
    if (block_trainable(blocks[j]) || stack_trainable(adapters[j])) return j;
  return spec.layers;
}

void set_training_policy(ModelState& model, const TrainingPolicy& policy) {
  const std::size_t D = model.spec.layers;
  if (policy.scope == TrainingScope::layer_freeze && policy.frozen_layers > D) {
    throw ConfigError("layer_freeze: cannot freeze " + std::to_string(policy.frozen_layers) +
                      " of " + std::to_string(D) + " layers");
  }
  model.policy = policy;
  const bool emb = policy.scope == TrainingScope::full ||
                   (policy.scope == TrainingScope::layer_freeze && policy.frozen_layers == 0);
  model.tok_emb.trainable = emb;
  model.pos_emb.trainable = emb;
  for (std::size_t j = 0; j < D; ++j) {
    bool blk = false;
    if (policy.scope == TrainingScope::full) blk = true;
    if (policy.scope == TrainingScope::layer_freeze) blk = j >= policy.frozen_layers;
    std::vector<Parameter*> ps;
    model.blocks[j].collect(ps);
    for (Parameter* p : ps) p->trainable = blk;
    for (MetaAdapter& m : model.adapters[j])
      for (Parameter* p : {&m.down_w, &m.down_b, &m.up_w, &m.up_b}) p->trainable = true;
  }
  model.head_w.trainable = true;
  model.head_b.trainable = true;
}

ModelState build_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::size_t n = spec.hidden, f = spec.ffn();
  SeededRng rng(seed);
  ModelState m;
  m.spec = spec;
  m.tok_emb = Parameter("embed.tok", {spec.vocab, n});
  m.pos_emb = Parameter("embed.pos", {spec.seqlen, n});
  fill_normal(m.tok_emb, rng, 1.0);
  fill_normal(m.pos_emb, rng, 1.0);

  const double wstd = 1.0 / std::sqrt(static_cast<double>(n));
  const double fstd = 1.0 / std::sqrt(static_cast<double>(f));
  m.blocks.resize(spec.layers);
  m.adapters.resize(spec.layers);
  for (std::size_t j = 0; j < spec.layers; ++j) {
    const std::string pre = layer_prefix(j + 1);
    TransformerBlock& b = m.blocks[j];
    auto proj = [&](Parameter& w, Parameter& bias, const char* name) {
      w = Parameter(pre + ".attn." + name + "_w", {n, n});
      bias = Parameter(pre + ".attn." + name + "_b", {n});
      fill_normal(w, rng, wstd);
    };
    proj(b.attn.wq, b.attn.bq, "q");
    proj(b.attn.wk, b.attn.bk, "k");
    proj(b.attn.wv, b.attn.bv, "v");
    proj(b.attn.wo, b.attn.bo, "o");
    b.ln1_gain = Parameter(pre + ".ln1.gain", {n});
    b.ln1_shift = Parameter(pre + ".ln1.shift", {n});
    fill_const(b.ln1_gain, 1.0);
    b.ff1_w = Parameter(pre + ".ffn.w1", {n, f});
    b.ff1_b = Parameter(pre + ".ffn.b1", {f});
    b.ff2_w = Parameter(pre + ".ffn.w2", {f, n});
    b.ff2_b = Parameter(pre + ".ffn.b2", {n});
    fill_normal(b.ff1_w, rng, wstd);
    fill_normal(b.ff2_w, rng, fstd);
    b.ln2_gain = Parameter(pre + ".ln2.gain", {n});
    b.ln2_shift = Parameter(pre + ".ln2.shift", {n});
    fill_const(b.ln2_gain, 1.0);
  }
  m.head_w = Parameter("head.w", {n, spec.num_labels});
  m.head_b = Parameter("head.b", {spec.num_labels});
  fill_normal(m.head_w, rng, 0.02);
  set_training_policy(m, {TrainingScope::adapters, 0});
  return m;
}

Tensor embed(const ModelState& model, const TokenBatch& tokens) {
  const std::size_t n = model.spec.hidden;
  if (tokens.seq != model.spec.seqlen || tokens.ids.size() != tokens.batch * tokens.seq) {
    throw DimensionError("token batch [" + std::to_string(tokens.batch) + " x " +
                         std::to_string(tokens.seq) + "] does not match seqlen " +
                         std::to_string(model.spec.seqlen));
  }
  Tensor out({tokens.batch, tokens.seq, n});
  for (std::size_t b = 0; b < tokens.batch; ++b) {
    for (std::size_t s = 0; s < tokens.seq; ++s) {
      const int id = tokens.ids[b * tokens.seq + s];
      if (id < 0 || static_cast<std::size_t>(id) >= model.spec.vocab) {
        throw DataError("token " + std::to_string(id) + " at sample " + std::to_string(b) +
                        ", position " + std::to_string(s) + " outside vocab of " +
                        std::to_string(model.spec.vocab));
      }
      double* o = out.data.data() + (b * tokens.seq + s) * n;
      const double* t = model.tok_emb.value.data.data() + static_cast<std::size_t>(id) * n;
      const double* p = model.pos_emb.value.data.data() + s * n;
      for (std::size_t i = 0; i < n; ++i) o[i] = t[i] + p[i];
    }
  }
  return out;
}

Tensor forward_layers(const ModelState& model, Tensor act, std::size_t from, std::size_t to) {
  check_activations(model, act);
  for (std::size_t j = from; j < to; ++j)
    act = block_forward(model.blocks[j], model.adapters[j], model.spec, act, nullptr);
  return act;
}

Tensor forward(const ModelState& model, const TokenBatch& tokens) {
  Tensor act = forward_layers(model, embed(model, tokens), 0, model.spec.layers);
  return linear_forward(pool_first_token(act), model.head_w, model.head_b);
}

Tensor forward_from_boundary(const ModelState& model, std::size_t boundary,
                             const Tensor& activations) {
  check_boundary(model, boundary);
  Tensor act = forward_layers(model, activations, boundary, model.spec.layers);
  return linear_forward(pool_first_token(act), model.head_w, model.head_b);
}

double backprop_from_boundary(ModelState& model, std::size_t boundary,
                              const Tensor& activations, std::span<const int> labels,
                              Tensor* d_boundary) {
  check_boundary(model, boundary);
  check_activations(model, activations);
  const std::size_t D = model.spec.layers;
  std::vector<BlockTape> tapes(D - boundary);
  Tensor act = activations;
  for (std::size_t j = boundary; j < D; ++j)
    act = block_forward(model.blocks[j], model.adapters[j], model.spec, act, &tapes[j - boundary]);
  Tensor pooled = pool_first_token(act);
  Tensor logits = linear_forward(pooled, model.head_w, model.head_b);
  LossResult loss = cross_entropy_loss(logits, labels);

  // Layers whose input gradient is needed: everything above the lowest
  // trainable layer, or all of them when the caller wants d_boundary.
  const std::size_t stop = d_boundary ? boundary : std::max(boundary, model.frozen_prefix());
  const bool need_any_layer = stop < D || d_boundary != nullptr;
  Tensor dpooled = linear_backward(loss.dlogits, pooled, model.head_w, model.head_b, need_any_layer);
  if (!need_any_layer) return loss.loss;
  const std::size_t B = act.dim(0), S = act.dim(1), n = act.dim(2);
  Tensor grad(act.shape);
  for (std::size_t b = 0; b < B; ++b)
    std::copy_n(dpooled.data.begin() + b * n, n, grad.data.begin() + b * S * n);

  for (std::size_t j = D; j-- > stop;) {
    const bool need_input = j > stop;
    grad = block_backward(model.blocks[j], model.adapters[j], model.spec, tapes[j - boundary],
                          std::move(grad), need_input || (d_boundary && j == boundary));
  }
  if (d_boundary) *d_boundary = std::move(grad);
  return loss.loss;
}

double backprop(ModelState& model, const TokenBatch& tokens, std::span<const int> labels) {
  Tensor act = embed(model, tokens);
  if (!model.embeddings_trainable()) {
    const std::size_t boundary = model.frozen_prefix();
    act = forward_layers(model, std::move(act), 0, boundary);
    return backprop_from_boundary(model, boundary, act, labels);
  }
  Tensor dact;
  const double loss = backprop_from_boundary(model, 0, act, labels, &dact);
  const std::size_t n = model.spec.hidden;
  auto& tg = model.tok_emb;
  auto& pg = model.pos_emb;
  for (std::size_t b = 0; b < tokens.batch; ++b) {
    for (std::size_t s = 0; s < tokens.seq; ++s) {
      const double* d = dact.data.data() + (b * tokens.seq + s) * n;
      if (tg.trainable) {
        auto g = tg.value.ensure_grad();
        const std::size_t id = static_cast<std::size_t>(tokens.ids[b * tokens.seq + s]);
        for (std::size_t i = 0; i < n; ++i) g[id * n + i] += d[i];
      }
      if (pg.trainable) {
        auto g = pg.value.ensure_grad();
        for (std::size_t i = 0; i < n; ++i) g[s * n + i] += d[i];
      }
    }
  }
  return loss;
}

double loss_only(const ModelState& model, const TokenBatch& tokens, std::span<const int> labels) {
  return cross_entropy_loss(forward(model, tokens), labels).loss;
}

TokenBatch make_batch(std::span<const Sample> samples) {
  TokenBatch tb;
  tb.batch = samples.size();
  tb.seq = samples.empty() ? 0 : samples.front().tokens.size();
  tb.ids.reserve(tb.batch * tb.seq);
  for (const Sample& s : samples) {
    if (s.tokens.size() != tb.seq) throw DataError("ragged batch: sequence lengths differ");
    tb.ids.insert(tb.ids.end(), s.tokens.begin(), s.tokens.end());
  }
  return tb;
}

std::vector<int> batch_labels(std::span<const Sample> samples) {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) out.push_back(s.label);
  return out;
}

namespace {

std::size_t count_correct(const Tensor& logits, std::span<const int> labels) {
  const std::size_t C = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t b = 0; b < logits.dim(0); ++b) {
    const double* row = logits.data.data() + b * C;
    const auto best = static_cast<int>(std::max_element(row, row + C) - row);
    if (best == labels[b]) ++correct;
  }
  return correct;
}

}  // namespace

double evaluate(const ModelState& model, std::span<const Sample> samples, std::size_t batch_size) {
  if (samples.empty()) throw EvaluationError("evaluate: empty shard");
  std::size_t correct = 0;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    auto chunk = samples.subspan(start, std::min(batch_size, samples.size() - start));
    correct += count_correct(forward(model, make_batch(chunk)), batch_labels(chunk));
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

double evaluate_from_boundary(const ModelState& model, std::size_t boundary,
                              const Tensor& activations, std::span<const int> labels,
                              std::size_t batch_size) {
  if (labels.empty()) throw EvaluationError("evaluate: empty shard");
  check_activations(model, activations);
  const std::size_t N = activations.dim(0), S = activations.dim(1), n = activations.dim(2);
  if (N != labels.size()) throw DimensionError("evaluate: activations for " + std::to_string(N) + " samples, " + std::to_string(labels.size()) + " labels");
  std::size_t correct = 0;
  for (std::size_t start = 0; start < N; start += batch_size) {
    const std::size_t cnt = std::min(batch_size, N - start);
    Tensor chunk({cnt, S, n});
    std::copy_n(activations.data.begin() + start * S * n, cnt * S * n, chunk.data.begin());
    correct += count_correct(forward_from_boundary(model, boundary, chunk), labels.subspan(start, cnt));
  }
  return static_cast<double>(correct) / static_cast<double>(N);
}

std::size_t block_param_count(const ModelSpec& spec) {
  const std::size_t n = spec.hidden, f = spec.ffn();
  return 4 * (n * n + n) + 2 * n + (n * f + f) + (f * n + n) + 2 * n;
}

std::size_t backbone_param_count(const ModelSpec& spec) {
  return spec.vocab * spec.hidden + spec.seqlen * spec.hidden + spec.layers * block_param_count(spec);
}

}  // namespace fedadapt
