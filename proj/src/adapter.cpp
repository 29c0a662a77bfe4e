#include "fedadapt/adapter.hpp"

#include <numeric>

#include "fedadapt/error.hpp"

namespace fedadapt {
namespace {

void check_width(std::size_t width) {
  if (width < kMinAdapterWidth) {
    throw ConfigError("adapter width " + std::to_string(width) + " below minimum " +
                      std::to_string(kMinAdapterWidth));
  }
}

AdapterStack make_stack(std::size_t layer, const std::vector<std::size_t>& layout,
                        std::size_t hidden, SeededRng& rng) {
  AdapterStack stack;
  for (std::size_t k = 0; k < layout.size(); ++k)
    stack.push_back(make_meta_adapter(layer, k + 1, hidden, layout[k], rng));
  return stack;
}

}  // namespace

std::size_t adapter_param_count(std::size_t m, std::size_t n) { return 2 * m * n + n + m; }

std::size_t trainable_param_count(const ModelState& model) {
  std::size_t total = 0;
  for (const Parameter* p : model.parameters())
    if (p->trainable) total += p->numel();
  return total;
}

std::size_t monolithic_trainable_count(std::size_t depth, std::size_t m, std::size_t n,
                                       std::size_t labels, bool with_head_bias) {
  return depth * adapter_param_count(m, n) + n * labels + (with_head_bias ? labels : 0);
}

MetaAdapter make_meta_adapter(std::size_t layer, std::size_t index, std::size_t hidden,
                              std::size_t width, SeededRng& rng) {
  const std::string pre = "layer" + std::to_string(layer) + ".adapter" + std::to_string(index);
  MetaAdapter m{Parameter(pre + ".down_w", {hidden, width}, true),
                Parameter(pre + ".down_b", {width}, true),
                Parameter(pre + ".up_w", {width, hidden}, true),
                Parameter(pre + ".up_b", {hidden}, true)};
  for (double& v : m.down_w.value.data) v = rng.normal(0.0, kAdapterInitStd);
  for (double& v : m.up_w.value.data) v = rng.normal(0.0, kAdapterInitStd);
  return m;
}

ModelState insert_adapters(ModelState model, AdapterConfig config, std::size_t width_step,
                           SeededRng& rng) {
  const std::size_t D = model.spec.layers;
  if (config.depth > D) {
    throw ConfigError("adapter depth " + std::to_string(config.depth) + " exceeds " +
                      std::to_string(D) + " layers");
  }
  if (model.lowest_adapted_layer() <= D) throw ConfigError("insert_adapters: model already carries adapters");
  if (width_step == 0 || config.width % width_step != 0) {
    throw ConfigError("adapter width " + std::to_string(config.width) +
                      " is not a multiple of step " + std::to_string(width_step));
  }
  if (config.depth > 0) check_width(config.width);
  model.stack_layout.assign(config.width / width_step, width_step);
  for (std::size_t layer = D - config.depth + 1; layer <= D; ++layer)
    model.adapters[layer - 1] = make_stack(layer, model.stack_layout, model.spec.hidden, rng);
  model.config = config;
  return model;
}

ModelState insert_monolithic(ModelState model, AdapterConfig config, SeededRng& rng) {
  if (config.width == 0) throw ConfigError("monolithic adapter needs a positive width");
  return insert_adapters(std::move(model), config, config.width, rng);
}

ModelState deepen(ModelState model, std::size_t depth_step, SeededRng& rng) {
  const std::size_t D = model.spec.layers;
  const std::size_t d = model.config.depth;
  if (d + depth_step > D) {
    throw ConfigError("cannot deepen past the model: depth " + std::to_string(d) + " + " +
                      std::to_string(depth_step) + " > " + std::to_string(D));
  }
  if (model.stack_layout.empty()) throw ConfigError("deepen: no adapter width recorded");
  for (std::size_t layer = D - d - depth_step + 1; layer <= D - d; ++layer)
    model.adapters[layer - 1] = make_stack(layer, model.stack_layout, model.spec.hidden, rng);
  model.config.depth = d + depth_step;
  return model;
}

ModelState widen(ModelState model, std::size_t width_step, SeededRng& rng) {
  const std::size_t D = model.spec.layers;
  const std::size_t d = model.config.depth;
  if (d == 0) throw ConfigError("widen: no adapted layers (depth 0)");
  if (width_step == 0) throw ConfigError("widen: width step must be positive");
  const std::size_t index = model.stack_layout.size() + 1;
  for (std::size_t layer = D - d + 1; layer <= D; ++layer)
    model.adapters[layer - 1].push_back(make_meta_adapter(layer, index, model.spec.hidden, width_step, rng));
  model.stack_layout.push_back(width_step);
  model.config.width += width_step;
  return model;
}

std::size_t AdapterPayload::scalar_count() const {
  std::size_t total = 0;
  for (const auto& b : buffers) total += b.size();
  return total;
}

AdapterPayload extract_payload(const ModelState& model) {
  AdapterPayload p;
  p.config = model.config;
  for (const Parameter* param : model.parameters()) {
    if (!param->trainable) continue;
    p.names.push_back(param->name);
    p.buffers.push_back(param->value.data);
  }
  return p;
}

void apply_payload(ModelState& model, const AdapterPayload& payload) {
  if (payload.config != model.config) {
    throw ProtocolError("payload config (" + std::to_string(payload.config.depth) + ", " +
                        std::to_string(payload.config.width) + ") does not match model (" +
                        std::to_string(model.config.depth) + ", " +
                        std::to_string(model.config.width) + ")");
  }
  std::vector<Parameter*> params = model.trainable_parameters();
  if (params.size() != payload.buffers.size() || payload.names.size() != payload.buffers.size()) {
    throw ProtocolError("payload carries " + std::to_string(payload.buffers.size()) +
                        " buffers, model expects " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->name != payload.names[i] || params[i]->numel() != payload.buffers[i].size()) {
      throw ProtocolError("payload buffer '" + payload.names[i] + "' does not match model parameter '" +
                          params[i]->name + "'");
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value.data = payload.buffers[i];
}

}  // namespace fedadapt
