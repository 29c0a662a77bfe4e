#include "fedadapt/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <istream>
#include <ostream>

#include "fedadapt/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace fedadapt {
namespace {

constexpr std::array<char, 4> kModelMagic{'F', 'A', 'D', 'M'};
constexpr std::array<char, 4> kPayloadMagic{'F', 'A', 'D', 'P'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ParseError("checkpoint truncated");
  return v;
}

void put_str(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_str(std::istream& in) {
  const auto len = get<std::uint32_t>(in);
  if (len > (1u << 20)) throw ParseError("checkpoint string length " + std::to_string(len) + " implausible");
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw ParseError("checkpoint truncated");
  return s;
}

void expect_magic(std::istream& in, const std::array<char, 4>& magic, const char* what) {
  std::array<char, 4> m{};
  in.read(m.data(), 4);
  if (!in || m != magic) throw ParseError(std::string("not a ") + what + " (bad magic)");
}

}  // namespace

void write_model(std::ostream& out, const ModelState& model) {
  out.write(kModelMagic.data(), 4);
  put<std::uint32_t>(out, kModelFormatVersion);
  const ModelSpec& s = model.spec;
  for (std::size_t v : {s.layers, s.hidden, s.heads, s.ffn_dim, s.vocab, s.seqlen, s.num_labels})
    put<std::uint32_t>(out, static_cast<std::uint32_t>(v));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.activation));
  put<double>(out, s.ln_eps);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.policy.scope));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.policy.frozen_layers));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.config.depth));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.config.width));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.stack_layout.size()));
  for (std::size_t w : model.stack_layout) put<std::uint32_t>(out, static_cast<std::uint32_t>(w));
  for (const AdapterStack& st : model.adapters) put<std::uint32_t>(out, static_cast<std::uint32_t>(st.size()));

  const auto params = model.parameters();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    put_str(out, p->name);
    put<std::uint8_t>(out, p->trainable ? 1 : 0);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t d : p->value.shape) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(p->value.data.data()),
              static_cast<std::streamsize>(p->numel() * sizeof(double)));
  }
}

ModelState read_model(std::istream& in) {
  expect_magic(in, kModelMagic, "model checkpoint");
  const auto version = get<std::uint32_t>(in);
  if (version != kModelFormatVersion) throw ParseError("unsupported model checkpoint version " + std::to_string(version));
  ModelSpec s;
  for (std::size_t* f : {&s.layers, &s.hidden, &s.heads, &s.ffn_dim, &s.vocab, &s.seqlen, &s.num_labels})
    *f = get<std::uint32_t>(in);
  s.activation = static_cast<Activation>(get<std::uint32_t>(in));
  s.ln_eps = get<double>(in);
  s.validate();

  // Rebuild the skeleton, then overwrite every buffer.
  ModelState m = build_model(s, 0);
  TrainingPolicy policy;
  policy.scope = static_cast<TrainingScope>(get<std::uint32_t>(in));
  policy.frozen_layers = get<std::uint32_t>(in);
  m.config.depth = get<std::uint32_t>(in);
  m.config.width = get<std::uint32_t>(in);
  m.stack_layout.resize(get<std::uint32_t>(in));
  for (std::size_t& w : m.stack_layout) w = get<std::uint32_t>(in);
  SeededRng scratch(0);
  for (std::size_t j = 0; j < s.layers; ++j) {
    const auto count = get<std::uint32_t>(in);
    if (count > m.stack_layout.size()) throw ParseError("adapter stack longer than layout at layer " + std::to_string(j + 1));
    for (std::size_t k = 0; k < count; ++k)
      m.adapters[j].push_back(make_meta_adapter(j + 1, k + 1, s.hidden, m.stack_layout[k], scratch));
  }
  set_training_policy(m, policy);

  const auto params = m.parameters();
  const auto count = get<std::uint32_t>(in);
  if (count != params.size()) throw ParseError("checkpoint holds " + std::to_string(count) + " parameters, layout expects " + std::to_string(params.size()));
  for (Parameter* p : params) {
    const std::string name = get_str(in);
    if (name != p->name) throw ParseError("checkpoint parameter '" + name + "' where '" + p->name + "' expected");
    p->trainable = get<std::uint8_t>(in) != 0;
    const auto rank = get<std::uint32_t>(in);
    Shape shape(rank);
    for (std::size_t& d : shape) d = get<std::uint64_t>(in);
    if (shape != p->value.shape) throw ParseError("checkpoint shape " + shape_str(shape) + " for '" + name + "', expected " + shape_str(p->value.shape));
    in.read(reinterpret_cast<char*>(p->value.data.data()), static_cast<std::streamsize>(p->numel() * sizeof(double)));
    if (!in) throw ParseError("checkpoint truncated in '" + name + "'");
  }
  return m;
}

void write_payload(std::ostream& out, const AdapterPayload& payload, std::size_t scalar_width) {
  if (scalar_width != 4 && scalar_width != 8) throw ConfigError("payload scalar width must be 4 or 8");
  out.write(kPayloadMagic.data(), 4);
  put<std::uint32_t>(out, kPayloadFormatVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(scalar_width));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(payload.config.depth));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(payload.config.width));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(payload.buffers.size()));
  put<std::uint64_t>(out, payload.scalar_count());
  for (const auto& buf : payload.buffers) {
    for (double v : buf) {
      if (scalar_width == 8) {
        put<double>(out, v);
      } else {
        put<float>(out, static_cast<float>(v));
      }
    }
  }
}

AdapterPayload read_payload(std::istream& in, const ModelState& layout) {
  expect_magic(in, kPayloadMagic, "adapter payload");
  const auto version = get<std::uint32_t>(in);
  if (version != kPayloadFormatVersion) throw ParseError("unsupported payload version " + std::to_string(version));
  const auto width = get<std::uint32_t>(in);
  if (width != 4 && width != 8) throw ParseError("payload scalar width " + std::to_string(width));
  AdapterPayload p;
  p.config.depth = get<std::uint32_t>(in);
  p.config.width = get<std::uint32_t>(in);
  const auto nbuf = get<std::uint32_t>(in);
  const auto total = get<std::uint64_t>(in);
  if (p.config != layout.config) throw ProtocolError("payload config does not match the layout model");
  std::size_t expected = 0;
  std::vector<const Parameter*> params;
  for (const Parameter* q : layout.parameters())
    if (q->trainable) {
      params.push_back(q);
      expected += q->numel();
    }
  if (nbuf != params.size() || total != expected) {
    throw ProtocolError("payload holds " + std::to_string(nbuf) + " buffers / " + std::to_string(total) +
                        " scalars, layout expects " + std::to_string(params.size()) + " / " + std::to_string(expected));
  }
  for (const Parameter* q : params) {
    p.names.push_back(q->name);
    std::vector<double> buf(q->numel());
    for (double& v : buf) v = width == 8 ? get<double>(in) : static_cast<double>(get<float>(in));
    p.buffers.push_back(std::move(buf));
  }
  return p;
}

}  // namespace fedadapt
