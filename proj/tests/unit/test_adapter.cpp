#include <gtest/gtest.h>

#include <sstream>

#include "fedadapt/adapter.hpp"
#include "fedadapt/checkpoint.hpp"
#include "fedadapt/error.hpp"
#include "fedadapt/model.hpp"

using namespace fedadapt;

namespace {

ModelSpec spec(std::size_t layers = 4, std::size_t hidden = 16) {
  ModelSpec s;
  s.layers = layers;
  s.hidden = hidden;
  s.heads = 2;
  s.ffn_dim = 2 * hidden;
  s.vocab = 12;
  s.seqlen = 5;
  s.num_labels = 3;
  return s;
}

std::size_t enumerate_trainable(const ModelState& m) {
  std::size_t total = 0;
  for (const Parameter* p : m.parameters())
    if (p->trainable) total += p->value.data.size();
  return total;
}

void expect_stacks_equal(const AdapterStack& a, const AdapterStack& b, std::size_t count) {
  ASSERT_GE(a.size(), count);
  ASSERT_GE(b.size(), count);
  for (std::size_t k = 0; k < count; ++k) {
    EXPECT_EQ(a[k].down_w.value, b[k].down_w.value);
    EXPECT_EQ(a[k].down_b.value, b[k].down_b.value);
    EXPECT_EQ(a[k].up_w.value, b[k].up_w.value);
    EXPECT_EQ(a[k].up_b.value, b[k].up_b.value);
  }
}

}  // namespace

TEST(AdapterCount, Formula) {
  EXPECT_EQ(adapter_param_count(1, 1), 4u);
  EXPECT_EQ(adapter_param_count(32, 768), 49952u);
  EXPECT_EQ(12 * adapter_param_count(32, 768) + 768 * 20, 614784u);
  EXPECT_EQ(monolithic_trainable_count(12, 32, 768, 20, false), 614784u);
  EXPECT_EQ(monolithic_trainable_count(12, 32, 768, 20), 614804u);
  EXPECT_EQ(monolithic_trainable_count(6, 32, 768, 20, false), 315072u);
}

TEST(AdapterCount, MonolithicEnumerationMatchesClosedForm) {
  SeededRng rng(1);
  const ModelState m = insert_monolithic(build_model(spec(3, 48), 1), {3, 32}, rng);
  EXPECT_EQ(trainable_param_count(m), monolithic_trainable_count(3, 32, 48, 3));
  EXPECT_EQ(trainable_param_count(m), enumerate_trainable(m));
}

TEST(AdapterCount, StackingOverheadVersusMonolithic) {
  SeededRng r1(1), r2(1);
  const ModelState base = build_model(spec(4, 16), 1);
  const ModelState stacked = insert_adapters(base, {2, 16}, 8, r1);
  const ModelState mono = insert_monolithic(base, {2, 16}, r2);
  const std::size_t n = 16;
  EXPECT_EQ(trainable_param_count(stacked), 2 * 2 * adapter_param_count(8, n) + n * 3 + 3);
  EXPECT_EQ(trainable_param_count(mono), 2 * adapter_param_count(16, n) + n * 3 + 3);
  // Two width-8 down biases hold as many scalars as one width-16 bias, so
  // only the extra up bias (n per layer) separates the layouts.
  EXPECT_EQ(trainable_param_count(stacked) - trainable_param_count(mono), 2 * n);
}

TEST(InsertAdapters, DepthZeroRecordsConfigOnly) {
  SeededRng rng(3);
  const ModelState base = build_model(spec(), 2);
  const ModelState m = insert_adapters(base, {0, 8}, 8, rng);
  EXPECT_EQ(m.config, (AdapterConfig{0, 8}));
  for (const auto& s : m.adapters) EXPECT_TRUE(s.empty());
  EXPECT_EQ(trainable_param_count(m), trainable_param_count(base));
}

TEST(InsertAdapters, FullDepthWidthEight) {
  SeededRng rng(3);
  const ModelState m = insert_adapters(build_model(spec(), 2), {4, 8}, 8, rng);
  std::size_t metas = 0;
  for (const auto& s : m.adapters) metas += s.size();
  EXPECT_EQ(metas, 4u);
  EXPECT_EQ(trainable_param_count(m), 4 * (2 * 8 * 16 + 16 + 8) + 16 * 3 + 3);
  EXPECT_EQ(m.frozen_prefix(), 0u);
}

TEST(InsertAdapters, PlacementIsContiguousTopSuffix) {
  SeededRng rng(3);
  const ModelState m = insert_adapters(build_model(spec(6), 2), {2, 24}, 8, rng);
  for (std::size_t j = 1; j <= 6; ++j) EXPECT_EQ(m.adapters[j - 1].empty(), j < 5) << j;
  EXPECT_EQ(m.adapters[5].size(), 3u);
  EXPECT_EQ(m.lowest_adapted_layer(), 5u);
  EXPECT_EQ(m.frozen_prefix(), 4u);
}

TEST(InsertAdapters, InitStatisticsAndZeroBiases) {
  SeededRng rng(4);
  const ModelState m = insert_adapters(build_model(spec(2, 64), 2), {2, 64}, 64, rng);
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& s : m.adapters)
    for (const MetaAdapter& a : s) {
      for (const Parameter* p : {&a.down_w, &a.up_w})
        for (double v : p->value.data) {
          sum += v;
          sq += v * v;
          ++n;
        }
      for (double v : a.down_b.value.data) EXPECT_EQ(v, 0.0);
      for (double v : a.up_b.value.data) EXPECT_EQ(v, 0.0);
    }
  const double mean = sum / static_cast<double>(n);
  EXPECT_NEAR(mean, 0.0, 5 * 0.02 / std::sqrt(static_cast<double>(n)));
  EXPECT_NEAR(std::sqrt(sq / static_cast<double>(n)), 0.02, 0.0005);
}

TEST(InsertAdapters, Errors) {
  SeededRng rng(1);
  const ModelState base = build_model(spec(), 2);
  EXPECT_THROW(insert_adapters(base, {5, 8}, 8, rng), ConfigError);
  EXPECT_THROW(insert_adapters(base, {2, 12}, 8, rng), ConfigError);
  EXPECT_THROW(insert_adapters(base, {2, 4}, 4, rng), ConfigError);
  const ModelState m = insert_adapters(base, {1, 8}, 8, rng);
  EXPECT_THROW(insert_adapters(m, {1, 8}, 8, rng), ConfigError);
}

TEST(InsertAdapters, SameSeedSameWeights) {
  SeededRng r1(9), r2(9);
  const ModelState base = build_model(spec(), 2);
  const ModelState a = insert_adapters(base, {3, 16}, 8, r1);
  const ModelState b = insert_adapters(base, {3, 16}, 8, r2);
  for (std::size_t j = 0; j < 4; ++j) expect_stacks_equal(a.adapters[j], b.adapters[j], a.adapters[j].size());
}

TEST(Deepen, InheritsExistingStacks) {
  SeededRng rng(5);
  const ModelState m = insert_adapters(build_model(spec(6), 2), {2, 16}, 8, rng);
  const ModelState d = deepen(m, 1, rng);
  EXPECT_EQ(d.config, (AdapterConfig{3, 16}));
  expect_stacks_equal(d.adapters[4], m.adapters[4], 2);
  expect_stacks_equal(d.adapters[5], m.adapters[5], 2);
  EXPECT_EQ(d.adapters[3].size(), 2u);
  EXPECT_TRUE(d.adapters[2].empty());
  EXPECT_EQ(trainable_param_count(d) - trainable_param_count(m), 1 * 2 * (2 * 8 * 16 + 16 + 8));
  EXPECT_EQ(d.head_w.value, m.head_w.value);
}

TEST(Deepen, FromDepthZeroUsesRecordedWidth) {
  SeededRng rng(5);
  const ModelState m = insert_adapters(build_model(spec(), 2), {0, 8}, 8, rng);
  const ModelState d = deepen(m, 1, rng);
  EXPECT_EQ(d.config, (AdapterConfig{1, 8}));
  EXPECT_EQ(d.adapters[3].size(), 1u);
}

TEST(Deepen, PastModelIsError) {
  SeededRng rng(5);
  const ModelState m = insert_adapters(build_model(spec(), 2), {4, 8}, 8, rng);
  EXPECT_THROW(deepen(m, 1, rng), ConfigError);
  const ModelState m3 = insert_adapters(build_model(spec(), 2), {3, 8}, 8, rng);
  EXPECT_THROW(deepen(m3, 2, rng), ConfigError);
}

TEST(Widen, AppendsOneMetaAdapterPerLayer) {
  SeededRng rng(6);
  const ModelState m = insert_adapters(build_model(spec(), 2), {2, 8}, 8, rng);
  const ModelState w = widen(m, 8, rng);
  EXPECT_EQ(w.config, (AdapterConfig{2, 16}));
  for (std::size_t j = 2; j < 4; ++j) {
    EXPECT_EQ(w.adapters[j].size(), 2u);
    expect_stacks_equal(w.adapters[j], m.adapters[j], 1);
  }
  EXPECT_EQ(trainable_param_count(w) - trainable_param_count(m), 2 * (2 * 8 * 16 + 16 + 8));
}

TEST(Widen, DepthZeroIsError) {
  SeededRng rng(6);
  const ModelState m = insert_adapters(build_model(spec(), 2), {0, 8}, 8, rng);
  EXPECT_THROW(widen(m, 8, rng), ConfigError);
}

TEST(Widen, ZeroedNewAdapterPreservesFunction) {
  SeededRng rng(6);
  const ModelState m = insert_adapters(build_model(spec(), 2), {2, 8}, 8, rng);
  ModelState w = widen(m, 8, rng);
  for (std::size_t j = 2; j < 4; ++j) {
    auto& up = w.adapters[j].back().up_w.value.data;
    std::fill(up.begin(), up.end(), 0.0);
  }
  const TokenBatch t{2, 5, {0, 1, 2, 3, 4, 0, 5, 6, 7, 11}};
  EXPECT_EQ(forward(w, t), forward(m, t));
}

TEST(Inheritance, AnyUpgradeSequencePreservesEarlierWeights) {
  SeededRng rng(8);
  const ModelState start = insert_adapters(build_model(spec(4), 2), {1, 8}, 8, rng);
  ModelState m = start;
  const char* path = "wdwdw";
  for (const char* p = path; *p; ++p) m = *p == 'w' ? widen(m, 8, rng) : deepen(m, 1, rng);
  EXPECT_EQ(m.config, (AdapterConfig{3, 32}));
  expect_stacks_equal(m.adapters[3], start.adapters[3], 1);
  for (std::size_t j = 0; j < 4; ++j) {
    const bool adapted = j >= 1;
    EXPECT_EQ(m.adapters[j].empty(), !adapted);
    if (adapted) {
      EXPECT_EQ(m.adapters[j].size(), 4u);
    }
  }
}

TEST(Payload, ExtractApplyRoundTrip) {
  SeededRng rng(2);
  const ModelState m = insert_adapters(build_model(spec(), 2), {2, 16}, 8, rng);
  AdapterPayload p = extract_payload(m);
  EXPECT_EQ(p.scalar_count(), trainable_param_count(m));
  EXPECT_EQ(p.names.back(), "head.b");
  ModelState other = insert_adapters(build_model(spec(), 2), {2, 16}, 8, rng);
  apply_payload(other, p);
  EXPECT_EQ(extract_payload(other), p);
}

TEST(Payload, MismatchIsProtocolError) {
  SeededRng rng(2);
  const ModelState m = insert_adapters(build_model(spec(), 2), {2, 16}, 8, rng);
  ModelState other = insert_adapters(build_model(spec(), 2), {3, 16}, 8, rng);
  EXPECT_THROW(apply_payload(other, extract_payload(m)), ProtocolError);
  AdapterPayload p = extract_payload(m);
  p.buffers[0].pop_back();
  ModelState same = m;
  EXPECT_THROW(apply_payload(same, p), ProtocolError);
}

TEST(Checkpoint, ModelRoundTripIsBitExact) {
  SeededRng rng(2);
  const ModelState m = insert_adapters(build_model(spec(), 2), {2, 16}, 8, rng);
  std::stringstream ss;
  write_model(ss, m);
  const ModelState back = read_model(ss);
  EXPECT_EQ(back.spec, m.spec);
  EXPECT_EQ(back.config, m.config);
  EXPECT_EQ(back.stack_layout, m.stack_layout);
  EXPECT_EQ(back.policy, m.policy);
  const auto pa = m.parameters();
  const auto pb = back.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i]->name, pb[i]->name);
    EXPECT_EQ(pa[i]->value, pb[i]->value);
    EXPECT_EQ(pa[i]->trainable, pb[i]->trainable);
  }
}

TEST(Checkpoint, CorruptModelIsParseError) {
  const ModelState m = build_model(spec(), 2);
  std::stringstream ss;
  write_model(ss, m);
  std::string bytes = ss.str();
  std::stringstream truncated(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(read_model(truncated), ParseError);
  bytes[0] = 'X';
  std::stringstream bad(bytes);
  EXPECT_THROW(read_model(bad), ParseError);
}

TEST(Checkpoint, PayloadSizesAndRoundTrip) {
  SeededRng rng(2);
  const ModelState m = insert_adapters(build_model(spec(), 2), {2, 16}, 8, rng);
  const AdapterPayload p = extract_payload(m);
  std::stringstream s8, s4;
  write_payload(s8, p, 8);
  write_payload(s4, p, 4);
  EXPECT_EQ(s8.str().size(), payload_wire_bytes(p.scalar_count(), 8));
  EXPECT_EQ(s4.str().size(), payload_wire_bytes(p.scalar_count(), 4));
  EXPECT_EQ(read_payload(s8, m), p);
  const AdapterPayload narrow = read_payload(s4, m);
  for (std::size_t i = 0; i < p.buffers.size(); ++i)
    for (std::size_t k = 0; k < p.buffers[i].size(); ++k)
      EXPECT_EQ(narrow.buffers[i][k], static_cast<double>(static_cast<float>(p.buffers[i][k])));
}

TEST(Checkpoint, PayloadAgainstWrongLayout) {
  SeededRng rng(2);
  const ModelState m = insert_adapters(build_model(spec(), 2), {2, 16}, 8, rng);
  const ModelState wider = widen(m, 8, rng);
  std::stringstream ss;
  write_payload(ss, extract_payload(m), 8);
  EXPECT_THROW(read_payload(ss, wider), ProtocolError);
  EXPECT_THROW(write_payload(ss, extract_payload(m), 2), ConfigError);
}
