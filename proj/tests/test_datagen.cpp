#include <gtest/gtest.h>

#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "retune/datagen.hpp"

using namespace retune;

namespace {

DatasetConfig config(TaskKind task, std::size_t max_len) {
  DatasetConfig c;
  c.task = task;
  c.max_length = max_len;
  c.rng_seed = 99;
  return c;
}

RenderedExample dummy(std::size_t length, int tag) {
  RenderedExample ex{TaskKind::Parity, Format::ReTuning, length, Role::Base, {}};
  ex.segments.push_back({"p" + std::to_string(tag), false});
  ex.segments.push_back({"a", true});
  return ex;
}

}  // namespace

TEST(SeedSet, ExhaustiveCounts) {
  EXPECT_EQ(gen_seed(config(TaskKind::DynProg, 5)).size(), 177155u);
  EXPECT_EQ(gen_seed(config(TaskKind::Parity, 3)).size(), 14u);
  EXPECT_EQ(gen_seed(config(TaskKind::Addition, 0)).size(), kAdditionSeedCount);
}

TEST(SeedSet, ExhaustiveEnumeratesEveryArrayOnce) {
  const auto seeds = gen_seed(config(TaskKind::DynProg, 3));
  std::set<std::vector<int>> all;
  for (std::size_t i = 0; i < seeds.size(); ++i) all.insert(seeds.at(i).values);
  EXPECT_EQ(all.size(), 11u + 121u + 1331u);
  EXPECT_EQ(seeds.at(0).values, (std::vector<int>{-5}));
  EXPECT_EQ(seeds.at(11).values, (std::vector<int>{-5, -5}));
}

TEST(SeedSet, OverCapIsRefused) {
  auto c = config(TaskKind::Parity, 40);
  EXPECT_THROW(gen_seed(c), InputError);
  c.exhaustive = false;
  c.seed_count = 10;
  EXPECT_EQ(gen_seed(c).size(), 10u);
}

TEST(SeedSet, AdditionOperandsRespectMaxLength) {
  auto c = config(TaskKind::Addition, 7);
  c.seed_count = 500;
  const auto seeds = gen_seed(c);
  std::size_t unequal = 0;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    const auto inst = seeds.at(i);
    ASSERT_LE(inst.a.size(), 7u);
    ASSERT_LE(inst.b.size(), 7u);
    if (inst.a.size() != inst.b.size()) ++unequal;
  }
  EXPECT_GT(unequal, 0u);
}

TEST(Expansion, ContextCounts) {
  EXPECT_EQ(render_training(TaskInstance::addition("637", "123"), Format::ReTuning).size(), 3u);
  EXPECT_EQ(render_training(TaskInstance::parity(std::vector<int>(21, 1)), Format::ReTuning).size(), 21u);
  EXPECT_EQ(render_training(TaskInstance::dynprog({1, -3, 2}), Format::ReTuning).size(), 6u);
  EXPECT_EQ(render_training(TaskInstance::dynprog({1, -3, 2}), Format::Scratchpad).size(), 1u);
}

TEST(Expansion, SharedSubtreesAreDeduplicated) {
  const std::vector<TaskInstance> seeds{TaskInstance::parity({1, 0, 1}), TaskInstance::parity({0, 0, 1})};
  const auto out = expand_recursive(seeds, Format::ReTuning);
  // [0, 1] and [1] are shared.
  EXPECT_EQ(out.size(), 4u);
  std::set<std::string> texts;
  for (const auto& ex : out) texts.insert(ex.text());
  EXPECT_EQ(texts.size(), out.size());
}

TEST(Resample, UniformHitsEveryLength) {
  std::vector<RenderedExample> corpus;
  for (std::size_t len = 1; len <= 10; ++len)
    for (std::size_t k = 0; k < len * 37; ++k) corpus.push_back(dummy(len, static_cast<int>(k)));
  const auto out = resample(corpus, uniform_target(1000, 10), 3);
  ASSERT_EQ(out.size(), 1000u);
  const auto h = length_histogram(out);
  for (std::size_t len = 1; len <= 10; ++len) EXPECT_EQ(h.at(len), 100u);
}

TEST(Resample, UpsamplingKeepsEveryOriginal) {
  std::vector<RenderedExample> corpus;
  for (int k = 0; k < 7; ++k) corpus.push_back(dummy(1, k));
  const auto out = resample(corpus, Histogram{{1, 50}}, 8);
  ASSERT_EQ(out.size(), 50u);
  std::set<std::string> texts;
  for (const auto& ex : out) texts.insert(ex.text());
  EXPECT_EQ(texts.size(), 7u);
}

TEST(Resample, OffIsIdentity) {
  std::vector<RenderedExample> corpus;
  for (int k = 0; k < 20; ++k) corpus.push_back(dummy(1 + k % 3, k));
  EXPECT_EQ(resample(corpus, std::nullopt, 1), corpus);
}

TEST(Resample, TargetMustMatchCorpusLengths) {
  std::vector<RenderedExample> corpus{dummy(1, 0), dummy(2, 1)};
  EXPECT_THROW(resample(corpus, Histogram{{1, 5}, {2, 5}, {3, 5}}, 1), InputError);
  EXPECT_THROW(resample(corpus, Histogram{{1, 5}}, 1), InputError);
}

TEST(Resample, UniformTargetRemainderGoesShortest) {
  const auto h = uniform_target(23, 5);
  EXPECT_EQ(h, (Histogram{{1, 5}, {2, 5}, {3, 5}, {4, 4}, {5, 4}}));
}

TEST(BuildDataset, ExactHistogram) {
  auto c = config(TaskKind::Parity, 6);
  c.resample = ResampleMode::Histogram;
  c.target = {{1, 3}, {2, 10}, {3, 1}, {4, 40}, {5, 0}, {6, 7}};
  const auto out = build_dataset(c);
  Histogram want = c.target;
  want.erase(5);
  EXPECT_EQ(length_histogram(out), want);
}

TEST(BuildDataset, LowDataModeIsFixedPerLength) {
  auto c = config(TaskKind::Addition, 8);
  c.fixed_per_length = 4;
  c.format = Format::Scratchpad;
  const auto out = build_dataset(c);
  ASSERT_EQ(out.size(), 32u);
  const auto h = length_histogram(out);
  for (std::size_t len = 1; len <= 8; ++len) EXPECT_EQ(h.at(len), 4u);
}

TEST(BuildDataset, Deterministic) {
  auto c = config(TaskKind::DynProg, 4);
  c.total = 300;
  EXPECT_EQ(build_dataset(c), build_dataset(c));
  auto d = c;
  d.rng_seed = 100;
  EXPECT_NE(build_dataset(c), build_dataset(d));
}

TEST(Splits, SizesDisjointDeterministic) {
  std::vector<std::size_t> lengths;
  for (std::size_t l = 1; l <= 60; ++l) lengths.push_back(l);
  const auto s = make_splits(TaskKind::Addition, lengths, 5);
  EXPECT_EQ(s.validation.size(), 300u);
  EXPECT_EQ(s.test.size(), 6000u);
  for (std::size_t i = 0; i < s.test.size(); ++i) ASSERT_EQ(s.test[i].length(), i / 100 + 1);
  std::set<std::string> val;
  for (const auto& t : s.validation) val.insert(problem_header(t));
  for (const auto& t : s.test) {
    if (t.length() >= 2) {
      ASSERT_EQ(val.count(problem_header(t)), 0u);
    }
  }
  const auto again = make_splits(TaskKind::Addition, lengths, 5);
  EXPECT_EQ(again.test, s.test);
  EXPECT_EQ(again.validation, s.validation);
}

TEST(Jsonl, RoundTripAndFieldOrder) {
  auto c = config(TaskKind::DynProg, 3);
  c.total = 1000;
  const auto data = build_dataset(c);
  ASSERT_EQ(data.size(), 1000u);
  std::stringstream ss;
  write_jsonl(ss, data);
  const std::string text = ss.str();
  const auto first = text.substr(0, text.find('\n'));
  EXPECT_EQ(first.rfind("{\"task\":\"dynprog\",\"format\":\"retuning\",\"length\":", 0), 0u) << first;
  EXPECT_LT(first.find("\"role\""), first.find("\"segments\""));
  EXPECT_EQ(read_jsonl(ss), data);
}

TEST(Jsonl, ParseErrorCarriesLineNumber) {
  std::stringstream ss;
  ss << to_jsonl_line(dummy(1, 0)) << "\n" << to_jsonl_line(dummy(2, 1)) << "\n{\"task\": \"parity\"\n";
  try {
    read_jsonl(ss);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  std::stringstream missing;
  missing << "{\"task\":\"parity\",\"format\":\"retuning\",\"length\":1,\"role\":\"base\"}\n";
  EXPECT_THROW(read_jsonl(missing), ParseError);
}

TEST(Jsonl, InstancesRoundTrip) {
  const std::vector<std::size_t> lengths{1, 4, 9};
  const auto s = make_splits(TaskKind::DynProg, lengths, 2, 1, 3);
  const std::string path = ::testing::TempDir() + "retune_instances.jsonl";
  persist_instances(s.test, path);
  EXPECT_EQ(load_instances(path), s.test);
  const auto j = instance_to_json(TaskInstance::addition("12", "9"));
  EXPECT_EQ(j.dump(), "{\"task\":\"addition\",\"length\":2,\"a\":\"12\",\"b\":\"9\",\"answer\":\"21\"}");
}
