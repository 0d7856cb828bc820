#pragma once

// Training-data pipeline: seed problems, recursive expansion into every
// sub-context, per-length resampling, evaluation splits and JSONL persistence.
//
// Seeds are index-addressable rather than materialized: the exhaustive parity
// seed set alone holds 2^22 - 2 arrays. Expansion streams unique contexts into
// a sink; the resampler keeps one reservoir per length, so memory follows the
// output size.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "retune/errors.hpp"
#include "retune/formats.hpp"
#include "retune/rng.hpp"
#include "retune/tasks.hpp"

namespace retune {

// Dataset totals after resampling, per task, at scale 1.
inline constexpr std::size_t kAdditionDatasetSize = 3'676'055;
inline constexpr std::size_t kDynProgDatasetSize = 342'187;
inline constexpr std::size_t kParityDatasetSize = 124'780;
inline constexpr std::size_t kAdditionSeedCount = 304'000;
inline constexpr std::size_t kDefaultExhaustiveCap = 5'000'000;
inline constexpr std::size_t kValidationPerLength = 5;
inline constexpr std::size_t kTestPerLength = 100;

inline std::size_t default_max_length(TaskKind task) {
  switch (task) {
    case TaskKind::Addition: return 15;
    case TaskKind::DynProg: return 5;
    case TaskKind::Parity: return 21;
  }
  return 1;
}

inline std::size_t default_dataset_size(TaskKind task) {
  switch (task) {
    case TaskKind::Addition: return kAdditionDatasetSize;
    case TaskKind::DynProg: return kDynProgDatasetSize;
    case TaskKind::Parity: return kParityDatasetSize;
  }
  return 0;
}

// Per-length target counts.
using Histogram = std::map<std::size_t, std::size_t>;

enum class ResampleMode { Off, Uniform, Histogram };

struct DatasetConfig {
  TaskKind task = TaskKind::Addition;
  Format format = Format::ReTuning;
  std::size_t max_length = 0;               // 0: task default
  std::optional<std::size_t> seed_count;    // addition; default 304,000 x scale
  bool exhaustive = true;                   // dynprog, parity
  std::size_t exhaustive_cap = kDefaultExhaustiveCap;
  ResampleMode resample = ResampleMode::Uniform;
  Histogram target;                         // ResampleMode::Histogram
  std::optional<std::size_t> total;         // ResampleMode::Uniform; default reference size x scale
  double scale = 1.0;
  std::optional<std::size_t> fixed_per_length;  // low-data regime, disables resampling
  std::uint64_t rng_seed = 0;

  std::size_t effective_max_length() const { return max_length ? max_length : default_max_length(task); }

  void validate() const {
    if (effective_max_length() < 1) throw InputError("max_length must be >= 1");
    if (fixed_per_length && *fixed_per_length < 1) throw InputError("fixed_per_length must be >= 1");
    if (!(scale > 0.0)) throw InputError("scale must be positive");
    for (const auto& [len, n] : target)
      if (len < 1 || len > effective_max_length())
        throw InputError("histogram length " + std::to_string(len) + " outside 1.." +
                         std::to_string(effective_max_length()));
  }
};

// Stream identifiers mixed into derived seeds.
namespace stream {
inline constexpr std::uint64_t kSeed = 1;
inline constexpr std::uint64_t kResample = 2;
inline constexpr std::uint64_t kShuffle = 3;
inline constexpr std::uint64_t kSplit = 4;
inline constexpr std::uint64_t kEval = 5;
}  // namespace stream

// ---- random instances ---------------------------------------------------------------

inline std::string random_digits(Rng& rng, std::size_t length) {
  std::string s(length, '0');
  for (std::size_t i = 0; i < length; ++i) {
    const int lo = (i == 0 && length > 1) ? 1 : 0;
    s[i] = static_cast<char>('0' + rng.between(lo, 9));
  }
  return s;
}

// Problem of exactly `length`; addition operands both have `length` digits.
inline TaskInstance random_instance(TaskKind task, std::size_t length, Rng& rng) {
  switch (task) {
    case TaskKind::Addition: {
      std::string a = random_digits(rng, length);
      std::string b = random_digits(rng, length);
      return TaskInstance::addition(std::move(a), std::move(b));
    }
    case TaskKind::DynProg: {
      std::vector<int> items(length);
      for (auto& v : items) v = static_cast<int>(rng.between(kDpItemMin, kDpItemMax));
      return TaskInstance::dynprog(std::move(items));
    }
    case TaskKind::Parity: {
      std::vector<int> bits(length);
      for (auto& v : bits) v = static_cast<int>(rng.below(2));
      return TaskInstance::parity(std::move(bits));
    }
  }
  throw ContractViolation("random_instance: unknown task");
}

// Number of distinct problems of exactly `length` (as a double, may be huge).
inline double problem_space(TaskKind task, std::size_t length) {
  const double L = static_cast<double>(length);
  switch (task) {
    case TaskKind::Addition: {
      const double per = length == 1 ? 10.0 : 9.0 * std::pow(10.0, L - 1);
      return per * per;
    }
    case TaskKind::DynProg: return std::pow(11.0, L);
    case TaskKind::Parity: return std::pow(2.0, L);
  }
  return 0;
}

// ---- seeds ----------------------------------------------------------------------

// Index-addressable seed problems. at(i) is a pure function of (config, i).
class SeedSet {
 public:
  std::size_t size() const { return size_; }
  TaskInstance at(std::size_t i) const { return make_(i); }
  TaskKind task() const { return task_; }

 private:
  friend SeedSet gen_seed(const DatasetConfig& cfg);
  SeedSet(TaskKind task, std::size_t size, std::function<TaskInstance(std::size_t)> make)
      : task_(task), size_(size), make_(std::move(make)) {}

  TaskKind task_;
  std::size_t size_;
  std::function<TaskInstance(std::size_t)> make_;
};

// Sum over lengths 1..max of radix^length.
inline double exhaustive_count(std::size_t radix, std::size_t max_length) {
  double total = 0;
  for (std::size_t k = 1; k <= max_length; ++k) total += std::pow(static_cast<double>(radix), static_cast<double>(k));
  return total;
}

inline SeedSet gen_seed(const DatasetConfig& cfg) {
  cfg.validate();
  const std::size_t max_len = cfg.effective_max_length();
  const TaskKind task = cfg.task;
  const std::uint64_t seed = cfg.rng_seed;

  if (cfg.fixed_per_length) {
    const std::size_t n = *cfg.fixed_per_length;
    return SeedSet(task, n * max_len, [task, n, seed](std::size_t i) {
      const std::size_t len = i / n + 1;
      Rng rng(seed, {stream::kSeed, len, i % n});
      return random_instance(task, len, rng);
    });
  }

  if (task == TaskKind::Addition || !cfg.exhaustive) {
    const std::size_t count =
        cfg.seed_count ? *cfg.seed_count
                       : static_cast<std::size_t>(std::llround(static_cast<double>(kAdditionSeedCount) * cfg.scale));
    return SeedSet(task, count, [task, max_len, seed](std::size_t i) {
      Rng rng(seed, {stream::kSeed, i});
      if (task == TaskKind::Addition) {
        const auto la = static_cast<std::size_t>(rng.between(1, static_cast<std::int64_t>(max_len)));
        const auto lb = static_cast<std::size_t>(rng.between(1, static_cast<std::int64_t>(max_len)));
        std::string a = random_digits(rng, la);
        std::string b = random_digits(rng, lb);
        return TaskInstance::addition(std::move(a), std::move(b));
      }
      const auto len = static_cast<std::size_t>(rng.between(1, static_cast<std::int64_t>(max_len)));
      return random_instance(task, len, rng);
    });
  }

  const std::size_t radix = task == TaskKind::DynProg ? 11 : 2;
  const double estimate = exhaustive_count(radix, max_len);
  if (estimate > static_cast<double>(cfg.exhaustive_cap))
    throw InputError("exhaustive " + std::string(to_string(task)) + " seed set up to length " +
                     std::to_string(max_len) + " has " + std::to_string(static_cast<long double>(estimate)) +
                     " instances, over the cap of " + std::to_string(cfg.exhaustive_cap));

  std::vector<std::size_t> offsets{0};  // offsets[k-1] = first index of length k
  for (std::size_t k = 1; k <= max_len; ++k)
    offsets.push_back(offsets.back() + static_cast<std::size_t>(std::llround(std::pow(double(radix), double(k)))));
  const std::size_t total = offsets.back();
  return SeedSet(task, total, [task, radix, offsets](std::size_t i) {
    std::size_t k = 1;
    while (offsets[k] <= i) ++k;
    std::size_t r = i - offsets[k - 1];
    std::vector<int> values(k);
    for (std::size_t p = k; p-- > 0;) {
      const int digit = static_cast<int>(r % radix);
      r /= radix;
      values[p] = task == TaskKind::DynProg ? digit + kDpItemMin : digit;
    }
    return task == TaskKind::DynProg ? TaskInstance::dynprog(std::move(values))
                                     : TaskInstance::parity(std::move(values));
  });
}

// ---- expansion ------------------------------------------------------------------

// 128-bit text fingerprint: FNV-1a and the standard library hash side by side.
struct Fingerprint {
  std::uint64_t hi = 0;
  std::uint64_t lo = 0;
  bool operator==(const Fingerprint&) const = default;
};

inline Fingerprint fingerprint(std::string_view text) {
  std::uint64_t fnv = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    fnv ^= c;
    fnv *= 0x100000001b3ULL;
  }
  return {fnv, static_cast<std::uint64_t>(std::hash<std::string_view>{}(text)) ^ splitmix64(text.size())};
}

// Open-addressing set of fingerprints.
class FingerprintSet {
 public:
  // True if newly inserted.
  bool insert(Fingerprint fp) {
    if (fp == Fingerprint{}) fp.lo = 1;
    if ((size_ + 1) * 2 > slots_.size()) grow();
    if (place(slots_, fp)) {
      ++size_;
      return true;
    }
    return false;
  }
  std::size_t size() const { return size_; }

 private:
  static bool place(std::vector<Fingerprint>& slots, const Fingerprint& fp) {
    const std::size_t mask = slots.size() - 1;
    for (std::size_t i = splitmix64(fp.hi ^ fp.lo) & mask;; i = (i + 1) & mask) {
      if (slots[i] == Fingerprint{}) {
        slots[i] = fp;
        return true;
      }
      if (slots[i] == fp) return false;
    }
  }
  void grow() {
    std::vector<Fingerprint> bigger(slots_.empty() ? 1024 : slots_.size() * 2);
    for (const auto& fp : slots_)
      if (!(fp == Fingerprint{})) place(bigger, fp);
    slots_ = std::move(bigger);
  }

  std::vector<Fingerprint> slots_;
  std::size_t size_ = 0;
};

using ExampleSink = std::function<void(RenderedExample&&)>;

// Streams training examples for a single instance. ReTuning contexts already
// seen (by exact text) are dropped together with their subtree, which the
// context text determines.
inline void expand_instance(const TaskInstance& inst, Format format, FingerprintSet& seen, const ExampleSink& sink) {
  if (format != Format::ReTuning) {
    for (auto& ex : render_training(inst, format)) sink(std::move(ex));
    return;
  }
  walk_call_tree(inst, [&](const TaskInstance& ctx, std::size_t depth) {
    RenderedExample ex = render_context(ctx, context_role(ctx, depth));
    if (!seen.insert(fingerprint(ex.text()))) return false;
    sink(std::move(ex));
    return true;
  });
}

inline void expand_seeds(const SeedSet& seeds, Format format, const ExampleSink& sink) {
  FingerprintSet seen;
  for (std::size_t i = 0; i < seeds.size(); ++i) expand_instance(seeds.at(i), format, seen, sink);
}

inline std::vector<RenderedExample> expand_recursive(std::span<const TaskInstance> instances, Format format) {
  std::vector<RenderedExample> out;
  FingerprintSet seen;
  for (const auto& inst : instances)
    expand_instance(inst, format, seen, [&](RenderedExample&& ex) { out.push_back(std::move(ex)); });
  return out;
}

// ---- resampling -----------------------------------------------------------------

// Split `total` evenly over lengths 1..max_length; the remainder goes to the
// shortest lengths.
inline Histogram uniform_target(std::size_t total, std::size_t max_length) {
  Histogram h;
  for (std::size_t len = 1; len <= max_length; ++len)
    h[len] = total / max_length + (len <= total % max_length ? 1 : 0);
  return h;
}

inline std::size_t histogram_total(const Histogram& h) {
  std::size_t t = 0;
  for (const auto& [len, n] : h) t += n;
  return t;
}

// Per-length reservoir sampler. Downsampling keeps a uniform sample without
// replacement; upsampling keeps every example once and tops up with draws
// with replacement. Each length owns an rng stream derived from
// (seed, length), so results do not depend on how lengths interleave.
class Resampler {
 public:
  Resampler(Histogram target, std::uint64_t seed) : target_(std::move(target)), seed_(seed) {
    for (const auto& [len, n] : target_) buckets_.emplace(len, Bucket{Rng(seed, {stream::kResample, len}), 0, {}});
  }

  void add(RenderedExample&& ex) {
    auto it = buckets_.find(ex.length);
    if (it == buckets_.end()) {
      uncovered_.insert(ex.length);
      return;
    }
    Bucket& b = it->second;
    const std::size_t k = target_.at(ex.length);
    if (b.items.size() < k) {
      b.items.push_back(std::move(ex));
    } else if (k > 0) {
      const std::size_t j = b.rng.below(b.seen + 1);
      if (j < k) b.items[j] = std::move(ex);
    }
    ++b.seen;
  }

  std::vector<RenderedExample> finish() {
    if (!uncovered_.empty()) {
      std::string msg = "resample target does not cover corpus lengths:";
      for (auto len : uncovered_) msg += " " + std::to_string(len);
      throw InputError(msg);
    }
    std::string missing;
    for (const auto& [len, b] : buckets_)
      if (b.seen == 0 && target_.at(len) > 0) missing += " " + std::to_string(len);
    if (!missing.empty()) throw InputError("resample target lengths absent from corpus:" + missing);

    std::vector<RenderedExample> out;
    out.reserve(histogram_total(target_));
    for (auto& [len, b] : buckets_) {
      const std::size_t k = target_.at(len);
      const std::size_t have = b.items.size();
      for (auto& ex : b.items) out.push_back(std::move(ex));
      const std::size_t base = out.size() - have;
      for (std::size_t extra = have; extra < k; ++extra) out.push_back(out[base + b.rng.below(have)]);
    }
    Rng shuffle(seed_, {stream::kShuffle});
    for (std::size_t i = out.size(); i > 1; --i) std::swap(out[i - 1], out[shuffle.below(i)]);
    return out;
  }

 private:
  struct Bucket {
    Rng rng;
    std::size_t seen = 0;
    std::vector<RenderedExample> items;
  };
  Histogram target_;
  std::uint64_t seed_;
  std::map<std::size_t, Bucket> buckets_;
  std::set<std::size_t> uncovered_;
};

// A null target means resampling is off and returns the input unchanged.
inline std::vector<RenderedExample> resample(std::vector<RenderedExample> examples, const std::optional<Histogram>& target,
                                             std::uint64_t seed) {
  if (!target) return examples;
  Resampler r(*target, seed);
  for (auto& ex : examples) r.add(std::move(ex));
  return r.finish();
}

inline Histogram length_histogram(std::span<const RenderedExample> examples) {
  Histogram h;
  for (const auto& ex : examples) ++h[ex.length];
  return h;
}

inline std::optional<Histogram> effective_target(const DatasetConfig& cfg) {
  if (cfg.fixed_per_length || cfg.resample == ResampleMode::Off) return std::nullopt;
  if (cfg.resample == ResampleMode::Histogram) return cfg.target;
  const std::size_t total =
      cfg.total ? *cfg.total
                : static_cast<std::size_t>(std::llround(static_cast<double>(default_dataset_size(cfg.task)) * cfg.scale));
  return uniform_target(total, cfg.effective_max_length());
}

inline std::vector<RenderedExample> build_dataset(const DatasetConfig& cfg) {
  const SeedSet seeds = gen_seed(cfg);
  const auto target = effective_target(cfg);
  if (!target) {
    std::vector<RenderedExample> out;
    expand_seeds(seeds, cfg.format, [&](RenderedExample&& ex) { out.push_back(std::move(ex)); });
    return out;
  }
  Resampler r(*target, cfg.rng_seed);
  expand_seeds(seeds, cfg.format, [&](RenderedExample&& ex) { r.add(std::move(ex)); });
  return r.finish();
}

// ---- evaluation splits -------------------------------------------------------------

struct Splits {
  std::vector<TaskInstance> validation;
  std::vector<TaskInstance> test;
};

// Fresh problems per length, 5 for validation and 100 for test. Splits are
// disjoint, and duplicate-free within, whenever the length's problem space is
// big enough to allow it.
inline Splits make_splits(TaskKind task, std::span<const std::size_t> lengths, std::uint64_t seed,
                          std::size_t validation_per_length = kValidationPerLength,
                          std::size_t test_per_length = kTestPerLength) {
  if (lengths.empty()) throw InputError("make_splits: no lengths given");
  Splits s;
  for (std::size_t len : lengths) {
    if (len < 1) throw InputError("make_splits: lengths must be >= 1");
    Rng rng(seed, {stream::kSplit, len});
    const std::size_t need = validation_per_length + test_per_length;
    const bool distinct = problem_space(task, len) >= static_cast<double>(need);
    std::set<std::string> used;
    std::vector<TaskInstance> drawn;
    while (drawn.size() < need) {
      TaskInstance inst = random_instance(task, len, rng);
      if (distinct && !used.insert(problem_header(inst)).second) continue;
      drawn.push_back(std::move(inst));
    }
    s.validation.insert(s.validation.end(), drawn.begin(), drawn.begin() + static_cast<std::ptrdiff_t>(validation_per_length));
    s.test.insert(s.test.end(), drawn.begin() + static_cast<std::ptrdiff_t>(validation_per_length), drawn.end());
  }
  return s;
}

// ---- JSONL ----------------------------------------------------------------------

using ordered_json = nlohmann::ordered_json;

inline ordered_json to_json(const RenderedExample& ex) {
  ordered_json segs = ordered_json::array();
  for (const auto& s : ex.segments) segs.push_back(ordered_json{{"text", s.text}, {"trainable", s.trainable}});
  return ordered_json{{"task", std::string(to_string(ex.task))},
                      {"format", std::string(to_string(ex.format))},
                      {"length", ex.length},
                      {"role", std::string(to_string(ex.role))},
                      {"segments", std::move(segs)}};
}

inline RenderedExample example_from_json(const ordered_json& j, std::size_t line = 0) {
  static const std::set<std::string> kFields{"task", "format", "length", "role", "segments"};
  if (!j.is_object()) throw ParseError("record is not an object", line);
  for (const auto& [key, value] : j.items())
    if (!kFields.count(key)) throw ParseError("unexpected field '" + key + "'", line);
  for (const auto& f : kFields)
    if (!j.contains(f)) throw ParseError("missing field '" + f + "'", line);
  try {
    RenderedExample ex;
    ex.task = parse_task_kind(j.at("task").get<std::string>());
    ex.format = parse_format(j.at("format").get<std::string>());
    if (!j.at("length").is_number_unsigned()) throw ParseError("length must be a non-negative integer", line);
    ex.length = j.at("length").get<std::size_t>();
    ex.role = parse_role(j.at("role").get<std::string>());
    if (!j.at("segments").is_array()) throw ParseError("segments must be an array", line);
    for (const auto& s : j.at("segments")) {
      if (!s.is_object() || s.size() != 2 || !s.contains("text") || !s.contains("trainable") ||
          !s.at("text").is_string() || !s.at("trainable").is_boolean())
        throw ParseError("segment must be {\"text\": str, \"trainable\": bool}", line);
      ex.segments.push_back({s.at("text").get<std::string>(), s.at("trainable").get<bool>()});
    }
    return ex;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(e.what(), line);
  } catch (const InputError& e) {
    throw ParseError(e.what(), line);
  }
}

inline std::string to_jsonl_line(const RenderedExample& ex) {
  return to_json(ex).dump(-1, ' ', false, nlohmann::json::error_handler_t::strict);
}

inline void write_jsonl(std::ostream& os, std::span<const RenderedExample> examples) {
  for (const auto& ex : examples) os << to_jsonl_line(ex) << '\n';
}

inline void persist(std::span<const RenderedExample> examples, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_jsonl(os, examples);
  if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

inline std::vector<RenderedExample> read_jsonl(std::istream& is) {
  std::vector<RenderedExample> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), n);
    }
    out.push_back(example_from_json(j, n));
  }
  return out;
}

inline std::vector<RenderedExample> load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "' for reading");
  return read_jsonl(is);
}

// Problem instances (evaluation splits) as JSONL.
inline ordered_json instance_to_json(const TaskInstance& inst) {
  ordered_json j{{"task", std::string(to_string(inst.kind))}, {"length", inst.length()}};
  if (inst.kind == TaskKind::Addition) {
    j["a"] = inst.a;
    j["b"] = inst.b;
  } else {
    j[inst.kind == TaskKind::Parity ? "bits" : "items"] = inst.values;
  }
  j["answer"] = canonical_answer(inst);
  return j;
}

inline TaskInstance instance_from_json(const ordered_json& j, std::size_t line = 0) {
  try {
    const TaskKind kind = parse_task_kind(j.at("task").get<std::string>());
    switch (kind) {
      case TaskKind::Addition: return TaskInstance::addition(j.at("a").get<std::string>(), j.at("b").get<std::string>());
      case TaskKind::DynProg: return TaskInstance::dynprog(j.at("items").get<std::vector<int>>());
      case TaskKind::Parity: return TaskInstance::parity(j.at("bits").get<std::vector<int>>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(e.what(), line);
  } catch (const InputError& e) {
    throw ParseError(e.what(), line);
  }
  throw ParseError("unknown task", line);
}

inline void persist_instances(std::span<const TaskInstance> instances, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  for (const auto& inst : instances) os << instance_to_json(inst).dump() << '\n';
  if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

inline std::vector<TaskInstance> load_instances(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "' for reading");
  std::vector<TaskInstance> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(instance_from_json(ordered_json::parse(line), n));
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), n);
    }
  }
  return out;
}

}  // namespace retune
