#pragma once

// The generation contract and the two in-process models: a deterministic
// oracle that writes exactly what a perfectly trained model would, and a fault
// injector that perturbs the oracle's output and logs every perturbation.
//
// Both are stateless with respect to the conversation: they re-read their
// position in the grammar from the context string on every request, so one
// instance serves any number of concurrent traces.

#include <cstddef>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "retune/datagen.hpp"
#include "retune/errors.hpp"
#include "retune/formats.hpp"
#include "retune/parser.hpp"
#include "retune/rng.hpp"
#include "retune/tasks.hpp"

namespace retune {

inline constexpr double kDefaultTemperature = 0.01;

// Where a request sits inside a trace. Backends that need per-trace
// randomness key it on these fields; the rest ignore them.
struct RequestMeta {
  std::string trace_id;
  std::size_t context_id = 0;
  std::size_t depth = 0;
  std::size_t step = 0;
};

struct GenerationRequest {
  std::string context;
  std::vector<std::string> stop;
  std::size_t max_units = 4096;
  double temperature = kDefaultTemperature;
  double timeout_seconds = 60.0;
  RequestMeta meta;

  void validate() const {
    if (temperature < 0.0) throw InputError("temperature must be >= 0");
    if (max_units < 1) throw InputError("max_units must be >= 1");
  }
};

struct GenerationResult {
  std::string text;
  std::optional<std::size_t> tokens;  // completion tokens, when the backend counts them
};

class ModelBackend {
 public:
  virtual ~ModelBackend() = default;
  virtual GenerationResult generate(const GenerationRequest& req) = 0;
  virtual std::string id() const = 0;
  // Whether one instance may serve concurrent requests.
  virtual bool shareable() const { return true; }
};

// Cuts text at the earliest stop string; the stop itself is dropped, as
// completion servers do.
inline std::string apply_stop(std::string text, const std::vector<std::string>& stop) {
  std::size_t cut = std::string::npos;
  for (const auto& s : stop) {
    if (s.empty()) continue;
    cut = std::min(cut, text.find(s));
  }
  if (cut != std::string::npos) text.resize(cut);
  return text;
}

// ---- grammar replay ---------------------------------------------------------------

// A ReTuning context decoded back into the problem plus the answers its calls
// have received so far.
struct ContextState {
  TaskInstance inst;
  std::vector<CallSite> calls;
  std::vector<Answer> received;
};

inline ContextState read_context_state(std::string_view context) {
  auto inst = parse_context(context);
  if (!inst) throw BackendError("unrecognized problem statement: '" + std::string(context.substr(0, context.find('\n'))) + "'");
  ContextState st{*inst, scan_calls(context), {}};
  for (const auto& site : st.calls) {
    if (!site.executed) throw BackendError("context has a pending call: '" + site.call_text + "'");
    auto ans = parse_payload(st.inst, *site.return_text);
    if (!ans) throw BackendError("unreadable return payload: '" + *site.return_text + "'");
    st.received.push_back(std::move(*ans));
  }
  return st;
}

// What a faithful model writes next.
struct OracleStep {
  std::optional<TaskInstance> call;  // set: emit this call
  Answer answer;                     // otherwise: emit this answer
  bool needs_marker = true;          // prefix the answer with `Answer: `
};

inline OracleStep oracle_step(const ContextState& st, std::string_view context) {
  OracleStep step;
  step.needs_marker = !detail::ends_with(context, kAnswerMarker);
  if (is_base_case(st.inst)) {
    step.answer = solve(st.inst);
    return step;
  }
  if (st.received.size() > call_arity(st.inst)) throw BackendError("context holds more returns than calls it may issue");
  try {
    if (auto next = next_subcall(st.inst, st.received)) {
      step.call = std::move(next);
      return step;
    }
    step.answer = combine(st.inst, st.received);
  } catch (const std::logic_error& e) {
    throw BackendError(std::string("cannot continue context: ") + e.what());
  }
  return step;
}

inline std::string render_step(const OracleStep& step) {
  if (step.call) return std::string(kCallMarker) + problem_header(*step.call) + "\n";
  return (step.needs_marker ? std::string(kAnswerMarker) : std::string()) + render_payload(step.answer);
}

inline GenerationResult finish_generation(std::string text, const GenerationRequest& req) {
  text = apply_stop(std::move(text), req.stop);
  if (text.size() > req.max_units) text.resize(req.max_units);
  return {std::move(text), std::nullopt};
}

// ---- oracle ---------------------------------------------------------------------

class OracleBackend : public ModelBackend {
 public:
  explicit OracleBackend(Format format = Format::ReTuning) : format_(format) {}

  // Full continuation before stop strings and the unit limit are applied.
  std::string continuation(std::string_view context) const {
    if (format_ != Format::ReTuning) {
      auto inst = parse_context(context);
      if (!inst) throw BackendError("unrecognized problem statement");
      return single_shot_body(*inst, format_);
    }
    return render_step(oracle_step(read_context_state(context), context));
  }

  GenerationResult generate(const GenerationRequest& req) override {
    req.validate();
    return finish_generation(continuation(req.context), req);
  }

  std::string id() const override { return "oracle"; }
  Format format() const { return format_; }

 private:
  Format format_;
};

// ---- fault injection ---------------------------------------------------------------

enum class FaultClass { Call, Compute, Restoration };

inline std::string_view to_string(FaultClass c) {
  switch (c) {
    case FaultClass::Call: return "call";
    case FaultClass::Compute: return "compute";
    case FaultClass::Restoration: return "restoration";
  }
  return "?";
}

inline FaultClass parse_fault_class(std::string_view s) {
  if (s == "call") return FaultClass::Call;
  if (s == "compute") return FaultClass::Compute;
  if (s == "restoration") return FaultClass::Restoration;
  throw InputError("unknown fault class '" + std::string(s) + "'");
}

struct FaultConfig {
  double call_fault_rate = 0.0;
  double compute_fault_rate = 0.0;
  std::optional<std::set<std::size_t>> target_depths;
  // The root answers correctly no matter what its calls returned, and its own
  // answer is never corrupted, so every injected fault ends up repaired.
  bool recover = false;
  std::uint64_t rng_seed = 0;

  void validate() const {
    auto ok = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!ok(call_fault_rate) || !ok(compute_fault_rate)) throw InputError("fault rates must lie in [0, 1]");
  }
};

struct FaultEntry {
  std::size_t context_id = 0;
  std::size_t depth = 0;
  FaultClass cls = FaultClass::Call;
  std::string original;
  std::string injected;
};

// Ground-truth log, one entry list per trace id.
class FaultLog {
 public:
  void record(const std::string& trace_id, FaultEntry entry) {
    std::lock_guard lock(mu_);
    entries_[trace_id].push_back(std::move(entry));
  }
  std::vector<FaultEntry> entries(const std::string& trace_id) const {
    std::lock_guard lock(mu_);
    auto it = entries_.find(trace_id);
    return it == entries_.end() ? std::vector<FaultEntry>{} : it->second;
  }
  std::map<std::string, std::vector<FaultEntry>> snapshot() const {
    std::lock_guard lock(mu_);
    return entries_;
  }
  void clear() {
    std::lock_guard lock(mu_);
    entries_.clear();
  }

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::vector<FaultEntry>> entries_;
};

namespace detail {

inline int nudge_item(int v, Rng& rng) {
  if (v == kDpItemMax) return v - 1;
  if (v == kDpItemMin) return v + 1;
  return rng.chance(0.5) ? v + 1 : v - 1;
}

inline char other_digit(char d, Rng& rng) {
  const int shift = static_cast<int>(rng.between(1, 9));
  return static_cast<char>('0' + (d - '0' + shift) % 10);
}

// One-symbol change to a call's problem. The result is always a valid
// instance that differs from the input.
inline TaskInstance perturb_instance(TaskInstance t, Rng& rng) {
  switch (t.kind) {
    case TaskKind::Addition: {
      std::string& op = rng.chance(0.5) ? t.a : t.b;
      const std::size_t i = rng.below(op.size());
      op[i] = other_digit(op[i], rng);
      return t;
    }
    case TaskKind::Parity: {
      const std::size_t i = rng.below(t.values.size());
      t.values[i] ^= 1;
      return t;
    }
    case TaskKind::DynProg: {
      const std::uint64_t what = t.stage == DpStage::Indices ? rng.below(3) : 1;
      if (what == 0) {
        const std::size_t i = rng.below(t.sums.size());
        t.sums[i] += rng.chance(0.5) ? 1 : -1;
      } else if (what == 1) {
        const std::size_t i = rng.below(t.values.size());
        t.values[i] = nudge_item(t.values[i], rng);
      } else {
        t.can_use = !t.can_use;
      }
      return t;
    }
  }
  return t;
}

// One-symbol change to an answer: an output digit (never the carry), the
// parity bit, a dp entry, or a 1/2 choice.
inline Answer perturb_answer(const TaskInstance& inst, Answer ans, Rng& rng) {
  if (auto* co = std::get_if<CarryOutput>(&ans)) {
    const std::size_t i = rng.below(co->output.size());
    const int d = co->output[i] - '0';
    co->output[i] = static_cast<char>('0' + (d + (rng.chance(0.5) ? 1 : 9)) % 10);
  } else if (auto* bit = std::get_if<int>(&ans)) {
    *bit ^= 1;
  } else {
    auto& arr = std::get<std::vector<int>>(ans);
    const std::size_t i = rng.below(arr.size());
    if (inst.kind == TaskKind::DynProg && inst.stage == DpStage::SumArray)
      arr[i] += rng.chance(0.5) ? 1 : -1;
    else
      arr[i] = arr[i] == 1 ? 2 : 1;
  }
  return ans;
}

}  // namespace detail

class FaultyBackend : public ModelBackend {
 public:
  explicit FaultyBackend(FaultConfig cfg, Format format = Format::ReTuning) : cfg_(std::move(cfg)), oracle_(format) {
    cfg_.validate();
  }

  GenerationResult generate(const GenerationRequest& req) override {
    req.validate();
    if (oracle_.format() != Format::ReTuning) return oracle_.generate(req);
    const ContextState st = read_context_state(req.context);
    OracleStep step = oracle_step(st, req.context);
    const std::string original = render_step(step);
    const RequestMeta& m = req.meta;
    Rng rng(cfg_.rng_seed, {fingerprint(m.trace_id).hi, m.context_id, m.step});
    const bool depth_ok = !cfg_.target_depths || cfg_.target_depths->count(m.depth);

    std::optional<FaultClass> cls;
    if (step.call) {
      if (depth_ok && rng.chance(cfg_.call_fault_rate)) {
        step.call = detail::perturb_instance(*step.call, rng);
        cls = FaultClass::Call;
      }
    } else if (cfg_.recover && m.depth == 0) {
      const Answer truth = solve(st.inst);
      if (!(truth == step.answer)) {
        step.answer = truth;
        cls = FaultClass::Restoration;
      }
    } else if (depth_ok && (!cfg_.recover || m.depth >= 1) && rng.chance(cfg_.compute_fault_rate)) {
      step.answer = detail::perturb_answer(st.inst, std::move(step.answer), rng);
      cls = FaultClass::Compute;
    }

    std::string text = render_step(step);
    if (cls) log_.record(m.trace_id, {m.context_id, m.depth, *cls, original, text});
    return finish_generation(std::move(text), req);
  }

  std::string id() const override { return "faulty"; }
  const FaultLog& log() const { return log_; }
  FaultLog& log() { return log_; }
  const FaultConfig& config() const { return cfg_; }

 private:
  FaultConfig cfg_;
  OracleBackend oracle_;
  FaultLog log_;
};

}  // namespace retune
