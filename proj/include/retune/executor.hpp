#pragma once

// Recursive inference driver.
//
// A context is generated line by line with "\n" as the stop string. When the
// generated line is a call, the executor opens a fresh context for the call's
// problem, runs it to its answer, splices `Return: <answer>` plus the grammar's
// suffix into the caller and resumes the caller's generation. A context is
// finished once its last `Answer: ` is followed by text.
//
// Every run yields a Trace, the tree of contexts in execution order. Typed
// errors carry the partial trace built up to the failure.

#include <chrono>
#include <cstddef>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

#include "retune/backends.hpp"
#include "retune/errors.hpp"
#include "retune/formats.hpp"
#include "retune/parser.hpp"

namespace retune {

struct Limits {
  std::size_t max_depth = 128;
  std::size_t max_contexts = 4096;
  std::size_t max_generation_units = 4096;  // characters generated per context
  double per_call_timeout_seconds = 60.0;

  void validate() const {
    if (max_depth < 1 || max_contexts < 1 || max_generation_units < 1 || !(per_call_timeout_seconds > 0.0))
      throw InputError("limits must all be positive");
  }
};

struct Context {
  std::size_t id = 0;  // preorder position in the trace
  std::size_t depth = 0;
  std::string prompt;
  std::string transcript;         // prompt + generations + splices
  std::vector<Segment> segments;  // generated text trainable, prompt and splices frozen
  std::vector<Context> children;  // in splice order
  std::optional<std::string> answer;
  std::size_t gen_char_count = 0;
  std::optional<std::size_t> gen_token_count;
  double wall_seconds = 0.0;  // excluding children
  bool cached = false;        // answer served from the call cache, nothing generated
  std::size_t stray_calls = 0;
  std::size_t retries = 0;
};

struct Trace {
  std::string trace_id;
  Format format = Format::ReTuning;
  Context root;
  std::size_t backend_invocations = 0;
  std::size_t cache_hits = 0;
  std::optional<std::string> final_answer;  // raw answer text, not yet canonical
};

// Call-prompt -> answer map shared by the traces of one evaluation run.
class CallCache {
 public:
  std::optional<std::string> get(const std::string& prompt) const {
    std::lock_guard lock(mu_);
    auto it = map_.find(prompt);
    if (it == map_.end()) return std::nullopt;
    return it->second;
  }
  // Inserts unless present; returns the stored answer.
  std::string get_or_insert(const std::string& prompt, const std::string& answer) {
    std::lock_guard lock(mu_);
    return map_.try_emplace(prompt, answer).first->second;
  }
  std::size_t size() const {
    std::lock_guard lock(mu_);
    return map_.size();
  }

 private:
  mutable std::mutex mu_;
  std::unordered_map<std::string, std::string> map_;
};

struct ExecOptions {
  Limits limits;
  CallCache* cache = nullptr;
  std::string trace_id;
  double temperature = kDefaultTemperature;
};

enum class ExecErrorKind { DepthExceeded, ContextBudgetExceeded, GenerationBudgetExceeded, Backend, MalformedOutput };

inline std::string_view to_string(ExecErrorKind k) {
  switch (k) {
    case ExecErrorKind::DepthExceeded: return "depth_exceeded";
    case ExecErrorKind::ContextBudgetExceeded: return "context_budget_exceeded";
    case ExecErrorKind::GenerationBudgetExceeded: return "generation_budget_exceeded";
    case ExecErrorKind::Backend: return "backend_error";
    case ExecErrorKind::MalformedOutput: return "malformed_output";
  }
  return "?";
}

class ExecutionError : public std::runtime_error {
 public:
  ExecutionError(ExecErrorKind kind, const std::string& what, Trace partial)
      : std::runtime_error(what), kind_(kind), partial_(std::move(partial)) {}
  ExecErrorKind kind() const noexcept { return kind_; }
  const Trace& partial_trace() const noexcept { return partial_; }

 private:
  ExecErrorKind kind_;
  Trace partial_;
};

#define RETUNE_EXEC_ERROR(Name, Kind)                                                              \
  class Name : public ExecutionError {                                                             \
   public:                                                                                         \
    Name(const std::string& what, Trace partial) : ExecutionError(Kind, what, std::move(partial)) {} \
  };
RETUNE_EXEC_ERROR(DepthExceeded, ExecErrorKind::DepthExceeded)
RETUNE_EXEC_ERROR(ContextBudgetExceeded, ExecErrorKind::ContextBudgetExceeded)
RETUNE_EXEC_ERROR(GenerationBudgetExceeded, ExecErrorKind::GenerationBudgetExceeded)
RETUNE_EXEC_ERROR(BackendFailure, ExecErrorKind::Backend)
RETUNE_EXEC_ERROR(MalformedOutput, ExecErrorKind::MalformedOutput)
#undef RETUNE_EXEC_ERROR

[[noreturn]] inline void throw_execution_error(ExecErrorKind kind, const std::string& what, Trace partial) {
  switch (kind) {
    case ExecErrorKind::DepthExceeded: throw DepthExceeded(what, std::move(partial));
    case ExecErrorKind::ContextBudgetExceeded: throw ContextBudgetExceeded(what, std::move(partial));
    case ExecErrorKind::GenerationBudgetExceeded: throw GenerationBudgetExceeded(what, std::move(partial));
    case ExecErrorKind::Backend: throw BackendFailure(what, std::move(partial));
    case ExecErrorKind::MalformedOutput: throw MalformedOutput(what, std::move(partial));
  }
  throw ExecutionError(kind, what, std::move(partial));
}

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Abort {
  ExecErrorKind kind;
  std::string what;
};

inline void add_tokens(Context& ctx, const std::optional<std::size_t>& tokens, bool first) {
  if (first) ctx.gen_token_count = tokens;
  else if (ctx.gen_token_count && tokens) *ctx.gen_token_count += *tokens;
  else ctx.gen_token_count.reset();
}

class Executor {
 public:
  Executor(ModelBackend& backend, const ExecOptions& opts) : backend_(backend), opts_(opts) {
    opts_.limits.validate();
    trace_.trace_id = opts.trace_id;
  }

  Trace run(std::string prompt) {
    trace_.root.prompt = std::move(prompt);
    try {
      run_context(trace_.root);
    } catch (const Abort& a) {
      throw_execution_error(a.kind, a.what, std::move(trace_));
    }
    trace_.final_answer = trace_.root.answer;
    return std::move(trace_);
  }

 private:
  GenerationResult call_backend(Context& ctx, std::size_t step, std::size_t budget) {
    GenerationRequest req;
    req.context = ctx.transcript;
    req.stop = {"\n"};
    req.max_units = budget;
    req.temperature = opts_.temperature;
    req.timeout_seconds = opts_.limits.per_call_timeout_seconds;
    req.meta = {opts_.trace_id, ctx.id, ctx.depth, step};
    const auto t0 = Clock::now();
    GenerationResult res;
    try {
      res = backend_.generate(req);
    } catch (const BackendError& e) {
      throw Abort{ExecErrorKind::Backend, e.what()};
    } catch (const std::exception& e) {
      throw Abort{ExecErrorKind::Backend, std::string("backend failed: ") + e.what()};
    }
    ++trace_.backend_invocations;
    if (seconds_since(t0) > opts_.limits.per_call_timeout_seconds)
      throw Abort{ExecErrorKind::Backend, "generation timed out in context " + std::to_string(ctx.id)};
    return res;
  }

  void run_context(Context& ctx) {
    if (++generated_ > opts_.limits.max_contexts)
      throw Abort{ExecErrorKind::ContextBudgetExceeded,
                  "more than " + std::to_string(opts_.limits.max_contexts) + " contexts"};
    ctx.id = next_id_++;
    ctx.transcript = ctx.prompt;
    ctx.segments = {{ctx.prompt, false}};
    const auto started = Clock::now();
    double child_seconds = 0.0;
    const std::size_t budget = opts_.limits.max_generation_units;
    bool retried = false;

    for (std::size_t step = 0;; ++step) {
      if (ctx.gen_char_count >= budget)
        throw Abort{ExecErrorKind::GenerationBudgetExceeded, "context " + std::to_string(ctx.id) + " used " +
                                                                 std::to_string(budget) + " generation units"};
      const std::size_t remaining = budget - ctx.gen_char_count;
      GenerationResult res = call_backend(ctx, step, remaining);
      std::string text = std::move(res.text);
      // One line per generation, whether or not the backend honored the stop.
      if (auto nl = text.find('\n'); nl != std::string::npos) text.resize(nl);
      if (text.size() > remaining) text.resize(remaining);

      std::string next = ctx.transcript + text;
      if (has_unterminated_call(next)) {
        text += "\n";
        next += "\n";
      }
      const auto pending = find_unexecuted_call(next);
      const bool calls = pending && pending->span.end == next.size();
      const bool answered = !calls && has_answer(next);
      if (!calls && !answered) {
        if (text.size() >= remaining)
          throw Abort{ExecErrorKind::GenerationBudgetExceeded,
                      "context " + std::to_string(ctx.id) + " ran out of generation units before answering"};
        if (!retried) {
          retried = true;
          ++ctx.retries;
          continue;
        }
        throw Abort{ExecErrorKind::MalformedOutput, "context " + std::to_string(ctx.id) +
                                                        " produced neither a call nor an answer: '" + text + "'"};
      }
      for (std::size_t pos : find_stray_calls(next))
        if (pos >= ctx.transcript.size()) ++ctx.stray_calls;
      add_tokens(ctx, res.tokens, ctx.gen_char_count == 0 && ctx.segments.size() == 1);
      ctx.gen_char_count += text.size();
      ctx.segments.push_back({text, true});
      ctx.transcript = std::move(next);

      if (answered) {
        ctx.answer = extract_answer_text(ctx.transcript);
        break;
      }

      if (ctx.depth + 1 > opts_.limits.max_depth)
        throw Abort{ExecErrorKind::DepthExceeded, "call at depth " + std::to_string(ctx.depth + 1) +
                                                      " exceeds max_depth " + std::to_string(opts_.limits.max_depth)};
      const auto child_started = Clock::now();
      ctx.children.emplace_back();
      Context& child = ctx.children.back();
      child.prompt = child_prompt(pending->call_text);
      child.depth = ctx.depth + 1;
      std::optional<std::string> hit;
      if (opts_.cache) hit = opts_.cache->get(child.prompt);
      if (hit) {
        child.id = next_id_++;
        child.cached = true;
        child.transcript = child.prompt;
        child.segments = {{child.prompt, false}};
        child.answer = std::move(hit);
        ++trace_.cache_hits;
      } else {
        run_context(child);
        if (opts_.cache) opts_.cache->get_or_insert(child.prompt, *child.answer);
      }
      child_seconds += seconds_since(child_started);

      const std::string splice = return_segment(*child.answer, return_suffix_for(ctx.transcript));
      ctx.transcript += splice;
      ctx.segments.push_back({splice, false});
    }
    ctx.wall_seconds = seconds_since(started) - child_seconds;
  }

  ModelBackend& backend_;
  ExecOptions opts_;
  Trace trace_;
  std::size_t next_id_ = 0;
  std::size_t generated_ = 0;
};

}  // namespace detail

inline Trace recursive_generate(ModelBackend& backend, const std::string& prompt, const ExecOptions& opts = {}) {
  if (prompt.empty()) throw InputError("recursive_generate: empty prompt");
  return detail::Executor(backend, opts).run(prompt);
}

// Baseline and scratchpad: one context, one generation, no stop strings.
inline Trace single_shot_generate(ModelBackend& backend, const std::string& prompt, Format format,
                                  const ExecOptions& opts = {}) {
  if (prompt.empty()) throw InputError("single_shot_generate: empty prompt");
  opts.limits.validate();
  Trace trace;
  trace.trace_id = opts.trace_id;
  trace.format = format;
  Context& ctx = trace.root;
  ctx.prompt = prompt;
  ctx.transcript = prompt;
  ctx.segments = {{prompt, false}};
  GenerationRequest req;
  req.context = prompt;
  req.max_units = opts.limits.max_generation_units;
  req.temperature = opts.temperature;
  req.timeout_seconds = opts.limits.per_call_timeout_seconds;
  req.meta = {opts.trace_id, 0, 0, 0};
  const auto t0 = detail::Clock::now();
  GenerationResult res;
  try {
    res = backend.generate(req);
  } catch (const std::exception& e) {
    throw BackendFailure(e.what(), std::move(trace));
  }
  trace.backend_invocations = 1;
  ctx.wall_seconds = detail::seconds_since(t0);
  if (ctx.wall_seconds > opts.limits.per_call_timeout_seconds) throw BackendFailure("generation timed out", std::move(trace));
  if (res.text.size() > req.max_units) res.text.resize(req.max_units);
  ctx.gen_char_count = res.text.size();
  ctx.gen_token_count = res.tokens;
  ctx.segments.push_back({res.text, true});
  ctx.transcript += res.text;
  trace.final_answer = res.text;
  return trace;
}

// Canonical answer of a finished trace.
inline std::string final_answer(const Trace& trace, TaskKind task) {
  if (!trace.final_answer) throw ExtractionError("trace has no final answer");
  return extract_final(task, trace.format, *trace.final_answer);
}

// Contexts in preorder.
template <typename F>
void for_each_context(const Context& ctx, F&& f) {
  f(ctx);
  for (const auto& c : ctx.children) for_each_context(c, f);
}

inline std::size_t count_contexts(const Context& root) {
  std::size_t n = 0;
  for_each_context(root, [&](const Context&) { ++n; });
  return n;
}

// ---- trace JSON ---------------------------------------------------------------------

inline nlohmann::ordered_json context_to_json(const Context& c) {
  nlohmann::ordered_json segs = nlohmann::ordered_json::array();
  for (const auto& s : c.segments) segs.push_back({{"text", s.text}, {"trainable", s.trainable}});
  nlohmann::ordered_json kids = nlohmann::ordered_json::array();
  for (const auto& k : c.children) kids.push_back(context_to_json(k));
  nlohmann::ordered_json j;
  j["id"] = c.id;
  j["depth"] = c.depth;
  j["prompt"] = c.prompt;
  j["transcript"] = c.transcript;
  j["segments"] = std::move(segs);
  j["answer"] = c.answer ? nlohmann::ordered_json(*c.answer) : nlohmann::ordered_json(nullptr);
  j["gen_char_count"] = c.gen_char_count;
  j["gen_token_count"] = c.gen_token_count ? nlohmann::ordered_json(*c.gen_token_count) : nlohmann::ordered_json(nullptr);
  j["wall_seconds"] = c.wall_seconds;
  j["cached"] = c.cached;
  j["stray_calls"] = c.stray_calls;
  j["retries"] = c.retries;
  j["children"] = std::move(kids);
  return j;
}

inline Context context_from_json(const nlohmann::ordered_json& j) {
  Context c;
  c.id = j.at("id").get<std::size_t>();
  c.depth = j.at("depth").get<std::size_t>();
  c.prompt = j.at("prompt").get<std::string>();
  c.transcript = j.at("transcript").get<std::string>();
  for (const auto& s : j.at("segments")) c.segments.push_back({s.at("text").get<std::string>(), s.at("trainable").get<bool>()});
  if (!j.at("answer").is_null()) c.answer = j.at("answer").get<std::string>();
  c.gen_char_count = j.at("gen_char_count").get<std::size_t>();
  if (!j.at("gen_token_count").is_null()) c.gen_token_count = j.at("gen_token_count").get<std::size_t>();
  c.wall_seconds = j.at("wall_seconds").get<double>();
  c.cached = j.at("cached").get<bool>();
  c.stray_calls = j.value("stray_calls", std::size_t{0});
  c.retries = j.value("retries", std::size_t{0});
  for (const auto& k : j.at("children")) c.children.push_back(context_from_json(k));
  return c;
}

inline nlohmann::ordered_json trace_to_json(const Trace& t) {
  nlohmann::ordered_json j;
  j["trace_id"] = t.trace_id;
  j["format"] = std::string(to_string(t.format));
  j["backend_invocations"] = t.backend_invocations;
  j["cache_hits"] = t.cache_hits;
  j["final_answer"] = t.final_answer ? nlohmann::ordered_json(*t.final_answer) : nlohmann::ordered_json(nullptr);
  j["root"] = context_to_json(t.root);
  return j;
}

inline Trace trace_from_json(const nlohmann::ordered_json& j) {
  try {
    Trace t;
    t.trace_id = j.at("trace_id").get<std::string>();
    t.format = parse_format(j.at("format").get<std::string>());
    t.backend_invocations = j.at("backend_invocations").get<std::size_t>();
    t.cache_hits = j.at("cache_hits").get<std::size_t>();
    if (!j.at("final_answer").is_null()) t.final_answer = j.at("final_answer").get<std::string>();
    t.root = context_from_json(j.at("root"));
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed trace: ") + e.what());
  }
}

}  // namespace retune
