#pragma once

// Length-sweep evaluation: sample problems, run them through a backend,
// score by canonical-string equality, classify ReTuning traces into the error
// taxonomy and fold everything into a per-length report.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstddef>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "retune/backends.hpp"
#include "retune/datagen.hpp"
#include "retune/errors.hpp"
#include "retune/executor.hpp"
#include "retune/formats.hpp"
#include "retune/tasks.hpp"

namespace retune {

enum class ErrorClass { NoError, CallError, ComputeError, RestorationError };

inline std::string_view to_string(ErrorClass c) {
  switch (c) {
    case ErrorClass::NoError: return "none";
    case ErrorClass::CallError: return "call";
    case ErrorClass::ComputeError: return "compute";
    case ErrorClass::RestorationError: return "restoration";
  }
  return "?";
}

inline ErrorClass parse_error_class(std::string_view s) {
  if (s == "none") return ErrorClass::NoError;
  if (s == "call") return ErrorClass::CallError;
  if (s == "compute") return ErrorClass::ComputeError;
  if (s == "restoration") return ErrorClass::RestorationError;
  throw InputError("unknown error class '" + std::string(s) + "'");
}

// ---- classification -------------------------------------------------------------------

struct TraceEvent {
  std::size_t context_id = 0;
  FaultClass cls = FaultClass::Call;
  std::string detail;
};

struct Classification {
  ErrorClass cls = ErrorClass::NoError;
  bool final_correct = false;
  std::vector<TraceEvent> events;  // execution order
};

namespace detail {

inline void walk_events(const Context& ctx, std::vector<TraceEvent>& events) {
  if (ctx.cached) return;
  const auto inst = parse_context(ctx.prompt);
  if (!inst) return;  // spawned by a malformed call, already flagged at the caller
  auto event = [&](FaultClass c, std::string detail) { events.push_back({ctx.id, c, std::move(detail)}); };

  std::vector<Answer> received;
  bool returns_ok = true;
  std::size_t k = 0;
  for (const auto& site : scan_calls(ctx.transcript)) {
    if (!site.executed) break;
    std::optional<TaskInstance> expected;
    try {
      expected = next_subcall(*inst, received);
    } catch (const std::exception&) {
    }
    if (!expected)
      event(FaultClass::Call, "unexpected call '" + site.call_text + "'");
    else if (site.call_text != problem_header(*expected))
      event(FaultClass::Call, "call '" + site.call_text + "', expected '" + problem_header(*expected) + "'");
    if (k < ctx.children.size()) walk_events(ctx.children[k], events);
    ++k;

    const auto issued = parse_header(site.call_text);
    if (!issued || *site.return_text != render_payload(solve(*issued))) returns_ok = false;
    auto ans = parse_payload(*inst, *site.return_text);
    if (!ans) {
      returns_ok = false;
      continue;
    }
    received.push_back(std::move(*ans));
  }

  if (ctx.answer && k < call_arity(*inst)) event(FaultClass::Call, "answered after " + std::to_string(k) + " calls");
  if (!ctx.answer) {
    event(FaultClass::Compute, "no answer");
    return;
  }
  if (is_base_case(*inst)) {
    const std::string want = render_payload(solve(*inst));
    if (*ctx.answer != want) event(FaultClass::Compute, "base answer '" + *ctx.answer + "', expected '" + want + "'");
    return;
  }
  if (returns_ok && received.size() == call_arity(*inst)) {
    const std::string want = render_payload(combine(*inst, received));
    if (*ctx.answer != want) event(FaultClass::Compute, "answer '" + *ctx.answer + "', expected '" + want + "'");
  }
}

}  // namespace detail

inline bool trace_correct(const Trace& trace, TaskKind task, const TaskInstance& root) {
  try {
    return final_answer(trace, task) == canonical_answer(root);
  } catch (const ExtractionError&) {
    return false;
  }
}

// Walks the trace in execution order and compares every call and every answer
// with what the oracle would have produced from the same inputs.
inline Classification analyze_trace(const Trace& trace, TaskKind task) {
  if (trace.format != Format::ReTuning) throw ContractViolation("classify_trace: not a ReTuning trace");
  const auto root = parse_context(trace.root.prompt);
  if (!root || root->kind != task) throw ContractViolation("classify_trace: root prompt is not a " + std::string(to_string(task)) + " problem");
  Classification c;
  detail::walk_events(trace.root, c.events);
  c.final_correct = trace_correct(trace, task, *root);
  if (c.events.empty())
    c.cls = ErrorClass::NoError;
  else if (c.final_correct)
    c.cls = ErrorClass::RestorationError;
  else
    c.cls = c.events.front().cls == FaultClass::Call ? ErrorClass::CallError : ErrorClass::ComputeError;
  return c;
}

inline ErrorClass classify_trace(const Trace& trace, TaskKind task) { return analyze_trace(trace, task).cls; }

// The class an injection log implies for a finished trace.
inline ErrorClass expected_class(const std::vector<FaultEntry>& log, bool final_correct) {
  if (log.empty()) return ErrorClass::NoError;
  if (final_correct) return ErrorClass::RestorationError;
  return log.front().cls == FaultClass::Call ? ErrorClass::CallError : ErrorClass::ComputeError;
}

// Restoration errors still count as solved.
inline bool counts_correct(ErrorClass c) { return c == ErrorClass::NoError || c == ErrorClass::RestorationError; }

// ---- tokenizer ------------------------------------------------------------------------

// Greedy longest-match-first word-piece tokenizer over a vocabulary file (one
// token per line, `##` marking word continuations).
class WordPieceTokenizer {
 public:
  explicit WordPieceTokenizer(const std::string& vocab_path, bool lowercase = true, std::string unk = "[UNK]",
                              std::size_t max_chars_per_word = 100)
      : lowercase_(lowercase), unk_(std::move(unk)), max_chars_(max_chars_per_word) {
    std::ifstream is(vocab_path);
    if (!is) throw std::runtime_error("cannot open vocabulary '" + vocab_path + "'");
    std::string line;
    while (std::getline(is, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) vocab_.emplace(line, vocab_.size());
    }
    if (vocab_.empty()) throw InputError("vocabulary '" + vocab_path + "' is empty");
  }

  static WordPieceTokenizer from_tokens(const std::vector<std::string>& tokens, bool lowercase = true) {
    WordPieceTokenizer t;
    t.lowercase_ = lowercase;
    for (const auto& tok : tokens) t.vocab_.emplace(tok, t.vocab_.size());
    return t;
  }

  std::vector<std::string> tokenize(std::string_view text) const {
    std::vector<std::string> out;
    for (const auto& word : basic_split(text)) wordpiece(word, out);
    return out;
  }

  std::size_t count(std::string_view text) const { return tokenize(text).size(); }

 private:
  WordPieceTokenizer() = default;

  std::vector<std::string> basic_split(std::string_view text) const {
    std::vector<std::string> words;
    std::string cur;
    auto flush = [&] {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    };
    for (char ch : text) {
      const auto c = static_cast<unsigned char>(ch);
      if (std::isspace(c)) {
        flush();
      } else if (std::ispunct(c)) {
        flush();
        words.emplace_back(1, ch);
      } else {
        cur.push_back(lowercase_ ? static_cast<char>(std::tolower(c)) : ch);
      }
    }
    flush();
    return words;
  }

  void wordpiece(const std::string& word, std::vector<std::string>& out) const {
    if (word.size() > max_chars_) {
      out.push_back(unk_);
      return;
    }
    std::vector<std::string> pieces;
    std::size_t start = 0;
    while (start < word.size()) {
      std::size_t end = word.size();
      std::optional<std::string> match;
      while (start < end) {
        std::string piece = (start > 0 ? "##" : "") + word.substr(start, end - start);
        if (vocab_.count(piece)) {
          match = std::move(piece);
          break;
        }
        --end;
      }
      if (!match) {
        out.push_back(unk_);
        return;
      }
      pieces.push_back(std::move(*match));
      start = end;
    }
    out.insert(out.end(), pieces.begin(), pieces.end());
  }

  std::unordered_map<std::string, std::size_t> vocab_;
  bool lowercase_ = true;
  std::string unk_ = "[UNK]";
  std::size_t max_chars_ = 100;
};

// ---- context statistics -----------------------------------------------------------------

struct ContextStats {
  std::size_t contexts = 0;  // contexts that generated; cache hits are skipped
  std::size_t total_chars = 0;
  double mean_chars = 0.0;
  std::size_t max_chars = 0;
  std::optional<std::size_t> total_tokens;
  std::optional<double> mean_tokens;
  std::optional<std::size_t> max_tokens;
};

inline ContextStats context_stats(const Trace& trace, const WordPieceTokenizer* tokenizer = nullptr) {
  ContextStats s;
  if (tokenizer) {
    s.total_tokens = 0;
    s.max_tokens = 0;
  }
  for_each_context(trace.root, [&](const Context& c) {
    if (c.cached) return;
    ++s.contexts;
    s.total_chars += c.transcript.size();
    s.max_chars = std::max(s.max_chars, c.transcript.size());
    if (tokenizer) {
      const std::size_t t = tokenizer->count(c.transcript);
      *s.total_tokens += t;
      s.max_tokens = std::max(*s.max_tokens, t);
    }
  });
  if (s.contexts) {
    s.mean_chars = static_cast<double>(s.total_chars) / static_cast<double>(s.contexts);
    if (tokenizer) s.mean_tokens = static_cast<double>(*s.total_tokens) / static_cast<double>(s.contexts);
  }
  return s;
}

// ---- run_eval ---------------------------------------------------------------------------

struct EvalConfig {
  TaskKind task = TaskKind::Addition;
  Format format = Format::ReTuning;
  std::vector<std::size_t> lengths;
  std::size_t n = 100;
  std::string template_text;  // empty: the format's default prompt
  Limits limits;
  bool cache = false;
  std::uint64_t rng_seed = 0;
  std::size_t workers = 1;
  bool timing = true;     // off: all durations reported as 0 for byte-stable output
  std::string timestamp;  // copied into the report verbatim
  double temperature = kDefaultTemperature;
  const WordPieceTokenizer* tokenizer = nullptr;

  void validate() const {
    if (lengths.empty()) throw InputError("eval: no lengths given");
    if (n < 1) throw InputError("eval: n must be >= 1");
    if (workers < 1) throw InputError("eval: workers must be >= 1");
    limits.validate();
  }
};

struct ProblemRecord {
  std::size_t length = 0;
  std::size_t index = 0;
  std::string trace_id;
  std::string prompt;
  std::string expected;
  std::optional<std::string> predicted;
  bool correct = false;
  std::optional<ErrorClass> error;  // ReTuning only; unset when the trace cannot be classified
  std::optional<std::string> failure;
  double seconds = 0.0;
  std::size_t contexts = 0;
  std::size_t chars = 0;
  std::optional<std::size_t> tokens;
  std::size_t backend_invocations = 0;
  std::size_t cache_hits = 0;
};

struct LengthSummary {
  std::size_t length = 0;
  std::size_t n = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  std::map<ErrorClass, std::size_t> errors;
  std::size_t unclassified = 0;
  double mean_generation_seconds = 0.0;
  double mean_chars_per_context = 0.0;
  std::optional<double> mean_tokens_per_context;
  double mean_contexts = 0.0;
};

struct EvalReport {
  TaskKind task = TaskKind::Addition;
  Format format = Format::ReTuning;
  std::string backend;
  std::uint64_t rng_seed = 0;
  std::string timestamp;
  std::vector<LengthSummary> per_length;
  std::vector<ProblemRecord> records;  // (length, index) order
};

// Called once per problem, in (length, index) order, after the run.
using TraceSink = std::function<void(const ProblemRecord&, const Trace&)>;

inline std::string make_trace_id(TaskKind task, std::size_t length, std::size_t index) {
  return std::string(to_string(task)) + "-L" + std::to_string(length) + "-" + std::to_string(index);
}

inline std::vector<TaskInstance> eval_instances(TaskKind task, std::size_t length, std::size_t n, std::uint64_t seed) {
  const std::size_t lengths[] = {length};
  return make_splits(task, lengths, derive_seed(seed, {stream::kEval}), 0, n).test;
}

namespace detail {

inline void zero_timing(Context& c) {
  c.wall_seconds = 0.0;
  for (auto& k : c.children) zero_timing(k);
}

}  // namespace detail

inline ProblemRecord evaluate_problem(ModelBackend& backend, const EvalConfig& cfg, const TaskInstance& inst,
                                      std::size_t index, CallCache* cache, Trace& trace_out) {
  ProblemRecord rec;
  rec.length = inst.length();
  rec.index = index;
  rec.trace_id = make_trace_id(cfg.task, rec.length, index);
  rec.prompt = render_prompt(inst, cfg.format, cfg.template_text);
  rec.expected = canonical_answer(inst);
  ExecOptions opts{cfg.limits, cache, rec.trace_id, cfg.temperature};
  const auto t0 = std::chrono::steady_clock::now();
  try {
    trace_out = cfg.format == Format::ReTuning ? recursive_generate(backend, rec.prompt, opts)
                                               : single_shot_generate(backend, rec.prompt, cfg.format, opts);
  } catch (const ExecutionError& e) {
    trace_out = e.partial_trace();
    rec.failure = std::string(to_string(e.kind())) + ": " + e.what();
  }
  trace_out.format = cfg.format;
  rec.seconds = cfg.timing ? std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() : 0.0;
  if (!cfg.timing) detail::zero_timing(trace_out.root);

  if (!rec.failure) {
    try {
      rec.predicted = final_answer(trace_out, cfg.task);
    } catch (const ExtractionError& e) {
      rec.failure = std::string("extraction: ") + e.what();
    }
  }
  rec.correct = rec.predicted && *rec.predicted == rec.expected;
  if (cfg.format == Format::ReTuning) {
    try {
      rec.error = classify_trace(trace_out, cfg.task);
    } catch (const ContractViolation&) {
      rec.error.reset();
    }
  }
  const ContextStats st = context_stats(trace_out, cfg.tokenizer);
  rec.contexts = st.contexts;
  rec.chars = st.total_chars;
  rec.tokens = st.total_tokens;
  rec.backend_invocations = trace_out.backend_invocations;
  rec.cache_hits = trace_out.cache_hits;
  return rec;
}

inline std::vector<LengthSummary> summarize(const std::vector<ProblemRecord>& records, Format format, bool with_tokens) {
  std::map<std::size_t, std::vector<const ProblemRecord*>> by_len;
  for (const auto& r : records) by_len[r.length].push_back(&r);
  std::vector<LengthSummary> out;
  for (const auto& [len, recs] : by_len) {
    LengthSummary s;
    s.length = len;
    s.n = recs.size();
    std::size_t contexts = 0, chars = 0, tokens = 0;
    double seconds = 0.0;
    for (const auto* r : recs) {
      s.correct += r->correct ? 1 : 0;
      if (format == Format::ReTuning) {
        if (r->error) ++s.errors[*r->error];
        else ++s.unclassified;
      }
      contexts += r->contexts;
      chars += r->chars;
      tokens += r->tokens.value_or(0);
      seconds += r->seconds;
    }
    s.accuracy = static_cast<double>(s.correct) / static_cast<double>(s.n);
    s.mean_generation_seconds = seconds / static_cast<double>(s.n);
    s.mean_chars_per_context = contexts ? static_cast<double>(chars) / static_cast<double>(contexts) : 0.0;
    if (with_tokens) s.mean_tokens_per_context = contexts ? static_cast<double>(tokens) / static_cast<double>(contexts) : 0.0;
    s.mean_contexts = static_cast<double>(contexts) / static_cast<double>(s.n);
    out.push_back(std::move(s));
  }
  return out;
}

inline EvalReport run_eval(ModelBackend& backend, const EvalConfig& cfg, const TraceSink& sink = {}) {
  cfg.validate();
  if (cfg.workers > 1 && !backend.shareable()) throw InputError("backend '" + backend.id() + "' cannot serve concurrent workers");

  struct Job {
    TaskInstance inst;
    std::size_t index;
  };
  std::vector<Job> jobs;
  std::vector<std::size_t> lengths = cfg.lengths;
  std::sort(lengths.begin(), lengths.end());
  lengths.erase(std::unique(lengths.begin(), lengths.end()), lengths.end());
  for (std::size_t len : lengths) {
    if (len < 1) throw InputError("eval: lengths must be >= 1");
    auto insts = eval_instances(cfg.task, len, cfg.n, cfg.rng_seed);
    for (std::size_t i = 0; i < insts.size(); ++i) jobs.push_back({std::move(insts[i]), i});
  }

  CallCache cache;
  std::vector<ProblemRecord> records(jobs.size());
  std::vector<Trace> traces(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) {
      try {
        records[i] = evaluate_problem(backend, cfg, jobs[i].inst, jobs[i].index, cfg.cache ? &cache : nullptr, traces[i]);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  if (cfg.workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(cfg.workers, jobs.size()); ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  if (sink)
    for (std::size_t i = 0; i < jobs.size(); ++i) sink(records[i], traces[i]);

  EvalReport report;
  report.task = cfg.task;
  report.format = cfg.format;
  report.backend = backend.id();
  report.rng_seed = cfg.rng_seed;
  report.timestamp = cfg.timestamp;
  report.per_length = summarize(records, cfg.format, cfg.tokenizer != nullptr);
  report.records = std::move(records);
  return report;
}

// ---- report output --------------------------------------------------------------------

inline nlohmann::ordered_json report_to_json(const EvalReport& r) {
  using oj = nlohmann::ordered_json;
  oj per = oj::array();
  for (const auto& s : r.per_length) {
    oj e;
    e["length"] = s.length;
    e["n"] = s.n;
    e["correct"] = s.correct;
    e["accuracy"] = s.accuracy;
    if (r.format == Format::ReTuning) {
      auto get = [&](ErrorClass c) {
        auto it = s.errors.find(c);
        return it == s.errors.end() ? std::size_t{0} : it->second;
      };
      oj errs{{"call", get(ErrorClass::CallError)},
              {"compute", get(ErrorClass::ComputeError)},
              {"restoration", get(ErrorClass::RestorationError)},
              {"none", get(ErrorClass::NoError)}};
      if (s.unclassified) errs["unclassified"] = s.unclassified;
      e["errors"] = std::move(errs);
    } else {
      e["errors"] = nullptr;
    }
    e["mean_generation_seconds"] = s.mean_generation_seconds;
    e["mean_chars_per_context"] = s.mean_chars_per_context;
    if (s.mean_tokens_per_context) e["mean_tokens_per_context"] = *s.mean_tokens_per_context;
    e["mean_contexts"] = s.mean_contexts;
    per.push_back(std::move(e));
  }
  oj j;
  j["task"] = std::string(to_string(r.task));
  j["format"] = std::string(to_string(r.format));
  j["backend"] = r.backend;
  j["rng_seed"] = r.rng_seed;
  j["timestamp"] = r.timestamp;
  j["per_length"] = std::move(per);
  return j;
}

inline nlohmann::ordered_json record_to_json(const ProblemRecord& r) {
  using oj = nlohmann::ordered_json;
  oj j;
  j["length"] = r.length;
  j["index"] = r.index;
  j["trace_id"] = r.trace_id;
  j["prompt"] = r.prompt;
  j["expected"] = r.expected;
  j["predicted"] = r.predicted ? oj(*r.predicted) : oj(nullptr);
  j["correct"] = r.correct;
  j["error"] = r.error ? oj(std::string(to_string(*r.error))) : oj(nullptr);
  j["failure"] = r.failure ? oj(*r.failure) : oj(nullptr);
  j["seconds"] = r.seconds;
  j["contexts"] = r.contexts;
  j["chars"] = r.chars;
  j["tokens"] = r.tokens ? oj(*r.tokens) : oj(nullptr);
  j["backend_invocations"] = r.backend_invocations;
  j["cache_hits"] = r.cache_hits;
  return j;
}

inline std::string report_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "task,format,backend,length,n,correct,accuracy,call,compute,restoration,none,"
        "mean_generation_seconds,mean_chars_per_context,mean_tokens_per_context,mean_contexts\n";
  auto num = [](double v) {
    std::ostringstream s;
    s.precision(17);
    s << v;
    return s.str();
  };
  for (const auto& s : r.per_length) {
    auto get = [&](ErrorClass c) -> std::string {
      if (r.format != Format::ReTuning) return "";
      auto it = s.errors.find(c);
      return std::to_string(it == s.errors.end() ? 0 : it->second);
    };
    os << to_string(r.task) << ',' << to_string(r.format) << ',' << r.backend << ',' << s.length << ',' << s.n << ','
       << s.correct << ',' << num(s.accuracy) << ',' << get(ErrorClass::CallError) << ','
       << get(ErrorClass::ComputeError) << ',' << get(ErrorClass::RestorationError) << ','
       << get(ErrorClass::NoError) << ',' << num(s.mean_generation_seconds) << ',' << num(s.mean_chars_per_context)
       << ',' << (s.mean_tokens_per_context ? num(*s.mean_tokens_per_context) : "") << ',' << num(s.mean_contexts)
       << '\n';
  }
  return os.str();
}

// ISO-8601 UTC. SOURCE_DATE_EPOCH, when set, replaces the wall clock.
inline std::string utc_timestamp(std::optional<std::time_t> when = std::nullopt) {
  std::time_t t = when ? *when : std::time(nullptr);
  if (!when)
    if (const char* sde = std::getenv("SOURCE_DATE_EPOCH")) t = static_cast<std::time_t>(std::stoll(sde));
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace retune
