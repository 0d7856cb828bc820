// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "retune/backends.hpp"
#include "retune/datagen.hpp"
#include "retune/eval.hpp"
#include "retune/executor.hpp"
#include "retune/tasks.hpp"

#include "../fixtures.hpp"

using namespace retune;
namespace fs = std::filesystem;
using boost::multiprecision::cpp_int;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool ok = true;
  std::string detail;
};

int failures = 0;

void criterion(const std::string& name, double limit_seconds, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  if (limit_seconds > 0 && secs > limit_seconds) {
    o.ok = false;
    o.detail += (o.detail.empty() ? "" : "; ") + std::string("took longer than ") + std::to_string(limit_seconds) + " s";
  }
  if (!o.ok) ++failures;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", secs);
  std::cout << (o.ok ? "PASS " : "FAIL ") << name << " (" << buf << " s)" << (o.detail.empty() ? "" : ": " + o.detail)
            << std::endl;
}

std::vector<std::size_t> sweep(std::size_t a, std::size_t b, std::size_t step) {
  std::vector<std::size_t> out{a};
  for (std::size_t k = (a / step + 1) * step; k <= b; k += step) out.push_back(k);
  return out;
}

// cpp_int reads a leading 0 as an octal prefix.
cpp_int big(const std::string& digits) { return cpp_int(strip_leading_zeros(digits)); }

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

int sh(const std::string& cmd) { return std::system((cmd + " >/dev/null 2>&1").c_str()); }

Outcome fixture_exactness() {
  Outcome o;
  for (const auto& c : fixtures::cases())
    if (c.actual != c.expected) {
      o.ok = false;
      o.detail += (o.detail.empty() ? "" : ", ") + c.name;
    }
  return o;
}

Outcome oracle_end_to_end() {
  OracleBackend oracle;
  std::ostringstream detail;
  bool ok = true;
  const std::vector<std::pair<TaskKind, std::vector<std::size_t>>> plan{
      {TaskKind::Addition, sweep(1, 60, 5)}, {TaskKind::Parity, sweep(1, 60, 5)}, {TaskKind::DynProg, sweep(1, 30, 1)}};
  for (const auto& [task, lengths] : plan) {
    EvalConfig cfg;
    cfg.task = task;
    cfg.lengths = lengths;
    cfg.n = 20;
    cfg.timing = false;
    const auto report = run_eval(oracle, cfg);
    std::size_t correct = 0, total = 0;
    for (const auto& s : report.per_length) {
      correct += s.correct;
      total += s.n;
    }
    if (correct != total || total != lengths.size() * 20) ok = false;
    detail << (detail.tellp() ? ", " : "") << to_string(task) << " " << correct << "/" << total;
  }
  return {ok, detail.str()};
}

Outcome dp_equivalence() {
  std::size_t checked = 0;
  for (std::size_t len = 1; len <= 4; ++len) {
    std::vector<int> items(len, kDpItemMin);
    for (;;) {
      if (dp_indices(dp_values(items), items) != dp_bruteforce(items))
        return {false, "mismatch on " + render_array(items)};
      ++checked;
      std::size_t p = len;
      while (p > 0 && items[p - 1] == kDpItemMax) items[--p] = kDpItemMin;
      if (p == 0) break;
      ++items[p - 1];
    }
  }
  const std::size_t exhaustive = checked;
  Rng rng(20240601);
  for (int i = 0; i < 10000; ++i) {
    std::vector<int> items(static_cast<std::size_t>(rng.between(1, 12)));
    for (auto& v : items) v = static_cast<int>(rng.between(kDpItemMin, kDpItemMax));
    if (dp_indices(dp_values(items), items) != dp_bruteforce(items)) return {false, "mismatch on " + render_array(items)};
    ++checked;
  }
  return {exhaustive == 11 + 121 + 1331 + 14641, std::to_string(exhaustive) + " exhaustive + 10000 random"};
}

Outcome addition_soundness() {
  OracleBackend oracle;
  Rng rng(60);
  for (int i = 0; i < 10000; ++i) {
    const std::string a = random_digits(rng, static_cast<std::size_t>(rng.between(1, 60)));
    const std::string b = random_digits(rng, static_cast<std::size_t>(rng.between(1, 60)));
    const std::string want = (big(a) + big(b)).str();
    if (solve_addition(a, b) != want) return {false, "solve_addition " + a + " + " + b};
    const auto levels = addition_levels(a, b);
    for (std::size_t k = 1; k <= levels.size(); ++k) {
      const std::string sa = a.size() > k ? a.substr(a.size() - k) : a;
      const std::string sb = b.size() > k ? b.substr(b.size() - k) : b;
      const cpp_int lhs = big(levels[k - 1].output) + levels[k - 1].carry * boost::multiprecision::pow(cpp_int(10), static_cast<unsigned>(k));
      if (levels[k - 1].output.size() != k || lhs != big(sa) + big(sb))
        return {false, "level " + std::to_string(k) + " of " + a + " + " + b};
    }
    const auto inst = TaskInstance::addition(a, b);
    if (final_answer(recursive_generate(oracle, context_prompt(inst)), TaskKind::Addition) != want)
      return {false, "trace " + a + " + " + b};
  }
  return {true, "10000 pairs"};
}

Outcome classifier_fidelity() {
  const std::size_t per_class = 1000;
  std::map<ErrorClass, std::size_t> counts;
  std::size_t traces = 0, disagree = 0, aborted = 0;
  const TaskKind tasks[] = {TaskKind::Addition, TaskKind::Parity, TaskKind::DynProg};
  struct Mode {
    ErrorClass want;
    FaultConfig cfg;
  };
  std::vector<Mode> modes(3);
  modes[0].want = ErrorClass::CallError;
  modes[0].cfg.call_fault_rate = 0.1;
  modes[1].want = ErrorClass::ComputeError;
  modes[1].cfg.compute_fault_rate = 0.1;
  modes[2].want = ErrorClass::RestorationError;
  modes[2].cfg.call_fault_rate = 0.1;
  modes[2].cfg.compute_fault_rate = 0.1;
  modes[2].cfg.recover = true;
  for (std::size_t m = 0; m < modes.size(); ++m) {
    for (std::size_t t = 0; t < 3; ++t) {
      const TaskKind task = tasks[t];
      const std::size_t quota = per_class / 3 + (t < per_class % 3 ? 1 : 0);
      modes[m].cfg.rng_seed = 100 + m;
      FaultyBackend faulty(modes[m].cfg);
      std::size_t got = 0;
      for (std::size_t round = 0; got < quota && round < 200; ++round) {
        const std::size_t len = 2 + round % (task == TaskKind::DynProg ? 11 : 29);
        for (const auto& inst : eval_instances(task, len, 20, round)) {
          ExecOptions opts;
          opts.trace_id = std::to_string(m) + "-" + std::to_string(round) + "-" + problem_header(inst);
          Trace trace;
          try {
            trace = recursive_generate(faulty, context_prompt(inst), opts);
          } catch (const ExecutionError&) {
            ++aborted;
            continue;
          }
          const auto c = analyze_trace(trace, task);
          const auto truth = expected_class(faulty.log().entries(opts.trace_id), c.final_correct);
          ++traces;
          if (c.cls != truth) ++disagree;
          if (truth == ErrorClass::RestorationError && !counts_correct(c.cls)) ++disagree;
          ++counts[truth];
          if (truth == modes[m].want && ++got >= quota) break;
        }
      }
    }
  }
  std::ostringstream d;
  d << traces << " traces (" << aborted << " aborted), " << disagree << " disagreements; call " << counts[ErrorClass::CallError] << ", compute "
    << counts[ErrorClass::ComputeError] << ", restoration " << counts[ErrorClass::RestorationError];
  const bool enough = counts[ErrorClass::CallError] >= per_class && counts[ErrorClass::ComputeError] >= per_class &&
                      counts[ErrorClass::RestorationError] >= per_class;
  return {disagree == 0 && enough, d.str()};
}

Outcome resampling() {
  std::ostringstream d;
  bool ok = true;
  // Configured histogram is met exactly.
  DatasetConfig h;
  h.task = TaskKind::Addition;
  h.max_length = 6;
  h.seed_count = 400;
  h.resample = ResampleMode::Histogram;
  h.target = {{1, 17}, {2, 250}, {3, 3}, {4, 1000}, {5, 64}, {6, 9}};
  if (length_histogram(build_dataset(h)) != h.target) {
    ok = false;
    d << "histogram target missed; ";
  }
  const std::pair<TaskKind, std::size_t> full[] = {
      {TaskKind::Addition, 3676055}, {TaskKind::DynProg, 342187}, {TaskKind::Parity, 124780}};
  const std::pair<TaskKind, std::size_t> scaled[] = {
      {TaskKind::Addition, 36761}, {TaskKind::DynProg, 3422}, {TaskKind::Parity, 1248}};
  for (const auto& [task, want] : full) {
    DatasetConfig c;
    c.task = task;
    if (histogram_total(*effective_target(c)) != want) {
      ok = false;
      d << to_string(task) << " default target != " << want << "; ";
    }
  }
  for (const auto& [task, want] : scaled) {
    DatasetConfig c;
    c.task = task;
    c.scale = 0.01;
    const auto data = build_dataset(c);
    const auto hist = length_histogram(data);
    const bool exact = data.size() == want && hist == *effective_target(c);
    ok = ok && exact;
    d << to_string(task) << " " << data.size() << (exact ? "" : " (want " + std::to_string(want) + ")") << "; ";
  }
  std::string s = d.str();
  if (s.size() >= 2) s.resize(s.size() - 2);
  return {ok, s};
}

Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / "retune_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cli = RETUNE_CLI_PATH;
  for (const char* run : {"1", "2"}) {
    const fs::path d = dir / run;
    if (sh(cli + " gen-data --task dynprog --format retuning --seed 7 --out " + (d / "dp.jsonl").string() +
           " --splits-dir " + (d / "splits").string()) != 0)
      return {false, "gen-data failed"};
    if (sh(cli + " eval --task parity --backend faulty --call-rate 0.1 --compute-rate 0.1 --lengths 1..20..4 --n 10 "
                 "--seed 3 --workers 3 --timing off --timestamp 2000-01-01T00:00:00Z --out " +
           (d / "report.json").string() + " --records " + (d / "records.jsonl").string() + " --csv " +
           (d / "report.csv").string() + " --traces-dir " + (d / "traces").string()) != 0)
      return {false, "eval failed"};
  }
  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "1")) {
    if (!e.is_regular_file()) continue;
    const fs::path other = dir / "2" / fs::relative(e.path(), dir / "1");
    if (!fs::exists(other) || slurp(e.path()) != slurp(other))
      return {false, fs::relative(e.path(), dir / "1").string() + " differs"};
    ++compared;
  }
  const std::string dataset = slurp(dir / "1" / "dp.jsonl");
  const auto records = static_cast<std::size_t>(std::count(dataset.begin(), dataset.end(), '\n'));
  fs::remove_all(dir);
  return {records == 342187 && compared > 5, std::to_string(compared) + " files identical, " + std::to_string(records) + " records"};
}

Outcome cache() {
  OracleBackend oracle;
  EvalConfig cfg;
  cfg.task = TaskKind::Parity;
  cfg.lengths = {60};
  cfg.n = 100;
  cfg.timing = false;
  const auto plain = run_eval(oracle, cfg);
  cfg.cache = true;
  const auto cached = run_eval(oracle, cfg);
  std::size_t inv_plain = 0, inv_cached = 0;
  for (std::size_t i = 0; i < plain.records.size(); ++i) {
    if (plain.records[i].predicted != cached.records[i].predicted) return {false, "answers differ at " + std::to_string(i)};
    inv_plain += plain.records[i].backend_invocations;
    inv_cached += cached.records[i].backend_invocations;
  }
  return {inv_cached <= inv_plain && plain.per_length[0].correct == 100,
          std::to_string(inv_cached) + " vs " + std::to_string(inv_plain) + " invocations"};
}

Outcome context_size_trend() {
  std::ostringstream d;
  bool ok = true;
  for (std::size_t len : {10, 20, 30}) {
    EvalConfig cfg;
    cfg.task = TaskKind::Addition;
    cfg.lengths = {len};
    cfg.n = 20;
    cfg.timing = false;
    OracleBackend rt;
    const double per_context = run_eval(rt, cfg).per_length[0].mean_chars_per_context;
    cfg.format = Format::Scratchpad;
    OracleBackend sp(Format::Scratchpad);
    const double scratch_total = run_eval(sp, cfg).per_length[0].mean_chars_per_context;
    ok = ok && per_context < scratch_total;
    d << (len == 10 ? "" : "; ") << "L" << len << " " << static_cast<long>(per_context) << " < "
      << static_cast<long>(scratch_total);
  }
  return {ok, d.str()};
}

}  // namespace

int main() {
  criterion("fixture exactness", 1.0, fixture_exactness);
  criterion("oracle end-to-end accuracy", 300.0, oracle_end_to_end);
  criterion("dynprog oracle equivalence", 120.0, dp_equivalence);
  criterion("addition soundness", 60.0, addition_soundness);
  criterion("classifier fidelity", 0.0, classifier_fidelity);
  criterion("resampling", 120.0, resampling);
  criterion("determinism", 0.0, determinism);
  criterion("call cache", 0.0, cache);
  criterion("context-size trend", 0.0, context_size_trend);
  std::cout << (failures ? "FAILED " + std::to_string(failures) + " criteria" : std::string("all criteria passed"))
            << std::endl;
  return failures ? 1 : 0;
}
