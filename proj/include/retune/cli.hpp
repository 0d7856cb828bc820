#pragma once

// Command-line front end: gen-data, eval, inject, classify, stats.
//
// dispatch() is the whole program; tools/retune_cli.cpp only forwards argv.
// Every subcommand accepts --config FILE (TOML/INI, same keys as the flags,
// subcommand options under a [subcommand] section); flags given on the
// command line win.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "retune/backends.hpp"
#include "retune/datagen.hpp"
#include "retune/errors.hpp"
#include "retune/eval.hpp"
#include "retune/executor.hpp"
#include "retune/formats.hpp"
#include "retune/http_backend.hpp"
#include "retune/tasks.hpp"

namespace retune {

// "a,b,c", "a..b" or "a..b..step", comma-combinable. A stepped range holds a
// followed by the multiples of step in (a, b], so 1..60..5 is 1, 5, 10, ..., 60.
inline std::vector<std::size_t> parse_lengths(const std::string& spec) {
  auto num = [&](const std::string& s) -> std::size_t {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(s, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (s.empty() || pos != s.size() || s[0] == '-') throw InputError("bad number '" + s + "' in lengths '" + spec + "'");
    return static_cast<std::size_t>(v);
  };
  std::set<std::size_t> out;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::vector<std::string> parts;
    for (std::size_t pos = 0;;) {
      const auto dots = item.find("..", pos);
      parts.push_back(item.substr(pos, dots == std::string::npos ? std::string::npos : dots - pos));
      if (dots == std::string::npos) break;
      pos = dots + 2;
    }
    if (parts.size() == 1) {
      out.insert(num(parts[0]));
    } else if (parts.size() == 2 || parts.size() == 3) {
      const std::size_t a = num(parts[0]), b = num(parts[1]);
      const std::size_t step = parts.size() == 3 ? num(parts[2]) : 1;
      if (a > b || step == 0) throw InputError("empty range '" + item + "'");
      out.insert(a);
      for (std::size_t k = (a / step + 1) * step; k <= b; k += step) out.insert(k);
    } else {
      throw InputError("bad range '" + item + "'");
    }
  }
  if (out.empty()) throw InputError("no lengths in '" + spec + "'");
  if (*out.begin() == 0) throw InputError("lengths must be >= 1");
  return {out.begin(), out.end()};
}

// "len:count,len:count"
inline Histogram parse_histogram(const std::string& spec) {
  Histogram h;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw InputError("histogram entry '" + item + "' must be len:count");
    try {
      h[std::stoul(item.substr(0, colon))] = std::stoul(item.substr(colon + 1));
    } catch (const std::logic_error&) {
      throw InputError("histogram entry '" + item + "' must be len:count");
    }
  }
  return h;
}

namespace cli_detail {

inline void write_file(const std::string& path, const std::string& content) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os << content;
  if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

inline std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

const std::map<std::string, TaskKind> kTaskMap{
    {"addition", TaskKind::Addition}, {"dynprog", TaskKind::DynProg}, {"parity", TaskKind::Parity}};
const std::map<std::string, Format> kFormatMap{
    {"baseline", Format::Baseline}, {"scratchpad", Format::Scratchpad}, {"retuning", Format::ReTuning}};

// Enum-valued option, matched case-insensitively against the map keys.
template <typename E>
CLI::Option* add_choice(CLI::App* cmd, const std::string& name, E& target, const std::map<std::string, E>& choices,
                        const std::string& description = "") {
  std::vector<std::string> keys;
  for (const auto& [k, v] : choices) keys.push_back(k);
  return cmd
      ->add_option_function<std::string>(
          name, [&target, &choices](const std::string& v) { target = choices.at(v); }, description)
      ->transform(CLI::IsMember(keys, CLI::ignore_case));
}

struct EvalFlags {
  TaskKind task = TaskKind::Addition;
  Format format = Format::ReTuning;
  std::string backend = "oracle";
  std::string endpoint;
  std::vector<std::string> headers;
  int retries = 2;
  std::string lengths = "1..10";
  std::size_t n = 100;
  std::string template_text;
  Limits limits;
  bool cache = false;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::string timing = "on";
  std::string timestamp;
  double temperature = kDefaultTemperature;
  std::string out;
  std::string records;
  std::string csv;
  std::string traces_dir;
  std::string vocab;
  bool cased = false;
  // fault injection
  double call_rate = 0.0;
  double compute_rate = 0.0;
  bool recover = false;
  std::vector<std::size_t> target_depths;
  std::uint64_t fault_seed = 0;
  std::string fault_log;
};

inline void add_eval_flags(CLI::App* cmd, EvalFlags& f, bool inject) {
  add_choice(cmd, "--task", f.task, kTaskMap, "addition | dynprog | parity")->required();
  add_choice(cmd, "--format", f.format, kFormatMap, "baseline | scratchpad | retuning (default retuning)");
  if (!inject) {
    cmd->add_option("--backend", f.backend, "oracle | faulty | http")
        ->capture_default_str()
        ->check(CLI::IsMember({"oracle", "faulty", "http"}));
    cmd->add_option("--endpoint", f.endpoint, "model server base URL (default $RECURSE_ENDPOINT)");
    cmd->add_option("--header", f.headers, "extra HTTP header 'Name: value', repeatable");
    cmd->add_option("--retries", f.retries, "HTTP retries on transport failure, 429 and 5xx")->capture_default_str();
  }
  cmd->add_option("--lengths", f.lengths, "a,b,c | a..b | a..b..step")->capture_default_str();
  cmd->add_option("--n", f.n, "problems per length")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--template", f.template_text, "prompt template with {num_1} {num_2} or {array}");
  cmd->add_option("--max-depth", f.limits.max_depth)->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--max-contexts", f.limits.max_contexts)->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--max-units", f.limits.max_generation_units, "generation units per context")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  cmd->add_option("--timeout", f.limits.per_call_timeout_seconds, "seconds per backend call")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  cmd->add_flag("--cache", f.cache, "reuse answers of identical calls across the run");
  cmd->add_option("--seed", f.seed, "problem sampling seed")->capture_default_str();
  cmd->add_option("--workers", f.workers)->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--timing", f.timing, "on | off; off reports every duration as 0")
      ->capture_default_str()
      ->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--timestamp", f.timestamp, "report timestamp (default $SOURCE_DATE_EPOCH or now)");
  cmd->add_option("--temperature", f.temperature)->capture_default_str()->check(CLI::NonNegativeNumber);
  cmd->add_option("--out", f.out, "report JSON path (default stdout)");
  cmd->add_option("--records", f.records, "per-problem JSONL path");
  cmd->add_option("--csv", f.csv, "per-length CSV path");
  cmd->add_option("--traces-dir", f.traces_dir, "write one trace JSON per problem here");
  cmd->add_option("--vocab", f.vocab, "word-piece vocabulary for token statistics");
  cmd->add_flag("--cased", f.cased, "do not lowercase before word-piece tokenization");
  cmd->add_option("--call-rate", f.call_rate, "fault injection: call fault probability")->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--compute-rate", f.compute_rate, "fault injection: compute fault probability")->check(CLI::Range(0.0, 1.0));
  cmd->add_flag("--recover", f.recover, "fault injection: root always answers correctly");
  cmd->add_option("--target-depths", f.target_depths, "fault injection: only at these depths");
  cmd->add_option("--fault-seed", f.fault_seed)->capture_default_str();
  cmd->add_option("--fault-log", f.fault_log, "fault injection: ground-truth log JSON path");
}

inline nlohmann::ordered_json fault_log_json(const FaultLog& log) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [trace, entries] : log.snapshot()) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& e : entries)
      arr.push_back({{"context_id", e.context_id},
                     {"depth", e.depth},
                     {"class", std::string(to_string(e.cls))},
                     {"original", e.original},
                     {"injected", e.injected}});
    j[trace] = std::move(arr);
  }
  return j;
}

inline std::map<std::string, std::vector<FaultEntry>> read_fault_log(const std::string& path) {
  std::map<std::string, std::vector<FaultEntry>> out;
  try {
    const auto j = nlohmann::json::parse(read_file(path));
    for (const auto& [trace, arr] : j.items())
      for (const auto& e : arr)
        out[trace].push_back({e.at("context_id").get<std::size_t>(), e.at("depth").get<std::size_t>(),
                              parse_fault_class(e.at("class").get<std::string>()), e.value("original", ""),
                              e.value("injected", "")});
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("fault log '" + path + "': " + e.what());
  }
  return out;
}

inline int run_eval_command(const EvalFlags& f, bool inject, std::ostream& out, std::ostream& err) {
  std::unique_ptr<ModelBackend> backend;
  FaultyBackend* faulty = nullptr;
  const std::string kind = inject ? "faulty" : f.backend;
  if (kind == "oracle") {
    backend = std::make_unique<OracleBackend>(f.format);
  } else if (kind == "faulty") {
    FaultConfig fc;
    fc.call_fault_rate = f.call_rate;
    fc.compute_fault_rate = f.compute_rate;
    fc.recover = f.recover;
    fc.rng_seed = f.fault_seed;
    if (!f.target_depths.empty()) fc.target_depths = std::set<std::size_t>(f.target_depths.begin(), f.target_depths.end());
    auto fb = std::make_unique<FaultyBackend>(fc, f.format);
    faulty = fb.get();
    backend = std::move(fb);
  } else {
    HttpConfig hc;
    hc.endpoint = f.endpoint;
    hc.max_retries = f.retries;
    for (const auto& h : f.headers) hc.headers.push_back(parse_header_line(h));
    backend = std::make_unique<HttpBackend>(hc);
  }

  std::optional<WordPieceTokenizer> tokenizer;
  if (!f.vocab.empty()) tokenizer.emplace(f.vocab, !f.cased);

  EvalConfig cfg;
  cfg.task = f.task;
  cfg.format = f.format;
  cfg.lengths = parse_lengths(f.lengths);
  cfg.n = f.n;
  cfg.template_text = f.template_text;
  cfg.limits = f.limits;
  cfg.cache = f.cache;
  cfg.rng_seed = f.seed;
  cfg.workers = f.workers;
  cfg.timing = f.timing == "on";
  cfg.timestamp = f.timestamp.empty() ? utc_timestamp() : f.timestamp;
  cfg.temperature = f.temperature;
  cfg.tokenizer = tokenizer ? &*tokenizer : nullptr;
  if (!f.template_text.empty()) {
    Rng probe(0);
    (void)render_prompt(random_instance(f.task, 1, probe), f.format, f.template_text);
  }

  std::size_t agree = 0, judged = 0;
  std::map<std::string, std::size_t> truth_counts;
  TraceSink sink = [&](const ProblemRecord& rec, const Trace& trace) {
    if (!f.traces_dir.empty())
      write_file((std::filesystem::path(f.traces_dir) / (rec.trace_id + ".json")).string(), trace_to_json(trace).dump(1) + "\n");
    if (faulty && f.format == Format::ReTuning) {
      const ErrorClass truth = expected_class(faulty->log().entries(rec.trace_id), rec.correct);
      ++truth_counts[std::string(to_string(truth))];
      ++judged;
      if (rec.error && *rec.error == truth) ++agree;
    }
  };
  const EvalReport report = run_eval(*backend, cfg, sink);

  const std::string report_text = report_to_json(report).dump(2) + "\n";
  if (f.out.empty()) out << report_text;
  else write_file(f.out, report_text);
  if (!f.records.empty()) {
    std::string lines;
    for (const auto& r : report.records) lines += record_to_json(r).dump() + "\n";
    write_file(f.records, lines);
  }
  if (!f.csv.empty()) write_file(f.csv, report_csv(report));
  if (faulty) {
    if (!f.fault_log.empty()) write_file(f.fault_log, fault_log_json(faulty->log()).dump(1) + "\n");
    if (inject) {
      nlohmann::ordered_json summary{{"traces", judged}, {"classifier_agreement", agree}, {"expected", truth_counts}};
      err << summary.dump() << "\n";
    }
  }
  return 0;
}

inline std::vector<std::filesystem::path> trace_files(const std::string& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

inline Trace load_trace(const std::filesystem::path& p) {
  try {
    return trace_from_json(nlohmann::ordered_json::parse(read_file(p.string())));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("trace '" + p.string() + "': " + e.what());
  }
}

}  // namespace cli_detail

inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace cli_detail;
  CLI::App app{"Recursive training-data generation and recursive inference evaluation", "retune"};
  app.set_config("--config", "", "TOML/INI file with flag values; command-line flags win");
  app.require_subcommand(1);
  app.set_version_flag("--version", "retune 1.0.0");

  // gen-data
  DatasetConfig data;
  std::string data_out, histogram, resample = "uniform", splits_dir, split_lengths;
  std::size_t total = 0;
  bool no_exhaustive = false;
  std::size_t seed_count = 0, fixed = 0;
  auto* gen = app.add_subcommand("gen-data", "generate a training dataset as JSONL");
  add_choice(gen, "--task", data.task, kTaskMap, "addition | dynprog | parity")->required();
  add_choice(gen, "--format", data.format, kFormatMap, "baseline | scratchpad | retuning (default retuning)");
  gen->add_option("--out", data_out, "dataset JSONL path")->required();
  gen->add_option("--seed", data.rng_seed)->capture_default_str();
  gen->add_option("--max-length", data.max_length, "default: addition 15, dynprog 5, parity 21");
  gen->add_option("--seed-count", seed_count, "random seed problems (addition default 304000 x scale)");
  gen->add_flag("--no-exhaustive", no_exhaustive, "sample dynprog/parity seeds at random instead of enumerating");
  gen->add_option("--exhaustive-cap", data.exhaustive_cap)->capture_default_str();
  gen->add_option("--resample", resample, "off | uniform | histogram")
      ->capture_default_str()
      ->check(CLI::IsMember({"off", "uniform", "histogram"}));
  gen->add_option("--total", total, "uniform target total (default: reference size x scale)");
  gen->add_option("--histogram", histogram, "per-length target 'len:count,...'");
  gen->add_option("--scale", data.scale, "scale factor on default sizes")->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--fixed-per-length", fixed, "low-data mode: n root problems per length, no resampling");
  gen->add_option("--splits-dir", splits_dir, "also write validation.jsonl and test.jsonl here");
  gen->add_option("--split-lengths", split_lengths, "lengths for the splits (default 1..max-length)");

  // eval / inject
  EvalFlags ev;
  auto* eval = app.add_subcommand("eval", "evaluate a backend over a length sweep");
  add_eval_flags(eval, ev, false);
  EvalFlags inj;
  inj.n = 20;
  inj.call_rate = 0.1;
  inj.compute_rate = 0.1;
  auto* inject = app.add_subcommand("inject", "evaluate with fault injection and report classifier agreement");
  add_eval_flags(inject, inj, true);

  // classify
  std::string cls_dir, cls_log;
  TaskKind cls_task = TaskKind::Addition;
  auto* classify = app.add_subcommand("classify", "classify stored ReTuning traces");
  classify->add_option("--traces-dir", cls_dir)->required()->check(CLI::ExistingDirectory);
  add_choice(classify, "--task", cls_task, kTaskMap)->required();
  classify->add_option("--fault-log", cls_log, "compare against an injection log")->check(CLI::ExistingFile);

  // stats
  std::string st_dir, st_data, st_vocab;
  bool st_cased = false;
  auto* stats = app.add_subcommand("stats", "context statistics of traces or length histogram of a dataset");
  auto* st_dir_opt = stats->add_option("--traces-dir", st_dir)->check(CLI::ExistingDirectory);
  auto* st_data_opt = stats->add_option("--data", st_data, "dataset JSONL")->check(CLI::ExistingFile);
  st_dir_opt->excludes(st_data_opt);
  stats->add_option("--vocab", st_vocab, "word-piece vocabulary for token statistics");
  stats->add_flag("--cased", st_cased);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*gen) {
      data.exhaustive = !no_exhaustive;
      if (seed_count) data.seed_count = seed_count;
      if (fixed) data.fixed_per_length = fixed;
      if (total) data.total = total;
      data.resample = resample == "off" ? ResampleMode::Off : resample == "histogram" ? ResampleMode::Histogram : ResampleMode::Uniform;
      if (data.resample == ResampleMode::Histogram) {
        if (histogram.empty()) throw InputError("--resample histogram needs --histogram");
        data.target = parse_histogram(histogram);
      }
      const auto dataset = build_dataset(data);
      std::ostringstream os;
      write_jsonl(os, dataset);
      write_file(data_out, os.str());
      if (!splits_dir.empty()) {
        const auto lens = split_lengths.empty() ? parse_lengths("1.." + std::to_string(data.effective_max_length()))
                                                : parse_lengths(split_lengths);
        const auto splits = make_splits(data.task, lens, data.rng_seed);
        std::filesystem::create_directories(splits_dir);
        persist_instances(splits.validation, (std::filesystem::path(splits_dir) / "validation.jsonl").string());
        persist_instances(splits.test, (std::filesystem::path(splits_dir) / "test.jsonl").string());
      }
      err << "wrote " << dataset.size() << " records to " << data_out << "\n";
      return 0;
    }
    if (*eval) return run_eval_command(ev, false, out, err);
    if (*inject) return run_eval_command(inj, true, out, err);
    if (*classify) {
      std::optional<std::map<std::string, std::vector<FaultEntry>>> log;
      if (!cls_log.empty()) log = read_fault_log(cls_log);
      std::map<std::string, std::size_t> counts;
      std::size_t agree = 0, total_traces = 0;
      for (const auto& p : trace_files(cls_dir)) {
        const Trace t = load_trace(p);
        const Classification c = analyze_trace(t, cls_task);
        ++counts[std::string(to_string(c.cls))];
        ++total_traces;
        nlohmann::ordered_json line{{"trace_id", t.trace_id}, {"class", std::string(to_string(c.cls))},
                                    {"final_correct", c.final_correct}};
        nlohmann::ordered_json evs = nlohmann::ordered_json::array();
        for (const auto& e : c.events)
          evs.push_back({{"context_id", e.context_id}, {"class", std::string(to_string(e.cls))}, {"detail", e.detail}});
        line["events"] = std::move(evs);
        if (log) {
          auto it = log->find(t.trace_id);
          const ErrorClass truth = expected_class(it == log->end() ? std::vector<FaultEntry>{} : it->second, c.final_correct);
          line["expected"] = std::string(to_string(truth));
          agree += truth == c.cls ? 1 : 0;
        }
        out << line.dump() << "\n";
      }
      nlohmann::ordered_json summary{{"traces", total_traces}, {"classes", counts}};
      if (log) summary["agreement"] = agree;
      err << summary.dump() << "\n";
      return 0;
    }
    if (*stats) {
      if (!st_data.empty()) {
        const auto dataset = load(st_data);
        std::map<std::size_t, std::map<std::string, std::size_t>> by_len;
        std::size_t trainable = 0, chars = 0;
        for (const auto& ex : dataset) {
          ++by_len[ex.length][std::string(to_string(ex.role))];
          for (const auto& s : ex.segments) {
            chars += s.text.size();
            if (s.trainable) trainable += s.text.size();
          }
        }
        nlohmann::ordered_json per = nlohmann::ordered_json::array();
        for (const auto& [len, roles] : by_len) {
          std::size_t n = 0;
          for (const auto& [r, c] : roles) n += c;
          per.push_back({{"length", len}, {"count", n}, {"roles", roles}});
        }
        out << nlohmann::ordered_json{{"records", dataset.size()}, {"chars", chars}, {"trainable_chars", trainable}, {"per_length", per}}.dump(2)
            << "\n";
        return 0;
      }
      if (st_dir.empty()) throw InputError("stats needs --traces-dir or --data");
      std::optional<WordPieceTokenizer> tok;
      if (!st_vocab.empty()) tok.emplace(st_vocab, !st_cased);
      nlohmann::ordered_json lines = nlohmann::ordered_json::array();
      for (const auto& p : trace_files(st_dir)) {
        const ContextStats s = context_stats(load_trace(p), tok ? &*tok : nullptr);
        nlohmann::ordered_json j{{"file", p.filename().string()}, {"contexts", s.contexts},
                                 {"mean_chars", s.mean_chars}, {"max_chars", s.max_chars}};
        if (s.mean_tokens) {
          j["mean_tokens"] = *s.mean_tokens;
          j["max_tokens"] = *s.max_tokens;
        }
        lines.push_back(std::move(j));
      }
      out << lines.dump(2) << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace retune
