#pragma once

// Training-text rendering for the three formats and answer extraction for
// scoring.
//
// Baseline answers directly, Scratchpad writes every intermediate step in one
// context, ReTuning renders one example per context of the call tree. Every
// example is a list of segments; trainable segments are exactly the text the
// model has to produce at inference time.

#include <charconv>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "retune/errors.hpp"
#include "retune/parser.hpp"
#include "retune/tasks.hpp"

namespace retune {

enum class Format { Baseline, Scratchpad, ReTuning };
enum class Role { Root, Intermediate, Base };

inline std::string_view to_string(Format f) {
  switch (f) {
    case Format::Baseline: return "baseline";
    case Format::Scratchpad: return "scratchpad";
    case Format::ReTuning: return "retuning";
  }
  return "?";
}

inline Format parse_format(std::string_view s) {
  if (s == "baseline") return Format::Baseline;
  if (s == "scratchpad") return Format::Scratchpad;
  if (s == "retuning") return Format::ReTuning;
  throw InputError("unknown format '" + std::string(s) + "' (expected baseline, scratchpad or retuning)");
}

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::Root: return "root";
    case Role::Intermediate: return "intermediate";
    case Role::Base: return "base";
  }
  return "?";
}

inline Role parse_role(std::string_view s) {
  if (s == "root") return Role::Root;
  if (s == "intermediate") return Role::Intermediate;
  if (s == "base") return Role::Base;
  throw InputError("unknown role '" + std::string(s) + "'");
}

struct Segment {
  std::string text;
  bool trainable = false;
  bool operator==(const Segment&) const = default;
};

struct RenderedExample {
  TaskKind task = TaskKind::Addition;
  Format format = Format::ReTuning;
  std::size_t length = 0;
  Role role = Role::Root;
  std::vector<Segment> segments;

  std::string text() const {
    std::string out;
    for (const auto& s : segments) out += s.text;
    return out;
  }

  bool operator==(const RenderedExample&) const = default;
};

// ---- payload text ------------------------------------------------------------

inline std::string render_array(std::span<const int> values) {
  std::string out = "[";
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(values[i]);
  }
  out += "]";
  return out;
}

inline std::string render_carry_output(const CarryOutput& co) {
  return "Carry " + std::to_string(co.carry) + ", Output " + co.output;
}

inline std::string render_payload(const Answer& answer) {
  if (const auto* co = std::get_if<CarryOutput>(&answer)) return render_carry_output(*co);
  if (const auto* bit = std::get_if<int>(&answer)) return std::to_string(*bit);
  return render_array(std::get<std::vector<int>>(answer));
}

namespace detail {

inline void skip_spaces(std::string_view s, std::size_t& i) {
  while (i < s.size() && s[i] == ' ') ++i;
}

inline std::optional<int> read_int(std::string_view s, std::size_t& i) {
  int v = 0;
  const char* first = s.data() + i;
  auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc() || ptr == first) return std::nullopt;
  i += static_cast<std::size_t>(ptr - first);
  return v;
}

inline bool consume(std::string_view s, std::size_t& i, std::string_view lit) {
  if (s.substr(i, lit.size()) != lit) return false;
  i += lit.size();
  return true;
}

}  // namespace detail

// Reads `[a, b, c]` starting at s[i]; advances i past the bracket on success.
inline std::optional<std::vector<int>> read_int_array(std::string_view s, std::size_t& i) {
  std::size_t j = i;
  if (!detail::consume(s, j, "[")) return std::nullopt;
  std::vector<int> out;
  detail::skip_spaces(s, j);
  if (detail::consume(s, j, "]")) {
    i = j;
    return out;
  }
  while (true) {
    detail::skip_spaces(s, j);
    auto v = detail::read_int(s, j);
    if (!v) return std::nullopt;
    out.push_back(*v);
    detail::skip_spaces(s, j);
    if (detail::consume(s, j, "]")) break;
    if (!detail::consume(s, j, ",")) return std::nullopt;
  }
  i = j;
  return out;
}

inline std::optional<std::vector<int>> parse_int_array(std::string_view s) {
  std::size_t i = 0;
  auto arr = read_int_array(s, i);
  if (!arr || i != s.size()) return std::nullopt;
  return arr;
}

inline std::optional<CarryOutput> parse_carry_output(std::string_view s) {
  std::size_t i = 0;
  if (!detail::consume(s, i, "Carry ")) return std::nullopt;
  const std::size_t c0 = i;
  while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i;
  if (i == c0) return std::nullopt;
  CarryOutput co;
  co.carry = std::stoi(std::string(s.substr(c0, i - c0)));
  if (!detail::consume(s, i, ", Output ")) return std::nullopt;
  const std::string_view digits = s.substr(i);
  if (!is_digit_string(digits)) return std::nullopt;
  co.output = std::string(digits);
  return co;
}

// Parses an answer payload of the shape a context of `inst`'s kind returns.
inline std::optional<Answer> parse_payload(const TaskInstance& inst, std::string_view s) {
  switch (inst.kind) {
    case TaskKind::Addition:
      if (auto co = parse_carry_output(s)) return Answer{*co};
      return std::nullopt;
    case TaskKind::Parity:
      if (s == "0" || s == "1") return Answer{s == "1" ? 1 : 0};
      return std::nullopt;
    case TaskKind::DynProg:
      if (auto arr = parse_int_array(s)) return Answer{*arr};
      return std::nullopt;
  }
  return std::nullopt;
}

// ---- ReTuning context grammar -------------------------------------------------

inline constexpr std::string_view kParityPrefix = "What is the parity of ";
inline constexpr std::string_view kDpRootPrefix = "Compute the maximum sum of nonadjacent subsequences of ";
inline constexpr std::string_view kDpSumArrayPrefix = "Create dp array ";
inline constexpr std::string_view kDpIndicesPrefix = "Create chosen indices array: sum array ";
inline constexpr std::string_view kDpScratchpadPrefix = "Question: Let's solve input = ";
inline constexpr std::string_view kDpBaselineInstruction =
    "Given a sequence of integers, find a subsequence with the highest sum, such that no two numbers in the "
    "subsequence are adjacent in the original sequence.\n\nOutput a list with \"1\" for chosen numbers and \"2\" "
    "for unchosen ones. If multiple solutions exist, select the lexicographically smallest. Input = ";
inline constexpr std::string_view kParityScratchpadIntro = "Compute one element at a time\n";

// The problem statement: first line of a ReTuning context and the text of the
// call that spawns it.
inline std::string problem_header(const TaskInstance& inst) {
  switch (inst.kind) {
    case TaskKind::Addition: return inst.a + " + " + inst.b;
    case TaskKind::Parity: return std::string(kParityPrefix) + render_array(inst.values) + "?";
    case TaskKind::DynProg:
      switch (inst.stage) {
        case DpStage::Root: return std::string(kDpRootPrefix) + render_array(inst.values);
        case DpStage::SumArray: return std::string(kDpSumArrayPrefix) + render_array(inst.values);
        case DpStage::Indices:
          return std::string(kDpIndicesPrefix) + render_array(inst.sums) + ", item array " +
                 render_array(inst.values) + ", can use item " + (inst.can_use ? "True" : "False");
      }
  }
  return {};
}

// Frozen text that opens a context spawned by `call_text`.
inline std::string child_prompt(std::string_view call_text) {
  std::string p(call_text);
  p += "\n";
  p += kSolutionMarker;
  if (call_text.substr(0, kDpIndicesPrefix.size()) == kDpIndicesPrefix) p += kDpIndicesPreamble;
  return p;
}

inline std::string context_prompt(const TaskInstance& inst) { return child_prompt(problem_header(inst)); }

// Recognizes a problem statement line.
inline std::optional<TaskInstance> parse_header(std::string_view line) {
  try {
    std::size_t i = 0;
    if (line.substr(0, kParityPrefix.size()) == kParityPrefix) {
      i = kParityPrefix.size();
      auto bits = read_int_array(line, i);
      if (!bits || line.substr(i) != "?") return std::nullopt;
      return TaskInstance::parity(*bits);
    }
    if (line.substr(0, kDpRootPrefix.size()) == kDpRootPrefix) {
      i = kDpRootPrefix.size();
      auto items = read_int_array(line, i);
      if (!items || i != line.size()) return std::nullopt;
      return TaskInstance::dynprog(*items, DpStage::Root);
    }
    if (line.substr(0, kDpSumArrayPrefix.size()) == kDpSumArrayPrefix) {
      i = kDpSumArrayPrefix.size();
      auto items = read_int_array(line, i);
      if (!items || i != line.size()) return std::nullopt;
      return TaskInstance::dynprog(*items, DpStage::SumArray);
    }
    if (line.substr(0, kDpIndicesPrefix.size()) == kDpIndicesPrefix) {
      i = kDpIndicesPrefix.size();
      auto sums = read_int_array(line, i);
      if (!sums || !detail::consume(line, i, ", item array ")) return std::nullopt;
      auto items = read_int_array(line, i);
      if (!items || !detail::consume(line, i, ", can use item ")) return std::nullopt;
      const std::string_view flag = line.substr(i);
      if (flag != "True" && flag != "False") return std::nullopt;
      return TaskInstance::dp_indices(*sums, *items, flag == "True");
    }
    if (line.substr(0, kDpScratchpadPrefix.size()) == kDpScratchpadPrefix) {
      i = kDpScratchpadPrefix.size();
      auto items = read_int_array(line, i);
      if (!items) return std::nullopt;
      return TaskInstance::dynprog(*items, DpStage::Root);
    }
    // a + b
    const std::size_t plus = line.find(" + ");
    if (plus == std::string_view::npos) return std::nullopt;
    const std::string_view lhs = line.substr(0, plus);
    const std::string_view rhs = line.substr(plus + 3);
    if (!is_digit_string(lhs) || !is_digit_string(rhs)) return std::nullopt;
    return TaskInstance::addition(std::string(lhs), std::string(rhs));
  } catch (const InputError&) {
    return std::nullopt;
  }
}

// Recognizes the problem a context is about, from its first line or, for the
// dynprog baseline prompt, from its `Input = [...]` clause.
inline std::optional<TaskInstance> parse_context(std::string_view context) {
  if (auto inst = parse_header(context.substr(0, context.find('\n')))) return inst;
  if (context.substr(0, 26) == kDpBaselineInstruction.substr(0, 26)) {
    std::size_t i = context.find("Input = [");
    if (i == std::string_view::npos) return std::nullopt;
    i += 8;
    auto items = read_int_array(context, i);
    if (!items) return std::nullopt;
    try {
      return TaskInstance::dynprog(*items, DpStage::Root);
    } catch (const InputError&) {
      return std::nullopt;
    }
  }
  return std::nullopt;
}

// What the executor splices after `Return: <answer>` for the `call_index`-th
// call of a context about `inst`.
inline std::string_view return_suffix(const TaskInstance& inst, std::size_t call_index) {
  if (inst.kind == TaskKind::DynProg) {
    if (inst.stage == DpStage::Root && call_index == 0) return kContinueSuffix;
    if (inst.stage == DpStage::Indices) return kDpIndicesReturnSuffix;
  }
  return kAnswerSuffix;
}

// Same table, keyed by the live transcript whose last call is pending.
// Unrecognized contexts get the plain answer suffix.
inline std::string_view return_suffix_for(std::string_view transcript) {
  const auto inst = parse_context(transcript);
  if (!inst) return kAnswerSuffix;
  std::size_t executed = 0;
  for (const auto& site : scan_calls(transcript)) executed += site.executed ? 1 : 0;
  return return_suffix(*inst, executed);
}

// ---- prompts and templates ------------------------------------------------------

inline std::string default_template(TaskKind task, Format format) {
  switch (task) {
    case TaskKind::Addition:
      return format == Format::Baseline ? "{num_1} + {num_2}\nAnswer: " : "{num_1} + {num_2}\nSolution: ";
    case TaskKind::Parity:
      switch (format) {
        case Format::Baseline: return "What is the parity of {array}?\nAnswer: ";
        case Format::Scratchpad: return "What is the parity of {array}?\nSolution: " + std::string(kParityScratchpadIntro);
        case Format::ReTuning: return "What is the parity of {array}?\nSolution: ";
      }
      break;
    case TaskKind::DynProg:
      switch (format) {
        case Format::Baseline: return std::string(kDpBaselineInstruction) + "{array}.\n";
        case Format::Scratchpad: return std::string(kDpScratchpadPrefix) + "{array}. ";
        case Format::ReTuning: return std::string(kDpRootPrefix) + "{array}\nSolution: ";
      }
      break;
  }
  return {};
}

// Fills {num_1} {num_2} (addition) or {array} (dynprog, parity).
inline std::string render_template(const TaskInstance& inst, std::string_view tmpl) {
  std::string out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    const std::size_t open = tmpl.find('{', i);
    if (open == std::string_view::npos) {
      out.append(tmpl.substr(i));
      break;
    }
    out.append(tmpl.substr(i, open - i));
    const std::size_t close = tmpl.find('}', open);
    if (close == std::string_view::npos) throw TemplateError("unterminated placeholder in template");
    const std::string_view name = tmpl.substr(open + 1, close - open - 1);
    if (inst.kind == TaskKind::Addition && name == "num_1")
      out += inst.a;
    else if (inst.kind == TaskKind::Addition && name == "num_2")
      out += inst.b;
    else if (inst.kind != TaskKind::Addition && name == "array")
      out += render_array(inst.values);
    else
      throw TemplateError("placeholder {" + std::string(name) + "} cannot be resolved for task " +
                          std::string(to_string(inst.kind)));
    i = close + 1;
  }
  return out;
}

inline std::string render_prompt(const TaskInstance& inst, Format format, std::string_view tmpl = {}) {
  return render_template(inst, tmpl.empty() ? std::string_view(default_template(inst.kind, format)) : tmpl);
}

// ---- scratchpad bodies -----------------------------------------------------------

namespace detail {

inline std::string addition_scratchpad(const TaskInstance& inst) {
  std::string body;
  for (const auto& level : addition_levels(inst.a, inst.b)) {
    if (!body.empty()) body += "\n";
    body += render_carry_output(level);
  }
  return body;
}

inline std::string parity_scratchpad(const TaskInstance& inst) {
  std::string body;
  int p = 0;
  for (int b : inst.values) {
    p ^= b;
    if (!body.empty()) body += " ";
    body += std::to_string(p);
  }
  return body;
}

inline std::string idx(std::string_view name, std::size_t i) { return std::string(name) + "[" + std::to_string(i) + "]"; }

inline std::string dynprog_scratchpad(const TaskInstance& inst) {
  const auto& x = inst.values;
  const std::size_t n = x.size();
  const auto dp = dp_values(x);
  const auto s = [](int v) { return std::to_string(v); };
  std::string body = "Scratchpad: ";
  for (std::size_t i = n; i-- > 0;) {
    if (i + 1 == n) {
      body += idx("dp", i) + " = max(" + idx("input", i) + ", 0) = max(" + s(x[i]) + ", 0) = " + s(dp[i]);
    } else if (i + 2 == n) {
      body += idx("dp", i) + " = max(" + idx("input", i) + ", " + idx("input", i + 1) + ", 0) = max(" + s(x[i]) +
              ", " + s(x[i + 1]) + ", 0) = " + s(dp[i]);
    } else {
      body += idx("dp", i) + " = max(" + idx("dp", i + 1) + ", " + idx("input", i) + " + " + idx("dp", i + 2) +
              ", 0) = max(" + s(dp[i + 1]) + ", " + s(x[i]) + " + " + s(dp[i + 2]) + ", 0) = " + s(dp[i]);
    }
    body += "\n";
  }
  body +=
      "\nFinally, we reconstruct the lexicographically smallest subsequence that fulfills the task objective by "
      "selecting numbers as follows. We store the result on a list named \"output\".\n\n"
      "Let can_use_next_item = True.\n";
  bool can_use = true;
  std::vector<int> out;
  for (std::size_t i = 0; i < n; ++i) {
    const bool has_after = i + 2 < n;
    const int target = x[i] + (has_after ? dp[i + 2] : 0);
    const bool eq = dp[i] == target;
    const std::string lhs = idx("dp", i);
    const std::string rhs = has_after ? idx("input", i) + " + " + idx("dp", i + 2) : idx("input", i);
    const std::string vals = has_after ? s(x[i]) + " + " + s(dp[i + 2]) : s(x[i]);
    const std::string op = eq ? " == " : " != ";
    const bool take = eq && can_use;
    body += "Since " + lhs + op + rhs + " (" + s(dp[i]) + op + vals + ")";
    body += take ? " and can_use_next_item == True" : " or can_use_next_item == False";
    body += ", we store " + idx("output", i) + " = " + (take ? "1" : "2") + ".";
    if (i + 1 < n) body += std::string(" We update can_use_next_item = ") + (take ? "False" : "True") + ".";
    body += "\n";
    out.push_back(take ? 1 : 2);
    can_use = !take;
  }
  body += "\nReconstructing all together, output=" + render_array(out) + ".";
  return body;
}

}  // namespace detail

// Canonical scoring form of a root problem's answer.
inline std::string canonical_answer(const TaskInstance& inst) {
  const Answer ans = solve(inst);
  if (inst.kind == TaskKind::Addition) return solve_addition(inst.a, inst.b);
  return render_payload(ans);
}

// ---- training examples -----------------------------------------------------------

inline RenderedExample render_context(const TaskInstance& inst, Role role) {
  RenderedExample ex{inst.kind, Format::ReTuning, inst.length(), role, {}};
  ex.segments.push_back({context_prompt(inst), false});
  if (is_base_case(inst)) {
    ex.segments.push_back({std::string(kAnswerMarker) + render_payload(solve(inst)), true});
    return ex;
  }
  std::vector<Answer> received;
  std::string_view suffix = kAnswerSuffix;
  while (auto child = next_subcall(inst, received)) {
    ex.segments.push_back({std::string(kCallMarker) + problem_header(*child) + "\n", true});
    received.push_back(solve(*child));
    suffix = return_suffix(inst, received.size() - 1);
    ex.segments.push_back({return_segment(render_payload(received.back()), suffix), false});
  }
  const std::string final_text = render_payload(combine(inst, received));
  if (detail::ends_with(suffix, kAnswerMarker))
    ex.segments.push_back({final_text, true});
  else
    ex.segments.push_back({std::string(kAnswerMarker) + final_text, true});
  return ex;
}

// Visits every context of the call tree in preorder. Return false from the
// visitor to skip a context's subtree.
template <typename Visitor>
void walk_call_tree(const TaskInstance& inst, Visitor&& visit, std::size_t depth = 0) {
  if (!visit(inst, depth)) return;
  if (is_base_case(inst)) return;
  for (const auto& call : decompose(inst)) walk_call_tree(call.child, visit, depth + 1);
}

inline Role context_role(const TaskInstance& inst, std::size_t depth) {
  if (is_base_case(inst)) return Role::Base;
  return depth == 0 ? Role::Root : Role::Intermediate;
}

// Trainable text a perfect single-shot model emits after the prompt.
inline std::string single_shot_body(const TaskInstance& inst, Format format) {
  if (format == Format::Baseline) {
    if (inst.kind == TaskKind::DynProg) return std::string(kAnswerMarker) + canonical_answer(inst);
    return canonical_answer(inst);
  }
  switch (inst.kind) {
    case TaskKind::Addition: return detail::addition_scratchpad(inst);
    case TaskKind::Parity: return detail::parity_scratchpad(inst);
    case TaskKind::DynProg: return detail::dynprog_scratchpad(inst);
  }
  return {};
}

inline std::vector<RenderedExample> render_training(const TaskInstance& inst, Format format) {
  if (format != Format::ReTuning) {
    RenderedExample ex{inst.kind, format, inst.length(), Role::Root, {}};
    ex.segments.push_back({render_prompt(inst, format), false});
    ex.segments.push_back({single_shot_body(inst, format), true});
    return {ex};
  }
  std::vector<RenderedExample> out;
  walk_call_tree(inst, [&](const TaskInstance& ctx, std::size_t depth) {
    out.push_back(render_context(ctx, context_role(ctx, depth)));
    return true;
  });
  return out;
}

// ---- extraction ------------------------------------------------------------------

namespace detail {

inline std::optional<std::string> last_number(std::string_view text) {
  std::size_t end = text.size();
  while (end > 0 && !(text[end - 1] >= '0' && text[end - 1] <= '9')) --end;
  if (end == 0) return std::nullopt;
  std::size_t start = end;
  while (start > 0 && text[start - 1] >= '0' && text[start - 1] <= '9') --start;
  return strip_leading_zeros(text.substr(start, end - start));
}

inline std::optional<std::string> last_carry_output(std::string_view text) {
  for (std::size_t pos = text.rfind("Carry "); pos != std::string_view::npos;
       pos = pos == 0 ? std::string_view::npos : text.rfind("Carry ", pos - 1)) {
    std::string_view rest = text.substr(pos);
    std::size_t i = 6;
    while (i < rest.size() && rest[i] >= '0' && rest[i] <= '9') ++i;
    if (i == 6) continue;
    const std::string_view carry = rest.substr(6, i - 6);
    if (rest.substr(i, 9) != ", Output ") continue;
    i += 9;
    const std::size_t d0 = i;
    while (i < rest.size() && rest[i] >= '0' && rest[i] <= '9') ++i;
    if (i == d0) continue;
    return strip_leading_zeros(std::string(carry) + std::string(rest.substr(d0, i - d0)));
  }
  return std::nullopt;
}

inline std::optional<std::string> last_array(std::string_view text) {
  for (std::size_t close = text.rfind(']'); close != std::string_view::npos;
       close = close == 0 ? std::string_view::npos : text.rfind(']', close - 1)) {
    const std::size_t open = text.rfind('[', close);
    if (open == std::string_view::npos) return std::nullopt;
    if (auto arr = parse_int_array(text.substr(open, close - open + 1))) return render_array(*arr);
  }
  return std::nullopt;
}

inline std::optional<std::string> last_digit(std::string_view text) {
  for (std::size_t i = text.size(); i-- > 0;)
    if (text[i] >= '0' && text[i] <= '9') return std::string(1, text[i]);
  return std::nullopt;
}

}  // namespace detail

// Canonical answer string out of model text, in the same form canonical_answer
// produces, so scoring is plain string equality.
inline std::string extract_final(TaskKind task, Format format, std::string_view text) {
  std::optional<std::string> found;
  switch (task) {
    case TaskKind::Addition:
      found = format == Format::Baseline ? detail::last_number(text) : detail::last_carry_output(text);
      break;
    case TaskKind::DynProg: found = detail::last_array(text); break;
    case TaskKind::Parity: found = detail::last_digit(text); break;
  }
  if (!found) throw ExtractionError("no " + std::string(to_string(task)) + " answer found in generated text");
  return *found;
}

}  // namespace retune
