#pragma once

// The three compositional tasks: exact oracles plus the decompose / base case /
// combine triple that the recursive formats are built from.
//
// Addition operands of a root problem are canonical digit-strings. Operands of a
// subproblem are positional suffixes and may carry leading zeros ("034"), since
// their length fixes how many output digits the level produces.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "retune/errors.hpp"

namespace retune {

enum class TaskKind { Addition, DynProg, Parity };

// Which dynamic-programming context an instance describes. Root is the
// user-facing problem; SumArray builds the dp array; Indices rebuilds the
// chosen-indices array from a dp array.
enum class DpStage { Root, SumArray, Indices };

inline constexpr int kDpItemMin = -5;
inline constexpr int kDpItemMax = 5;

inline std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::Addition: return "addition";
    case TaskKind::DynProg: return "dynprog";
    case TaskKind::Parity: return "parity";
  }
  return "?";
}

inline TaskKind parse_task_kind(std::string_view s) {
  if (s == "addition") return TaskKind::Addition;
  if (s == "dynprog") return TaskKind::DynProg;
  if (s == "parity") return TaskKind::Parity;
  throw InputError("unknown task '" + std::string(s) + "' (expected addition, dynprog or parity)");
}

inline bool is_digit_string(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

// `0|[1-9][0-9]*`
inline bool is_canonical_digit_string(std::string_view s) {
  return is_digit_string(s) && (s.size() == 1 || s.front() != '0');
}

inline std::string strip_leading_zeros(std::string_view s) {
  const auto pos = s.find_first_not_of('0');
  if (pos == std::string_view::npos) return s.empty() ? std::string() : std::string("0");
  return std::string(s.substr(pos));
}

struct TaskInstance {
  TaskKind kind = TaskKind::Addition;
  std::string a;             // addition
  std::string b;             // addition
  std::vector<int> values;   // dynprog items or parity bits
  DpStage stage = DpStage::Root;
  std::vector<int> sums;     // dynprog Indices stage
  bool can_use = true;       // dynprog Indices stage

  static TaskInstance addition(std::string lhs, std::string rhs) {
    if (!is_digit_string(lhs) || !is_digit_string(rhs))
      throw InputError("addition operands must be non-empty digit strings, got '" + lhs + "', '" + rhs + "'");
    TaskInstance t;
    t.kind = TaskKind::Addition;
    t.a = std::move(lhs);
    t.b = std::move(rhs);
    return t;
  }

  static TaskInstance parity(std::vector<int> bits) {
    if (bits.empty()) throw InputError("parity array must be non-empty");
    for (int v : bits)
      if (v != 0 && v != 1) throw InputError("parity elements must be 0 or 1");
    TaskInstance t;
    t.kind = TaskKind::Parity;
    t.values = std::move(bits);
    return t;
  }

  static TaskInstance dynprog(std::vector<int> items, DpStage stage = DpStage::Root) {
    if (items.empty()) throw InputError("dynprog array must be non-empty");
    for (int v : items)
      if (v < kDpItemMin || v > kDpItemMax)
        throw InputError("dynprog items must lie in [-5, 5], got " + std::to_string(v));
    TaskInstance t;
    t.kind = TaskKind::DynProg;
    t.values = std::move(items);
    t.stage = stage;
    return t;
  }

  static TaskInstance dp_indices(std::vector<int> dp, std::vector<int> items, bool can_use_first) {
    if (dp.size() != items.size()) throw InputError("sum array and item array lengths differ");
    TaskInstance t = dynprog(std::move(items), DpStage::Indices);
    t.sums = std::move(dp);
    t.can_use = can_use_first;
    return t;
  }

  // Digits of the longer operand, or the array length.
  std::size_t length() const {
    if (kind == TaskKind::Addition) return std::max(a.size(), b.size());
    return values.size();
  }

  bool operator==(const TaskInstance&) const = default;
};

struct CarryOutput {
  int carry = 0;
  std::string output;
  bool operator==(const CarryOutput&) const = default;
};

// Addition contexts answer with CarryOutput, parity with a bit, dynprog with an
// array (dp sums or {1,2} choices depending on the stage).
using Answer = std::variant<CarryOutput, int, std::vector<int>>;

// ---- addition ---------------------------------------------------------------

inline std::string solve_addition(std::string_view a, std::string_view b) {
  if (!is_digit_string(a) || !is_digit_string(b)) throw InputError("malformed digit string");
  std::string out;
  out.reserve(std::max(a.size(), b.size()) + 1);
  int carry = 0;
  for (std::size_t i = 0; i < std::max(a.size(), b.size()); ++i) {
    int s = carry;
    if (i < a.size()) s += a[a.size() - 1 - i] - '0';
    if (i < b.size()) s += b[b.size() - 1 - i] - '0';
    out.push_back(static_cast<char>('0' + s % 10));
    carry = s / 10;
  }
  if (carry) out.push_back('1');
  std::reverse(out.begin(), out.end());
  return strip_leading_zeros(out);
}

// One entry per recursion level, least significant first. Level k holds the
// k low digits of the suffix sum and the carry out of them.
inline std::vector<CarryOutput> addition_levels(std::string_view a, std::string_view b) {
  if (!is_digit_string(a) || !is_digit_string(b)) throw InputError("malformed digit string");
  const std::size_t n = std::max(a.size(), b.size());
  std::vector<CarryOutput> levels;
  levels.reserve(n);
  std::string digits;  // reversed
  int carry = 0;
  for (std::size_t i = 0; i < n; ++i) {
    int s = carry;
    if (i < a.size()) s += a[a.size() - 1 - i] - '0';
    if (i < b.size()) s += b[b.size() - 1 - i] - '0';
    digits.push_back(static_cast<char>('0' + s % 10));
    carry = s / 10;
    levels.push_back({carry, std::string(digits.rbegin(), digits.rend())});
  }
  return levels;
}

// carry prepended to output, leading zeros removed.
inline std::string carry_output_value(const CarryOutput& co) {
  return strip_leading_zeros(std::to_string(co.carry) + co.output);
}

// ---- dynamic programming ------------------------------------------------------

inline std::vector<int> dp_values(std::span<const int> items) {
  if (items.empty()) throw InputError("dp_values: empty item list");
  const std::size_t n = items.size();
  std::vector<int> dp(n + 2, 0);
  for (std::size_t i = n; i-- > 0;) dp[i] = std::max({dp[i + 1], items[i] + dp[i + 2], 0});
  dp.resize(n);
  return dp;
}

// Reconstruction walk. At index i the item is taken when it may be used and
// taking it attains dp[i]; taking as early as possible yields the
// lexicographically smallest {1,2} encoding among optimal subsets.
inline std::vector<int> dp_indices(std::span<const int> dp, std::span<const int> items, bool can_use_first = true) {
  if (dp.size() != items.size()) throw InputError("dp_indices: sum array and item array lengths differ");
  std::vector<int> choices;
  choices.reserve(items.size());
  bool can_use = can_use_first;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const int after = i + 2 < dp.size() ? dp[i + 2] : 0;
    if (can_use && dp[i] == items[i] + after) {
      choices.push_back(1);
      can_use = false;
    } else {
      choices.push_back(2);
      can_use = true;
    }
  }
  return choices;
}

inline constexpr std::size_t kBruteforceMaxLength = 20;

// Exhaustive reference: every non-adjacent subset (empty included), best sum,
// lexicographically smallest encoding among the ties.
inline std::vector<int> dp_bruteforce(std::span<const int> items) {
  const std::size_t n = items.size();
  if (n > kBruteforceMaxLength)
    throw InputError("dp_bruteforce: length " + std::to_string(n) + " exceeds enumeration bound 20");
  if (n == 0) throw InputError("dp_bruteforce: empty item list");
  std::optional<int> best_sum;
  std::vector<int> best;
  std::vector<int> enc(n);
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (mask & (mask >> 1)) continue;
    int sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool chosen = mask & (1u << i);
      enc[i] = chosen ? 1 : 2;
      if (chosen) sum += items[i];
    }
    if (!best_sum || sum > *best_sum || (sum == *best_sum && enc < best)) {
      best_sum = sum;
      best = enc;
    }
  }
  return best;
}

// ---- parity -------------------------------------------------------------------

inline int parity_value(std::span<const int> bits) {
  if (bits.empty()) throw InputError("parity_value: empty bit list");
  int p = 0;
  for (int b : bits) p ^= (b & 1);
  return p;
}

// ---- recursion ----------------------------------------------------------------

inline bool is_base_case(const TaskInstance& inst) {
  switch (inst.kind) {
    case TaskKind::Addition: return inst.a.size() == 1 && inst.b.size() == 1;
    case TaskKind::Parity: return inst.values.size() == 1;
    case TaskKind::DynProg:
      switch (inst.stage) {
        case DpStage::Root: return false;
        case DpStage::SumArray: return inst.values.size() <= 2;
        case DpStage::Indices: return inst.values.size() == 1;
      }
  }
  return false;
}

// Number of recursive calls a non-base context issues.
inline std::size_t call_arity(const TaskInstance& inst) {
  if (is_base_case(inst)) return 0;
  return inst.kind == TaskKind::DynProg && inst.stage == DpStage::Root ? 2 : 1;
}

// True answer of any context, computed without recursion.
inline Answer solve(const TaskInstance& inst) {
  switch (inst.kind) {
    case TaskKind::Addition: return addition_levels(inst.a, inst.b).back();
    case TaskKind::Parity: return parity_value(inst.values);
    case TaskKind::DynProg:
      switch (inst.stage) {
        case DpStage::Root: return dp_indices(dp_values(inst.values), inst.values);
        case DpStage::SumArray: return dp_values(inst.values);
        case DpStage::Indices: return dp_indices(inst.sums, inst.values, inst.can_use);
      }
  }
  throw ContractViolation("solve: unknown task");
}

// Whether an Indices context takes its first item.
inline bool dp_takes_first(const TaskInstance& inst) {
  const int after = inst.sums.size() > 2 ? inst.sums[2] : 0;
  return inst.can_use && inst.sums.front() == inst.values.front() + after;
}

// The k-th call of a context, given the answers received for calls 0..k-1.
// Only the dynprog root's second call depends on a received answer. Returns
// nullopt once the context has issued all its calls.
inline std::optional<TaskInstance> next_subcall(const TaskInstance& inst, std::span<const Answer> received) {
  if (received.size() >= call_arity(inst)) return std::nullopt;
  switch (inst.kind) {
    case TaskKind::Addition: {
      const std::size_t n = inst.length();
      std::string a = inst.a.size() == n ? inst.a.substr(1) : inst.a;
      std::string b = inst.b.size() == n ? inst.b.substr(1) : inst.b;
      return TaskInstance::addition(std::move(a), std::move(b));
    }
    case TaskKind::Parity:
      return TaskInstance::parity(std::vector<int>(inst.values.begin() + 1, inst.values.end()));
    case TaskKind::DynProg: {
      const std::vector<int> tail(inst.values.begin() + 1, inst.values.end());
      switch (inst.stage) {
        case DpStage::Root:
          if (received.empty()) return TaskInstance::dynprog(inst.values, DpStage::SumArray);
          {
            const auto* dp = std::get_if<std::vector<int>>(&received[0]);
            if (!dp) throw ContractViolation("dynprog root: first answer must be an array");
            if (dp->size() != inst.values.size()) throw InputError("dynprog root: dp array length mismatch");
            TaskInstance t = TaskInstance::dynprog(inst.values, DpStage::Indices);
            t.sums = *dp;
            t.can_use = true;
            return t;
          }
        case DpStage::SumArray: return TaskInstance::dynprog(tail, DpStage::SumArray);
        case DpStage::Indices: {
          TaskInstance t = TaskInstance::dynprog(tail, DpStage::Indices);
          t.sums.assign(inst.sums.begin() + 1, inst.sums.end());
          t.can_use = !dp_takes_first(inst);
          return t;
        }
      }
    }
  }
  return std::nullopt;
}

enum class CallRole { Addition, Parity, DpSumArray, DpIndices };

struct Subcall {
  CallRole role;
  TaskInstance child;
};

inline CallRole role_of(const TaskInstance& child) {
  switch (child.kind) {
    case TaskKind::Addition: return CallRole::Addition;
    case TaskKind::Parity: return CallRole::Parity;
    case TaskKind::DynProg: return child.stage == DpStage::Indices ? CallRole::DpIndices : CallRole::DpSumArray;
  }
  return CallRole::Addition;
}

// All calls of a context, assuming every call returns its true answer.
inline std::vector<Subcall> decompose(const TaskInstance& inst) {
  if (is_base_case(inst)) throw ContractViolation("decompose: instance is a base case");
  std::vector<Subcall> calls;
  std::vector<Answer> received;
  while (auto child = next_subcall(inst, received)) {
    received.push_back(solve(*child));
    calls.push_back({role_of(*child), std::move(*child)});
  }
  return calls;
}

// Context answer built from the answers its calls returned. Works on whatever
// was received, so a wrong child answer propagates the way a faithful model
// would propagate it.
inline Answer combine(const TaskInstance& inst, std::span<const Answer> children) {
  if (children.size() != call_arity(inst))
    throw ContractViolation("combine: expected " + std::to_string(call_arity(inst)) + " child answers, got " +
                            std::to_string(children.size()));
  if (children.empty()) return solve(inst);
  const Answer& child = children.back();
  switch (inst.kind) {
    case TaskKind::Addition: {
      const auto* co = std::get_if<CarryOutput>(&child);
      if (!co) throw ContractViolation("combine: addition child answer must be carry/output");
      const std::size_t n = inst.length();
      int s = co->carry;
      if (inst.a.size() == n) s += inst.a.front() - '0';
      if (inst.b.size() == n) s += inst.b.front() - '0';
      return CarryOutput{s / 10, std::string(1, static_cast<char>('0' + s % 10)) + co->output};
    }
    case TaskKind::Parity: {
      const auto* bit = std::get_if<int>(&child);
      if (!bit) throw ContractViolation("combine: parity child answer must be a bit");
      return (inst.values.front() + *bit) % 2;
    }
    case TaskKind::DynProg: {
      const auto* arr = std::get_if<std::vector<int>>(&child);
      if (!arr) throw ContractViolation("combine: dynprog child answer must be an array");
      switch (inst.stage) {
        case DpStage::Root: return *arr;
        case DpStage::SumArray: {
          const int first = arr->empty() ? 0 : (*arr)[0];
          const int second = arr->size() > 1 ? (*arr)[1] : 0;
          std::vector<int> out{std::max({first, inst.values.front() + second, 0})};
          out.insert(out.end(), arr->begin(), arr->end());
          return out;
        }
        case DpStage::Indices: {
          std::vector<int> out{dp_takes_first(inst) ? 1 : 2};
          out.insert(out.end(), arr->begin(), arr->end());
          return out;
        }
      }
    }
  }
  throw ContractViolation("combine: unknown task");
}

}  // namespace retune
