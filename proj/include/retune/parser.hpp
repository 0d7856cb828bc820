#pragma once

// Marker grammar shared by the renderer, the executor and every backend.
//
//   Call: <call text>\n          a recursive call, issued by the model
//   Return: <answer><suffix>     spliced in by the executor
//   Answer: <answer>             the context's own answer
//
// A `Call: ` marker only counts when it sits at a grammar position: the text
// between the preceding newline (or the start) and the marker is blank, or ends
// with `Solution: `, `Answer: ` or the dynprog indices preamble. Any other
// occurrence is a stray marker; it is reported, never executed.
//
// A call is executed when the bytes right after its terminating newline begin
// with `Return: `.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "retune/errors.hpp"

namespace retune {

inline constexpr std::string_view kCallMarker = "Call: ";
inline constexpr std::string_view kReturnMarker = "Return: ";
inline constexpr std::string_view kAnswerMarker = "Answer: ";
inline constexpr std::string_view kSolutionMarker = "Solution: ";

// Frozen instruction text at the top of every dynprog indices context.
inline constexpr std::string_view kDpIndicesPreamble =
    "If there is only 1 item, return 1 if we should use it else 2. "
    "If we should use the first item to get the sum, call False else True. ";

// What follows a spliced `Return: <answer>`.
inline constexpr std::string_view kAnswerSuffix = "\nAnswer: ";    // answer comes next
inline constexpr std::string_view kContinueSuffix = "\n";          // generation continues freely
inline constexpr std::string_view kDpIndicesReturnSuffix = "\nAnswer: Append 1 if False else 2.\nAnswer: ";

struct Span {
  std::size_t start = 0;
  std::size_t end = 0;  // one past the terminating newline
  bool operator==(const Span&) const = default;
};

struct CallSite {
  std::string call_text;
  Span span;
  bool executed = false;
  std::optional<std::string> return_text;  // payload after `Return: `, up to the next newline
};

namespace detail {

inline bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

inline bool is_blank(std::string_view s) {
  return s.find_first_not_of(" \t\r") == std::string_view::npos;
}

inline bool at_grammar_position(std::string_view context, std::size_t marker_pos) {
  const std::size_t nl = context.rfind('\n', marker_pos == 0 ? 0 : marker_pos - 1);
  const std::size_t line_start = (nl == std::string_view::npos || nl >= marker_pos) ? 0 : nl + 1;
  const std::string_view prefix = context.substr(line_start, marker_pos - line_start);
  return is_blank(prefix) || ends_with(prefix, kSolutionMarker) || ends_with(prefix, kAnswerMarker) ||
         ends_with(prefix, kDpIndicesPreamble);
}

}  // namespace detail

// Every complete call line at a grammar position, left to right.
inline std::vector<CallSite> scan_calls(std::string_view context) {
  std::vector<CallSite> sites;
  std::size_t pos = 0;
  while ((pos = context.find(kCallMarker, pos)) != std::string_view::npos) {
    if (!detail::at_grammar_position(context, pos)) {
      pos += kCallMarker.size();
      continue;
    }
    const std::size_t text_start = pos + kCallMarker.size();
    const std::size_t nl = context.find('\n', text_start);
    if (nl == std::string_view::npos) break;  // unterminated, not a call yet
    CallSite site;
    site.call_text = std::string(context.substr(text_start, nl - text_start));
    site.span = {pos, nl + 1};
    const std::string_view after = context.substr(nl + 1);
    site.executed = after.substr(0, kReturnMarker.size()) == kReturnMarker;
    if (site.executed) {
      const std::string_view payload = after.substr(kReturnMarker.size());
      site.return_text = std::string(payload.substr(0, payload.find('\n')));
    }
    sites.push_back(std::move(site));
    pos = nl + 1;
  }
  return sites;
}

inline std::optional<CallSite> find_unexecuted_call(std::string_view context) {
  auto sites = scan_calls(context);
  for (auto it = sites.rbegin(); it != sites.rend(); ++it)
    if (!it->executed) return std::move(*it);
  return std::nullopt;
}

// Offsets of `Call: ` markers that sit outside grammar positions.
inline std::vector<std::size_t> find_stray_calls(std::string_view context) {
  std::vector<std::size_t> stray;
  for (std::size_t pos = 0; (pos = context.find(kCallMarker, pos)) != std::string_view::npos;
       pos += kCallMarker.size())
    if (!detail::at_grammar_position(context, pos)) stray.push_back(pos);
  return stray;
}

// True when the last line holds a call marker at a grammar position but has
// not been terminated yet, which is what a server returns when it strips the
// `\n` stop sequence.
inline bool has_unterminated_call(std::string_view context) {
  const std::size_t nl = context.rfind('\n');
  const std::size_t line_start = nl == std::string_view::npos ? 0 : nl + 1;
  for (std::size_t pos = context.find(kCallMarker, line_start); pos != std::string_view::npos;
       pos = context.find(kCallMarker, pos + kCallMarker.size()))
    if (detail::at_grammar_position(context, pos)) return true;
  return false;
}

// The frozen text a splice appends.
inline std::string return_segment(std::string_view answer, std::string_view suffix = kAnswerSuffix) {
  std::string seg;
  seg.reserve(kReturnMarker.size() + answer.size() + suffix.size());
  seg.append(kReturnMarker).append(answer).append(suffix);
  return seg;
}

inline std::string splice_return(std::string_view context, std::string_view answer,
                                 std::string_view suffix = kAnswerSuffix) {
  const auto call = find_unexecuted_call(context);
  if (!call) throw ContractViolation("splice_return: no pending call in context");
  if (call->span.end != context.size())
    throw ContractViolation("splice_return: context must end at the pending call's newline");
  if (answer.empty()) throw InputError("splice_return: empty answer");
  if (answer.find('\n') != std::string_view::npos) throw InputError("splice_return: answer spans lines");
  std::string out(context);
  out += return_segment(answer, suffix);
  return out;
}

// Position just past the last `Answer: `, or npos.
inline std::size_t last_answer_offset(std::string_view context) {
  const std::size_t pos = context.rfind(kAnswerMarker);
  return pos == std::string_view::npos ? pos : pos + kAnswerMarker.size();
}

// Text after the last `Answer: `, cut at the first newline and right-trimmed.
inline std::string extract_answer_text(std::string_view context) {
  const std::size_t start = last_answer_offset(context);
  if (start == std::string_view::npos) throw ExtractionError("no 'Answer: ' marker in context");
  std::string_view rest = context.substr(start);
  rest = rest.substr(0, rest.find('\n'));
  const std::size_t last = rest.find_last_not_of(" \t\r");
  if (last == std::string_view::npos) throw ExtractionError("empty answer after 'Answer: '");
  return std::string(rest.substr(0, last + 1));
}

inline bool has_answer(std::string_view context) {
  try {
    (void)extract_answer_text(context);
    return true;
  } catch (const ExtractionError&) {
    return false;
  }
}

}  // namespace retune
