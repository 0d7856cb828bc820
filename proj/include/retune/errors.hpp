#pragma once

#include <stdexcept>
#include <string>

namespace retune {

// Malformed caller input: bad digit-strings, out-of-range items, empty arrays.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A precondition that the caller was responsible for was broken.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// No answer could be pulled out of a piece of text.
class ExtractionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TemplateError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Transport or model failure inside a backend.
class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dataset / trace / report parse failure. Line is 1-based, 0 when unknown.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace retune
