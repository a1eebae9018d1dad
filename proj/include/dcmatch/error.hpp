#pragma once

#include <stdexcept>
#include <string>

namespace dcmatch {

// Base for every failure raised by the library. The CLI maps it to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file; the message carries the offending line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& source, long line, const std::string& what)
      : Error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

  long line() const { return line_; }

 private:
  long line_;
};

}  // namespace dcmatch
