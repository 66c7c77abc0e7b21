#pragma once

#include <stdexcept>
#include <string>

namespace mpq {

/// Category of a failure. The CLI maps these onto exit codes.
enum class ErrorKind {
  kUsage,       // bad arguments or flags
  kParse,       // malformed input text
  kSchema,      // well-formed input with the wrong structure
  kValidation,  // values out of domain
  kCoverage,    // lookup outside what a database covers
  kVersion,     // unsupported file version
  kIo,          // file system failure
  kNumeric,     // non-finite values during computation
  kInternal,    // broken invariant inside the library
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace mpq
