#pragma once

#include <stdexcept>
#include <string>

namespace tenreg {

// Error families. Values double as C API status codes and CLI exit codes.
enum class ErrorCode : int {
  ok = 0,
  invalid = 1,  // precondition violations: bad shapes, bad option values
  io = 2,       // missing/unreadable/unwritable files
  parse = 3,    // malformed input, bad options
  numeric = 4,  // singular systems, divergence, non-finite data
  sampler = 5,  // Monte Carlo failures (carries chain/iteration context)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

struct InvalidError : Error {
  explicit InvalidError(const std::string& w) : Error(ErrorCode::invalid, w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorCode::io, w) {}
};
struct ParseError : Error {
  explicit ParseError(const std::string& w) : Error(ErrorCode::parse, w) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error(ErrorCode::numeric, w) {}
};
struct SamplerError : Error {
  explicit SamplerError(const std::string& w) : Error(ErrorCode::sampler, w) {}
};

}  // namespace tenreg
