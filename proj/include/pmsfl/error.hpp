#pragma once

#include <stdexcept>
#include <string>

namespace pmsfl {

// Error categories mirrored 1:1 by the C API status codes.
enum class ErrorCode {
  kInvalidConfig = 1,
  kInvalidShape = 2,
  kInvalidLabel = 3,
  kDomain = 4,
  kInvalidCache = 5,
  kSingular = 6,
  kBudget = 7,
  kProtocol = 8,
  kUnrecoverable = 9,
  kNotApplicable = 10,
  kIo = 11,
  kInternal = 12,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace pmsfl
