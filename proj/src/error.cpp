#include "pmsfl/error.hpp"

namespace pmsfl {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidConfig: return "invalid-config";
    case ErrorCode::kInvalidShape: return "invalid-shape";
    case ErrorCode::kInvalidLabel: return "invalid-label";
    case ErrorCode::kDomain: return "domain";
    case ErrorCode::kInvalidCache: return "invalid-cache";
    case ErrorCode::kSingular: return "singular";
    case ErrorCode::kBudget: return "budget";
    case ErrorCode::kProtocol: return "protocol";
    case ErrorCode::kUnrecoverable: return "unrecoverable";
    case ErrorCode::kNotApplicable: return "not-applicable";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kInternal: return "internal";
  }
  return "unknown";
}

}  // namespace pmsfl
