#pragma once

#include <stdexcept>
#include <string>

namespace pfkit {

// Category of a failure, used by the CLI to map exceptions to exit codes.
enum class ErrorKind {
  kValidation,  // bad input data or config (exit 2)
  kRuntime,     // anything that went wrong mid-computation (exit 3)
  kBudget,      // size/step/attempt caps (exit 4)
};

class PfError : public std::runtime_error {
 public:
  PfError(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

#define PFKIT_DEFINE_ERROR(name, kind)                      \
  class name : public PfError {                             \
   public:                                                  \
    explicit name(const std::string& what)                  \
        : PfError(ErrorKind::kind, std::string(#name ": ") + what) {} \
  }

PFKIT_DEFINE_ERROR(BudgetExceeded, kBudget);
PFKIT_DEFINE_ERROR(StepCapExceeded, kBudget);
PFKIT_DEFINE_ERROR(InvalidSpec, kValidation);
PFKIT_DEFINE_ERROR(ParseError, kValidation);
PFKIT_DEFINE_ERROR(ValidationFailed, kValidation);
PFKIT_DEFINE_ERROR(ScheduleInvalid, kValidation);
PFKIT_DEFINE_ERROR(SupportMismatch, kValidation);
PFKIT_DEFINE_ERROR(MixedConfig, kValidation);
PFKIT_DEFINE_ERROR(InsufficientData, kValidation);
PFKIT_DEFINE_ERROR(DimensionMismatch, kValidation);
PFKIT_DEFINE_ERROR(DegenerateLevel, kRuntime);
PFKIT_DEFINE_ERROR(DegenerateRow, kRuntime);
PFKIT_DEFINE_ERROR(ZeroValueState, kRuntime);
PFKIT_DEFINE_ERROR(SelfCheckFailed, kRuntime);
PFKIT_DEFINE_ERROR(AcceptanceAboveOne, kRuntime);
PFKIT_DEFINE_ERROR(ZTildeTooSmall, kRuntime);
PFKIT_DEFINE_ERROR(NotATree, kValidation);

#undef PFKIT_DEFINE_ERROR

}  // namespace pfkit
