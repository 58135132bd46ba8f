#pragma once

#include <stdexcept>
#include <string>

namespace clm {

// Base of every error the library raises. `kind()` is a stable short tag
// used by the CLI to map failures onto exit codes.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define CLM_DEFINE_ERROR(Name, tag)                                   \
  class Name : public Error {                                         \
   public:                                                            \
    explicit Name(const std::string& what) : Error(tag, what) {}      \
  };

CLM_DEFINE_ERROR(DimensionError, "dimension")
CLM_DEFINE_ERROR(InvalidInput, "invalid-input")
CLM_DEFINE_ERROR(RangeError, "range")
CLM_DEFINE_ERROR(ContractViolation, "contract")
CLM_DEFINE_ERROR(NumericError, "numeric")
CLM_DEFINE_ERROR(SchemaError, "schema")
CLM_DEFINE_ERROR(RowError, "row")
CLM_DEFINE_ERROR(LabelError, "label")
CLM_DEFINE_ERROR(SamplingError, "sampling")
CLM_DEFINE_ERROR(IoError, "io")
CLM_DEFINE_ERROR(CompatibilityError, "compatibility")
CLM_DEFINE_ERROR(ValidationError, "validation")

#undef CLM_DEFINE_ERROR

}  // namespace clm
