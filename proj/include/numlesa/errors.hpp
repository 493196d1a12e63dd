#pragma once

#include <stdexcept>
#include <string>

namespace numlesa {

// Root of the library's exception hierarchy. `kind()` is a stable
// machine-readable tag surfaced by the CLI in its error JSON.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

#define NUMLESA_DEFINE_ERROR(Name)                                   \
  class Name : public Error {                                        \
   public:                                                           \
    explicit Name(const std::string& what) : Error(#Name, what) {}   \
  };

NUMLESA_DEFINE_ERROR(ShapeError)
NUMLESA_DEFINE_ERROR(NumericalError)
NUMLESA_DEFINE_ERROR(MalformedNumeric)
NUMLESA_DEFINE_ERROR(LengthMismatch)
NUMLESA_DEFINE_ERROR(DimensionMismatch)
NUMLESA_DEFINE_ERROR(OutOfVocab)
NUMLESA_DEFINE_ERROR(SequenceTooLong)
NUMLESA_DEFINE_ERROR(EmptyDataset)
NUMLESA_DEFINE_ERROR(DivergedLoss)
NUMLESA_DEFINE_ERROR(OutOfTableRange)
NUMLESA_DEFINE_ERROR(IndexOutOfRange)
NUMLESA_DEFINE_ERROR(TemplateError)
NUMLESA_DEFINE_ERROR(FormatError)
NUMLESA_DEFINE_ERROR(ConfigError)

#undef NUMLESA_DEFINE_ERROR

}  // namespace numlesa
