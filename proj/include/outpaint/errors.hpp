#pragma once

#include <stdexcept>
#include <string>

namespace outpaint {

// Every error raised by the library carries a short machine-readable kind
// ("input_shape", "domain", ...) used by the CLI and the HTTP service.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

#define OUTPAINT_ERROR_TYPE(Name, kind_str)                                  \
  class Name : public Error {                                                \
   public:                                                                   \
    explicit Name(const std::string& what) : Error(kind_str, what) {}        \
  };

OUTPAINT_ERROR_TYPE(ShapeError, "input_shape")
OUTPAINT_ERROR_TYPE(DomainError, "domain")
OUTPAINT_ERROR_TYPE(UnsupportedModeError, "unsupported_mode")
OUTPAINT_ERROR_TYPE(InvalidGridError, "invalid_grid")
OUTPAINT_ERROR_TYPE(InvalidBatchError, "invalid_batch")
OUTPAINT_ERROR_TYPE(MappingError, "mapping")
OUTPAINT_ERROR_TYPE(DivergenceError, "divergence")
OUTPAINT_ERROR_TYPE(InsufficientSamplesError, "insufficient_samples")
OUTPAINT_ERROR_TYPE(DegenerateMaskError, "degenerate_mask")
OUTPAINT_ERROR_TYPE(PreconditionError, "precondition")
OUTPAINT_ERROR_TYPE(ExtentError, "extent")
OUTPAINT_ERROR_TYPE(RankError, "rank")
OUTPAINT_ERROR_TYPE(IoError, "io")
OUTPAINT_ERROR_TYPE(ConfigError, "config")
OUTPAINT_ERROR_TYPE(CancelledError, "cancelled")

#undef OUTPAINT_ERROR_TYPE

}  // namespace outpaint
