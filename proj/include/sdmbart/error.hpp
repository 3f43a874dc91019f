#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sdm {

enum class ErrorKind {
  format,
  io,
  degenerate_variable,
  empty_data,
  infeasible_sampling,
  class_imbalance,
  validation,
  schema,
  alignment,
  metric_undefined,
  parameter,
  stratification,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::format: return "format";
    case ErrorKind::io: return "io";
    case ErrorKind::degenerate_variable: return "degenerate-variable";
    case ErrorKind::empty_data: return "empty-data";
    case ErrorKind::infeasible_sampling: return "infeasible-sampling";
    case ErrorKind::class_imbalance: return "class-imbalance";
    case ErrorKind::validation: return "validation";
    case ErrorKind::schema: return "schema";
    case ErrorKind::alignment: return "alignment";
    case ErrorKind::metric_undefined: return "metric-undefined";
    case ErrorKind::parameter: return "parameter";
    case ErrorKind::stratification: return "stratification";
  }
  return "unknown";
}

// All library failures are reported through this type; `kind()` lets callers
// branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace sdm
