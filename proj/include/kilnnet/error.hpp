#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kiln {

enum class ErrorKind {
  shape,
  config,
  label,
  validation,
  stratification,
  range,
  zoom,
  completeness,
  normalization,
  degenerate_batch,
  numeric,
  divergence,
  io,
  decode,
};

std::string_view to_string(ErrorKind kind);

/// True for errors caused by bad input or configuration (CLI exit code 1);
/// false for failures that happen while running (exit code 2).
bool is_validation_kind(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

}  // namespace kiln
