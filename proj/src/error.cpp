#include "kilnnet/error.hpp"

namespace kiln {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape: return "shape error";
    case ErrorKind::config: return "configuration error";
    case ErrorKind::label: return "label error";
    case ErrorKind::validation: return "validation error";
    case ErrorKind::stratification: return "stratification error";
    case ErrorKind::range: return "range error";
    case ErrorKind::zoom: return "zoom error";
    case ErrorKind::completeness: return "completeness error";
    case ErrorKind::normalization: return "normalization error";
    case ErrorKind::degenerate_batch: return "degenerate batch";
    case ErrorKind::numeric: return "numeric error";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::io: return "I/O error";
    case ErrorKind::decode: return "decode error";
  }
  return "error";
}

bool is_validation_kind(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::numeric:
    case ErrorKind::divergence:
    case ErrorKind::io:
    case ErrorKind::decode:
      return false;
    default:
      return true;
  }
}

void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, std::string(to_string(kind)) + ": " + message);
}

}  // namespace kiln
