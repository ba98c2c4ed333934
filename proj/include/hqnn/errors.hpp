#pragma once

#include <stdexcept>
#include <string>

namespace hqnn {

/// Shape or dimension mismatch between tensors/layers. Messages name the
/// offending axis.
class ShapeError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Rejected user-facing input (bad label, bad seed list, dataset too small...).
class ValidationError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Broken internal contract (non-unitary gate, non-scalar loss, missing grad).
class ContractError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Malformed binary or image file. Messages name the byte offset or the
/// expectation that was violated.
class FormatError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Unparsable text input (manifest rows, flag values). Messages carry the
/// line number where applicable.
class ParseError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Non-finite value detected where the computation should have stayed finite.
class NumericError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

} // namespace hqnn
