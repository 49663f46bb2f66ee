#pragma once

#include <stdexcept>
#include <string>

namespace vtck {

// Shape/axis violations (mismatched matmul dims, bad broadcast, empty axis).
struct DimError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Numeric argument outside its valid interval (t outside (0,T], dt <= 0).
struct RangeError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

// API contract violations (backward from a non-scalar, unknown graph id).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

// Invalid configuration (bad model dims, unknown config key, bad flag combo).
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Integrity violations (adapter/base digest mismatch, corrupt container).
struct IntegrityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Two artifacts that should line up do not (checkpoint tensor name/shape drift).
struct IncompatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Filesystem / stream failures.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training hit a non-finite loss; the message carries step/t/loss diagnostics.
struct TrainingAbort : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace vtck
