#pragma once

#include <stdexcept>
#include <string>

namespace milc {

// Base for all library failures. The CLI maps subclasses to exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimError : Error { using Error::Error; };       // shape mismatches
struct ParamError : Error { using Error::Error; };     // bad argument values
struct ContractError : Error { using Error::Error; };  // API misuse (non-scalar loss, weight sum off)
struct FormatError : Error { using Error::Error; };    // malformed files (IDX, BagPack, checkpoint)
struct DataError : Error { using Error::Error; };      // dataset construction problems
struct IoError : Error { using Error::Error; };        // filesystem failures
struct NumericError : Error { using Error::Error; };   // non-finite values where finite required
struct MetricError : Error { using Error::Error; };    // undefined metrics (single-class AUC)
struct ConfigError : Error { using Error::Error; };    // config file problems
struct SweepError : Error { using Error::Error; };     // every seed of a sweep failed

}  // namespace milc
