#pragma once

#include <stdexcept>
#include <string>

namespace sinkcache {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Contract violations at module boundaries. Each maps to one named error
// condition in the public operation contracts.
struct EmptyInputError : Error { using Error::Error; };
struct NonFiniteError : Error { using Error::Error; };
struct IndexError : Error { using Error::Error; };
struct StateError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct CausalityError : Error { using Error::Error; };
struct ShapeError : Error { using Error::Error; };
struct OrderError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct CorruptCheckpoint : Error { using Error::Error; };

struct TrainingDiverged : Error {
    int step;
    explicit TrainingDiverged(int step_, const std::string& msg)
        : Error(msg), step(step_) {}
};

}  // namespace sinkcache
