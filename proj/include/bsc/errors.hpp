#pragma once

#include <stdexcept>
#include <string>

namespace bsc {

// Thrown on tensor/layer dimension mismatches and invalid shapes.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Thrown when a window or index falls outside its container.
struct BoundsError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

// Invalid configuration values (ranges, fractions, hyperparameters).
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Degenerate or inconsistent data: single-class sample sets, empty splits,
// insufficient negatives, empty harvests, bad annotations.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed serialized files; messages name the offending offset.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace bsc
