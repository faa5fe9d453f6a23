#pragma once

#include <stdexcept>
#include <string>

namespace sim2real {

// Bad configuration: unsupported sizes, inconsistent settings, missing data.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Tensor shapes that do not line up with an architecture or another operand.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Values outside the domain an operation accepts (empty batches, unnormalized rows).
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A mathematical precondition does not hold (e.g. absolute continuity).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A loss turned NaN/Inf during training.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace sim2real
