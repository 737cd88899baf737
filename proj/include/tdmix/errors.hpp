#pragma once

#include <stdexcept>
#include <string>

namespace tdmix {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Kernel has more than one recurrent class (or is otherwise not irreducible).
class ReducibleChain : public Error {
public:
    using Error::Error;
};

/// Kernel is irreducible but periodic; no convergence of P^t to the stationary law.
class PeriodicChain : public Error {
public:
    using Error::Error;
};

class InvalidParameter : public Error {
public:
    using Error::Error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

/// Feature matrix is rank-deficient under the stationary weighting.
class SingularSystem : public Error {
public:
    using Error::Error;
};

/// A TD update produced a non-finite parameter or TD error.
class NonFiniteUpdate : public Error {
public:
    NonFiniteUpdate(const std::string& what, long step) : Error(what), step_index(step) {}
    long step_index = -1;
};

/// History was recorded without the full per-step stream.
class MissingStepData : public Error {
public:
    using Error::Error;
};

class InsufficientSeeds : public Error {
public:
    using Error::Error;
};

class TrajectoryTooShort : public Error {
public:
    using Error::Error;
};

class NonPositiveValue : public Error {
public:
    using Error::Error;
};

class WindowTooSmall : public Error {
public:
    using Error::Error;
};

/// Configuration failed validation; `field` carries the dotted path of the offending entry.
class ConfigError : public Error {
public:
    ConfigError(const std::string& field_path, const std::string& what)
        : Error(field_path + ": " + what), field(field_path) {}
    std::string field;
};

/// A pipeline stage was asked to read an artifact that does not exist.
class MissingArtifact : public Error {
public:
    using Error::Error;
};

}  // namespace tdmix
