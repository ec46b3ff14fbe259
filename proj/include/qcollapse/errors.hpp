#pragma once

#include <stdexcept>
#include <string>

namespace qcollapse {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Lattice or state shape violates an invariant.
class LatticeError : public Error {
public:
    using Error::Error;
};

/// Every amplitude is zero (or thresholded away).
class VanishedWaveFunction : public Error {
public:
    using Error::Error;
};

/// Packet width is not resolvable on the lattice.
class ResolutionError : public Error {
public:
    using Error::Error;
};

/// Linear solve or stochastic step failed.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Collapse produced a state of (numerically) zero norm.
class DegenerateCollapse : public Error {
public:
    using Error::Error;
};

/// No localization width in the search bracket reaches the target volume.
class WidthSearchFailed : public Error {
public:
    using Error::Error;
};

/// Combining two wave functions would exceed the memory budget.
class CombineRefused : public Error {
public:
    using Error::Error;
};

/// Operation cannot be measured in the requested mode.
class NotMeasurable : public Error {
public:
    using Error::Error;
};

/// Scenario failed validation; the message names the violated constraint.
class ConfigError : public Error {
public:
    ConfigError(std::string constraint, const std::string& what)
        : Error(what), constraint_(std::move(constraint)) {}
    const std::string& constraint() const noexcept { return constraint_; }

private:
    std::string constraint_;
};

/// Malformed scenario document.
class SchemaError : public Error {
public:
    using Error::Error;
};

}  // namespace qcollapse
