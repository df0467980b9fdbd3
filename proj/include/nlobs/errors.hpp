#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace nlobs {

/// Base class of every numerical failure raised by the library.
/// Violated preconditions use std::invalid_argument instead.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class NonConvergenceError : public Error {
public:
    NonConvergenceError(const std::string& what, std::vector<double> history)
        : Error(what), history_(std::move(history)) {}

    const std::vector<double>& history() const noexcept { return history_; }

private:
    std::vector<double> history_;
};

class InsufficientDataError : public Error {
public:
    using Error::Error;
};

class CertificateError : public Error {
public:
    using Error::Error;
};

class SingularityError : public Error {
public:
    using Error::Error;
};

}  // namespace nlobs
