#pragma once

#include <stdexcept>
#include <string>

namespace splat {

// Exception categories map onto the CLI exit codes:
// GeometryError -> 2, NumericalError (incl. ConvergenceError) -> 3, IoError -> 4.

class GeometryError : public std::invalid_argument {
public:
    explicit GeometryError(const std::string& what) : std::invalid_argument(what) {}
};

class NumericalError : public std::domain_error {
public:
    explicit NumericalError(const std::string& what) : std::domain_error(what) {}
};

class ConvergenceError : public NumericalError {
public:
    ConvergenceError(const std::string& what, int iterations)
        : NumericalError(what), iterations_(iterations) {}
    int iterations() const noexcept { return iterations_; }

private:
    int iterations_;
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace splat
