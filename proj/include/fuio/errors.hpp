#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fuio {

// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed input text (expressions, config files). Carries the byte offset
// of the first offending character where known.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

// Expression evaluation failed (division by zero) at a specific time.
class EvalError : public Error {
public:
    EvalError(const std::string& what, double t)
        : Error(what + " (at t = " + std::to_string(t) + ")"), t_(t) {}
    double time() const { return t_; }

private:
    double t_;
};

// A design gate failed: the requested observer cannot be built for this
// system (rank conditions, fixed modes, unstable spectra, ...).
class InfeasibleError : public Error {
public:
    using Error::Error;
};

// Numerical failure at run time: divergence, non-finite state,
// eigensolver breakdown.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace fuio
