#pragma once

#include <stdexcept>
#include <string>

namespace nfe {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Incompatible operand shapes; the message names the primitive.
class ShapeError : public Error {
public:
    ShapeError(const std::string& op, const std::string& detail)
        : Error(op + ": shape mismatch: " + detail), op_(op) {}
    const std::string& op() const noexcept { return op_; }

private:
    std::string op_;
};

// A NaN or Inf appeared in a forward value; carries the producing primitive.
class NonFiniteError : public Error {
public:
    explicit NonFiniteError(const std::string& op)
        : Error(op + ": produced a non-finite value"), op_(op) {}
    const std::string& op() const noexcept { return op_; }

private:
    std::string op_;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Parse failure in a config file, with the 1-based line number.
class ConfigError : public Error {
public:
    ConfigError(int line, const std::string& msg)
        : Error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg), line_(line) {}
    int line() const noexcept { return line_; }

private:
    int line_;
};

}  // namespace nfe
