#pragma once

#include <stdexcept>
#include <string>

namespace latefuse {

// Broad failure classes. The CLI maps each class to its own exit code.
enum class ErrorClass { usage, data, numerical, internal };

class Error : public std::runtime_error {
public:
    Error(ErrorClass cls, const std::string& what) : std::runtime_error(what), class_(cls) {}
    ErrorClass error_class() const noexcept { return class_; }

private:
    ErrorClass class_;
};

class UsageError : public Error {
public:
    explicit UsageError(const std::string& what) : Error(ErrorClass::usage, what) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ErrorClass::data, what) {}
};

class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what) : Error(ErrorClass::numerical, what) {}
};

class DimensionError : public DataError {
public:
    explicit DimensionError(const std::string& what) : DataError("dimension error: " + what) {}
};

class IndexError : public DataError {
public:
    explicit IndexError(const std::string& what) : DataError("index error: " + what) {}
};

class ConfigError : public UsageError {
public:
    explicit ConfigError(const std::string& what) : UsageError("config error: " + what) {}
};

class CheckpointError : public DataError {
public:
    enum class Kind { io, corrupt, version_mismatch, config_mismatch };
    CheckpointError(Kind kind, const std::string& what) : DataError("checkpoint: " + what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

class AlignmentError : public DataError {
public:
    explicit AlignmentError(const std::string& what) : DataError("span alignment: " + what) {}
};

}  // namespace latefuse
