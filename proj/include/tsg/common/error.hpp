#pragma once

#include <stdexcept>
#include <string>

namespace tsg {

// Error categories map one-to-one onto CLI exit codes.
enum class ErrorKind { usage = 2, data = 3, model = 4 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }
    int exit_code() const noexcept { return static_cast<int>(kind_); }

private:
    ErrorKind kind_;
};

// Invalid arguments, configuration or flag combinations.
class UsageError : public Error {
public:
    explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

// Unreadable, corrupt or inconsistent data (images, manifests, feature files).
class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

// Model-side failures: checkpoint metadata, architecture, shape contracts.
class ModelError : public Error {
public:
    explicit ModelError(const std::string& what) : Error(ErrorKind::model, what) {}
};

const char* to_string(ErrorKind kind) noexcept;

}  // namespace tsg
