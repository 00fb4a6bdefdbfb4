#pragma once

#include <stdexcept>
#include <string>

namespace deepcoder {

// Shape and argument violations use std::invalid_argument directly.

/// Factorization failure, non-finite intermediate, or similar.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite loss or gradient during training; names epoch, step and term.
class TrainingError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Malformed dataset or checkpoint file.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad configuration document. `key_path` is e.g. "train.learning_rate".
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key_path, const std::string& message)
        : std::runtime_error(key_path.empty() ? message : key_path + ": " + message), key_path_(std::move(key_path)) {}
    const std::string& key_path() const { return key_path_; }

private:
    std::string key_path_;
};

/// A metric that is not defined for the given input (e.g. ICC of constant series).
class UndefinedMetric : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

}  // namespace deepcoder
