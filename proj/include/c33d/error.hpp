#pragma once

#include <stdexcept>
#include <string>

namespace c33d {

// Base for every failure raised by the library. Subclasses name the contract
// that was violated so callers (and the CLI) can map them to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidMesh : public Error { using Error::Error; };
class InvalidInput : public Error { using Error::Error; };
class ShapeError : public Error { using Error::Error; };
class InvalidSchedule : public Error { using Error::Error; };
class MissingCondition : public Error { using Error::Error; };
class ZeroFeature : public Error { using Error::Error; };
class IncompleteBundle : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };

// Raised by the pipeline driver; wraps the failure of a named stage.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what)
        : Error(stage + ": " + what), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

}  // namespace c33d
