#pragma once

#include <stdexcept>
#include <string>

namespace uad {

// Non-finite values, divergence, overflow.
class NumericalError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Malformed or corrupt files.
class FormatError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// A pipeline stage ran before the stage that produces its inputs.
class PrerequisiteError : public std::runtime_error {
  public:
    PrerequisiteError(const std::string &what, std::string command)
        : std::runtime_error(what), command_(std::move(command)) {}

    const std::string &command() const noexcept { return command_; }

  private:
    std::string command_;
};

} // namespace uad
