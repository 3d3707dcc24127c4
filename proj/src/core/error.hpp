#pragma once

#include <stdexcept>
#include <string>

namespace hsflow {

// Error categories map 1:1 onto CLI exit codes.
enum class ErrorKind {
    usage = 2,    // bad arguments, invalid configuration, contract violation
    format = 3,   // on-disk data rejected (magic, truncation, bad indices)
    numeric = 4,  // NaN / divergence during computation
};

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, std::string msg)
        : std::runtime_error(std::move(msg)), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }
    int exit_code() const noexcept { return static_cast<int>(kind_); }

    static Error usage(std::string msg) { return {ErrorKind::usage, std::move(msg)}; }
    static Error format(std::string msg) { return {ErrorKind::format, std::move(msg)}; }
    static Error numeric(std::string msg) { return {ErrorKind::numeric, std::move(msg)}; }

  private:
    ErrorKind kind_;
};

}  // namespace hsflow
