#pragma once

#include <stdexcept>
#include <string>

namespace syl {

// Error taxonomy mirrors the CLI exit codes: usage = 1, data = 2, model = 3.
enum class ErrorKind { usage = 1, data = 2, model = 3 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }
    int exit_code() const noexcept { return static_cast<int>(kind_); }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void throw_usage(const std::string& msg) { throw Error(ErrorKind::usage, msg); }
[[noreturn]] inline void throw_data(const std::string& msg) { throw Error(ErrorKind::data, msg); }
[[noreturn]] inline void throw_model(const std::string& msg) { throw Error(ErrorKind::model, msg); }

}  // namespace syl
