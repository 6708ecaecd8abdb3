#ifndef POSEDIFF_ERRORS_HPP
#define POSEDIFF_ERRORS_HPP

#include <stdexcept>
#include <string>
#include <vector>

namespace posediff {

// invalid-argument errors use std::invalid_argument throughout.

class IoError : public std::runtime_error {
public:
    IoError(const std::string& msg, std::string path)
        : std::runtime_error(msg + ": " + path), path_(std::move(path)) {}
    const std::string& path() const { return path_; }

private:
    std::string path_;
};

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(std::vector<std::string> violations)
        : std::runtime_error(join(violations)), violations_(std::move(violations)) {}
    const std::vector<std::string>& violations() const { return violations_; }

private:
    static std::string join(const std::vector<std::string>& v) {
        std::string s = "config error:";
        for (const auto& x : v) {
            s += "\n  - " + x;
        }
        return s;
    }
    std::vector<std::string> violations_;
};

class PreconditionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace posediff

#endif  // POSEDIFF_ERRORS_HPP
