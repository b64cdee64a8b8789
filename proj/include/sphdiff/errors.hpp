#pragma once

#include <stdexcept>
#include <string>

namespace sphdiff {

// Invalid argument to a mathematical operation (|m| > ell, C_ell <= 0, t <= 0, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Invalid or inconsistent configuration. `path` names the offending field
// (e.g. "data.components[1].weight") when it comes from a config file.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what, std::string path = {})
        : std::runtime_error(path.empty() ? what : path + ": " + what), path_(std::move(path)) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Raised when SGD produces a non-finite loss.
class TrainingError : public std::runtime_error {
public:
    TrainingError(const std::string& what, int epoch, double last_finite_loss)
        : std::runtime_error(what), epoch_(epoch), last_finite_loss_(last_finite_loss) {}
    int epoch() const noexcept { return epoch_; }
    double last_finite_loss() const noexcept { return last_finite_loss_; }

private:
    int epoch_;
    double last_finite_loss_;
};

}  // namespace sphdiff
