#pragma once

#include <stdexcept>
#include <string>

namespace ci2p {

// Error taxonomy mirrored by CLI exit codes: config=2, data=3, numeric=4.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionError : ConfigError {
    explicit DimensionError(const std::string& msg) : ConfigError(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct CheckpointVersionError : DataError {
    explicit CheckpointVersionError(const std::string& msg) : DataError(msg) {}
};

struct CheckpointCrcError : DataError {
    explicit CheckpointCrcError(const std::string& msg) : DataError(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ContractError : std::logic_error {
    explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace ci2p
