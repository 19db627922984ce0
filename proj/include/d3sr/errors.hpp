#pragma once

#include <stdexcept>
#include <string>

namespace d3sr {

// Invalid configuration value; `field` names the offending key.
class config_error : public std::runtime_error {
public:
    config_error(std::string field, const std::string& what)
        : std::runtime_error(field + ": " + what), field_(std::move(field)) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

// Dataset / input-file problems (missing dirs, undecodable images, shape mismatches).
class data_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Persistence failures: corrupt containers, checksum mismatches, write errors.
class io_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace d3sr
