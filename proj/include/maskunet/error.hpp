#pragma once

#include <stdexcept>
#include <string>

namespace maskunet {

// Every failure surfaced by the library derives from Error. The kind() tag is
// what the CLI prints as the machine-parsable error class.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& what) : Error("dimension", what) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class ContractError : public Error {
public:
    explicit ContractError(const std::string& what) : Error("contract", what) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

class IntegrityError : public Error {
public:
    explicit IntegrityError(const std::string& what) : Error("integrity", what) {}
};

} // namespace maskunet
