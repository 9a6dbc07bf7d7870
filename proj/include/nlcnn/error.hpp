#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace nlcnn {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Arguments to a kernel or network call have inconsistent shapes or values.
class InvalidInput : public Error {
public:
    using Error::Error;
};

// Hyper-parameters, training configuration or dataset/model pairing is unusable.
class ConfigError : public Error {
public:
    using Error::Error;
};

// A dataset file does not follow its binary layout.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

// A weight file cannot be restored.
class LoadError : public Error {
public:
    using Error::Error;
};

// Training produced a non-finite value.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace nlcnn
