#pragma once

#include <stdexcept>
#include <string>

namespace clva {

/// Invalid argument to a public operation (bad shape, out-of-range count, empty text).
class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A corpus directory or manifest produced no usable records.
class CorpusEmptyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Checkpoint archive could not be read, parsed or written.
class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An input file (image, manifest) could not be read or decoded.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A training step produced a non-finite loss.
class NonFiniteLossError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace clva
