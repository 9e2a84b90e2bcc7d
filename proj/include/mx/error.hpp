// SPDX-License-Identifier: Apache-2.0
//
// Exception types shared by the mx library. Each family maps to a distinct
// exit code in the command-line tool.

#pragma once

#include <stdexcept>
#include <string>

namespace mx {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid format descriptor, format name or element code.
class FormatError : public Error {
public:
    using Error::Error;
};

// Non-finite or otherwise unusable numeric input.
class DataError : public Error {
public:
    using Error::Error;
};

// Malformed .mxt / raw tensor stream.
class ContainerError : public Error {
public:
    using Error::Error;
};

// File could not be opened or written.
class IoError : public Error {
public:
    using Error::Error;
};

// Incompatible conversion request (cross-kind, block size mismatch).
class ConversionError : public Error {
public:
    using Error::Error;
};

// Target format is wider than the anchor.
class UpConversionError : public ConversionError {
public:
    using ConversionError::ConversionError;
};

// Training produced a non-finite loss or parameter.
class TrainingError : public Error {
public:
    using Error::Error;
};

}  // namespace mx
