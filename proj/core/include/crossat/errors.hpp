#pragma once

#include <stdexcept>
#include <string>

namespace crossat {

// Base class for every error raised by the library. Each subclass maps to one
// failure family so callers can catch narrowly or broadly.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor/matrix shape disagreement.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value or unknown option.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// API misuse: a documented precondition was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Unreadable file content; message carries the line number when known.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Structurally valid file whose content violates the schema.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// Row-aligned batches whose row counts or pairing disagree.
class PairingError : public Error {
 public:
  using Error::Error;
};

// Dataset does not support the requested operation.
class DataError : public Error {
 public:
  using Error::Error;
};

// Versioned artifact container is corrupt or of the wrong version.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Evaluation protocol cannot run (e.g. empty gallery).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Non-finite value where a finite one is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Command-line misuse.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace crossat
